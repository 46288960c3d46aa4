#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace specforge::cli {

struct FileDigest {
    std::string path;
    std::string blake3;
    std::uint64_t bytes = 0;
};

// Digest of a file, or of every regular file below a directory in sorted
// path order.
std::vector<FileDigest> digest_path(const std::filesystem::path& path);

// Record of one file-producing invocation. Written next to the outputs:
// <dir>/run_manifest.json for directory outputs, <file>.run_manifest.json for
// single-file outputs.
class RunManifest {
public:
    RunManifest(std::string command_line, std::string config_digest, nlohmann::json config);

    void add_input(const std::filesystem::path& path);
    void add_output(const std::filesystem::path& path);
    void set_summary(nlohmann::json summary) { summary_ = std::move(summary); }

    nlohmann::json to_json() const;
    // Stamps the wall time and writes the manifest.
    std::filesystem::path write_for_dir(const std::filesystem::path& dir);
    std::filesystem::path write_for_file(const std::filesystem::path& file);

private:
    std::filesystem::path write(const std::filesystem::path& target);

    std::string command_line_;
    std::string config_digest_;
    nlohmann::json config_;
    std::vector<FileDigest> inputs_;
    std::vector<FileDigest> outputs_;
    nlohmann::json summary_;
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
    double wall_time_s_ = 0.0;
};

std::string tool_version();

} // namespace specforge::cli
