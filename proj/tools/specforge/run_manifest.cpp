#include "run_manifest.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "specforge/blake3.hpp"
#include "specforge/datasets.hpp"
#include "specforge/error.hpp"

namespace fs = std::filesystem;

namespace specforge::cli {
namespace {

FileDigest digest_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot read {}", path.string()));
    Blake3 h;
    std::uint64_t bytes = 0;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        const auto n = static_cast<std::size_t>(in.gcount());
        h.update(std::string_view(buf.data(), n));
        bytes += n;
    }
    return {path.string(), h.finalize_hex(), bytes};
}

nlohmann::json digests_json(const std::vector<FileDigest>& files) {
    auto out = nlohmann::json::array();
    for (const auto& f : files) out.push_back({{"path", f.path}, {"blake3", f.blake3}, {"bytes", f.bytes}});
    return out;
}

} // namespace

std::vector<FileDigest> digest_path(const fs::path& path) {
    if (!fs::is_directory(path)) return {digest_file(path)};
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<FileDigest> out;
    for (const auto& f : files) out.push_back(digest_file(f));
    return out;
}

RunManifest::RunManifest(std::string command_line, std::string config_digest, nlohmann::json config)
    : command_line_(std::move(command_line)), config_digest_(std::move(config_digest)), config_(std::move(config)) {}

void RunManifest::add_input(const fs::path& path) {
    auto d = digest_path(path);
    inputs_.insert(inputs_.end(), std::make_move_iterator(d.begin()), std::make_move_iterator(d.end()));
}

void RunManifest::add_output(const fs::path& path) {
    auto d = digest_path(path);
    outputs_.insert(outputs_.end(), std::make_move_iterator(d.begin()), std::make_move_iterator(d.end()));
}

nlohmann::json RunManifest::to_json() const {
    return {{"command_line", command_line_},
            {"config_digest", config_digest_},
            {"config", config_},
            {"inputs", digests_json(inputs_)},
            {"outputs", digests_json(outputs_)},
            {"wall_time_s", wall_time_s_},
            {"tool_version", tool_version()},
            {"summary", summary_}};
}

fs::path RunManifest::write(const fs::path& target) {
    wall_time_s_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_text_file(target, to_json().dump(2) + "\n");
    return target;
}

fs::path RunManifest::write_for_dir(const fs::path& dir) { return write(dir / "run_manifest.json"); }

fs::path RunManifest::write_for_file(const fs::path& file) {
    return write(fs::path(file.string() + ".run_manifest.json"));
}

std::string tool_version() { return SPECFORGE_VERSION; }

} // namespace specforge::cli
