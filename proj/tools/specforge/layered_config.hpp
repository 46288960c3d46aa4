#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace specforge::cli {

// Flat "section.key" settings merged from, lowest precedence first: defaults
// supplied at the call site, a TOML file, SPECFORGE_* environment variables,
// then command-line assignments. Environment names map by lowercasing and
// turning "__" into "." (SPECFORGE_DPO__LEARNING_RATE -> dpo.learning_rate).
// Values from the environment and the command line are read as TOML values,
// falling back to a plain string.
class LayeredConfig {
public:
    explicit LayeredConfig(std::set<std::string> known_keys);

    // Unknown keys in the file are a ConfigError, so typos do not pass silently.
    void load_file(const std::filesystem::path& path);
    // Environment variables naming keys this command does not know are ignored.
    void load_env(const std::map<std::string, std::string>& env);
    // "key=value"; the key must be known.
    void assign(const std::string& assignment);
    void set(const std::string& key, nlohmann::json value);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::optional<std::int64_t> get_optional_int(const std::string& key) const;
    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::vector<std::string> get_string_list(const std::string& key, const std::vector<std::string>& fallback) const;
    const nlohmann::json* get_raw(const std::string& key) const;

    // Effective settings as a sorted JSON object: every key set from any layer
    // plus every default a getter has resolved so far.
    nlohmann::json to_json() const;
    std::string digest() const;

private:
    void put(const std::string& key, nlohmann::json value, const std::string& origin);

    template <typename T>
    T remember(const std::string& key, T value) const {
        resolved_[key] = value;
        return value;
    }

    std::set<std::string> known_;
    std::map<std::string, nlohmann::json> values_;
    mutable std::map<std::string, nlohmann::json> resolved_;
};

std::map<std::string, std::string> process_environment();

} // namespace specforge::cli
