#include "layered_config.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <toml.hpp>

#include "specforge/blake3.hpp"
#include "specforge/error.hpp"

extern char** environ;

namespace specforge::cli {
namespace {

using nlohmann::json;

json node_to_json(const toml::node& node) {
    if (const auto* t = node.as_table()) {
        json obj = json::object();
        for (const auto& [k, v] : *t) obj[std::string(k.str())] = node_to_json(v);
        return obj;
    }
    if (const auto* a = node.as_array()) {
        json arr = json::array();
        for (const auto& v : *a) arr.push_back(node_to_json(v));
        return arr;
    }
    if (const auto* v = node.as_string()) return v->get();
    if (const auto* v = node.as_integer()) return v->get();
    if (const auto* v = node.as_floating_point()) return v->get();
    if (const auto* v = node.as_boolean()) return v->get();
    // Dates and times are kept in their TOML spelling.
    std::ostringstream os;
    node.visit([&os](const auto& v) { os << v; });
    return os.str();
}

// Flattens nested tables into dotted keys; arrays (including arrays of tables)
// stay whole under their own key.
void flatten(const toml::table& table, const std::string& prefix, std::map<std::string, json>& out) {
    for (const auto& [k, v] : table) {
        const std::string key = prefix.empty() ? std::string(k.str()) : prefix + "." + std::string(k.str());
        if (const auto* sub = v.as_table()) {
            flatten(*sub, key, out);
        } else {
            out[key] = node_to_json(v);
        }
    }
}

json parse_scalar(const std::string& text) {
    try {
        const auto t = toml::parse("v = " + text);
        if (const auto* node = t.get("v")) return node_to_json(*node);
    } catch (const toml::parse_error&) {
    }
    return text;
}

} // namespace

LayeredConfig::LayeredConfig(std::set<std::string> known_keys) : known_(std::move(known_keys)) {}

void LayeredConfig::put(const std::string& key, json value, const std::string& origin) {
    if (!known_.count(key)) {
        std::string keys;
        for (const auto& k : known_) keys += (keys.empty() ? "" : ", ") + k;
        throw ConfigError(fmt::format("unknown config key '{}' in {}", key, origin),
                          keys.empty() ? "this command takes no config keys" : "known keys: " + keys);
    }
    values_[key] = std::move(value);
}

void LayeredConfig::load_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw ConfigError(fmt::format("file not found: {}", path.string()), "check the --config path");
    }
    toml::table table;
    try {
        table = toml::parse_file(path.string());
    } catch (const toml::parse_error& e) {
        const auto& where = e.source().begin;
        throw ConfigError(fmt::format("{}:{}:{}: {}", path.string(), where.line, where.column, e.description()));
    }
    std::map<std::string, json> flat;
    flatten(table, "", flat);
    for (auto& [k, v] : flat) put(k, std::move(v), path.string());
}

void LayeredConfig::load_env(const std::map<std::string, std::string>& env) {
    constexpr std::string_view prefix = "SPECFORGE_";
    for (const auto& [name, value] : env) {
        if (!name.starts_with(prefix)) continue;
        std::string key;
        const std::string rest = name.substr(prefix.size());
        for (std::size_t i = 0; i < rest.size(); ++i) {
            if (rest.compare(i, 2, "__") == 0) {
                key += '.';
                ++i;
            } else {
                key += static_cast<char>(std::tolower(static_cast<unsigned char>(rest[i])));
            }
        }
        if (!known_.count(key)) {
            spdlog::debug("ignoring environment variable {} (no key '{}' for this command)", name, key);
            continue;
        }
        put(key, parse_scalar(value), "environment variable " + name);
    }
}

void LayeredConfig::assign(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError(fmt::format("expected key=value, got '{}'", assignment));
    }
    put(assignment.substr(0, eq), parse_scalar(assignment.substr(eq + 1)), "--set");
}

void LayeredConfig::set(const std::string& key, json value) { put(key, std::move(value), "a command-line flag"); }

const json* LayeredConfig::get_raw(const std::string& key) const {
    const auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
}

double LayeredConfig::get_double(const std::string& key, double fallback) const {
    const auto* v = get_raw(key);
    if (v && !v->is_number()) throw ConfigError(fmt::format("config key '{}' must be a number", key));
    return remember(key, v ? v->get<double>() : fallback);
}

std::int64_t LayeredConfig::get_int(const std::string& key, std::int64_t fallback) const {
    return remember(key, get_optional_int(key).value_or(fallback));
}

std::optional<std::int64_t> LayeredConfig::get_optional_int(const std::string& key) const {
    const auto* v = get_raw(key);
    if (!v) return std::nullopt;
    if (!v->is_number_integer()) throw ConfigError(fmt::format("config key '{}' must be an integer", key));
    return remember(key, v->get<std::int64_t>());
}

std::uint64_t LayeredConfig::get_uint(const std::string& key, std::uint64_t fallback) const {
    const auto v = get_optional_int(key);
    if (v && *v < 0) throw ConfigError(fmt::format("config key '{}' must not be negative", key));
    return remember(key, v ? static_cast<std::uint64_t>(*v) : fallback);
}

bool LayeredConfig::get_bool(const std::string& key, bool fallback) const {
    const auto* v = get_raw(key);
    if (v && !v->is_boolean()) throw ConfigError(fmt::format("config key '{}' must be true or false", key));
    return remember(key, v ? v->get<bool>() : fallback);
}

std::string LayeredConfig::get_string(const std::string& key, const std::string& fallback) const {
    const auto* v = get_raw(key);
    if (v && !v->is_string()) throw ConfigError(fmt::format("config key '{}' must be a string", key));
    return remember(key, v ? v->get<std::string>() : fallback);
}

std::vector<std::string> LayeredConfig::get_string_list(const std::string& key,
                                                        const std::vector<std::string>& fallback) const {
    const auto* v = get_raw(key);
    if (!v) return remember(key, fallback);
    // A bare string from the environment may hold a comma-separated list.
    if (v->is_string()) {
        std::vector<std::string> out;
        std::string item;
        for (char c : v->get<std::string>() + ",") {
            if (c == ',') {
                if (!item.empty()) out.push_back(item);
                item.clear();
            } else if (!std::isspace(static_cast<unsigned char>(c))) {
                item += c;
            }
        }
        return remember(key, out);
    }
    if (!v->is_array() || !std::all_of(v->begin(), v->end(), [](const json& x) { return x.is_string(); })) {
        throw ConfigError(fmt::format("config key '{}' must be a list of strings", key));
    }
    return remember(key, v->get<std::vector<std::string>>());
}

json LayeredConfig::to_json() const {
    json out = json::object();
    for (const auto& [k, v] : values_) out[k] = v;
    for (const auto& [k, v] : resolved_) out[k] = v;
    return out;
}

std::string LayeredConfig::digest() const { return blake3_hex(to_json().dump()); }

std::map<std::string, std::string> process_environment() {
    std::map<std::string, std::string> env;
    for (char** e = environ; e && *e; ++e) {
        const std::string entry(*e);
        const auto eq = entry.find('=');
        if (eq != std::string::npos) env[entry.substr(0, eq)] = entry.substr(eq + 1);
    }
    return env;
}

} // namespace specforge::cli
