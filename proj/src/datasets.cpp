#include "specforge/datasets.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>

#include <fmt/format.h>

#include "specforge/error.hpp"

namespace specforge {
namespace {

using nlohmann::json;

struct Where {
    const std::filesystem::path& path;
    std::size_t line;
};

[[noreturn]] void bad(const Where& w, const std::string& msg) {
    throw FormatError(fmt::format("{}:{}: {}", w.path.string(), w.line, msg), "see the dataset schema in the README");
}

TokenSequence tokens_field(const json& j, const char* key, const Where& w) {
    if (!j.contains(key) || !j[key].is_array()) bad(w, fmt::format("\"{}\" must be an array of integers", key));
    TokenSequence out;
    out.reserve(j[key].size());
    for (const auto& t : j[key]) {
        if (!t.is_number_integer()) bad(w, fmt::format("\"{}\" must be an array of integers", key));
        const auto v = t.get<std::int64_t>();
        if (v < 0 || v > std::numeric_limits<std::int32_t>::max()) bad(w, fmt::format("token {} out of range", v));
        out.push_back(static_cast<std::int32_t>(v));
    }
    return out;
}

double real_field(const json& j, const char* key, const Where& w, std::optional<double> fallback = std::nullopt) {
    if (!j.contains(key)) {
        if (fallback) return *fallback;
        bad(w, fmt::format("missing \"{}\"", key));
    }
    if (!j[key].is_number()) bad(w, fmt::format("\"{}\" must be a number", key));
    const double v = j[key].get<double>();
    if (!std::isfinite(v)) bad(w, fmt::format("\"{}\" must be finite", key));
    return v;
}

std::string string_field(const json& j, const char* key, const Where& w) {
    if (!j.contains(key) || j[key].is_null()) return {};
    if (!j[key].is_string()) bad(w, fmt::format("\"{}\" must be a string", key));
    return j[key].get<std::string>();
}

template <typename F>
auto read_jsonl(const std::filesystem::path& path, F&& parse_record) {
    std::ifstream in(path);
    if (!in) {
        if (!std::filesystem::exists(path)) {
            throw FormatError(fmt::format("file not found: {}", path.string()), "check the dataset path");
        }
        throw FormatError(fmt::format("cannot open {}", path.string()));
    }
    std::vector<decltype(parse_record(json{}, Where{path, 0}))> out;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const Where w{path, n};
        const auto j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) bad(w, "expected a JSON object");
        out.push_back(parse_record(j, w));
    }
    return out;
}

} // namespace

std::vector<TokenSequence> load_token_sequences(const std::filesystem::path& path) {
    return read_jsonl(path, [](const json& j, const Where& w) { return tokens_field(j, "tokens", w); });
}

std::vector<SupervisedExample> load_supervised_examples(const std::filesystem::path& path) {
    return read_jsonl(path, [](const json& j, const Where& w) {
        SupervisedExample ex;
        ex.prompt = tokens_field(j, "prompt", w);
        ex.completion = tokens_field(j, "completion", w);
        if (ex.completion.empty()) bad(w, "\"completion\" must not be empty");
        try {
            ex.task = parse_task(string_field(j, "task", w));
        } catch (const Error& e) {
            bad(w, e.what());
        }
        return ex;
    });
}

std::vector<PreferencePair> load_preference_pairs(const std::filesystem::path& path) {
    return read_jsonl(path, [](const json& j, const Where& w) {
        PreferencePair p;
        p.prompt = tokens_field(j, "prompt", w);
        p.chosen = tokens_field(j, "chosen", w);
        p.rejected = tokens_field(j, "rejected", w);
        if (p.chosen.empty() || p.rejected.empty()) bad(w, "\"chosen\" and \"rejected\" must not be empty");
        p.chosen_rating = real_field(j, "chosen_rating", w, 0.0);
        p.rejected_rating = real_field(j, "rejected_rating", w, 0.0);
        p.category = string_field(j, "category", w);
        return p;
    });
}

std::vector<RatedItem> load_rated_items(const std::filesystem::path& path) {
    return read_jsonl(path, [](const json& j, const Where& w) {
        RatedItem r;
        r.prompt = tokens_field(j, "prompt", w);
        r.response_a = tokens_field(j, "response_a", w);
        r.rating_a = real_field(j, "rating_a", w);
        r.response_b = tokens_field(j, "response_b", w);
        r.rating_b = real_field(j, "rating_b", w);
        r.category = string_field(j, "category", w);
        return r;
    });
}

nlohmann::json to_json(const TokenSequence& tokens) { return {{"tokens", tokens}}; }

nlohmann::json to_json(const SupervisedExample& ex) {
    return {{"prompt", ex.prompt}, {"completion", ex.completion}, {"task", task_name(ex.task)}};
}

nlohmann::json to_json(const PreferencePair& p) {
    return {{"prompt", p.prompt},
            {"chosen", p.chosen},
            {"rejected", p.rejected},
            {"chosen_rating", p.chosen_rating},
            {"rejected_rating", p.rejected_rating},
            {"category", p.category}};
}

nlohmann::json to_json(const RatedItem& r) {
    return {{"prompt", r.prompt},         {"response_a", r.response_a}, {"rating_a", r.rating_a},
            {"response_b", r.response_b}, {"rating_b", r.rating_b},     {"category", r.category}};
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write {}", path.string()), "check that the directory is writable");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error(fmt::format("write failed for {}", path.string()));
}

} // namespace specforge
