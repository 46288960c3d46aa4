#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "specforge/trainers.hpp"

namespace specforge {

// JSONL dataset files. One object per line, blank lines ignored. Readers throw
// FormatError naming the file and line of the first bad record.
//
//   token sequences   {"tokens": [int, ...]}
//   supervised        {"prompt": [int], "completion": [int], "task": "classification"|"summarization"|"qa"}
//   preference pairs  {"prompt": [int], "chosen": [int], "rejected": [int],
//                      "chosen_rating": real?, "rejected_rating": real?, "category": string?}
//   rated items       {"prompt": [int], "response_a": [int], "rating_a": real,
//                      "response_b": [int], "rating_b": real, "category": string?}

std::vector<TokenSequence> load_token_sequences(const std::filesystem::path& path);
std::vector<SupervisedExample> load_supervised_examples(const std::filesystem::path& path);
std::vector<PreferencePair> load_preference_pairs(const std::filesystem::path& path);
std::vector<RatedItem> load_rated_items(const std::filesystem::path& path);

nlohmann::json to_json(const TokenSequence& tokens);
nlohmann::json to_json(const SupervisedExample& ex);
nlohmann::json to_json(const PreferencePair& pair);
nlohmann::json to_json(const RatedItem& item);

// Serializes with to_json, one compact object per line, each ending in '\n'.
template <typename T>
std::string to_jsonl(const std::vector<T>& records) {
    std::string out;
    for (const auto& r : records) {
        out += to_json(r).dump();
        out += '\n';
    }
    return out;
}

// Writes bytes to a file, replacing it. Throws Error on I/O failure.
void write_text_file(const std::filesystem::path& path, const std::string& text);

} // namespace specforge
