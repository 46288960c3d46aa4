#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <boost/regex.hpp>
#include <fmt/format.h>

#include "specforge/blake3.hpp"
#include "specforge/corpus.hpp"
#include "specforge/error.hpp"

namespace fs = std::filesystem;

namespace specforge {

DedupResult dedup(std::vector<RawDocument> docs) {
    DedupResult result;
    std::unordered_set<std::string> seen;
    for (auto& doc : docs) {
        if (seen.insert(blake3_hex(doc.text)).second) {
            result.unique.push_back(std::move(doc));
        } else {
            ++result.dropped;
        }
    }
    return result;
}

void CorpusConfig::validate() const {
    if (min_tokens == 0 || max_tokens < min_tokens) {
        throw ConfigError(fmt::format("token bounds must satisfy 0 < min_tokens <= max_tokens (got {} and {})",
                                      min_tokens, max_tokens));
    }
    std::set<std::string> names;
    for (auto t : all_entity_types()) names.emplace(entity_name(t));
    for (const auto& c : pii.custom) {
        if (c.name.empty()) throw ConfigError("custom PII detector needs a name");
        if (!names.insert(c.name).second) {
            throw ConfigError(fmt::format("custom PII detector name '{}' is already taken", c.name));
        }
        try {
            boost::regex re(c.pattern);
        } catch (const boost::regex_error& e) {
            throw ConfigError(fmt::format("custom PII detector '{}' has an invalid pattern: {}", c.name, e.what()));
        }
    }
}

nlohmann::json CorpusConfig::to_json() const {
    nlohmann::json enabled = nlohmann::json::array();
    for (auto t : all_entity_types()) {
        if (pii.enabled.contains(t)) enabled.push_back(entity_name(t));
    }
    nlohmann::json custom = nlohmann::json::array();
    for (const auto& c : pii.custom) custom.push_back({{"name", c.name}, {"pattern", c.pattern}});
    return {
        {"seed", seed},
        {"min_tokens", min_tokens},
        {"max_tokens", max_tokens},
        {"date_order", date_order == DateOrder::MonthFirst ? "month_first" : "day_first"},
        {"pii_entities", enabled},
        {"pii_custom", custom},
    };
}

nlohmann::json CorpusManifest::to_json() const {
    nlohmann::json skipped = nlohmann::json::array();
    for (const auto& s : skipped_files) skipped.push_back({{"path", s.path}, {"reason", s.reason}});
    return {
        {"documents_in", documents_in},
        {"documents_empty", documents_empty},
        {"duplicates_dropped", duplicates_dropped},
        {"documents_unique", documents_unique},
        {"invalid_utf8_sequences", invalid_utf8_sequences},
        {"chunks_emitted", chunks_emitted},
        {"chunks_dropped", chunks_dropped},
        {"tokens_emitted", tokens_emitted},
        {"pii_replacements", pii_replacements},
        {"skipped_files", skipped},
        {"output_digest", output_digest},
        {"config", config},
    };
}

CorpusResult process_documents(std::vector<RawDocument> docs, const CorpusConfig& cfg) {
    cfg.validate();
    CorpusResult result;
    auto& m = result.manifest;
    m.config = cfg.to_json();
    m.documents_in = docs.size();

    auto unique = dedup(std::move(docs));
    m.duplicates_dropped = unique.dropped;
    m.documents_unique = unique.unique.size();

    for (auto& doc : unique.unique) {
        const auto cleaned = clean_stage1_report(doc.text);
        m.invalid_utf8_sequences += cleaned.invalid_utf8;
        doc.text = clean_stage2(cleaned.text, cfg.date_order);
        if (count_tokens(doc.text) == 0) {
            ++m.documents_empty;
            continue;
        }
        auto chunked = chunk_document(doc, cfg.min_tokens, cfg.max_tokens);
        m.chunks_dropped += chunked.dropped;
        for (auto& chunk : chunked.chunks) {
            auto redacted = redact_pii(chunk.text, cfg.seed, cfg.pii);
            chunk.text = std::move(redacted.text);
            chunk.token_count = count_tokens(chunk.text);
            chunk.pii_map_digest = redacted.map.digest();
            for (const auto& [type, n] : redacted.replacements) m.pii_replacements[type] += n;
            m.tokens_emitted += chunk.token_count;
            result.chunks.push_back(std::move(chunk));
        }
    }
    m.chunks_emitted = result.chunks.size();
    return result;
}

std::string chunks_to_jsonl(const std::vector<Chunk>& chunks) {
    std::string out;
    for (const auto& c : chunks) {
        nlohmann::json j = {
            {"doc_id", c.doc_id},
            {"index", c.index},
            {"text", c.text},
            {"token_count", c.token_count},
            {"category", c.category ? nlohmann::json(*c.category) : nlohmann::json(nullptr)},
            {"pii_map_digest", c.pii_map_digest},
        };
        out += j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
        out += '\n';
    }
    return out;
}

namespace {

std::optional<std::string> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) return std::nullopt;
    return ss.str();
}

void load_jsonl(const std::string& content, const std::string& rel, std::vector<RawDocument>& docs,
                std::vector<SkippedFile>& skipped) {
    std::istringstream lines(content);
    std::string line;
    for (std::size_t n = 1; std::getline(lines, line); ++n) {
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
        const std::string where = fmt::format("{}:{}", rel, n);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            skipped.push_back({where, fmt::format("invalid JSON: {}", e.what())});
            continue;
        }
        if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
            skipped.push_back({where, "expected an object with a string \"text\" field"});
            continue;
        }
        RawDocument doc;
        doc.doc_id = j.contains("doc_id") && j["doc_id"].is_string() ? j["doc_id"].get<std::string>() : where;
        doc.source_path = rel;
        doc.text = j["text"].get<std::string>();
        if (j.contains("category") && j["category"].is_string()) doc.category = j["category"].get<std::string>();
        docs.push_back(std::move(doc));
    }
}

} // namespace

CorpusManifest run_pipeline(const fs::path& input_dir, const fs::path& out_dir, const CorpusConfig& cfg) {
    cfg.validate();
    std::error_code ec;
    if (!fs::is_directory(input_dir, ec)) {
        throw Error(fmt::format("input directory '{}' is not readable", input_dir.string()));
    }
    std::vector<fs::path> files;
    for (auto it = fs::recursive_directory_iterator(input_dir, fs::directory_options::skip_permission_denied, ec);
         it != fs::recursive_directory_iterator(); it.increment(ec)) {
        if (ec) break;
        if (it->is_regular_file(ec)) files.push_back(it->path());
    }
    if (ec) throw Error(fmt::format("cannot walk '{}': {}", input_dir.string(), ec.message()));
    std::sort(files.begin(), files.end());

    std::vector<RawDocument> docs;
    std::vector<SkippedFile> skipped;
    for (const auto& path : files) {
        const std::string rel = fs::relative(path, input_dir).generic_string();
        const auto ext = path.extension().string();
        if (ext != ".txt" && ext != ".jsonl") {
            skipped.push_back({rel, "unsupported extension"});
            continue;
        }
        const auto content = read_file(path);
        if (!content) {
            skipped.push_back({rel, "unreadable"});
            continue;
        }
        if (ext == ".jsonl") {
            load_jsonl(*content, rel, docs, skipped);
            continue;
        }
        RawDocument doc;
        doc.doc_id = rel;
        doc.source_path = rel;
        doc.text = *content;
        const auto parent = fs::path(rel).parent_path();
        if (!parent.empty()) doc.category = parent.generic_string();
        docs.push_back(std::move(doc));
    }

    auto result = process_documents(std::move(docs), cfg);
    auto& manifest = result.manifest;
    manifest.skipped_files = std::move(skipped);

    fs::create_directories(out_dir);
    if (!result.chunks.empty()) {
        const std::string jsonl = chunks_to_jsonl(result.chunks);
        std::ofstream out(out_dir / "chunks.jsonl", std::ios::binary);
        out << jsonl;
        if (!out) throw Error(fmt::format("cannot write '{}'", (out_dir / "chunks.jsonl").string()));
        manifest.output_digest = blake3_hex(jsonl);
    } else {
        fs::remove(out_dir / "chunks.jsonl", ec);
    }
    std::ofstream mf(out_dir / "manifest.json", std::ios::binary);
    mf << manifest.to_json().dump(2) << '\n';
    if (!mf) throw Error(fmt::format("cannot write '{}'", (out_dir / "manifest.json").string()));
    return manifest;
}

} // namespace specforge
