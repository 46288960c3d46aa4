#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace specforge {

struct RawDocument {
    std::string doc_id;
    std::string source_path;
    std::string text;
    std::optional<std::string> category;
};

// ---------------------------------------------------------------------------
// Deduplication

struct DedupResult {
    std::vector<RawDocument> unique;
    std::size_t dropped = 0;
};

// Exact duplicates by BLAKE3 of the raw text bytes; first occurrence wins and
// survivor order is preserved.
DedupResult dedup(std::vector<RawDocument> docs);

// ---------------------------------------------------------------------------
// Cleaning

enum class DateOrder { MonthFirst, DayFirst };

struct CleanReport {
    std::string text;
    std::size_t invalid_utf8 = 0; // sequences replaced by U+FFFD
};

// Encoding repair (invalid UTF-8 -> U+FFFD, UTF-8 read as cp1252/latin-1),
// HTML entity unescape, curly quotes and dashes to ASCII, CRLF/CR -> LF,
// removal of C0/C1/DEL controls other than \n and \t, Unicode NFC. Repeats
// until nothing changes, so the result is a fixpoint.
CleanReport clean_stage1_report(std::string_view text);
std::string clean_stage1(std::string_view text);

// Removes http(s):// and www. URLs (trailing sentence punctuation stays),
// rewrites slash dates to YYYY-MM-DD, strips thousands separators from dollar
// amounts.
std::string clean_stage2(std::string_view text, DateOrder order = DateOrder::MonthFirst);

// ---------------------------------------------------------------------------
// Tokenizer used for every token bound: whitespace split, each ASCII
// punctuation character is a token of its own.

std::vector<std::string_view> tokenize(std::string_view text);
std::size_t count_tokens(std::string_view text);

// ---------------------------------------------------------------------------
// PII

enum class EntityType {
    Name,
    Ssn,
    Phone,
    Email,
    Address,
    Dob,
    Account,
    Routing,
    Zip,
    Ip,
    UrlResidue,
    DriversLicense,
    Ein,
    CreditCard,
};

inline constexpr std::size_t kEntityTypeCount = 14;
const std::vector<EntityType>& all_entity_types();
std::string_view entity_name(EntityType type);
EntityType parse_entity(std::string_view name);

// A user-supplied detector. Surrogates keep the character classes of the match
// (digit, upper, lower) and every other character, so re-scan soundness holds
// only when the pattern itself depends on more than character classes.
struct CustomDetector {
    std::string name;
    std::string pattern;
};

struct PiiConfig {
    std::set<EntityType> enabled{all_entity_types().begin(), all_entity_types().end()};
    std::vector<CustomDetector> custom;
};

struct PiiMatch {
    std::string type; // entity_name() or the custom detector name
    std::size_t begin = 0;
    std::size_t end = 0;
    std::string surface;
};

// Non-overlapping detector matches in text order.
std::vector<PiiMatch> scan_pii(std::string_view text, const PiiConfig& cfg = {});

struct PiiMap {
    std::uint64_t seed = 0;
    // (entity type, original surface form) -> surrogate
    std::map<std::pair<std::string, std::string>, std::string> entries;

    // BLAKE3 over the sorted entries; stable across runs.
    std::string digest() const;
};

struct Redaction {
    std::string text;
    PiiMap map;
    std::map<std::string, std::size_t> replacements; // per entity type, counting every occurrence
};

// Replaces every detector match with a surrogate of the same shape and token
// count. Equal surfaces of one type share a surrogate; distinct surfaces get
// distinct surrogates. Surrogates come from ranges the detectors exclude, so
// scan_pii on the output finds nothing.
Redaction redact_pii(std::string_view text, std::uint64_t seed, const PiiConfig& cfg = {});

// ---------------------------------------------------------------------------
// Chunking

struct Chunk {
    std::string doc_id;
    int index = 0;
    std::string text;
    std::size_t token_count = 0;
    std::string pii_map_digest;
    std::optional<std::string> category;
};

struct ChunkingResult {
    std::vector<Chunk> chunks;
    std::size_t dropped = 0; // fragments under min_tokens
};

inline constexpr std::size_t kDefaultMinTokens = 419;
inline constexpr std::size_t kDefaultMaxTokens = 2741;

// Sections are separated by blank lines and start at heading lines (markdown
// '#', all-caps lines, numbered headings). Sections are packed greedily up to
// max_tokens; oversized sections are split at whitespace. A chunk still under
// min_tokens is topped up from the next section. Trailing fragments under
// min_tokens are dropped.
ChunkingResult chunk_document(const RawDocument& doc, std::size_t min_tokens = kDefaultMinTokens,
                              std::size_t max_tokens = kDefaultMaxTokens);

// ---------------------------------------------------------------------------
// Pipeline

struct CorpusConfig {
    std::uint64_t seed = 0;
    std::size_t min_tokens = kDefaultMinTokens;
    std::size_t max_tokens = kDefaultMaxTokens;
    DateOrder date_order = DateOrder::MonthFirst;
    PiiConfig pii;

    void validate() const;
    nlohmann::json to_json() const;
};

struct SkippedFile {
    std::string path;
    std::string reason;
};

struct CorpusManifest {
    std::size_t documents_in = 0;
    std::size_t documents_empty = 0;
    std::size_t duplicates_dropped = 0;
    std::size_t documents_unique = 0;
    std::size_t invalid_utf8_sequences = 0;
    std::size_t chunks_emitted = 0;
    std::size_t chunks_dropped = 0;
    std::size_t tokens_emitted = 0;
    std::map<std::string, std::size_t> pii_replacements;
    std::vector<SkippedFile> skipped_files;
    std::string output_digest; // BLAKE3 of chunks.jsonl, empty when not written
    nlohmann::json config;

    nlohmann::json to_json() const;
};

struct CorpusResult {
    std::vector<Chunk> chunks;
    CorpusManifest manifest;
};

// dedup -> stage 1 -> stage 2 -> chunk -> redact each chunk.
CorpusResult process_documents(std::vector<RawDocument> docs, const CorpusConfig& cfg);

// One JSON object per line: {doc_id, index, text, token_count, category,
// pii_map_digest}.
std::string chunks_to_jsonl(const std::vector<Chunk>& chunks);

// Reads *.txt (one document each, category = parent directory relative to
// the input root) and *.jsonl (objects with "text" and optional "doc_id",
// "category") recursively in sorted path order. Writes chunks.jsonl (only when
// there is at least one chunk) and manifest.json to out_dir.
CorpusManifest run_pipeline(const std::filesystem::path& input_dir, const std::filesystem::path& out_dir,
                            const CorpusConfig& cfg);

// ---------------------------------------------------------------------------
// Seeded corpora with known duplicates and planted identifiers.

namespace synthetic {

struct PlantedEntity {
    EntityType type;
    std::string surface;
    std::string doc_id;
};

struct PlantedCorpus {
    std::vector<RawDocument> docs; // duplicates included, interleaved
    std::size_t duplicates = 0;
    std::vector<PlantedEntity> planted; // distinct surfaces, each written twice in one paragraph
};

// n_docs documents of 450..1500 tokens of lowercase filler split into
// paragraphs, of which n_duplicates are exact copies of earlier documents.
PlantedCorpus planted_corpus(std::size_t n_docs, std::size_t n_duplicates, std::size_t n_pii, std::uint64_t seed);

} // namespace synthetic

} // namespace specforge
