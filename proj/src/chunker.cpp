#include <algorithm>
#include <cctype>
#include <string>

#include <boost/regex.hpp>

#include "specforge/corpus.hpp"
#include "specforge/error.hpp"

namespace specforge {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

struct Token {
    std::string sep; // whitespace preceding the token in the source
    std::string text;
};

using Section = std::vector<Token>;

Section lex(std::string_view text) {
    Section out;
    std::size_t i = 0;
    std::string sep;
    while (i < text.size()) {
        if (is_space(text[i])) {
            sep.push_back(text[i++]);
            continue;
        }
        std::size_t j = i + 1;
        if (!is_punct(text[i])) {
            while (j < text.size() && !is_space(text[j]) && !is_punct(text[j])) ++j;
        }
        out.push_back({std::move(sep), std::string(text.substr(i, j - i))});
        sep.clear();
        i = j;
    }
    return out;
}

bool is_heading(std::string_view line) {
    static const boost::regex markdown(R"(^[ \t]*#{1,6}[ \t]+\S.*$)");
    static const boost::regex numbered(R"(^[ \t]*\d+(?:\.\d+)*\.?[ \t]+[A-Z][^.!?]*$)");
    if (line.size() > 80) return false;
    const std::string s(line);
    if (boost::regex_match(s, markdown) || boost::regex_match(s, numbered)) return true;
    std::size_t letters = 0;
    for (char c : line) {
        if (std::islower(static_cast<unsigned char>(c))) return false;
        if (std::isupper(static_cast<unsigned char>(c))) ++letters;
    }
    return letters >= 2;
}

std::vector<Section> split_sections(std::string_view text) {
    std::vector<Section> sections;
    std::string current;
    const auto flush = [&] {
        Section s = lex(current);
        if (!s.empty()) sections.push_back(std::move(s));
        current.clear();
    };
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        const std::string_view line = text.substr(start, nl - start);
        const bool blank = std::all_of(line.begin(), line.end(), is_space);
        if (blank) {
            flush();
        } else {
            if (is_heading(line)) flush();
            if (!current.empty()) current.push_back('\n');
            current.append(line);
        }
        start = nl + 1;
    }
    flush();
    return sections;
}

class Packer {
public:
    Packer(const RawDocument& doc, std::size_t min_tokens, std::size_t max_tokens)
        : doc_(doc), min_(min_tokens), max_(max_tokens) {}

    void add_section(const Section& section) {
        std::size_t pos = 0;
        while (pos < section.size()) {
            const std::size_t remaining = section.size() - pos;
            if (current_.size() + remaining <= max_) {
                append(section, pos, section.size(), !current_.empty());
                return;
            }
            if (remaining <= max_ && current_.size() >= min_) {
                emit();
                continue;
            }
            // Fill up to max, preferring a cut at whitespace as long as the
            // chunk still reaches min_tokens.
            const std::size_t capacity = max_ - current_.size();
            std::size_t cut = pos + capacity;
            for (std::size_t k = cut; k > pos; --k) {
                if (current_.size() + (k - pos) < min_) break;
                if (!section[k].sep.empty()) {
                    cut = k;
                    break;
                }
            }
            append(section, pos, cut, !current_.empty());
            pos = cut;
            emit();
        }
    }

    ChunkingResult finish() {
        if (!current_.empty()) {
            if (current_.size() >= min_) {
                emit();
            } else {
                ++result_.dropped;
                current_.clear();
            }
        }
        return std::move(result_);
    }

private:
    void append(const Section& section, std::size_t from, std::size_t to, bool section_break) {
        for (std::size_t k = from; k < to; ++k) {
            Token t = section[k];
            if (k == from) t.sep = current_.empty() ? "" : (section_break ? "\n\n" : " ");
            current_.push_back(std::move(t));
        }
    }

    void emit() {
        Chunk c;
        c.doc_id = doc_.doc_id;
        c.index = static_cast<int>(result_.chunks.size());
        c.category = doc_.category;
        for (const auto& t : current_) {
            c.text += t.sep;
            c.text += t.text;
        }
        c.token_count = current_.size();
        result_.chunks.push_back(std::move(c));
        current_.clear();
    }

    const RawDocument& doc_;
    std::size_t min_;
    std::size_t max_;
    Section current_;
    ChunkingResult result_;
};

} // namespace

ChunkingResult chunk_document(const RawDocument& doc, std::size_t min_tokens, std::size_t max_tokens) {
    if (min_tokens == 0 || max_tokens < min_tokens) {
        throw ConfigError("chunking bounds need 0 < min_tokens <= max_tokens");
    }
    Packer packer(doc, min_tokens, max_tokens);
    for (const auto& section : split_sections(doc.text)) packer.add_section(section);
    return packer.finish();
}

} // namespace specforge
