#include <algorithm>
#include <array>
#include <cctype>
#include <optional>
#include <string>
#include <unordered_map>

#include <boost/regex.hpp>
#include <fmt/format.h>
#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include "specforge/corpus.hpp"
#include "specforge/error.hpp"
#include "utf8.hpp"

namespace specforge {

namespace {

constexpr int kMaxPasses = 16;

// cp1252 bytes 0x80..0x9F that map to printable characters.
const std::unordered_map<char32_t, unsigned char>& cp1252_specials() {
    static const std::unordered_map<char32_t, unsigned char> table = {
        {0x20AC, 0x80}, {0x201A, 0x82}, {0x0192, 0x83}, {0x201E, 0x84}, {0x2026, 0x85}, {0x2020, 0x86},
        {0x2021, 0x87}, {0x02C6, 0x88}, {0x2030, 0x89}, {0x0160, 0x8A}, {0x2039, 0x8B}, {0x0152, 0x8C},
        {0x017D, 0x8E}, {0x2018, 0x91}, {0x2019, 0x92}, {0x201C, 0x93}, {0x201D, 0x94}, {0x2022, 0x95},
        {0x2013, 0x96}, {0x2014, 0x97}, {0x02DC, 0x98}, {0x2122, 0x99}, {0x0161, 0x9A}, {0x203A, 0x9B},
        {0x0153, 0x9C}, {0x017E, 0x9E}, {0x0178, 0x9F},
    };
    return table;
}

// Byte this code point would have come from if UTF-8 had been read as
// cp1252 (or latin-1 for the cp1252 holes); -1 if none.
int mojibake_byte(char32_t cp) {
    if (cp >= 0x80 && cp <= 0xFF) return static_cast<int>(cp);
    const auto& t = cp1252_specials();
    auto it = t.find(cp);
    return it == t.end() ? -1 : it->second;
}

// Re-decodes runs that form valid multi-byte UTF-8 once mapped back to bytes.
std::u32string repair_mojibake(const std::u32string& in) {
    std::u32string out;
    out.reserve(in.size());
    std::size_t i = 0;
    while (i < in.size()) {
        const int lead = mojibake_byte(in[i]);
        std::size_t len = 0;
        if (lead >= 0xC2 && lead <= 0xDF) len = 2;
        else if (lead >= 0xE0 && lead <= 0xEF) len = 3;
        else if (lead >= 0xF0 && lead <= 0xF4) len = 4;
        if (len > 0 && i + len <= in.size()) {
            std::string bytes(1, static_cast<char>(lead));
            for (std::size_t k = 1; k < len; ++k) {
                const int b = mojibake_byte(in[i + k]);
                if (b < 0x80 || b > 0xBF) break;
                bytes.push_back(static_cast<char>(b));
            }
            if (bytes.size() == len) {
                std::size_t invalid = 0;
                const auto decoded = utf8::decode(bytes, &invalid);
                if (invalid == 0 && decoded.size() == 1) {
                    out.push_back(decoded[0]);
                    i += len;
                    continue;
                }
            }
        }
        out.push_back(in[i]);
        ++i;
    }
    return out;
}

const std::unordered_map<std::string_view, char32_t>& named_entities() {
    static const std::unordered_map<std::string_view, char32_t> table = {
        {"amp", '&'},       {"lt", '<'},        {"gt", '>'},        {"quot", '"'},      {"apos", '\''},
        {"nbsp", 0xA0},     {"ndash", 0x2013},  {"mdash", 0x2014},  {"lsquo", 0x2018},  {"rsquo", 0x2019},
        {"sbquo", 0x201A},  {"ldquo", 0x201C},  {"rdquo", 0x201D},  {"bdquo", 0x201E},  {"hellip", 0x2026},
        {"copy", 0xA9},     {"reg", 0xAE},      {"trade", 0x2122},  {"sect", 0xA7},     {"para", 0xB6},
        {"deg", 0xB0},      {"cent", 0xA2},     {"pound", 0xA3},    {"euro", 0x20AC},   {"yen", 0xA5},
        {"times", 0xD7},    {"divide", 0xF7},   {"frac12", 0xBD},   {"frac14", 0xBC},   {"frac34", 0xBE},
        {"plusmn", 0xB1},   {"middot", 0xB7},   {"bull", 0x2022},   {"laquo", 0xAB},    {"raquo", 0xBB},
        {"eacute", 0xE9},   {"egrave", 0xE8},   {"aacute", 0xE1},   {"agrave", 0xE0},   {"oacute", 0xF3},
        {"uacute", 0xFA},   {"iacute", 0xED},   {"ntilde", 0xF1},   {"ccedil", 0xE7},   {"uuml", 0xFC},
        {"ouml", 0xF6},     {"auml", 0xE4},     {"szlig", 0xDF},    {"shy", 0xAD},      {"thinsp", 0x2009},
        {"ensp", 0x2002},   {"emsp", 0x2003},   {"minus", 0x2212},  {"prime", 0x2032},  {"Prime", 0x2033},
    };
    return table;
}

bool valid_scalar(std::uint32_t cp) { return cp > 0 && cp <= 0x10FFFF && !(cp >= 0xD800 && cp <= 0xDFFF); }

// One round of &name; / &#NNN; / &#xHH; replacement. Entities without the
// trailing semicolon are left alone.
std::u32string unescape_html(const std::u32string& in) {
    std::u32string out;
    out.reserve(in.size());
    std::size_t i = 0;
    while (i < in.size()) {
        if (in[i] != '&') {
            out.push_back(in[i++]);
            continue;
        }
        const std::size_t semi = in.find(U';', i + 1);
        if (semi == std::u32string::npos || semi - i > 12 || semi == i + 1) {
            out.push_back(in[i++]);
            continue;
        }
        std::string body;
        bool ascii = true;
        for (std::size_t k = i + 1; k < semi; ++k) {
            if (in[k] >= 0x80) ascii = false;
            body.push_back(static_cast<char>(in[k]));
        }
        std::optional<char32_t> value;
        if (ascii && body[0] == '#') {
            const bool hex = body.size() > 1 && (body[1] == 'x' || body[1] == 'X');
            const std::string digits = body.substr(hex ? 2 : 1);
            const bool ok = !digits.empty() && digits.size() <= 8 &&
                            std::all_of(digits.begin(), digits.end(), [&](char c) {
                                return hex ? std::isxdigit(static_cast<unsigned char>(c)) != 0
                                           : std::isdigit(static_cast<unsigned char>(c)) != 0;
                            });
            if (ok) {
                const auto cp = static_cast<std::uint32_t>(std::stoul(digits, nullptr, hex ? 16 : 10));
                value = valid_scalar(cp) ? static_cast<char32_t>(cp) : utf8::kReplacement;
            }
        } else if (ascii) {
            auto it = named_entities().find(body);
            if (it != named_entities().end()) value = it->second;
        }
        if (value) {
            out.push_back(*value);
            i = semi + 1;
        } else {
            out.push_back(in[i++]);
        }
    }
    return out;
}

void append_ascii_equivalent(std::u32string& out, char32_t cp) {
    switch (cp) {
    case 0x2018: case 0x2019: case 0x201A: case 0x201B: case 0x2032: case 0x2035: case 0x2039: case 0x203A:
        out.push_back('\'');
        return;
    case 0x201C: case 0x201D: case 0x201E: case 0x201F: case 0x2033: case 0x2036: case 0x00AB: case 0x00BB:
        out.push_back('"');
        return;
    case 0x2010: case 0x2011: case 0x2012: case 0x2013: case 0x2014: case 0x2015: case 0x2212:
        out.push_back('-');
        return;
    case 0x2026:
        out.append(U"...");
        return;
    case 0x00A0: case 0x2002: case 0x2003: case 0x2009:
        out.push_back(' ');
        return;
    default:
        out.push_back(cp);
    }
}

bool is_removed_control(char32_t cp) {
    if (cp == '\n' || cp == '\t') return false;
    return cp < 0x20 || cp == 0x7F || (cp >= 0x80 && cp <= 0x9F);
}

std::u32string punctuation_and_controls(const std::u32string& in) {
    std::u32string out;
    out.reserve(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        const char32_t cp = in[i];
        if (cp == '\r') {
            out.push_back('\n');
            if (i + 1 < in.size() && in[i + 1] == '\n') ++i;
            continue;
        }
        if (is_removed_control(cp)) continue;
        append_ascii_equivalent(out, cp);
    }
    return out;
}

std::string nfc(const std::string& text) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* normalizer = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) throw Error(fmt::format("ICU NFC normalizer unavailable: {}", u_errorName(status)));
    const icu::UnicodeString src = icu::UnicodeString::fromUTF8(text);
    if (normalizer->isNormalized(src, status) && U_SUCCESS(status)) return text;
    status = U_ZERO_ERROR;
    const icu::UnicodeString normalized = normalizer->normalize(src, status);
    if (U_FAILURE(status)) throw Error(fmt::format("NFC normalization failed: {}", u_errorName(status)));
    std::string out;
    normalized.toUTF8String(out);
    return out;
}

std::string stage1_pass(std::string_view text, std::size_t& invalid) {
    std::u32string cps = utf8::decode(text, &invalid);
    cps = repair_mojibake(cps);
    cps = unescape_html(cps);
    cps = punctuation_and_controls(cps);
    return nfc(utf8::encode(cps));
}

bool is_horizontal_space(char c) { return c == ' ' || c == '\t'; }

bool is_ascii_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

std::string remove_urls(const std::string& text) {
    static const boost::regex url(R"((?:https?://|www\.)[^\s<>"]+)", boost::regex::icase);
    static const std::string_view trailing = ".,;:!?)]}'\"";
    std::string out;
    std::size_t pos = 0;
    boost::smatch m;
    auto begin = text.cbegin();
    while (boost::regex_search(begin, text.cend(), m, url)) {
        const auto start = static_cast<std::size_t>(m[0].first - text.cbegin());
        auto stop = static_cast<std::size_t>(m[0].second - text.cbegin());
        while (stop > start && trailing.find(text[stop - 1]) != std::string_view::npos) --stop;
        out.append(text, pos, start - pos);
        while (!out.empty() && is_horizontal_space(out.back())) out.pop_back();
        std::size_t next = stop;
        while (next < text.size() && is_horizontal_space(text[next])) ++next;
        const bool left_word = !out.empty() && out.back() != '\n';
        const bool right_word = next < text.size() && text[next] != '\n' && !is_ascii_punct(text[next]);
        if (left_word && right_word) out.push_back(' ');
        pos = next;
        begin = text.cbegin() + static_cast<std::ptrdiff_t>(std::max(next, start + 1));
    }
    out.append(text, pos, std::string::npos);
    return out;
}

std::string normalize_dates(const std::string& text, DateOrder order) {
    static const boost::regex date(R"(\b(\d{1,2})/(\d{1,2})/(\d{4})\b)");
    std::string out;
    std::size_t pos = 0;
    for (boost::sregex_iterator it(text.begin(), text.end(), date), end; it != end; ++it) {
        const auto& m = *it;
        int first = std::stoi(m[1].str());
        int second = std::stoi(m[2].str());
        const int month = order == DateOrder::MonthFirst ? first : second;
        const int day = order == DateOrder::MonthFirst ? second : first;
        if (month < 1 || month > 12 || day < 1 || day > 31) continue;
        const auto start = static_cast<std::size_t>(m.position());
        out.append(text, pos, start - pos);
        out += fmt::format("{}-{:02}-{:02}", m[3].str(), month, day);
        pos = start + static_cast<std::size_t>(m.length(0));
    }
    out.append(text, pos, std::string::npos);
    return out;
}

std::string normalize_currency(const std::string& text) {
    static const boost::regex money(R"(\$\d{1,3}(?:,\d{3})+(?:\.\d+)?)");
    std::string out;
    std::size_t pos = 0;
    for (boost::sregex_iterator it(text.begin(), text.end(), money), end; it != end; ++it) {
        const auto start = static_cast<std::size_t>(it->position());
        out.append(text, pos, start - pos);
        for (char c : it->str(0)) {
            if (c != ',') out.push_back(c);
        }
        pos = start + static_cast<std::size_t>(it->length(0));
    }
    out.append(text, pos, std::string::npos);
    return out;
}

} // namespace

CleanReport clean_stage1_report(std::string_view text) {
    CleanReport report;
    std::string current(text);
    for (int pass = 0; pass < kMaxPasses; ++pass) {
        std::string next = stage1_pass(current, report.invalid_utf8);
        if (next == current) break;
        current = std::move(next);
    }
    report.text = std::move(current);
    return report;
}

std::string clean_stage1(std::string_view text) { return clean_stage1_report(text).text; }

std::string clean_stage2(std::string_view text, DateOrder order) {
    std::string current(text);
    for (int pass = 0; pass < kMaxPasses; ++pass) {
        std::string next = normalize_currency(normalize_dates(remove_urls(current), order));
        if (next == current) break;
        current = std::move(next);
    }
    return current;
}

std::vector<std::string_view> tokenize(std::string_view text) {
    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
        } else if (is_ascii_punct(c)) {
            tokens.push_back(text.substr(i, 1));
            ++i;
        } else {
            std::size_t j = i;
            while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) && !is_ascii_punct(text[j])) ++j;
            tokens.push_back(text.substr(i, j - i));
            i = j;
        }
    }
    return tokens;
}

std::size_t count_tokens(std::string_view text) { return tokenize(text).size(); }

} // namespace specforge
