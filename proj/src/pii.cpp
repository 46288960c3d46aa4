#include <algorithm>
#include <cctype>
#include <string>
#include <unordered_set>

#include <boost/regex.hpp>
#include <fmt/format.h>

#include "specforge/blake3.hpp"
#include "specforge/corpus.hpp"
#include "specforge/error.hpp"
#include "specforge/rng.hpp"

namespace specforge {

namespace {

using WordSet = std::unordered_set<std::string>;

// Detection dictionaries. Words that double as common nouns or place names
// (Grace, Mark, Virginia, Austin...) are left out on purpose.
const WordSet& male_first_names() {
    static const WordSet s = {
        "James",   "John",    "Robert",  "Michael", "William", "David",    "Richard",  "Joseph",  "Thomas",
        "Charles", "Christopher", "Daniel", "Matthew", "Anthony", "Donald", "Steven",  "Paul",    "Andrew",
        "Joshua",  "Kenneth", "Kevin",   "Brian",   "George",  "Timothy",  "Ronald",   "Edward",  "Jason",
        "Jeffrey", "Ryan",    "Jacob",   "Gary",    "Nicholas", "Eric",    "Jonathan", "Stephen", "Larry",
        "Justin",  "Scott",   "Brandon", "Benjamin", "Samuel", "Gregory",  "Alexander", "Raymond", "Patrick",
        "Dennis",  "Jerry",   "Tyler",   "Aaron",   "Jose",    "Adam",     "Henry",    "Nathan",  "Douglas",
        "Zachary", "Peter",   "Kyle",    "Walter",  "Ethan",   "Jeremy",   "Harold",   "Keith",   "Roger",
        "Noah",    "Gerald",  "Carl",    "Terry",   "Sean",    "Arthur",   "Lawrence", "Jesse",   "Dylan",
        "Bryan",   "Billy",   "Bruce",   "Albert",  "Willie",  "Gabriel",  "Alan",     "Juan",    "Wayne",
        "Roy",     "Ralph",   "Randy",   "Eugene",  "Vincent", "Russell",  "Elijah",   "Louis",   "Bobby",
        "Philip",  "Johnny",  "Carlos",  "Luis",    "Miguel",
    };
    return s;
}

const WordSet& female_first_names() {
    static const WordSet s = {
        "Mary",     "Patricia", "Jennifer", "Linda",    "Elizabeth", "Barbara",  "Susan",    "Jessica",
        "Sarah",    "Karen",    "Lisa",     "Nancy",    "Betty",     "Margaret", "Sandra",   "Ashley",
        "Kimberly", "Emily",    "Donna",    "Michelle", "Amanda",    "Dorothy",  "Melissa",  "Deborah",
        "Stephanie", "Rebecca", "Sharon",   "Laura",    "Cynthia",   "Kathleen", "Amy",      "Angela",
        "Shirley",  "Anna",     "Brenda",   "Pamela",   "Emma",      "Nicole",   "Helen",    "Samantha",
        "Katherine", "Christine", "Debra",  "Rachel",   "Carolyn",   "Janet",    "Catherine", "Maria",
        "Heather",  "Diane",    "Julie",    "Olivia",   "Joyce",     "Victoria", "Kelly",    "Lauren",
        "Christina", "Joan",    "Evelyn",   "Judith",   "Megan",     "Andrea",   "Cheryl",   "Hannah",
        "Jacqueline", "Martha", "Gloria",   "Teresa",   "Sara",      "Frances",  "Kathryn",  "Janice",
        "Abigail",  "Alice",    "Julia",    "Judy",     "Sophia",    "Denise",   "Doris",    "Marilyn",
        "Danielle", "Beverly",  "Isabella", "Theresa",  "Diana",     "Natalie",  "Brittany", "Charlotte",
        "Marie",    "Kayla",    "Alexis",   "Lori",
    };
    return s;
}

// Surrogate pools, disjoint from the dictionaries above.
const std::vector<std::string>& male_surrogates() {
    static const std::vector<std::string> v = {
        "Aldric",  "Bertram",   "Caspian", "Dorian",  "Evander", "Fenwick", "Gideon",  "Horatio",
        "Ignatius", "Jasper",   "Lysander", "Mortimer", "Osric",  "Peregrine", "Quentin", "Rupert",
        "Thaddeus", "Ulric",    "Percival", "Barnaby", "Cornelius", "Leopold", "Ambrose", "Cassius",
        "Florian", "Lucius",    "Octavian", "Silas",  "Tobias",  "Virgil",  "Alaric",  "Benedikt",
    };
    return v;
}

const std::vector<std::string>& female_surrogates() {
    static const std::vector<std::string> v = {
        "Adelind",  "Beatrix",  "Cordelia", "Delphine", "Eloise",   "Felicity", "Genevieve", "Henrietta",
        "Isolde",   "Juniper",  "Lavinia",  "Marisol",  "Ottoline", "Philippa", "Rosalind",  "Seraphina",
        "Theodora", "Ursula",   "Wilhelmina", "Xanthe", "Araminta", "Clementine", "Esmeralda", "Guinevere",
        "Imogen",   "Lucinda",  "Minerva",  "Ophelia",  "Perpetua", "Sabine",   "Ottilie",   "Wilhelmine",
    };
    return v;
}

const std::vector<std::string>& surname_surrogates() {
    static const std::vector<std::string> v = {
        "Ashcombe",   "Brackenridge", "Culpepper",  "Dunmore",    "Everleigh",  "Fairweather", "Gallowglass",
        "Hollingsworth", "Inglewood", "Jessamine",  "Kettleburn", "Lockwood",   "Merriweather", "Nettlefold",
        "Oakenshaw",  "Pemberton",    "Quillfeather", "Ravenscroft", "Sackville", "Thistlewood", "Underhill",
        "Vandermeer", "Whitlock",     "Yarborough", "Zellweger",  "Abernathy",  "Blackthorne", "Coldwater",
        "Drummond",   "Ellingham",    "Farthingale", "Grimsditch",
    };
    return v;
}

const WordSet& surname_surrogate_set() {
    static const WordSet s(surname_surrogates().begin(), surname_surrogates().end());
    return s;
}

const std::vector<std::string>& street_surrogates() {
    static const std::vector<std::string> v = {
        "Quillon",  "Marrowby", "Fenhallow", "Brindlemere", "Thornwick", "Larkspur",  "Wrenfield", "Hazelmoor",
        "Cobblecrest", "Dunmarrow", "Elderbank", "Foxhollow", "Gorsedale", "Heatherly", "Ivybridge", "Kestrelmoor",
    };
    return v;
}

const WordSet& street_surrogate_set() {
    static const WordSet s(street_surrogates().begin(), street_surrogates().end());
    return s;
}

const WordSet& state_codes() {
    static const WordSet s = {"AL", "AK", "AZ", "AR", "CA", "CO", "CT", "DE", "DC", "FL", "GA", "HI", "ID", "IL",
                              "IN", "IA", "KS", "KY", "LA", "ME", "MD", "MA", "MI", "MN", "MS", "MO", "MT", "NE",
                              "NV", "NH", "NJ", "NM", "NY", "NC", "ND", "OH", "OK", "OR", "PA", "RI", "SC", "SD",
                              "TN", "TX", "UT", "VT", "VA", "WA", "WV", "WI", "WY"};
    return s;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

bool reserved_domain(std::string_view host) {
    const std::string h = lower(host);
    for (std::string_view d : {"example.com", "example.org", "example.net"}) {
        if (h == d) return true;
        if (h.size() > d.size() && h.compare(h.size() - d.size(), d.size(), d) == 0 && h[h.size() - d.size() - 1] == '.') {
            return true;
        }
    }
    return false;
}

bool luhn_valid(std::string_view digits) {
    int sum = 0;
    bool dbl = false;
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
        int d = *it - '0';
        if (dbl) {
            d *= 2;
            if (d > 9) d -= 9;
        }
        sum += d;
        dbl = !dbl;
    }
    return sum % 10 == 0;
}

int aba_checksum(std::string_view d) {
    const auto v = [&](std::size_t i) { return d[i] - '0'; };
    return (3 * (v(0) + v(3) + v(6)) + 7 * (v(1) + v(4) + v(7)) + (v(2) + v(5) + v(8))) % 10;
}

std::string only_digits(std::string_view s) {
    std::string out;
    for (char c : s) {
        if (std::isdigit(static_cast<unsigned char>(c))) out.push_back(c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Detection

struct Candidate {
    std::string type;
    int priority = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
};

using Sink = std::vector<Candidate>;

void add(Sink& out, EntityType type, std::size_t begin, std::size_t end) {
    out.push_back({std::string(entity_name(type)), static_cast<int>(type), begin, end});
}

template <typename Fn>
void each_match(std::string_view text, const boost::regex& re, Fn&& fn) {
    boost::match_results<std::string_view::const_iterator> m;
    auto begin = text.cbegin();
    const auto end = text.cend();
    auto flags = boost::match_default;
    while (boost::regex_search(begin, end, m, re, flags)) {
        fn(m);
        begin = m[0].second == m[0].first ? m[0].second + 1 : m[0].second;
        if (begin > end) break;
        flags |= boost::match_prev_avail;
    }
}

template <typename M>
std::size_t pos(std::string_view text, const M& sub) {
    return static_cast<std::size_t>(sub.first - text.cbegin());
}

void detect_names(std::string_view text, Sink& out) {
    static const boost::regex capitalized(R"(\b[A-Z][a-z]+\b)");
    static const boost::regex tail(R"((?:[ \t]+[A-Z]\.)?[ \t]+([A-Z][a-z]+(?:-[A-Z][a-z]+)?)\b)");
    static const boost::regex honorific(R"(\b(?:Mr|Mrs|Ms|Miss|Dr)\.?[ \t]+([A-Z][a-z]+(?:-[A-Z][a-z]+)?)\b)");

    each_match(text, capitalized, [&](const auto& m) {
        const std::string word = m.str(0);
        if (!male_first_names().contains(word) && !female_first_names().contains(word)) return;
        boost::match_results<std::string_view::const_iterator> t;
        std::size_t end = pos(text, m[0]) + word.size();
        if (boost::regex_search(m[0].second, text.cend(), t, tail,
                                boost::match_continuous | boost::match_prev_avail)) {
            end = pos(text, t[0]) + static_cast<std::size_t>(t.length(0));
        }
        add(out, EntityType::Name, pos(text, m[0]), end);
    });
    each_match(text, honorific, [&](const auto& m) {
        const std::string surname = m.str(1);
        if (surname_surrogate_set().contains(surname)) return;
        if (male_first_names().contains(surname) || female_first_names().contains(surname)) return;
        add(out, EntityType::Name, pos(text, m[1]), pos(text, m[1]) + surname.size());
    });
}

void detect_patterns(std::string_view text, const PiiConfig& cfg, Sink& out) {
    const auto on = [&](EntityType t) { return cfg.enabled.contains(t); };

    if (on(EntityType::Ssn)) {
        static const boost::regex re(R"(\b(\d{3})-(\d{2})-(\d{4})\b)");
        each_match(text, re, [&](const auto& m) {
            const int area = std::stoi(m.str(1));
            if (area == 0 || area == 666 || area >= 900 || m.str(2) == "00" || m.str(3) == "0000") return;
            add(out, EntityType::Ssn, pos(text, m[0]), pos(text, m[0]) + static_cast<std::size_t>(m.length(0)));
        });
    }
    if (on(EntityType::Phone)) {
        static const boost::regex re(R"((?:\(\d{3}\)[ ]?|\b\d{3}[-.])(\d{3})[-.](\d{4})\b)");
        each_match(text, re, [&](const auto& m) {
            if (m.str(1) == "555" && starts_with(m.str(2), "01")) return;
            add(out, EntityType::Phone, pos(text, m[0]), pos(text, m[0]) + static_cast<std::size_t>(m.length(0)));
        });
    }
    if (on(EntityType::Email)) {
        static const boost::regex re(R"(\b[A-Za-z0-9._%+-]+@((?:[A-Za-z0-9-]+\.)+[A-Za-z]{2,})\b)");
        each_match(text, re, [&](const auto& m) {
            if (reserved_domain(m.str(1))) return;
            add(out, EntityType::Email, pos(text, m[0]), pos(text, m[0]) + static_cast<std::size_t>(m.length(0)));
        });
    }
    if (on(EntityType::UrlResidue)) {
        static const boost::regex re(
            R"(\b((?:[A-Za-z0-9-]+\.)+(?:com|org|net|gov|edu|io|us|info|biz|co))\b(/[^\s]*)?)", boost::regex::icase);
        each_match(text, re, [&](const auto& m) {
            const std::size_t begin = pos(text, m[0]);
            if (begin > 0 && text[begin - 1] == '@') return;
            if (reserved_domain(m.str(1))) return;
            std::size_t end = begin + static_cast<std::size_t>(m.length(0));
            while (end > begin && std::string_view(".,;:!?)]}'\"").find(text[end - 1]) != std::string_view::npos) --end;
            add(out, EntityType::UrlResidue, begin, end);
        });
    }
    if (on(EntityType::Address)) {
        static const boost::regex re(
            R"(\b(\d{1,6})[ \t]+((?:[A-Z][a-z]+[ \t]+){1,3})(Street|St|Avenue|Ave|Road|Rd|Boulevard|Blvd|Lane|Ln|Drive|Dr|Court|Ct|Way|Place|Pl|Circle|Cir|Parkway|Pkwy|Terrace|Ter)\b)");
        each_match(text, re, [&](const auto& m) {
            static const boost::regex word(R"([A-Z][a-z]+)");
            const std::string words = m.str(2);
            bool all_reserved = true;
            for (boost::sregex_iterator it(words.begin(), words.end(), word), e; it != e; ++it) {
                if (!street_surrogate_set().contains(it->str(0))) all_reserved = false;
            }
            if (all_reserved) return;
            add(out, EntityType::Address, pos(text, m[0]), pos(text, m[0]) + static_cast<std::size_t>(m.length(0)));
        });
    }
    if (on(EntityType::Dob)) {
        static const boost::regex re(
            R"((?i:\b(?:DOB|D\.O\.B\.?|date[ \t]+of[ \t]+birth|birth[ \t]?date|born(?:[ \t]+on)?)[ \t]*[:\-]?[ \t]*)((\d{4})-\d{2}-\d{2}|\d{1,2}/\d{1,2}/(\d{4})))");
        each_match(text, re, [&](const auto& m) {
            const int year = std::stoi(m[2].matched ? m.str(2) : m.str(3));
            if (year < 1901 || year > 2099) return;
            add(out, EntityType::Dob, pos(text, m[1]), pos(text, m[1]) + static_cast<std::size_t>(m.length(1)));
        });
    }
    const std::string label_tail = R"((?:[ \t]+(?:number|num|no))?\.?[ \t]*[#:]?[ \t]*)";
    if (on(EntityType::Account)) {
        static const boost::regex re("(?i:\\b(?:account|acct|loan)" + label_tail + ")(\\d{6,17})\\b");
        each_match(text, re, [&](const auto& m) {
            if (starts_with(m.str(1), "000")) return;
            add(out, EntityType::Account, pos(text, m[1]), pos(text, m[1]) + static_cast<std::size_t>(m.length(1)));
        });
    }
    if (on(EntityType::Routing)) {
        static const boost::regex re("(?i:\\b(?:routing|ABA|RTN)" + label_tail + ")(\\d{9})\\b");
        each_match(text, re, [&](const auto& m) {
            if (aba_checksum(m.str(1)) != 0) return;
            add(out, EntityType::Routing, pos(text, m[1]), pos(text, m[1]) + 9);
        });
    }
    if (on(EntityType::Zip)) {
        static const boost::regex re(R"((?:\b([A-Z]{2})|(?i:\bzip(?:[ \t]*code)?:?))[ \t]+(\d{5}(?:-\d{4})?)\b)");
        each_match(text, re, [&](const auto& m) {
            if (m[1].matched && !state_codes().contains(m.str(1))) return;
            if (starts_with(m.str(2), "000")) return;
            add(out, EntityType::Zip, pos(text, m[2]), pos(text, m[2]) + static_cast<std::size_t>(m.length(2)));
        });
    }
    if (on(EntityType::Ip)) {
        static const boost::regex re(R"(\b(\d{1,3})\.(\d{1,3})\.(\d{1,3})\.(\d{1,3})\b)");
        each_match(text, re, [&](const auto& m) {
            for (int g = 1; g <= 4; ++g) {
                if (std::stoi(m.str(g)) > 255) return;
            }
            const std::string prefix = m.str(1) + "." + m.str(2) + "." + m.str(3);
            if (prefix == "192.0.2" || prefix == "198.51.100" || prefix == "203.0.113") return;
            add(out, EntityType::Ip, pos(text, m[0]), pos(text, m[0]) + static_cast<std::size_t>(m.length(0)));
        });
    }
    if (on(EntityType::DriversLicense)) {
        static const boost::regex re("(?i:\\b(?:driver'?s?[ \\t]+licen[cs]e|DL)" + label_tail + ")([A-Z]\\d{4,12})\\b");
        each_match(text, re, [&](const auto& m) {
            if (starts_with(m.str(1), "X000")) return;
            add(out, EntityType::DriversLicense, pos(text, m[1]),
                pos(text, m[1]) + static_cast<std::size_t>(m.length(1)));
        });
    }
    if (on(EntityType::Ein)) {
        static const boost::regex re(R"(\b(\d{2})-(\d{7})\b)");
        each_match(text, re, [&](const auto& m) {
            if (m.str(1) == "00") return;
            add(out, EntityType::Ein, pos(text, m[0]), pos(text, m[0]) + static_cast<std::size_t>(m.length(0)));
        });
    }
    if (on(EntityType::CreditCard)) {
        static const boost::regex re(R"(\b(?:\d{4}([- ])\d{4}\1\d{4}\1\d{4}|\d{16})\b)");
        each_match(text, re, [&](const auto& m) {
            if (!luhn_valid(only_digits(m.str(0)))) return;
            add(out, EntityType::CreditCard, pos(text, m[0]), pos(text, m[0]) + static_cast<std::size_t>(m.length(0)));
        });
    }
    for (std::size_t k = 0; k < cfg.custom.size(); ++k) {
        const auto& c = cfg.custom[k];
        boost::regex re;
        try {
            re.assign(c.pattern);
        } catch (const boost::regex_error& e) {
            throw ConfigError(fmt::format("custom PII detector '{}' has an invalid pattern: {}", c.name, e.what()));
        }
        each_match(text, re, [&](const auto& m) {
            if (m.length(0) == 0) return;
            out.push_back({c.name, static_cast<int>(kEntityTypeCount + k), pos(text, m[0]),
                           pos(text, m[0]) + static_cast<std::size_t>(m.length(0))});
        });
    }
}

// ---------------------------------------------------------------------------
// Surrogates

char random_digit(Rng& rng, int lo = 0) { return static_cast<char>('0' + lo + static_cast<int>(rng.below(10 - lo))); }

std::string random_digits(Rng& rng, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(random_digit(rng));
    return s;
}

// Lowercase labels of 5-8 letters cannot collide with a top-level domain.
std::string random_label(Rng& rng) {
    std::string s;
    const std::size_t n = 5 + rng.below(4);
    for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>('a' + rng.below(26)));
    return s;
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
    return v[rng.below(v.size())];
}

// Replaces every digit with a random one, keeping all other characters.
std::string redigit(Rng& rng, std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
        if (std::isdigit(static_cast<unsigned char>(c))) c = random_digit(rng);
    }
    return out;
}

std::string pad_to_tokens(std::string base, std::size_t want, Rng& rng, std::string_view two_token_sep,
                          std::string_view one_token) {
    std::size_t have = count_tokens(base);
    while (have + 2 <= want) {
        base += std::string(two_token_sep) + random_label(rng);
        have += 2;
    }
    if (have < want) base += one_token;
    return base;
}

std::string name_surrogate(Rng& rng, std::string_view surface) {
    static const boost::regex parts(R"(^([A-Z][a-z]+)(?:([ \t]+)([A-Z])\.)?(?:([ \t]+)([A-Z][a-z]+)(-[A-Z][a-z]+)?)?$)");
    boost::match_results<std::string_view::const_iterator> m;
    if (!boost::regex_match(surface.cbegin(), surface.cend(), m, parts)) {
        return pick(rng, surname_surrogates());
    }
    const std::string first = m.str(1);
    const bool is_first = male_first_names().contains(first) || female_first_names().contains(first);
    if (!is_first) {
        // Honorific surname alone, possibly hyphenated.
        std::string out = pick(rng, surname_surrogates());
        if (m[5].matched) out += " " + pick(rng, surname_surrogates());
        if (m[6].matched) out += "-" + pick(rng, surname_surrogates());
        return out;
    }
    std::string out = male_first_names().contains(first) ? pick(rng, male_surrogates()) : pick(rng, female_surrogates());
    if (m[3].matched) out += m.str(2) + static_cast<char>('A' + rng.below(26)) + ".";
    if (m[5].matched) out += m.str(4) + pick(rng, surname_surrogates());
    if (m[6].matched) out += "-" + pick(rng, surname_surrogates());
    return out;
}

std::string surrogate_for(const std::string& type, std::string_view surface, Rng& rng) {
    const EntityType t = parse_entity(type);
    switch (t) {
    case EntityType::Name:
        return name_surrogate(rng, surface);
    case EntityType::Ssn:
        return fmt::format("9{}{}-{}{}-{}", random_digit(rng), random_digit(rng), random_digit(rng, 1),
                           random_digit(rng), fmt::format("{:04}", 1 + rng.below(9999)));
    case EntityType::Phone: {
        // Area code from the original shape, exchange 555, line 01xx.
        std::string out(surface);
        std::vector<std::size_t> digit_pos;
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (std::isdigit(static_cast<unsigned char>(out[i]))) digit_pos.push_back(i);
        }
        const std::string digits = fmt::format("{}{}{}5550{}{}{}", random_digit(rng, 2), random_digit(rng),
                                               random_digit(rng), 1, random_digit(rng), random_digit(rng));
        for (std::size_t k = 0; k < digit_pos.size() && k < digits.size(); ++k) out[digit_pos[k]] = digits[k];
        return out;
    }
    case EntityType::Email: {
        static const std::vector<std::string> tlds = {"com", "org", "net"};
        std::string local = random_label(rng);
        const std::string domain = "@example." + pick(rng, tlds);
        const std::size_t want = count_tokens(surface);
        std::size_t have = count_tokens(local) + count_tokens(domain);
        while (have + 2 <= want) {
            local += "." + random_label(rng);
            have += 2;
        }
        if (have < want) local += "_";
        return local + domain;
    }
    case EntityType::UrlResidue: {
        static const std::vector<std::string> tlds = {"com", "org", "net"};
        return pad_to_tokens("example." + pick(rng, tlds), count_tokens(surface), rng, "/", "/");
    }
    case EntityType::Address: {
        static const boost::regex parts(R"(^(\d+)([ \t]+)((?:[A-Z][a-z]+[ \t]+){1,3})(\w+)$)");
        static const boost::regex word(R"([A-Z][a-z]+)");
        boost::match_results<std::string_view::const_iterator> m;
        if (!boost::regex_match(surface.cbegin(), surface.cend(), m, parts)) return std::string(surface);
        std::string out(1, random_digit(rng, 1));
        out += random_digits(rng, static_cast<std::size_t>(m.length(1)) - 1);
        out += m.str(2);
        const std::string words = m.str(3);
        for (boost::sregex_iterator it(words.begin(), words.end(), word), e; it != e; ++it) {
            out += pick(rng, street_surrogates()) + " ";
        }
        return out + m.str(4);
    }
    case EntityType::Dob: {
        const std::string month = fmt::format("{:02}", 1 + rng.below(12));
        const std::string day = fmt::format("{:02}", 1 + rng.below(28));
        if (surface.find('/') != std::string_view::npos) return month + "/" + day + "/1900";
        return "1900-" + month + "-" + day;
    }
    case EntityType::Account: {
        std::string out = "000" + random_digits(rng, surface.size() - 3);
        // Keep account surrogates out of the card and routing detectors too.
        if (out.size() == 16 && luhn_valid(out)) out.back() = static_cast<char>('0' + (out.back() - '0' + 1) % 10);
        return out;
    }
    case EntityType::Routing: {
        std::string out = random_digits(rng, 9);
        if (aba_checksum(out) == 0) out.back() = static_cast<char>('0' + (out.back() - '0' + 1) % 10);
        return out;
    }
    case EntityType::Zip: {
        std::string out = "000" + random_digits(rng, 2);
        if (surface.size() == 10) out += "-" + random_digits(rng, 4);
        return out;
    }
    case EntityType::Ip: {
        static const std::vector<std::string> nets = {"192.0.2.", "198.51.100.", "203.0.113."};
        return pick(rng, nets) + std::to_string(1 + rng.below(254));
    }
    case EntityType::DriversLicense:
        return "X000" + random_digits(rng, surface.size() - 4);
    case EntityType::Ein:
        return "00-" + random_digits(rng, 7);
    case EntityType::CreditCard: {
        // Leading 0000 and a failing Luhn check keep this out of every detector.
        std::string out = redigit(rng, surface);
        std::vector<std::size_t> digit_pos;
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (std::isdigit(static_cast<unsigned char>(out[i]))) digit_pos.push_back(i);
        }
        for (std::size_t k = 0; k < 4; ++k) out[digit_pos[k]] = '0';
        if (luhn_valid(only_digits(out))) {
            char& last = out[digit_pos.back()];
            last = static_cast<char>('0' + (last - '0' + 1) % 10);
        }
        return out;
    }
    }
    return std::string(surface);
}

std::string custom_surrogate(std::string_view surface, Rng& rng) {
    std::string out(surface);
    for (auto& c : out) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isdigit(u)) c = random_digit(rng);
        else if (std::isupper(u)) c = static_cast<char>('A' + rng.below(26));
        else if (std::islower(u)) c = static_cast<char>('a' + rng.below(26));
    }
    return out;
}

} // namespace

const std::vector<EntityType>& all_entity_types() {
    static const std::vector<EntityType> v = {
        EntityType::Name,    EntityType::Ssn,        EntityType::Phone,          EntityType::Email,
        EntityType::Address, EntityType::Dob,        EntityType::Account,        EntityType::Routing,
        EntityType::Zip,     EntityType::Ip,         EntityType::UrlResidue,     EntityType::DriversLicense,
        EntityType::Ein,     EntityType::CreditCard,
    };
    return v;
}

std::string_view entity_name(EntityType type) {
    switch (type) {
    case EntityType::Name: return "NAME";
    case EntityType::Ssn: return "SSN";
    case EntityType::Phone: return "PHONE";
    case EntityType::Email: return "EMAIL";
    case EntityType::Address: return "ADDRESS";
    case EntityType::Dob: return "DOB";
    case EntityType::Account: return "ACCOUNT";
    case EntityType::Routing: return "ROUTING";
    case EntityType::Zip: return "ZIP";
    case EntityType::Ip: return "IP";
    case EntityType::UrlResidue: return "URL_RESIDUE";
    case EntityType::DriversLicense: return "DRIVERS_LICENSE";
    case EntityType::Ein: return "EIN";
    case EntityType::CreditCard: return "CREDIT_CARD";
    }
    return "UNKNOWN";
}

EntityType parse_entity(std::string_view name) {
    for (auto t : all_entity_types()) {
        if (entity_name(t) == name) return t;
    }
    throw ConfigError(fmt::format("unknown PII entity type '{}'", name));
}

std::vector<PiiMatch> scan_pii(std::string_view text, const PiiConfig& cfg) {
    Sink candidates;
    if (cfg.enabled.contains(EntityType::Name)) detect_names(text, candidates);
    detect_patterns(text, cfg, candidates);
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.begin != b.begin) return a.begin < b.begin;
        if (a.end != b.end) return a.end > b.end;
        return a.priority < b.priority;
    });
    std::vector<PiiMatch> out;
    std::size_t covered = 0;
    for (const auto& c : candidates) {
        if (c.begin < covered) continue;
        out.push_back({c.type, c.begin, c.end, std::string(text.substr(c.begin, c.end - c.begin))});
        covered = c.end;
    }
    return out;
}

std::string PiiMap::digest() const {
    Blake3 h;
    h.update(fmt::format("seed={}\n", seed));
    for (const auto& [key, surrogate] : entries) {
        h.update(fmt::format("{}\t{}\t{}\n", key.first, key.second, surrogate));
    }
    return h.finalize_hex();
}

Redaction redact_pii(std::string_view text, std::uint64_t seed, const PiiConfig& cfg) {
    Redaction result;
    result.map.seed = seed;
    std::map<std::string, std::set<std::string>> used; // per type, for injectivity
    std::string out;
    std::size_t pos = 0;
    for (const auto& m : scan_pii(text, cfg)) {
        const auto key = std::make_pair(m.type, m.surface);
        auto it = result.map.entries.find(key);
        if (it == result.map.entries.end()) {
            const bool builtin = std::any_of(all_entity_types().begin(), all_entity_types().end(),
                                             [&](EntityType t) { return entity_name(t) == m.type; });
            std::string surrogate;
            for (int attempt = 0;; ++attempt) {
                Rng rng(derive_seed(seed, fmt::format("{}\x1f{}\x1f{}", m.type, m.surface, attempt)));
                surrogate = builtin ? surrogate_for(m.type, m.surface, rng) : custom_surrogate(m.surface, rng);
                if (!used[m.type].contains(surrogate) || attempt >= 64) break;
            }
            used[m.type].insert(surrogate);
            it = result.map.entries.emplace(key, std::move(surrogate)).first;
        }
        out.append(text.substr(pos, m.begin - pos));
        out += it->second;
        pos = m.end;
        ++result.replacements[m.type];
    }
    out.append(text.substr(pos));
    result.text = std::move(out);
    return result;
}

} // namespace specforge
