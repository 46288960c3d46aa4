#include <set>

#include <fmt/format.h>

#include "specforge/corpus.hpp"
#include "specforge/error.hpp"
#include "specforge/rng.hpp"

namespace specforge::synthetic {

namespace {

const std::vector<std::string> kFiller = {
    "the",      "loan",     "review",  "policy",   "branch",  "member",   "deposit", "rate",    "credit",
    "process",  "approval", "risk",    "report",   "balance", "transfer", "term",    "payment", "statement",
    "interest", "fee",      "service", "customer", "record",  "update",   "support", "manager", "office",
    "quarter",  "annual",   "budget",  "control",  "audit",   "notice",   "request", "form",    "limit",
    "and",      "of",       "for",     "with",     "under",   "after",    "before",  "within",  "across",
};

const std::vector<std::string> kFirst = {"James", "Mary",  "Robert",  "Patricia", "John",
                                         "Linda", "David", "Barbara", "Michael",  "Susan"};
const std::vector<std::string> kLast = {"Smith", "Johnson", "Williams", "Brown",    "Jones",
                                        "Miller", "Davis",  "Wilson",   "Anderson", "Taylor"};
const std::vector<std::string> kStreet = {"Oak", "Maple", "Cedar", "Pine", "Elm", "Walnut", "Chestnut", "Birch"};

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
    return v[rng.below(v.size())];
}

std::string digits(Rng& rng, std::size_t n, int first_min = 0) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
        const int lo = i == 0 ? first_min : 0;
        s.push_back(static_cast<char>('0' + lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(10 - lo)))));
    }
    return s;
}

std::string luhn_complete(std::string body) {
    int sum = 0;
    for (std::size_t i = 0; i < body.size(); ++i) {
        int d = body[body.size() - 1 - i] - '0';
        if (i % 2 == 0) {
            d *= 2;
            if (d > 9) d -= 9;
        }
        sum += d;
    }
    body.push_back(static_cast<char>('0' + (10 - sum % 10) % 10));
    return body;
}

// Returns {surface, sentence with {} where the surface goes}.
std::pair<std::string, std::string> make_entity(EntityType type, Rng& rng) {
    switch (type) {
    case EntityType::Name:
        return {pick(rng, kFirst) + " " + pick(rng, kLast), "please ask {} about the form"};
    case EntityType::Ssn:
        return {fmt::format("{}-{}-{}", 100 + rng.below(565), digits(rng, 2, 1), digits(rng, 4, 1)),
                "the ssn on file is {} for this member"};
    case EntityType::Phone:
        return {fmt::format("({}) {}-{}", digits(rng, 3, 2), 200 + rng.below(354), digits(rng, 4)),
                "call {} for support"};
    case EntityType::Email:
        return {fmt::format("member{}.{}@gmail.com", rng.below(100000), digits(rng, 3)), "write to {} with the form"};
    case EntityType::Address:
        return {fmt::format("{} {} Street", 1 + rng.below(9999), pick(rng, kStreet)), "the office at {} is open"};
    case EntityType::Dob:
        return {fmt::format("{}-{:02}-{:02}", 1940 + rng.below(65), 1 + rng.below(12), 1 + rng.below(28)),
                "member DOB: {} on the record"};
    case EntityType::Account:
        return {digits(rng, 8 + rng.below(5), 1), "account number {} has a balance"};
    case EntityType::Routing: {
        std::string d = digits(rng, 8, 1);
        const auto v = [&](std::size_t i) { return d[i] - '0'; };
        const int partial = 3 * (v(0) + v(3) + v(6)) + 7 * (v(1) + v(4) + v(7)) + (v(2) + v(5));
        d.push_back(static_cast<char>('0' + (10 - partial % 10) % 10));
        return {d, "routing number {} for the transfer"};
    }
    case EntityType::Zip:
        return {digits(rng, 5, 1), "mail goes to springfield IL {} this quarter"};
    case EntityType::Ip:
        return {fmt::format("10.{}.{}.{}", rng.below(256), rng.below(256), 1 + rng.below(254)),
                "the server at {} logged the request"};
    case EntityType::UrlResidue:
        return {fmt::format("branch{}-portal.com", rng.below(100000)), "see {} for the notice"};
    case EntityType::DriversLicense:
        return {fmt::format("D{}", digits(rng, 7)), "driver's license number {} was checked"};
    case EntityType::Ein:
        return {fmt::format("{}-{}", digits(rng, 2, 1), digits(rng, 7)), "the employer EIN {} is listed"};
    case EntityType::CreditCard: {
        const std::string d = luhn_complete("4" + digits(rng, 14));
        return {fmt::format("{} {} {} {}", d.substr(0, 4), d.substr(4, 4), d.substr(8, 4), d.substr(12, 4)),
                "the card {} was issued"};
    }
    }
    throw Error("unreachable entity type");
}

std::string filler_sentence(Rng& rng) {
    const std::size_t n = 6 + rng.below(10);
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) s += ' ';
        s += pick(rng, kFiller);
    }
    return s + ".";
}

std::string fill(const std::string& templ, const std::string& value) {
    const auto at = templ.find("{}");
    return templ.substr(0, at) + value + templ.substr(at + 2);
}

} // namespace

PlantedCorpus planted_corpus(std::size_t n_docs, std::size_t n_duplicates, std::size_t n_pii, std::uint64_t seed) {
    if (n_duplicates > 0 && n_duplicates >= n_docs) throw ConfigError("duplicates must be fewer than documents");
    Rng rng(derive_seed(seed, "corpus"));
    const std::size_t n_unique = n_docs - n_duplicates;

    // Distinct planted entities, round-robin over types, assigned to documents.
    std::vector<std::vector<std::pair<std::string, std::string>>> per_doc(n_unique);
    PlantedCorpus out;
    std::set<std::string> seen;
    const auto& types = all_entity_types();
    for (std::size_t k = 0; out.planted.size() < n_pii; ++k) {
        const EntityType type = types[k % types.size()];
        auto [surface, templ] = make_entity(type, rng);
        if (!seen.insert(surface).second) continue;
        const std::size_t doc = rng.below(n_unique);
        out.planted.push_back({type, surface, fmt::format("doc{:04}", doc)});
        per_doc[doc].emplace_back(surface, templ);
    }

    std::vector<RawDocument> unique;
    for (std::size_t d = 0; d < n_unique; ++d) {
        const std::size_t target = 450 + rng.below(1051);
        std::vector<std::string> paragraphs;
        std::size_t tokens = 0;
        while (tokens < target) {
            std::string p;
            const std::size_t sentences = 3 + rng.below(6);
            for (std::size_t s = 0; s < sentences; ++s) {
                if (s) p += ' ';
                p += filler_sentence(rng);
            }
            tokens += count_tokens(p);
            paragraphs.push_back(std::move(p));
        }
        for (const auto& [surface, templ] : per_doc[d]) {
            auto& p = paragraphs[rng.below(paragraphs.size())];
            p += " " + fill(templ, surface) + ". " + filler_sentence(rng) + " again " + fill(templ, surface) + ".";
        }
        std::string text;
        for (std::size_t i = 0; i < paragraphs.size(); ++i) {
            if (i) text += "\n\n";
            if (i % 4 == 3) text += fmt::format("## part {}\n", i / 4 + 1);
            text += paragraphs[i];
        }
        unique.push_back({fmt::format("doc{:04}", d), fmt::format("doc{:04}.txt", d), std::move(text),
                          d % 3 == 0 ? std::optional<std::string>("policy") : std::nullopt});
    }

    out.docs = unique;
    for (std::size_t k = 0; k < n_duplicates; ++k) {
        RawDocument copy = unique[rng.below(unique.size())];
        copy.doc_id = fmt::format("dup{:04}", k);
        copy.source_path = copy.doc_id + ".txt";
        out.docs.insert(out.docs.begin() + static_cast<std::ptrdiff_t>(rng.below(out.docs.size() + 1)), std::move(copy));
    }
    out.duplicates = n_duplicates;
    return out;
}

} // namespace specforge::synthetic
