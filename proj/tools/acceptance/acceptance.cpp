// Acceptance gate: one PASS/FAIL line per criterion, exit status 0 only when
// every selected criterion passes. Tolerances and limits are the constants
// next to each check.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "specforge/bench.hpp"
#include "specforge/corpus.hpp"
#include "specforge/pipeline.hpp"
#include "specforge/rng.hpp"
#include "specforge/router.hpp"
#include "specforge/trainers.hpp"
#include "specforge/weight_ops.hpp"

namespace specforge::acceptance {
namespace {

struct Outcome {
    bool pass = true;
    std::vector<std::string> notes;

    // Records one measured quantity; any failing measurement fails the criterion.
    void expect(bool ok, std::string note) {
        pass = pass && ok;
        notes.push_back(ok ? std::move(note) : "[x] " + std::move(note));
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double max_abs_diff(const Checkpoint& a, const Checkpoint& b) {
    double worst = 0.0;
    for (const auto& [name, t] : a.tensors) {
        if (!b.contains(name)) return INFINITY;
        const auto x = t.to_f64();
        const auto y = b.at(name).to_f64();
        if (x.size() != y.size()) return INFINITY;
        for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
    }
    return a.tensors.size() == b.tensors.size() ? worst : INFINITY;
}

bool tensors_bit_equal(const Checkpoint& a, const Checkpoint& b) {
    if (a.tensors.size() != b.tensors.size()) return false;
    for (const auto& [name, t] : a.tensors) {
        if (!b.contains(name) || !(b.at(name) == t)) return false;
    }
    return true;
}

TokenSequence random_tokens(Rng& rng, std::size_t n, std::int64_t vocab) {
    TokenSequence out(n);
    for (auto& t : out) t = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(vocab)));
    return out;
}

PreferencePair random_pair(Rng& rng, std::int64_t vocab) {
    PreferencePair p;
    p.prompt = random_tokens(rng, 1 + rng.below(4), vocab);
    p.chosen = random_tokens(rng, 1 + rng.below(4), vocab);
    p.rejected = random_tokens(rng, 1 + rng.below(4), vocab);
    return p;
}

ModelConfig random_model_config(Rng& rng, std::uint64_t seed) {
    const std::int64_t heads = 1 + static_cast<std::int64_t>(rng.below(2));
    return {.vocab_size = 16 + static_cast<std::int64_t>(rng.below(49)),
            .d_model = heads * (4 + 4 * static_cast<std::int64_t>(rng.below(3))),
            .n_layers = 1 + static_cast<std::int64_t>(rng.below(2)),
            .n_heads = heads,
            .d_ff = 8 + 8 * static_cast<std::int64_t>(rng.below(3)),
            .max_seq_len = 32,
            .seed = seed};
}

// ---------------------------------------------------------------------------

Outcome residual_round_trip() {
    constexpr double kTol = 1e-6;
    constexpr double kLimitS = 10.0;
    constexpr int kModels = 20;
    Outcome o;
    const auto t0 = Clock::now();
    Rng rng(2024);
    double worst = 0.0;
    for (int i = 0; i < kModels; ++i) {
        const auto base = init_model(random_model_config(rng, 100 + static_cast<std::uint64_t>(i)));
        const auto inst = synthetic::instruct_reference(base, 0.05, 500 + static_cast<std::uint64_t>(i));
        worst = std::max(worst, max_abs_diff(apply_residual(base, extract_residual(inst, base)), inst));
    }
    const double elapsed = seconds_since(t0);
    o.expect(worst <= kTol, fmt::format("max |apply(base, extract(inst, base)) - inst| = {:.3g} <= {:g} over {} models",
                                        worst, kTol, kModels));
    o.expect(elapsed < kLimitS, fmt::format("{:.2f} s < {:g} s", elapsed, kLimitS));
    return o;
}

Outcome zero_laws() {
    Outcome o;
    const ModelConfig cfg{.vocab_size = 32, .d_model = 16, .n_layers = 2, .n_heads = 2, .d_ff = 32, .seed = 11};
    const auto w = synthetic::instruct_reference(init_model(cfg), 0.05, 12);

    const auto self = extract_residual(w, w);
    bool all_zero = true;
    for (const auto& [name, t] : self.tensors) {
        for (double v : t.to_f64()) all_zero = all_zero && v == 0.0;
    }
    o.expect(all_zero, "extract(W, W) is exactly zero");

    const auto other = synthetic::instruct_reference(w, 0.05, 13);
    o.expect(tensors_bit_equal(apply_residual(w, extract_residual(other, w), 0.0), w), "apply(W, R, 0) == W bitwise");

    const auto adapters = create_lora(w, targets::kCpt, 4, 8.0, 0.0, 14);
    o.expect(adapters.all_b_zero() && tensors_bit_equal(merge_lora(w, adapters), w),
             fmt::format("merge_lora with B = 0 == base bitwise ({} adapted tensors)", adapters.entries.size()));
    return o;
}

Outcome dpo_fixed_point() {
    constexpr double kTol = 1e-6;
    constexpr int kPairs = 100;
    // -log(sigmoid(0.2 * 0.7)) in python float64; the rounded figure 0.625504
    // quoted alongside this example disagrees with the closed form in the 5th digit.
    constexpr double kClosedForm = 0.6255951823371514;
    Outcome o;
    const ModelConfig cfg{.vocab_size = 32, .d_model = 16, .n_layers = 2, .n_heads = 2, .d_ff = 32, .seed = 21};
    const auto policy_ckpt = synthetic::instruct_reference(init_model(cfg), 0.1, 22);
    const auto policy = DenseModel::from_checkpoint(policy_ckpt);
    const auto adapters = create_lora(policy_ckpt, targets::kDpo, 8, 16.0, 0.0, 23);
    Rng rng(24);
    double worst = 0.0;
    for (int i = 0; i < kPairs; ++i) {
        const auto t = dpo_loss(policy, adapters, policy, random_pair(rng, cfg.vocab_size), 0.2);
        worst = std::max(worst, std::abs(t.loss - std::numbers::ln2));
    }
    o.expect(worst <= kTol, fmt::format("policy == reference: max |loss - ln 2| = {:.3g} <= {:g} over {} pairs", worst,
                                        kTol, kPairs));

    const auto scalar = dpo_from_logprobs(0.7, 0.0, 0.0, 0.0, 0.2);
    o.expect(std::abs(scalar.loss - kClosedForm) <= kTol,
             fmt::format("beta 0.2, margin 0.7: loss {:.10f} vs oracle {:.10f}", scalar.loss, kClosedForm));
    return o;
}

// Central differences over every adapter entry whose analytic gradient is
// above the noise floor; returns (max relative error, entries checked).
template <typename LossFn>
std::pair<double, std::size_t> finite_difference(LoraAdapterSet adapters, const AdapterGrads& grads, LossFn loss) {
    constexpr double kStep = 1e-4;
    double worst = 0.0;
    std::size_t checked = 0;
    for (auto& [name, p] : adapters.entries) {
        for (int which = 0; which < 2; ++which) {
            Matrix& m = which == 0 ? p.a : p.b;
            const Matrix& g = which == 0 ? grads.at(name).a : grads.at(name).b;
            for (Eigen::Index i = 0; i < m.size(); ++i) {
                if (std::abs(g.data()[i]) <= 1e-8) continue;
                const double orig = m.data()[i];
                m.data()[i] = orig + kStep;
                const double up = loss(adapters);
                m.data()[i] = orig - kStep;
                const double down = loss(adapters);
                m.data()[i] = orig;
                const double fd = (up - down) / (2 * kStep);
                worst = std::max(worst, std::abs(g.data()[i] - fd) / std::max(std::abs(g.data()[i]), std::abs(fd)));
                ++checked;
            }
        }
    }
    return {worst, checked};
}

LoraAdapterSet dense_adapters(const Checkpoint& base, const std::vector<std::string>& modules, int rank,
                              std::uint64_t seed) {
    auto set = create_lora(base, modules, rank, 2.0 * rank, 0.0, seed);
    Rng rng(seed);
    for (auto& [name, p] : set.entries) {
        for (Eigen::Index i = 0; i < p.a.size(); ++i) p.a.data()[i] = rng.normal(0.0, 0.3);
        for (Eigen::Index i = 0; i < p.b.size(); ++i) p.b.data()[i] = rng.normal(0.0, 0.3);
    }
    return set;
}

Outcome gradient_fidelity() {
    constexpr double kTol = 1e-4;
    constexpr double kLimitS = 60.0;
    Outcome o;
    const auto t0 = Clock::now();
    const ModelConfig cfg{.vocab_size = 16, .d_model = 8, .n_layers = 1, .n_heads = 2, .d_ff = 12, .max_seq_len = 16,
                          .seed = 5};
    const auto base_ckpt = synthetic::instruct_reference(init_model(cfg), 0.3, 31);
    const auto base = DenseModel::from_checkpoint(base_ckpt);
    const auto reference = DenseModel::from_checkpoint(synthetic::instruct_reference(init_model(cfg), 0.1, 32));
    Rng rng(33);

    std::vector<PreferencePair> pairs;
    for (int i = 0; i < 3; ++i) pairs.push_back(random_pair(rng, cfg.vocab_size));
    const auto dpo_adapters = dense_adapters(base_ckpt, targets::kDpo, 2, 34);
    const auto dpo = dpo_grad(base, dpo_adapters, reference, pairs, 0.2);
    const auto [dpo_err, dpo_n] = finite_difference(dpo_adapters, dpo.grads, [&](const LoraAdapterSet& a) {
        double sum = 0.0;
        for (const auto& p : pairs) sum += dpo_loss(base, a, reference, p, 0.2).loss;
        return sum / static_cast<double>(pairs.size());
    });
    o.expect(dpo_n > 0 && dpo_err <= kTol,
             fmt::format("dpo_grad max rel err {:.3g} <= {:g} ({} entries)", dpo_err, kTol, dpo_n));

    std::vector<SupervisedExample> examples;
    for (int i = 0; i < 3; ++i) {
        examples.push_back(
            {.prompt = random_tokens(rng, 3, cfg.vocab_size), .completion = random_tokens(rng, 2 + rng.below(3), 16)});
    }
    const auto sft_adapters = dense_adapters(base_ckpt, targets::kSft, 4, 35);
    const auto sft = sft_grad(base, sft_adapters, examples);
    const auto [sft_err, sft_n] = finite_difference(sft_adapters, sft.grads, [&](const LoraAdapterSet& a) {
        double sum = 0.0;
        for (const auto& ex : examples) sum += sft_loss(base, a, ex);
        return sum / static_cast<double>(examples.size());
    });
    o.expect(sft_n > 0 && sft_err <= kTol,
             fmt::format("sft gradient max rel err {:.3g} <= {:g} ({} entries)", sft_err, kTol, sft_n));

    const double elapsed = seconds_since(t0);
    o.expect(elapsed < kLimitS, fmt::format("{:.2f} s < {:g} s", elapsed, kLimitS));
    return o;
}

Outcome lora_accounting() {
    Outcome o;
    const ModelConfig cfg{.vocab_size = 32, .d_model = 16, .n_layers = 2, .n_heads = 2, .d_ff = 32, .seed = 41};
    const auto base = init_model(cfg);
    const auto shapes = parameter_shapes(cfg);
    const Checkpoint before = base;

    struct Case {
        const char* label;
        int rank;
        std::vector<std::string> modules;
    };
    for (const auto& c : {Case{"r=16 q_proj,v_proj", 16, {"q_proj", "v_proj"}},
                          Case{"r=8 q,k,v,o_proj", 8, {"q_proj", "k_proj", "v_proj", "o_proj"}}}) {
        std::int64_t expected = 0;
        for (const auto& [name, shape] : shapes) {
            for (const auto& m : c.modules) {
                if (name.find("." + m + ".") != std::string::npos) expected += c.rank * (shape[0] + shape[1]);
            }
        }
        const auto adapters = create_lora(base, c.modules, c.rank, 2.0 * c.rank, 0.05, 42);
        const auto pairs = synthetic::preference_pairs(cfg, 8, 43);
        TrainConfig tc;
        tc.max_steps = 3;
        tc.learning_rate = 1e-2;
        const auto trained = train(base, adapters, DpoObjective{base, pairs}, tc);
        const auto got = trained.adapters.trainable_parameter_count();
        o.expect(got == expected && adapters.trainable_parameter_count() == expected,
                 fmt::format("{}: {} trainable == sum r(d_out + d_in) = {}", c.label, got, expected));
    }
    o.expect(tensors_bit_equal(base, before), "base tensors bit-unchanged after training");
    return o;
}

Outcome pipeline_composition() {
    constexpr double kTol = 1e-6;
    constexpr double kLimitS = 300.0;
    constexpr std::int64_t kDpoSteps = 500;
    Outcome o;
    const auto t0 = Clock::now();
    const ModelConfig cfg{.vocab_size = 64, .d_model = 16, .n_layers = 2, .n_heads = 2, .d_ff = 32, .max_seq_len = 32,
                          .seed = 1};
    const auto base = init_model(cfg);
    const auto inst = synthetic::instruct_reference(base, 0.01, 2);
    const auto corpus = synthetic::domain_corpus(cfg, 32, 16, 3);
    const auto pairs = synthetic::preference_pairs(cfg, 64, 4);
    const auto structured = synthetic::struct_dataset(cfg, 24, 5);

    Track1Config zero1;
    zero1.cpt.train.max_steps = 0;
    zero1.dpo.train.max_steps = 0;
    const double track1_err = max_abs_diff(run_track1(base, inst, corpus, pairs, zero1).output, inst);
    o.expect(track1_err <= kTol, fmt::format("track1, no training: max |out - inst| = {:.3g} <= {:g}", track1_err, kTol));

    Track2Config zero2;
    zero2.cpt.train.max_steps = 3;
    zero2.sft.train.max_steps = 0;
    zero2.dpo.train.max_steps = 0;
    const auto t2 = run_track2(base, corpus, structured, pairs, zero2);
    o.expect(tensors_bit_equal(t2.output, t2.stage("cpt").checkpoint) && !tensors_bit_equal(t2.output, base),
             "track2, no SFT/DPO steps: output == trained CPT checkpoint bitwise");

    Track1Config trained;
    trained.dpo.train.max_steps = kDpoSteps;
    const auto t1 = run_track1(base, inst, corpus, pairs, trained);
    const auto held_out = synthetic::preference_pairs(cfg, 32, 77);
    const auto policy = DenseModel::from_checkpoint(t1.output);
    const auto reference = DenseModel::from_checkpoint(t1.stage("ir").checkpoint);
    double margin = 0.0;
    double loss = 0.0;
    for (const auto& p : held_out) {
        const auto t = dpo_loss(policy, LoraAdapterSet{}, reference, p, trained.dpo.train.beta);
        margin += t.margin / static_cast<double>(held_out.size());
        loss += t.loss / static_cast<double>(held_out.size());
    }
    const auto steps = t1.stage("qa").training->steps;
    o.expect(steps <= kDpoSteps && margin > 0.0 && loss < std::numbers::ln2,
             fmt::format("after {} DPO steps on {} pairs: held-out margin {:.4g} > 0, loss {:.6f} < ln 2", steps,
                         pairs.size(), margin, loss));

    const double elapsed = seconds_since(t0);
    o.expect(elapsed < kLimitS, fmt::format("{:.1f} s < {:g} s", elapsed, kLimitS));
    return o;
}

Outcome preference_curation() {
    constexpr double kMinDelta = 2.0;
    constexpr double kSplit = 0.85;
    constexpr std::size_t kItems = 1000;
    Outcome o;
    const std::vector<std::string> categories{"classification", "qa", "summarization"};
    const auto items = synthetic::rated_items(kItems, categories, 51);
    const auto r = curate_preferences(items, kMinDelta, kSplit, 52);

    std::map<std::string, std::size_t> eligible;
    for (const auto& it : items) {
        if (it.response_a != it.response_b && std::abs(it.rating_a - it.rating_b) >= kMinDelta) ++eligible[it.category];
    }
    std::map<std::string, std::size_t> train_n;
    std::map<std::string, std::size_t> eval_n;
    std::size_t below = 0;
    for (const auto* side : {&r.train, &r.eval}) {
        for (const auto& p : *side) {
            if (p.chosen_rating - p.rejected_rating < kMinDelta) ++below;
            ++(side == &r.train ? train_n : eval_n)[p.category];
        }
    }
    o.expect(below == 0, fmt::format("{} emitted pairs below min_delta {:g}", below, kMinDelta));
    for (const auto& cat : categories) {
        const auto n = eligible[cat];
        const double off = std::abs(static_cast<double>(train_n[cat]) - kSplit * static_cast<double>(n));
        o.expect(train_n[cat] + eval_n[cat] == n && off <= 1.0,
                 fmt::format("{}: {} eligible -> {} train / {} eval", cat, n, train_n[cat], eval_n[cat]));
    }
    return o;
}

std::size_t occurrences(std::string_view hay, std::string_view needle) {
    std::size_t n = 0;
    for (auto at = hay.find(needle); at != std::string_view::npos; at = hay.find(needle, at + needle.size())) ++n;
    return n;
}

Outcome corpus_pipeline() {
    Outcome o;
    const auto corpus = synthetic::planted_corpus(500, 50, 200, 42);
    CorpusConfig cfg;
    cfg.seed = 42;
    const auto first = process_documents(corpus.docs, cfg);
    const auto second = process_documents(corpus.docs, cfg);
    const auto& m = first.manifest;

    o.expect(m.duplicates_dropped == 50, fmt::format("duplicates_dropped = {} (planted 50)", m.duplicates_dropped));

    std::size_t leftovers = 0;
    std::size_t out_of_bounds = 0;
    for (const auto& c : first.chunks) {
        leftovers += scan_pii(c.text).size();
        if (c.token_count < kDefaultMinTokens || c.token_count > kDefaultMaxTokens) ++out_of_bounds;
    }
    o.expect(leftovers == 0, fmt::format("re-scan of {} chunks finds {} matches", first.chunks.size(), leftovers));
    o.expect(out_of_bounds == 0,
             fmt::format("{} chunks outside [{}, {}] tokens", out_of_bounds, kDefaultMinTokens, kDefaultMaxTokens));

    // Follow each planted repeated entity through its pre-redaction chunk.
    auto unique = dedup(corpus.docs).unique;
    std::size_t consistent = 0;
    std::size_t repeated = 0;
    std::size_t out_index = 0;
    for (auto& doc : unique) {
        doc.text = clean_stage2(clean_stage1(doc.text));
        for (const auto& chunk : chunk_document(doc).chunks) {
            if (out_index >= first.chunks.size()) break;
            const auto& emitted = first.chunks[out_index++];
            const auto redacted = redact_pii(chunk.text, cfg.seed);
            for (const auto& p : corpus.planted) {
                const auto seen = occurrences(chunk.text, p.surface);
                if (seen < 2) continue;
                ++repeated;
                const auto it = redacted.map.entries.find({std::string(entity_name(p.type)), p.surface});
                if (redacted.text == emitted.text && it != redacted.map.entries.end() &&
                    occurrences(emitted.text, it->second) == seen && occurrences(emitted.text, p.surface) == 0) {
                    ++consistent;
                }
            }
        }
    }
    o.expect(repeated == corpus.planted.size() && consistent == repeated,
             fmt::format("surrogate consistency {}/{} planted repeated entities", consistent, repeated));

    const bool identical = chunks_to_jsonl(first.chunks) == chunks_to_jsonl(second.chunks) &&
                           first.manifest.to_json().dump() == second.manifest.to_json().dump();
    o.expect(identical, "two runs with seed 42 are byte-identical");
    return o;
}

Outcome routing(const std::filesystem::path& fixture_path) {
    constexpr double kMedianLimitS = 0.100;
    Outcome o;
    std::ifstream in(fixture_path);
    if (!in) {
        o.expect(false, fmt::format("cannot read fixture {}", fixture_path.string()));
        return o;
    }
    std::vector<std::pair<std::string, TaskCategory>> queries;
    for (std::string line; std::getline(in, line);) {
        const auto j = nlohmann::json::parse(line);
        queries.emplace_back(j["query"].get<std::string>(), static_cast<TaskCategory>(j["category"].get<int>()));
    }

    KeywordStub stub;
    std::size_t agree = 0;
    for (const auto& [q, cat] : queries) {
        const auto plan = route(q, stub);
        const Expert want = cat == TaskCategory::QA ? Expert::QAExpert : Expert::StructExpert;
        if (plan.category == cat && plan.expert == want && !plan.fallback_used) ++agree;
    }
    o.expect(!queries.empty() && agree == queries.size(),
             fmt::format("stub classifier agreement {}/{}", agree, queries.size()));

    class Fixed : public ClassifierBackend {
    public:
        std::string reply;
        std::string complete(const std::string&, std::chrono::milliseconds) override { return reply; }
        bool healthy() override { return true; }
    } fixed;
    std::size_t unparseable = 0;
    std::size_t fell_back = 0;
    for (const char* reply : {"", "maybe", "4", "12", "category: unknown", "0", "1 or 2", "I cannot decide.", "3.5",
                              "QA or Summarization"}) {
        fixed.reply = reply;
        if (!std::holds_alternative<ParseFailure>(parse_category(reply))) continue;
        ++unparseable;
        const auto plan = route("anything", fixed);
        if (plan.expert == Expert::QAExpert && plan.fallback_used) ++fell_back;
    }
    o.expect(unparseable > 0 && fell_back == unparseable,
             fmt::format("unparseable replies routed to QAExpert with fallback flag: {}/{}", fell_back, unparseable));

    auto shared = std::make_shared<KeywordStub>();
    StubProfile profile;
    profile.service.mean_ms = 0;
    profile.responder = [shared](const std::string& prompt) { return shared->respond(query_from_prompt(prompt)); };
    StubServer server(profile);
    RemoteChat remote({server.url(), "router", {}});
    std::vector<double> latencies;
    std::size_t remote_agree = 0;
    for (const auto& [q, cat] : queries) {
        const auto plan = route(q, remote);
        if (plan.category == cat) ++remote_agree;
        latencies.push_back(plan.classification_latency_s);
    }
    std::sort(latencies.begin(), latencies.end());
    const double median = latencies.empty() ? INFINITY : latencies[latencies.size() / 2];
    o.expect(remote_agree == queries.size() && median < kMedianLimitS,
             fmt::format("loopback classification median {:.2f} ms < {:g} ms ({}/{} agree)", median * 1e3,
                         kMedianLimitS * 1e3, remote_agree, queries.size()));
    return o;
}

// Nearest-rank percentile with integer arithmetic: rank = ceil(p% * n).
double percentile_oracle(std::vector<double> values, int percent) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    const std::size_t rank = (static_cast<std::size_t>(percent) * n + 99) / 100;
    return values[std::max<std::size_t>(rank, 1) - 1];
}

Outcome benchmark_harness() {
    constexpr double kScalingTol = 0.20;
    constexpr std::size_t kRequests = 40;
    Outcome o;
    StubProfile profile;
    profile.service.mean_ms = 100.0;
    StubServer server(profile);

    BenchConfig one;
    one.endpoint = server.url();
    one.total_requests = kRequests;
    one.workers = 1;
    const auto r1 = run_benchmark(one);
    BenchConfig eight = one;
    eight.workers = 8;
    eight.total_requests = 8 * kRequests;
    const auto r8 = run_benchmark(eight);
    const double ratio = r8.throughput_rps / (8.0 * r1.throughput_rps);
    o.expect(std::abs(ratio - 1.0) <= kScalingTol,
             fmt::format("8 workers {:.2f} rps vs 8 x {:.2f} rps: ratio {:.3f} within {:g}", r8.throughput_rps,
                         r1.throughput_rps, ratio, kScalingTol));
    o.expect(r1.success_rate == 1.0 && r8.success_rate == 1.0,
             fmt::format("success_rate {:.3f} / {:.3f} at failure_rate 0", r1.success_rate, r8.success_rate));

    Rng rng(61);
    std::size_t exact = 0;
    for (int set = 0; set < 50; ++set) {
        std::vector<double> values(1 + rng.below(200));
        for (auto& v : values) v = rng.uniform() * 2.0;
        if (percentile_nearest_rank(values, 0.95) == percentile_oracle(values, 95)) ++exact;
    }
    o.expect(exact == 50, fmt::format("P95 equals nearest-rank oracle on {}/50 sets", exact));
    return o;
}

Outcome diagnostics() {
    constexpr double kTol = 1e-12;
    Outcome o;
    const ModelConfig cfg{.vocab_size = 32, .d_model = 16, .n_layers = 2, .n_heads = 2, .d_ff = 32, .seed = 71};
    const auto base = init_model(cfg);
    const auto delta = extract_residual(synthetic::instruct_reference(base, 0.05, 72), base);

    Checkpoint negated = delta;
    for (auto& [name, t] : negated.tensors) {
        auto v = t.to_f64();
        for (auto& x : v) x = -x;
        t = Tensor::from_values(t.dtype(), t.shape(), v);
    }
    // Split the tensors into two halves; each delta is nonzero on one half only.
    Checkpoint left = delta;
    Checkpoint right = delta;
    bool flip = false;
    for (auto& [name, t] : left.tensors) {
        auto& other = right.tensors.at(name);
        (flip ? t : other) = Tensor::zeros(t.dtype(), t.shape());
        flip = !flip;
    }

    const double same = subspace_diagnostics(delta, delta).global_cosine;
    const double disjoint = subspace_diagnostics(left, right).global_cosine;
    const double opposite = subspace_diagnostics(delta, negated).global_cosine;
    o.expect(std::abs(same - 1.0) <= kTol, fmt::format("identical: {:+.15f}", same));
    o.expect(std::abs(disjoint) <= kTol, fmt::format("disjoint support: {:+.15f}", disjoint));
    o.expect(std::abs(opposite + 1.0) <= kTol, fmt::format("negated: {:+.15f}", opposite));
    return o;
}

struct Criterion {
    int id;
    const char* title;
    std::function<Outcome()> check;
};

} // namespace
} // namespace specforge::acceptance

int main(int argc, char** argv) {
    using namespace specforge::acceptance;
    CLI::App app{"Runs the acceptance criteria and prints one PASS/FAIL line for each."};
    std::string fixture = SPECFORGE_ROUTING_FIXTURE;
    std::vector<int> only;
    app.add_option("--fixture", fixture, "Routing query fixture (JSONL)")->capture_default_str();
    app.add_option("--only", only, "Run only these criterion numbers");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria = {
        {1, "residual round-trip", residual_round_trip},
        {2, "zero laws", zero_laws},
        {3, "DPO fixed point", dpo_fixed_point},
        {4, "gradient fidelity", gradient_fidelity},
        {5, "LoRA accounting", lora_accounting},
        {6, "pipeline composition", pipeline_composition},
        {7, "preference curation", preference_curation},
        {8, "corpus pipeline", corpus_pipeline},
        {9, "routing", [&fixture] { return routing(fixture); }},
        {10, "benchmark harness", benchmark_harness},
        {11, "diagnostics", diagnostics},
    };

    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        Outcome outcome;
        try {
            outcome = c.check();
        } catch (const std::exception& e) {
            outcome.expect(false, fmt::format("threw: {}", e.what()));
        }
        std::string detail;
        for (const auto& n : outcome.notes) detail += (detail.empty() ? "" : "; ") + n;
        fmt::print("AC{:<3} {}  {}: {}\n", c.id, outcome.pass ? "PASS" : "FAIL", c.title, detail);
        std::fflush(stdout);
        if (!outcome.pass) ++failed;
    }
    return failed == 0 ? 0 : 1;
}
