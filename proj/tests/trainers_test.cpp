#include "specforge/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <gtest/gtest.h>

#include "specforge/pipeline.hpp"
#include "specforge/rng.hpp"
#include "specforge/weight_ops.hpp"

namespace specforge {
namespace {

// -log(sigmoid(0.2 * 0.7)) evaluated in python float64.
constexpr double kClosedFormDpoLoss = 0.6255951823371514;
// tests/oracles/toy_oracle.py on the seed-7 model, prompt {1,2,3,4},
// completion {9,10,11,30,2}.
constexpr double kOracleSftLoss = 3.49185982830409;

ModelConfig seed7() {
    return {.vocab_size = 32, .d_model = 16, .n_layers = 2, .n_heads = 2, .d_ff = 32, .max_seq_len = 32, .seed = 7};
}

ModelConfig tiny() {
    return {.vocab_size = 16, .d_model = 8, .n_layers = 1, .n_heads = 2, .d_ff = 12, .max_seq_len = 16, .seed = 5};
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

// Adapters with every A and B entry nonzero so all gradient paths are live.
LoraAdapterSet random_adapters(const Checkpoint& base, const std::vector<std::string>& modules, int rank,
                               std::uint64_t seed) {
    auto set = create_lora(base, modules, rank, 2.0 * rank, 0.0, seed);
    Rng rng(seed);
    for (auto& [name, p] : set.entries) {
        for (Eigen::Index i = 0; i < p.a.size(); ++i) p.a.data()[i] = rng.normal(0.0, 0.3);
        for (Eigen::Index i = 0; i < p.b.size(); ++i) p.b.data()[i] = rng.normal(0.0, 0.3);
    }
    return set;
}

// Base with weights scaled up from the init scale so gradients are not tiny.
Checkpoint lively(const ModelConfig& cfg, double extra_sd) {
    Checkpoint c = init_model(cfg);
    Rng rng(cfg.seed + 100);
    for (auto& [name, t] : c.tensors) {
        if (t.shape().size() != 2) continue;
        auto v = t.to_f64();
        for (auto& x : v) x += rng.normal(0.0, extra_sd);
        t = Tensor::from_values(DType::F32, t.shape(), v);
    }
    return c;
}

struct FdStats {
    double max_rel = 0.0;
    std::size_t checked = 0;
};

// Central differences over every adapter entry with |g| > 1e-8.
template <typename LossFn>
FdStats finite_difference_check(LoraAdapterSet adapters, const AdapterGrads& grads, LossFn loss) {
    const double h = 1e-4;
    FdStats stats;
    for (auto& [name, p] : adapters.entries) {
        for (int which = 0; which < 2; ++which) {
            Matrix& m = which == 0 ? p.a : p.b;
            const Matrix& g = which == 0 ? grads.at(name).a : grads.at(name).b;
            for (Eigen::Index i = 0; i < m.size(); ++i) {
                if (std::abs(g.data()[i]) <= 1e-8) continue;
                const double orig = m.data()[i];
                m.data()[i] = orig + h;
                const double up = loss(adapters);
                m.data()[i] = orig - h;
                const double down = loss(adapters);
                m.data()[i] = orig;
                const double fd = (up - down) / (2 * h);
                const double rel = std::abs(g.data()[i] - fd) / std::max(std::abs(g.data()[i]), std::abs(fd));
                stats.max_rel = std::max(stats.max_rel, rel);
                ++stats.checked;
            }
        }
    }
    return stats;
}

// ---------------------------------------------------------------------------

TEST(DpoLossTest, ClosedFormScalarExample) {
    const auto terms = dpo_from_logprobs(-1.0, -1.2, -2.0, -1.5, 0.2);
    EXPECT_NEAR(terms.margin, 0.7, 1e-12);
    EXPECT_NEAR(terms.loss, kClosedFormDpoLoss, 1e-6);
}

TEST(DpoLossTest, PolicyEqualsReferenceGivesLn2) {
    const auto base = init_model(seed7());
    const auto model = DenseModel::from_checkpoint(base);
    const auto zero = create_lora(base, targets::kDpo, 8, 16.0, 0.1, 3);
    Rng rng(11);
    for (int i = 0; i < 100; ++i) {
        const auto terms = dpo_loss(model, zero, model, random_pair(rng, 32), 0.2);
        EXPECT_NEAR(terms.loss, std::numbers::ln2, 1e-12);
        EXPECT_EQ(terms.margin, 0.0);
    }
}

TEST(DpoLossTest, StrictlyDecreasingInMarginAndSaturates) {
    double prev = INFINITY;
    for (double m = -50.0; m <= 50.0; m += 0.25) {
        const double loss = dpo_from_logprobs(m, 0.0, 0.0, 0.0, 0.2).loss;
        EXPECT_LT(loss, prev) << m;
        EXPECT_GE(loss, 0.0);
        prev = loss;
    }
    EXPECT_LT(dpo_from_logprobs(1e4, 0.0, 0.0, 0.0, 0.2).loss, 1e-300);
    EXPECT_NEAR(dpo_from_logprobs(-1e4, 0.0, 0.0, 0.0, 0.2).loss, 2e3, 1e-9);
}

TEST(DpoLossTest, CheckpointOverloadMergesOnTheFly) {
    const auto base = init_model(tiny());
    const auto adapters = random_adapters(base, targets::kDpo, 2, 4);
    Rng rng(2);
    const auto pair = random_pair(rng, 16);
    const auto via_merge = dpo_loss(DenseModel::from_checkpoint(base).with_adapters(adapters), LoraAdapterSet{.rank = 1},
                                    DenseModel::from_checkpoint(base), pair, 0.2);
    const auto direct = dpo_loss(base, adapters, base, pair, 0.2);
    EXPECT_NEAR(direct.loss, via_merge.loss, 1e-12);
    EXPECT_GT(std::abs(direct.margin), 0.0);
}

TEST(DpoLossTest, Errors) {
    const auto base = init_model(tiny());
    const auto zero = create_lora(base, targets::kDpo, 2, 4.0, 0.0, 1);
    Rng rng(1);
    const auto pair = random_pair(rng, 16);
    EXPECT_THROW(dpo_loss(base, zero, base, pair, 0.0), ConfigError);
    EXPECT_THROW(dpo_loss(base, zero, base, pair, -1.0), ConfigError);
    auto other_cfg = tiny();
    other_cfg.d_ff = 10;
    EXPECT_THROW(dpo_loss(base, zero, init_model(other_cfg), pair, 0.2), IncompatibleError);
}

TEST(DpoGradTest, MatchesCentralDifferences) {
    const auto base_ckpt = lively(tiny(), 0.3);
    const auto base = DenseModel::from_checkpoint(base_ckpt);
    const auto reference = DenseModel::from_checkpoint(lively(tiny(), 0.1));
    const auto adapters = random_adapters(base_ckpt, targets::kDpo, 2, 9);
    Rng rng(4);
    std::vector<PreferencePair> batch;
    for (int i = 0; i < 3; ++i) batch.push_back(random_pair(rng, 16));

    const auto g = dpo_grad(base, adapters, reference, batch, 0.2);
    const auto stats = finite_difference_check(adapters, g.grads, [&](const LoraAdapterSet& a) {
        double sum = 0.0;
        for (const auto& p : batch) sum += dpo_loss(base, a, reference, p, 0.2).loss;
        return sum / static_cast<double>(batch.size());
    });
    EXPECT_GE(stats.checked, 120u);
    EXPECT_LE(stats.max_rel, 1e-4);
}

TEST(DpoGradTest, SwappedDuplicatesCancel) {
    const auto base_ckpt = init_model(tiny());
    const auto base = DenseModel::from_checkpoint(base_ckpt);
    const auto zero = create_lora(base_ckpt, targets::kDpo, 4, 8.0, 0.0, 2);
    Rng rng(6);
    const auto p = random_pair(rng, 16);
    PreferencePair swapped = p;
    std::swap(swapped.chosen, swapped.rejected);
    const auto g = dpo_grad(base, zero, base, {p, swapped}, 0.2);
    EXPECT_LE(global_norm(g.grads), 1e-10);
    EXPECT_GT(g.chosen_grad_norm, 0.0);
}

TEST(DpoGradTest, BatchOfOneIsPairGradient) {
    const auto base_ckpt = lively(tiny(), 0.2);
    const auto base = DenseModel::from_checkpoint(base_ckpt);
    const auto adapters = random_adapters(base_ckpt, targets::kDpo, 2, 1);
    Rng rng(8);
    const auto p = random_pair(rng, 16);
    const auto one = dpo_grad(base, adapters, base, {p}, 0.2);
    const auto pair_only = dpo_loss(base, adapters, base, p, 0.2);
    EXPECT_DOUBLE_EQ(one.mean_loss, pair_only.loss);
    const auto again = dpo_grad(base, adapters, base, {p}, 0.2, {reference_logprobs(base, p)});
    for (const auto& [name, g] : one.grads) {
        EXPECT_EQ(g.a, again.grads.at(name).a);
        EXPECT_EQ(g.b, again.grads.at(name).b);
    }
}

TEST(SftLossTest, MatchesFloat64Oracle) {
    const auto model = DenseModel::from_checkpoint(init_model(seed7()));
    EXPECT_NEAR(sft_loss(model, {.prompt = {1, 2, 3, 4}, .completion = {9, 10, 11, 30, 2}}), kOracleSftLoss, 1e-10);
}

TEST(SftLossTest, UniformModelGivesLn4) {
    auto cfg = seed7();
    cfg.vocab_size = 4;
    auto c = init_model(cfg);
    for (auto& [name, t] : c.tensors) t = Tensor::zeros(DType::F32, t.shape());
    EXPECT_NEAR(sft_loss(DenseModel::from_checkpoint(c), {.prompt = {1}, .completion = {2, 3, 0}}), std::log(4.0), 1e-9);
}

TEST(SftLossTest, EmptyPromptReducesToLmLoss) {
    const auto model = DenseModel::from_checkpoint(init_model(seed7()));
    const TokenSequence seq{4, 8, 15, 16, 23};
    EXPECT_NEAR(sft_loss(model, {.prompt = {}, .completion = seq}), lm_loss(model, seq), 1e-12);
}

TEST(SftLossTest, EqualsMaskedPerPositionLoss) {
    const auto model = DenseModel::from_checkpoint(init_model(seed7()));
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        SupervisedExample ex{.prompt = random_tokens(rng, 1 + rng.below(6), 32),
                             .completion = random_tokens(rng, 1 + rng.below(6), 32)};
        const auto seq = concat(ex.prompt, ex.completion);
        const Matrix lp = log_softmax(forward(model, seq));
        double sum = 0.0;
        for (std::size_t t = ex.prompt.size(); t < seq.size(); ++t) {
            sum -= lp(static_cast<Eigen::Index>(t - 1), seq[t]);
        }
        EXPECT_NEAR(sft_loss(model, ex), sum / static_cast<double>(ex.completion.size()), 1e-12);
    }
}

TEST(SftLossTest, RejectsEmptyCompletion) {
    const auto model = DenseModel::from_checkpoint(init_model(seed7()));
    EXPECT_THROW(sft_loss(model, {.prompt = {1}, .completion = {}}), FormatError);
    EXPECT_THROW(sft_loss(model, {.prompt = {}, .completion = {1}}), FormatError);
}

TEST(SftGradTest, MatchesCentralDifferences) {
    const auto base_ckpt = lively(tiny(), 0.3);
    const auto base = DenseModel::from_checkpoint(base_ckpt);
    const auto adapters = random_adapters(base_ckpt, targets::kSft, 4, 13);
    Rng rng(14);
    std::vector<SupervisedExample> batch;
    for (int i = 0; i < 3; ++i) {
        batch.push_back({.prompt = random_tokens(rng, 3, 16), .completion = random_tokens(rng, 2 + rng.below(3), 16)});
    }
    const auto g = sft_grad(base, adapters, batch);
    const auto stats = finite_difference_check(adapters, g.grads, [&](const LoraAdapterSet& a) {
        double sum = 0.0;
        for (const auto& ex : batch) sum += sft_loss(base, a, ex);
        return sum / static_cast<double>(batch.size());
    });
    EXPECT_GT(stats.checked, 100u);
    EXPECT_LE(stats.max_rel, 1e-4);
}

TEST(CptGradTest, MatchesCentralDifferences) {
    const auto base_ckpt = lively(tiny(), 0.3);
    const auto base = DenseModel::from_checkpoint(base_ckpt);
    const auto adapters = random_adapters(base_ckpt, targets::kCpt, 2, 15);
    Rng rng(16);
    const std::vector<TokenSequence> batch{random_tokens(rng, 6, 16), random_tokens(rng, 4, 16)};
    const auto g = cpt_grad(base, adapters, batch);
    const auto stats = finite_difference_check(adapters, g.grads, [&](const LoraAdapterSet& a) {
        const auto m = base.with_adapters(a);
        return (lm_loss(m, batch[0]) + lm_loss(m, batch[1])) / 2.0;
    });
    EXPECT_GT(stats.checked, 100u);
    EXPECT_LE(stats.max_rel, 1e-4);
}

// ---------------------------------------------------------------------------

TEST(TrainConfigTest, Validation) {
    TrainConfig ok;
    EXPECT_NO_THROW(ok.validate());
    for (auto mutate : std::vector<void (*)(TrainConfig&)>{
             [](TrainConfig& c) { c.learning_rate = 0; }, [](TrainConfig& c) { c.beta = 0; },
             [](TrainConfig& c) { c.batch_size = 0; }, [](TrainConfig& c) { c.epochs = -1; },
             [](TrainConfig& c) { c.max_steps = -2; }}) {
        TrainConfig c;
        mutate(c);
        EXPECT_THROW(c.validate(), ConfigError);
    }
}

TEST(TrainTest, PlannedStepsHandlesFractionalEpochs) {
    TrainConfig c;
    c.batch_size = 4;
    c.epochs = 0.98;
    EXPECT_EQ(planned_steps(c, 400), 98);
    EXPECT_EQ(planned_steps(c, 10), 3);
    c.epochs = 2;
    EXPECT_EQ(planned_steps(c, 10), 6);
    c.max_steps = 7;
    EXPECT_EQ(planned_steps(c, 10), 7);
}

TEST(TrainTest, ZeroStepsReturnsAdaptersUnchanged) {
    const auto base = init_model(tiny());
    const auto adapters = random_adapters(base, targets::kSft, 2, 3);
    TrainConfig c;
    c.max_steps = 0;
    const auto r = train(base, adapters, SftObjective{{{.prompt = {1}, .completion = {2}}}}, c);
    EXPECT_EQ(r.steps, 0);
    for (const auto& [name, p] : adapters.entries) {
        EXPECT_EQ(r.adapters.entries.at(name).a, p.a);
        EXPECT_EQ(r.adapters.entries.at(name).b, p.b);
    }
}

TEST(TrainTest, DeterministicAndBaseUntouched) {
    const auto cfg = tiny();
    const auto base = init_model(cfg);
    const auto base_bytes = serialize_checkpoint(base);
    const auto adapters = create_lora(base, targets::kDpo, 4, 8.0, 0.1, 5);
    DpoObjective obj{base, synthetic::preference_pairs(cfg, 16, 3)};
    TrainConfig c;
    c.learning_rate = 0.05;
    c.max_steps = 12;
    c.seed = 99;
    const auto r1 = train(base, adapters, obj, c);
    const auto r2 = train(base, adapters, obj, c);
    EXPECT_EQ(serialize_checkpoint(base), base_bytes);
    EXPECT_EQ(r1.loss_trace, r2.loss_trace);
    EXPECT_EQ(serialize_checkpoint(merge_lora(base, r1.adapters)), serialize_checkpoint(merge_lora(base, r2.adapters)));
    EXPECT_EQ(r1.steps, 12);
    EXPECT_EQ(r1.margin_trace.size(), 12u);
    EXPECT_EQ(r1.pair_margins.size(), 12u * 4u);
    EXPECT_EQ(r1.chosen_grad_norm.size(), 12u);
    EXPECT_FALSE(r1.adapters.all_b_zero());
    EXPECT_EQ(r1.adapters.trainable_parameter_count(), adapters.trainable_parameter_count());
}

TEST(TrainTest, CptOnRepeatedSequenceDecreasesLoss) {
    const auto cfg = tiny();
    const auto base = init_model(cfg);
    const auto adapters = create_lora(base, targets::kCpt, 4, 4.0, 0.0, 8);
    const TokenSequence seq{1, 2, 3, 4, 5, 6, 7, 8};
    TrainConfig c;
    c.learning_rate = 0.02;
    c.batch_size = 1;
    c.epochs = 200;
    const auto r = train(base, adapters, CptObjective{{seq}}, c);
    ASSERT_EQ(r.loss_trace.size(), 200u);
    for (std::size_t i = 2; i < r.loss_trace.size(); ++i) {
        EXPECT_LE(r.loss_trace[i], r.loss_trace[i - 1] + 1e-3) << i;
    }
    EXPECT_LT(r.loss_trace.back(), r.loss_trace.front() - 1.0);
}

TEST(TrainTest, NonFiniteLossAborts) {
    auto base = init_model(tiny());
    auto v = base.at(names::kLmHead).to_f64();
    v[0] = NAN;
    base.tensors[names::kLmHead] = Tensor::from_values(DType::F32, base.at(names::kLmHead).shape(), v);
    const auto adapters = create_lora(base, targets::kSft, 2, 4.0, 0.0, 1);
    TrainConfig c;
    c.max_steps = 3;
    EXPECT_THROW(train(base, adapters, SftObjective{{{.prompt = {1}, .completion = {0, 2}}}}, c), Error);
}

TEST(TrainTest, EmptyDatasetRejected) {
    const auto base = init_model(tiny());
    const auto adapters = create_lora(base, targets::kSft, 2, 4.0, 0.0, 1);
    EXPECT_THROW(train(base, adapters, CptObjective{}, TrainConfig{}), ConfigError);
}

// ---------------------------------------------------------------------------

RatedItem rated(double a, double b, std::string category = "qa") {
    return {.prompt = {1}, .response_a = {2}, .rating_a = a, .response_b = {3}, .rating_b = b,
            .category = std::move(category)};
}

TEST(CurationTest, RuleApplication) {
    auto r = curate_preferences({rated(5, 2)}, 2.0, 0.5, 1);
    ASSERT_EQ(r.train.size() + r.eval.size(), 1u);
    const auto& p = r.train.empty() ? r.eval[0] : r.train[0];
    EXPECT_EQ(p.chosen, TokenSequence{2});
    EXPECT_EQ(p.chosen_rating, 5.0);

    r = curate_preferences({rated(4, 3)}, 2.0, 0.5, 1);
    EXPECT_TRUE(r.empty());
    EXPECT_EQ(r.below_threshold, 1u);

    r = curate_preferences({rated(2, 5)}, 2.0, 0.5, 1);
    const auto& q = r.train.empty() ? r.eval[0] : r.train[0];
    EXPECT_EQ(q.chosen, TokenSequence{3});
}

TEST(CurationTest, TiesAndIdenticalResponsesDropped) {
    auto same = rated(5, 1);
    same.response_b = same.response_a;
    const auto r = curate_preferences({rated(3, 3), same}, 0.0, 0.5, 1);
    EXPECT_TRUE(r.empty());
    EXPECT_EQ(r.ties, 1u);
    EXPECT_EQ(r.identical_responses, 1u);
}

TEST(CurationTest, HundredSingleCategoryPairsSplit85To15) {
    std::vector<RatedItem> items;
    for (int i = 0; i < 100; ++i) {
        auto it = rated(5, 1);
        it.prompt = {i};
        items.push_back(it);
    }
    const auto r = curate_preferences(items, 1.0, 0.85, 7);
    EXPECT_EQ(r.train.size(), 85u);
    EXPECT_EQ(r.eval.size(), 15u);
}

TEST(CurationTest, InvalidArguments) {
    EXPECT_THROW(curate_preferences({}, -1.0, 0.85, 0), ConfigError);
    EXPECT_THROW(curate_preferences({}, 1.0, 1.0, 0), ConfigError);
    EXPECT_THROW(curate_preferences({}, 1.0, 0.0, 0), ConfigError);
    EXPECT_THROW(curate_preferences({rated(NAN, 1)}, 1.0, 0.5, 0), FormatError);
}

TEST(CurationPropertyTest, ThresholdPartitionAndStratification) {
    const std::vector<std::string> categories{"classification", "qa", "summarization"};
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto items = synthetic::rated_items(1000, categories, seed);
        const double min_delta = 1.0 + static_cast<double>(seed % 3);
        const auto r = curate_preferences(items, min_delta, 0.85, seed);

        std::map<std::string, std::size_t> eligible;
        for (const auto& it : items) {
            if (it.response_a != it.response_b && std::abs(it.rating_a - it.rating_b) >= min_delta &&
                it.rating_a != it.rating_b) {
                ++eligible[it.category];
            }
        }
        std::map<std::string, std::size_t> train_n, eval_n;
        std::set<TokenSequence> seen;
        for (const auto* side : {&r.train, &r.eval}) {
            for (const auto& p : *side) {
                EXPECT_GE(p.chosen_rating - p.rejected_rating, min_delta);
                EXPECT_NE(p.chosen, p.rejected);
                EXPECT_TRUE(seen.insert(p.prompt).second) << "pair appears twice";
                ++(side == &r.train ? train_n : eval_n)[p.category];
            }
        }
        for (const auto& [cat, n] : eligible) {
            EXPECT_EQ(train_n[cat] + eval_n[cat], n);
            EXPECT_LE(std::abs(static_cast<double>(train_n[cat]) - 0.85 * static_cast<double>(n)), 1.0) << cat;
        }
        EXPECT_EQ(curate_preferences(items, min_delta, 0.85, seed).train, r.train);
    }
}

} // namespace
} // namespace specforge
