#include "specforge/pipeline.hpp"

#include <fmt/format.h>

#include "specforge/error.hpp"
#include "specforge/rng.hpp"
#include "specforge/weight_ops.hpp"

namespace specforge {

StageConfig default_cpt_stage(double epochs) {
    StageConfig s;
    s.train.learning_rate = 2e-4 * 10;
    s.train.epochs = epochs;
    s.train.batch_size = 4;
    s.rank = 8;
    s.alpha = 8.0;
    s.dropout = 0.15;
    s.targets = targets::kCpt;
    return s;
}

StageConfig default_sft_stage() {
    StageConfig s;
    s.train.learning_rate = 1e-3 * 10;
    s.train.epochs = 3.0;
    s.train.batch_size = 4;
    s.rank = 16;
    s.alpha = 32.0;
    s.dropout = 0.2;
    s.targets = targets::kSft;
    return s;
}

StageConfig default_dpo_stage(double reference_learning_rate) {
    StageConfig s;
    s.train.learning_rate = reference_learning_rate * 10;
    s.train.beta = 0.2;
    s.train.epochs = 0.98;
    s.train.batch_size = 4;
    s.rank = 8;
    s.alpha = 16.0;
    s.dropout = 0.1;
    s.targets = targets::kDpo;
    return s;
}

const StageRecord& TrackResult::stage(const std::string& name) const {
    for (const auto& s : stages) {
        if (s.name == name) return s;
    }
    throw Error(fmt::format("pipeline produced no stage named '{}'", name));
}

namespace {

struct StageOutput {
    Checkpoint merged;
    TrainResult training;
};

StageOutput lora_stage(const Checkpoint& model, const Objective& objective, const StageConfig& stage,
                       const std::string& label) {
    auto adapters = create_lora(model, stage.targets, stage.rank, stage.alpha, stage.dropout,
                                derive_seed(stage.train.seed, label));
    auto trained = train(model, adapters, objective, stage.train);
    Checkpoint merged = merge_lora(model, trained.adapters);
    return {std::move(merged), std::move(trained)};
}

void tag(Checkpoint& ckpt, const std::string& pipeline, const std::string& stage) {
    ckpt.metadata["pipeline"] = pipeline;
    ckpt.metadata["stage"] = stage;
}

void persist(const TrackResult& result, const std::optional<std::filesystem::path>& dir) {
    if (!dir) return;
    std::filesystem::create_directories(*dir);
    for (const auto& s : result.stages) save_checkpoint(s.checkpoint, *dir / (s.name + ".safetensors"));
}

} // namespace

TrackResult run_track1(const Checkpoint& base, const Checkpoint& inst_reference,
                       const std::vector<TokenSequence>& domain_corpus, const std::vector<PreferencePair>& pref_pairs,
                       const Track1Config& cfg) {
    require_compatible(base, inst_reference, "base vs instruct reference");
    TrackResult result;

    auto cpt = lora_stage(base, CptObjective{domain_corpus}, cfg.cpt, "track1/cpt");
    tag(cpt.merged, "track1", "cpt");
    result.stages.push_back({"cpt", cpt.merged, std::move(cpt.training)});

    Checkpoint ir = apply_residual(cpt.merged, extract_residual(inst_reference, base), cfg.residual_scale);
    tag(ir, "track1", "ir");
    result.stages.push_back({"ir", ir, std::nullopt});

    auto dpo = lora_stage(ir, DpoObjective{ir, pref_pairs}, cfg.dpo, "track1/dpo");
    tag(dpo.merged, "track1", "qa");
    result.stages.push_back({"qa", dpo.merged, std::move(dpo.training)});

    result.output = std::move(dpo.merged);
    persist(result, cfg.stage_dir);
    return result;
}

TrackResult run_track2(const Checkpoint& base, const std::vector<TokenSequence>& domain_corpus,
                       const std::vector<SupervisedExample>& struct_dataset,
                       const std::vector<PreferencePair>& pref_pairs, const Track2Config& cfg) {
    TrackResult result;

    auto cpt = lora_stage(base, CptObjective{domain_corpus}, cfg.cpt, "track2/cpt");
    tag(cpt.merged, "track2", "cpt");
    result.stages.push_back({"cpt", cpt.merged, std::move(cpt.training)});

    auto sft = lora_stage(cpt.merged, SftObjective{struct_dataset}, cfg.sft, "track2/sft");
    tag(sft.merged, "track2", "sft");
    result.stages.push_back({"sft", sft.merged, std::move(sft.training)});

    auto dpo = lora_stage(sft.merged, DpoObjective{sft.merged, pref_pairs}, cfg.dpo, "track2/dpo");
    tag(dpo.merged, "track2", "struct");
    result.stages.push_back({"struct", dpo.merged, std::move(dpo.training)});

    result.output = std::move(dpo.merged);
    persist(result, cfg.stage_dir);
    return result;
}

namespace synthetic {

namespace {

std::int32_t token_in(Rng& rng, std::int64_t lo, std::int64_t hi) {
    return static_cast<std::int32_t>(lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo))));
}

void require_vocab(const ModelConfig& cfg, std::int64_t min_vocab) {
    if (cfg.vocab_size < min_vocab) {
        throw ConfigError(fmt::format("synthetic data needs vocab_size >= {}, got {}", min_vocab, cfg.vocab_size));
    }
}

} // namespace

std::vector<TokenSequence> domain_corpus(const ModelConfig& cfg, std::size_t n, std::size_t length,
                                         std::uint64_t seed) {
    require_vocab(cfg, 4);
    if (length < 2 || static_cast<std::int64_t>(length) > cfg.max_seq_len) {
        throw ConfigError(fmt::format("corpus sequence length must lie in [2, {}]", cfg.max_seq_len));
    }
    Rng rng(derive_seed(seed, "corpus"));
    std::vector<TokenSequence> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto start = token_in(rng, 0, cfg.vocab_size);
        const auto stride = token_in(rng, 1, std::min<std::int64_t>(cfg.vocab_size, 4));
        TokenSequence seq(length);
        for (std::size_t t = 0; t < length; ++t) {
            seq[t] = static_cast<std::int32_t>((start + static_cast<std::int64_t>(t) * stride) % cfg.vocab_size);
        }
        out.push_back(std::move(seq));
    }
    return out;
}

Checkpoint instruct_reference(const Checkpoint& base, double stddev, std::uint64_t seed) {
    Checkpoint out = base;
    for (auto& [name, t] : out.tensors) {
        if (t.shape().size() != 2) continue;
        Rng rng(derive_seed(seed, "instruct/" + name));
        auto v = t.to_f64();
        for (auto& x : v) x += rng.normal(0.0, stddev);
        t = Tensor::from_values(t.dtype(), t.shape(), v);
    }
    out.metadata["stage"] = "instruct";
    return out;
}

std::vector<PreferencePair> preference_pairs(const ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
    require_vocab(cfg, 8);
    const std::int64_t v = cfg.vocab_size;
    const std::int64_t quarter = v / 4;
    Rng rng(derive_seed(seed, "preferences"));
    std::vector<PreferencePair> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        PreferencePair p;
        p.prompt.resize(4);
        for (auto& t : p.prompt) t = token_in(rng, quarter, v - quarter);
        p.chosen.resize(4);
        p.rejected.resize(4);
        for (auto& t : p.chosen) t = token_in(rng, 0, quarter);
        for (auto& t : p.rejected) t = token_in(rng, v - quarter, v);
        p.chosen_rating = 5.0;
        p.rejected_rating = 1.0;
        p.category = "synthetic";
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<SupervisedExample> struct_dataset(const ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
    require_vocab(cfg, 8);
    const std::int64_t v = cfg.vocab_size;
    Rng rng(derive_seed(seed, "struct"));
    std::vector<SupervisedExample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        SupervisedExample ex;
        ex.prompt.resize(6);
        for (auto& t : ex.prompt) t = token_in(rng, 3, v);
        switch (i % 3) {
        case 0: {
            ex.task = SupervisedTask::Classification;
            // Label tokens 0..2 by the sum of the prompt.
            std::int64_t sum = 0;
            for (auto t : ex.prompt) sum += t;
            ex.completion = {static_cast<std::int32_t>(sum % 3)};
            break;
        }
        case 1:
            ex.task = SupervisedTask::Summarization;
            ex.completion.assign(ex.prompt.begin(), ex.prompt.begin() + 3);
            break;
        default:
            ex.task = SupervisedTask::QASup;
            ex.completion = {ex.prompt.back(), ex.prompt.back()};
            break;
        }
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<RatedItem> rated_items(std::size_t n, const std::vector<std::string>& categories, std::uint64_t seed) {
    if (categories.empty()) throw ConfigError("rated_items needs at least one category");
    Rng rng(derive_seed(seed, "rated"));
    std::vector<RatedItem> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        RatedItem item;
        item.category = categories[rng.below(categories.size())];
        item.prompt = {static_cast<std::int32_t>(i % 1000), static_cast<std::int32_t>(i / 1000)};
        item.response_a = {static_cast<std::int32_t>(rng.below(50)), static_cast<std::int32_t>(rng.below(50))};
        item.response_b = {static_cast<std::int32_t>(rng.below(50)), static_cast<std::int32_t>(rng.below(50))};
        item.rating_a = static_cast<double>(1 + rng.below(5));
        item.rating_b = static_cast<double>(1 + rng.below(5));
        out.push_back(std::move(item));
    }
    return out;
}

} // namespace synthetic

} // namespace specforge
