#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "specforge/trainers.hpp"

namespace specforge {

// One LoRA training stage: where adapters go and how they are trained.
struct StageConfig {
    TrainConfig train;
    int rank = 8;
    double alpha = 16.0;
    double dropout = 0.0;
    std::vector<std::string> targets;
};

// Toy defaults. Each learning rate is the full-scale (8B) setting times 10;
// default_dpo_stage takes that full-scale rate.
StageConfig default_cpt_stage(double epochs);
StageConfig default_sft_stage();
StageConfig default_dpo_stage(double reference_learning_rate);

struct Track1Config {
    StageConfig cpt = default_cpt_stage(2.0);
    double residual_scale = 1.0;
    StageConfig dpo = default_dpo_stage(2.5e-5);
    // When set, cpt/ir/qa stage checkpoints are written here.
    std::optional<std::filesystem::path> stage_dir;
};

struct Track2Config {
    StageConfig cpt = default_cpt_stage(1.0);
    StageConfig sft = default_sft_stage();
    StageConfig dpo = default_dpo_stage(3e-5);
    // When set, cpt/sft/struct stage checkpoints are written here.
    std::optional<std::filesystem::path> stage_dir;
};

struct StageRecord {
    std::string name;
    Checkpoint checkpoint;
    std::optional<TrainResult> training;
};

struct TrackResult {
    Checkpoint output;
    std::vector<StageRecord> stages;

    const StageRecord& stage(const std::string& name) const;
};

// CPT-LoRA on the domain corpus, merge, add the instruction residual
// (inst_reference - base), then DPO-LoRA against the residual-restored model
// as frozen reference, merge.
TrackResult run_track1(const Checkpoint& base, const Checkpoint& inst_reference,
                       const std::vector<TokenSequence>& domain_corpus, const std::vector<PreferencePair>& pref_pairs,
                       const Track1Config& cfg);

// CPT-LoRA, merge, multi-task SFT-LoRA, merge, then DPO-LoRA against the SFT
// model as frozen reference, merge.
TrackResult run_track2(const Checkpoint& base, const std::vector<TokenSequence>& domain_corpus,
                       const std::vector<SupervisedExample>& struct_dataset,
                       const std::vector<PreferencePair>& pref_pairs, const Track2Config& cfg);

// ---------------------------------------------------------------------------
// Synthetic toy data. All generators are pure functions of their arguments.

namespace synthetic {

// Sequences that walk the vocabulary with a per-sequence stride, so the next
// token is predictable from the previous two.
std::vector<TokenSequence> domain_corpus(const ModelConfig& cfg, std::size_t n, std::size_t length,
                                         std::uint64_t seed);

// Base checkpoint plus Gaussian noise of the given stddev on every 2-D tensor;
// stands in for an instruction-tuned sibling of the base.
Checkpoint instruct_reference(const Checkpoint& base, double stddev, std::uint64_t seed);

// Prompts from the middle of the vocabulary; chosen completions drawn from the
// lowest quarter of the vocabulary, rejected ones from the highest quarter.
std::vector<PreferencePair> preference_pairs(const ModelConfig& cfg, std::size_t n, std::uint64_t seed);

// Round-robin over the three tasks: classification answers with one label
// token, summarization copies the first three prompt tokens, QA echoes the
// last prompt token twice.
std::vector<SupervisedExample> struct_dataset(const ModelConfig& cfg, std::size_t n, std::uint64_t seed);

// Rated response pairs spread over `categories`; ratings are integers 1..5.
std::vector<RatedItem> rated_items(std::size_t n, const std::vector<std::string>& categories, std::uint64_t seed);

} // namespace synthetic

} // namespace specforge
