#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "specforge/lora.hpp"
#include "specforge/toy_transformer.hpp"

namespace specforge {

struct PreferencePair {
    TokenSequence prompt;
    TokenSequence chosen;
    TokenSequence rejected;
    double chosen_rating = 0.0;
    double rejected_rating = 0.0;
    std::string category;

    friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

enum class SupervisedTask { Classification, Summarization, QASup };

std::string_view task_name(SupervisedTask task);
SupervisedTask parse_task(std::string_view name);

struct SupervisedExample {
    TokenSequence prompt;
    TokenSequence completion;
    SupervisedTask task = SupervisedTask::QASup;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta = 0.2;
    double epochs = 1.0;
    int batch_size = 4;
    std::uint64_t seed = 0;
    std::optional<std::int64_t> max_steps;
    // Global gradient-norm clip; 0 disables.
    double clip_norm = 1.0;

    void validate() const;
};

// Gradients with the same layout as the adapters they belong to.
using AdapterGrads = std::map<std::string, LoraPair>;

// Chain rule from effective-weight gradients to A and B:
// dA = s B^T dW, dB = s dW A^T.
AdapterGrads adapter_grads(const LoraAdapterSet& adapters, const WeightGrads& weight_grads);
double global_norm(const AdapterGrads& grads);

// ---------------------------------------------------------------------------
// DPO

struct DpoTerms {
    double loss = 0.0;
    double margin = 0.0;
};

// loss = -log sigmoid(beta * margin),
// margin = (pi_chosen - ref_chosen) - (pi_rejected - ref_rejected).
DpoTerms dpo_from_logprobs(double policy_chosen, double ref_chosen, double policy_rejected, double ref_rejected,
                           double beta);

struct ReferenceLogprobs {
    double chosen = 0.0;
    double rejected = 0.0;
};

ReferenceLogprobs reference_logprobs(const DenseModel& reference, const PreferencePair& pair);

// Policy = base with adapters merged on the fly.
DpoTerms dpo_loss(const DenseModel& policy_base, const LoraAdapterSet& adapters, const DenseModel& reference,
                  const PreferencePair& pair, double beta);
DpoTerms dpo_loss(const Checkpoint& policy_base, const LoraAdapterSet& adapters, const Checkpoint& reference,
                  const PreferencePair& pair, double beta);

struct DpoGradient {
    double mean_loss = 0.0;
    double mean_margin = 0.0;
    std::vector<double> margins;
    AdapterGrads grads;
    // Norms of the batch-mean gradient split into the chosen-completion and
    // rejected-completion terms. Diagnostic only.
    double chosen_grad_norm = 0.0;
    double rejected_grad_norm = 0.0;
};

// Exact gradient of the mean batch loss with respect to every adapter entry;
// base weights are frozen. `refs` may be empty, in which case reference
// log-probabilities are computed here.
DpoGradient dpo_grad(const DenseModel& policy_base, const LoraAdapterSet& adapters, const DenseModel& reference,
                     const std::vector<PreferencePair>& batch, double beta,
                     const std::vector<ReferenceLogprobs>& refs = {});

// ---------------------------------------------------------------------------
// SFT / CPT

// Mean NLL over completion tokens only.
double sft_loss(const DenseModel& policy, const SupervisedExample& ex, WeightGrads* grads = nullptr, double weight = 1.0);
double sft_loss(const DenseModel& policy_base, const LoraAdapterSet& adapters, const SupervisedExample& ex);

struct LossGradient {
    double mean_loss = 0.0;
    AdapterGrads grads;
};

LossGradient sft_grad(const DenseModel& policy_base, const LoraAdapterSet& adapters,
                      const std::vector<SupervisedExample>& batch);
LossGradient cpt_grad(const DenseModel& policy_base, const LoraAdapterSet& adapters,
                      const std::vector<TokenSequence>& batch);

// ---------------------------------------------------------------------------
// Training loop

struct CptObjective {
    std::vector<TokenSequence> corpus;
};
struct SftObjective {
    std::vector<SupervisedExample> examples;
};
struct DpoObjective {
    Checkpoint reference;
    std::vector<PreferencePair> pairs;
};
using Objective = std::variant<CptObjective, SftObjective, DpoObjective>;

struct MarginRecord {
    std::int64_t step = 0;
    std::size_t pair_index = 0;
    double margin = 0.0;
};

struct TrainResult {
    LoraAdapterSet adapters;
    std::int64_t steps = 0;
    std::vector<double> loss_trace;   // mean batch loss before each update
    std::vector<double> margin_trace; // DPO only: mean batch margin per step
    std::vector<MarginRecord> pair_margins;
    std::vector<double> chosen_grad_norm;
    std::vector<double> rejected_grad_norm;
};

// Number of optimizer steps the config implies for a dataset of `n` items.
std::int64_t planned_steps(const TrainConfig& cfg, std::size_t n);

// Plain mini-batch gradient descent on the adapter parameters. Each epoch
// visits the data in an order shuffled by Rng(derive_seed(seed, "epoch<k>")).
// Throws Error if the loss becomes non-finite.
TrainResult train(const Checkpoint& policy_base, const LoraAdapterSet& adapters, const Objective& objective,
                  const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Preference curation

struct RatedItem {
    TokenSequence prompt;
    TokenSequence response_a;
    double rating_a = 0.0;
    TokenSequence response_b;
    double rating_b = 0.0;
    std::string category;
};

struct CurationResult {
    std::vector<PreferencePair> train;
    std::vector<PreferencePair> eval;
    std::size_t below_threshold = 0;
    std::size_t identical_responses = 0;
    std::size_t ties = 0;

    bool empty() const { return train.empty() && eval.empty(); }
};

// Keeps items with |rating_a - rating_b| >= min_delta (ties and identical
// responses are dropped), orients them chosen/rejected by rating, then splits
// each category separately: round(split_ratio * n) items go to train after a
// seeded shuffle. Categories are emitted in lexicographic order.
CurationResult curate_preferences(const std::vector<RatedItem>& items, double min_delta, double split_ratio,
                                  std::uint64_t seed);

} // namespace specforge
