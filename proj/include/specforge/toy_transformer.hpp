#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "specforge/lora.hpp"
#include "specforge/tensor_store.hpp"

namespace specforge {

struct ModelConfig {
    std::int64_t vocab_size = 32;
    std::int64_t d_model = 16;
    std::int64_t n_layers = 2;
    std::int64_t n_heads = 2;
    std::int64_t d_ff = 32;
    std::int64_t max_seq_len = 64;
    std::uint64_t seed = 0;

    std::int64_t head_dim() const { return d_model / n_heads; }
    // Throws ConfigError.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Stored under "config.<field>" keys.
void write_config_metadata(const ModelConfig& cfg, std::map<std::string, std::string>& metadata);
ModelConfig read_config_metadata(const std::map<std::string, std::string>& metadata);

using TokenSequence = std::vector<std::int32_t>;

inline constexpr double kRmsNormEps = 1e-5;
inline constexpr double kRopeBase = 10000.0;
inline constexpr double kInitStd = 0.02;

namespace names {
std::string layer_prefix(std::int64_t layer);
inline const std::string kEmbed = "model.embed_tokens.weight";
inline const std::string kFinalNorm = "model.norm.weight";
inline const std::string kLmHead = "lm_head.weight";
} // namespace names

// Expected tensor names and shapes for a config, lexicographic order.
std::map<std::string, Shape> parameter_shapes(const ModelConfig& cfg);

// Weights ~ N(0, 0.02^2) drawn per tensor from Rng(derive_seed(seed, name)),
// norm gains set to 1. Metadata carries the config and "stage" = "init".
Checkpoint init_model(const ModelConfig& cfg);

using WeightGrads = std::map<std::string, Matrix>;

// F64 working copy of a model. Vector parameters (norm gains) are held as
// 1 x d matrices.
class DenseModel {
public:
    static DenseModel from_checkpoint(const Checkpoint& ckpt);

    // Effective weights W + (alpha / r) B A, built in memory; the source
    // checkpoint is not touched.
    DenseModel with_adapters(const LoraAdapterSet& adapters) const;

    const ModelConfig& config() const noexcept { return config_; }
    const Matrix& weight(const std::string& name) const;
    Matrix& weight(const std::string& name);
    const std::map<std::string, Matrix>& weights() const noexcept { return weights_; }

    WeightGrads zero_grads() const;

private:
    ModelConfig config_;
    std::map<std::string, Matrix> weights_;
};

// Activations kept for the backward pass.
struct ForwardCache;

class ForwardPass {
public:
    ForwardPass(const DenseModel& model, const TokenSequence& tokens);
    ~ForwardPass();
    ForwardPass(ForwardPass&&) noexcept;
    ForwardPass& operator=(ForwardPass&&) noexcept;

    // [len, vocab_size]
    const Matrix& logits() const;

    // Accumulates into `grads` the gradient of sum_{t,v} dlogits(t,v) * logits(t,v).
    void backward(const Matrix& dlogits, WeightGrads& grads) const;

private:
    const DenseModel* model_;
    std::unique_ptr<ForwardCache> cache_;
};

Matrix forward(const DenseModel& model, const TokenSequence& tokens);
Matrix forward(const Checkpoint& model, const TokenSequence& tokens);

// Row-wise log-softmax.
Matrix log_softmax(const Matrix& logits);

// Sum of log p(tokens[t] | tokens[<t]) for t in [first_target, len). When
// `grads` is non-null, `weight` times the gradient of that sum is added to it.
double scored_logprob(const DenseModel& model, const TokenSequence& tokens, std::size_t first_target,
                      WeightGrads* grads = nullptr, double weight = 1.0);

// Mean next-token NLL over positions 1..n-1 (natural log). Requires n >= 2.
double lm_loss(const DenseModel& model, const TokenSequence& tokens, WeightGrads* grads = nullptr);
double lm_loss(const Checkpoint& model, const TokenSequence& tokens);

// Summed log-probability of `completion` given `prompt`. With an empty prompt
// the first completion token has no context and is not scored.
double sequence_logprob(const DenseModel& model, const TokenSequence& prompt, const TokenSequence& completion,
                        WeightGrads* grads = nullptr, double weight = 1.0);
double sequence_logprob(const Checkpoint& model, const TokenSequence& prompt, const TokenSequence& completion);

TokenSequence concat(const TokenSequence& a, const TokenSequence& b);

} // namespace specforge
