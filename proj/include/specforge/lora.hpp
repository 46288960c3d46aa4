#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specforge/tensor_store.hpp"

namespace specforge {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Low-rank update for one [d_out, d_in] base weight: delta = (alpha / r) * B * A.
struct LoraPair {
    Matrix a; // [r, d_in]
    Matrix b; // [d_out, r]
};

struct LoraAdapterSet {
    int rank = 8;
    double alpha = 16.0;
    double dropout_rate = 0.0; // recorded only; no dropout is applied at toy scale
    // Keyed by the full name of the adapted base tensor, e.g.
    // "model.layers.0.self_attn.q_proj.weight".
    std::map<std::string, LoraPair> entries;

    double scale() const { return alpha / static_cast<double>(rank); }
    // Sum over entries of r * (d_out + d_in).
    std::int64_t trainable_parameter_count() const;
    bool all_b_zero() const;
};

// Target-module presets from the hyperparameter tables.
namespace targets {
inline const std::vector<std::string> kCpt = {"q_proj", "k_proj",  "v_proj",       "o_proj", "gate_proj",
                                              "up_proj", "down_proj", "embed_tokens", "lm_head"};
inline const std::vector<std::string> kSft = {"q_proj", "v_proj"};
inline const std::vector<std::string> kDpo = {"q_proj", "v_proj", "k_proj", "o_proj"};
} // namespace targets

// Names of 2-D tensors in `base` with a dot-separated path component equal to
// one of `modules`. Lexicographic order.
std::vector<std::string> select_target_tensors(const Checkpoint& base, const std::vector<std::string>& modules);

// A is drawn from U(-1/sqrt(d_in), 1/sqrt(d_in)) per entry, B starts at zero,
// so merging a fresh adapter set is the identity.
LoraAdapterSet create_lora(const Checkpoint& base, const std::vector<std::string>& modules, int rank, double alpha,
                           double dropout_rate, std::uint64_t seed);

// Shape checks against a base checkpoint; throws FormatError.
void validate_adapters(const Checkpoint& base, const LoraAdapterSet& adapters);

// On-disk form: tensors "<stem>.lora_A.weight" [r, d_in] and "<stem>.lora_B.weight"
// [d_out, r] where <stem> is the base tensor name minus its ".weight" suffix;
// metadata carries lora_rank / lora_alpha / lora_dropout.
Checkpoint adapters_to_checkpoint(const LoraAdapterSet& adapters);
LoraAdapterSet adapters_from_checkpoint(const Checkpoint& ckpt);

} // namespace specforge
