#pragma once

#include <map>
#include <string>

#include "specforge/lora.hpp"
#include "specforge/tensor_store.hpp"

namespace specforge {

// Weight-space algebra over checkpoints. Arithmetic is carried out in double
// and rounded once to the storage dtype. Elements whose delta is exactly zero
// are copied through untouched, so zero updates are bit-identities (including
// signed zeros and NaN payloads).

struct ResidualSources {
    std::string inst = "inst";
    std::string base = "base";
};

// out[t] = inst[t] - base[t] for every tensor; metadata "stage" = "residual".
Checkpoint extract_residual(const Checkpoint& inst, const Checkpoint& base, const ResidualSources& sources = {});

// out[t] = target[t] + scale * residual[t]; metadata "stage" = "ir".
Checkpoint apply_residual(const Checkpoint& target, const Checkpoint& residual, double scale = 1.0);

// out[m] = base[m] + (alpha / r) * B_m A_m for adapted m; other tensors copied.
Checkpoint merge_lora(const Checkpoint& base, const LoraAdapterSet& adapters);

struct DiagnosticsReport {
    std::map<std::string, double> per_tensor_cosine;
    std::map<std::string, bool> per_tensor_zero_norm;
    double global_cosine = 0.0;
    bool global_zero_norm = false;
    double norm_a = 0.0;
    double norm_b = 0.0;
};

// Cosine similarity of two deltas, per tensor and over all shared tensors
// flattened in canonical order. A zero-norm side yields cosine 0 and sets the
// matching flag.
DiagnosticsReport subspace_diagnostics(const Checkpoint& delta_a, const Checkpoint& delta_b);

} // namespace specforge
