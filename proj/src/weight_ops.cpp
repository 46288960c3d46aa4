#include "specforge/weight_ops.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace specforge {

namespace {

// a + delta, rounded to the storage dtype; exact-zero deltas leave the
// element bit-identical.
Tensor add_delta(const Tensor& a, const std::vector<double>& delta) {
    if (a.dtype() == DType::F32) {
        auto src = a.f32();
        std::vector<float> out(src.begin(), src.end());
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (delta[i] != 0.0) out[i] = static_cast<float>(static_cast<double>(src[i]) + delta[i]);
        }
        return Tensor::from_f32(a.shape(), out);
    }
    auto src = a.f64();
    std::vector<double> out(src.begin(), src.end());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (delta[i] != 0.0) out[i] = src[i] + delta[i];
    }
    return Tensor::from_f64(a.shape(), out);
}

} // namespace

Checkpoint extract_residual(const Checkpoint& inst, const Checkpoint& base, const ResidualSources& sources) {
    require_compatible(inst, base, "extract_residual");
    Checkpoint out;
    out.metadata["stage"] = "residual";
    out.metadata["residual_inst"] = sources.inst;
    out.metadata["residual_base"] = sources.base;
    for (const auto& [name, ti] : inst.tensors) {
        const auto vi = ti.to_f64();
        const auto vb = base.tensors.at(name).to_f64();
        std::vector<double> d(vi.size());
        for (std::size_t i = 0; i < d.size(); ++i) {
            d[i] = vi[i] - vb[i];
        }
        out.tensors.emplace(name, Tensor::from_values(ti.dtype(), ti.shape(), d));
    }
    return out;
}

Checkpoint apply_residual(const Checkpoint& target, const Checkpoint& residual, double scale) {
    if (!std::isfinite(scale)) {
        throw ConfigError("residual scale must be finite");
    }
    require_compatible(target, residual, "apply_residual");
    Checkpoint out;
    out.metadata = target.metadata;
    out.metadata["stage"] = "ir";
    out.metadata["residual_scale"] = fmt::format("{}", scale);
    for (const auto& [name, tt] : target.tensors) {
        auto delta = residual.tensors.at(name).to_f64();
        for (auto& d : delta) {
            d *= scale;
        }
        out.tensors.emplace(name, add_delta(tt, delta));
    }
    return out;
}

Checkpoint merge_lora(const Checkpoint& base, const LoraAdapterSet& adapters) {
    validate_adapters(base, adapters);
    Checkpoint out = base;
    out.metadata["stage"] = "merged";
    out.metadata["lora_rank"] = std::to_string(adapters.rank);
    out.metadata["lora_alpha"] = fmt::format("{}", adapters.alpha);
    const double s = adapters.scale();
    for (const auto& [name, p] : adapters.entries) {
        const Matrix delta = s * (p.b * p.a);
        std::vector<double> d(delta.data(), delta.data() + delta.size());
        out.tensors[name] = add_delta(base.at(name), d);
    }
    return out;
}

DiagnosticsReport subspace_diagnostics(const Checkpoint& delta_a, const Checkpoint& delta_b) {
    DiagnosticsReport r;
    double dot_all = 0.0;
    double aa_all = 0.0;
    double bb_all = 0.0;
    for (const auto& [name, ta] : delta_a.tensors) {
        auto it = delta_b.tensors.find(name);
        if (it == delta_b.tensors.end() || it->second.numel() != ta.numel()) {
            continue;
        }
        const auto va = ta.to_f64();
        const auto vb = it->second.to_f64();
        double dot = 0.0, aa = 0.0, bb = 0.0;
        for (std::size_t i = 0; i < va.size(); ++i) {
            dot += va[i] * vb[i];
            aa += va[i] * va[i];
            bb += vb[i] * vb[i];
        }
        const bool zero = aa == 0.0 || bb == 0.0;
        r.per_tensor_zero_norm[name] = zero;
        r.per_tensor_cosine[name] = zero ? 0.0 : std::clamp(dot / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
        dot_all += dot;
        aa_all += aa;
        bb_all += bb;
    }
    r.norm_a = std::sqrt(aa_all);
    r.norm_b = std::sqrt(bb_all);
    r.global_zero_norm = aa_all == 0.0 || bb_all == 0.0;
    r.global_cosine = r.global_zero_norm ? 0.0 : std::clamp(dot_all / (r.norm_a * r.norm_b), -1.0, 1.0);
    return r;
}

} // namespace specforge
