#include "specforge/lora.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "specforge/rng.hpp"

namespace specforge {

namespace {

constexpr std::string_view kWeightSuffix = ".weight";
constexpr std::string_view kASuffix = ".lora_A.weight";
constexpr std::string_view kBSuffix = ".lora_B.weight";

bool has_component(const std::string& name, const std::string& module) {
    std::size_t start = 0;
    while (start <= name.size()) {
        auto dot = name.find('.', start);
        if (dot == std::string::npos) dot = name.size();
        if (name.compare(start, dot - start, module) == 0 && dot - start == module.size()) {
            return true;
        }
        start = dot + 1;
    }
    return false;
}

std::string stem_of(const std::string& name) {
    if (name.size() > kWeightSuffix.size() && name.ends_with(kWeightSuffix)) {
        return name.substr(0, name.size() - kWeightSuffix.size());
    }
    return name;
}

Tensor to_tensor(const Matrix& m) {
    std::vector<double> v(m.data(), m.data() + m.size());
    return Tensor::from_values(DType::F32, {m.rows(), m.cols()}, v);
}

Matrix to_matrix(const Tensor& t) {
    if (t.shape().size() != 2) {
        throw FormatError(fmt::format("expected a 2-D tensor, got shape {}", shape_string(t.shape())));
    }
    Matrix m(t.shape()[0], t.shape()[1]);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = t.at(static_cast<std::size_t>(i));
    }
    return m;
}

} // namespace

std::int64_t LoraAdapterSet::trainable_parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [_, p] : entries) {
        n += static_cast<std::int64_t>(p.a.size() + p.b.size());
    }
    return n;
}

bool LoraAdapterSet::all_b_zero() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& kv) { return kv.second.b.isZero(0.0); });
}

std::vector<std::string> select_target_tensors(const Checkpoint& base, const std::vector<std::string>& modules) {
    std::vector<std::string> out;
    for (const auto& [name, t] : base.tensors) {
        if (t.shape().size() != 2) continue;
        if (std::any_of(modules.begin(), modules.end(), [&](const std::string& m) { return has_component(name, m); })) {
            out.push_back(name);
        }
    }
    return out;
}

LoraAdapterSet create_lora(const Checkpoint& base, const std::vector<std::string>& modules, int rank, double alpha,
                           double dropout_rate, std::uint64_t seed) {
    if (rank <= 0) {
        throw ConfigError(fmt::format("LoRA rank must be positive, got {}", rank));
    }
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw ConfigError("LoRA alpha must be a positive finite number");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ConfigError("LoRA dropout must lie in [0, 1)");
    }
    LoraAdapterSet set;
    set.rank = rank;
    set.alpha = alpha;
    set.dropout_rate = dropout_rate;
    const auto names = select_target_tensors(base, modules);
    if (names.empty()) {
        throw ConfigError(fmt::format("no tensor matches target modules [{}]", fmt::join(modules, ", ")));
    }
    for (const auto& name : names) {
        const auto& shape = base.at(name).shape();
        const auto d_out = shape[0];
        const auto d_in = shape[1];
        Rng rng(derive_seed(seed, name));
        const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
        LoraPair p{Matrix(rank, d_in), Matrix::Zero(d_out, rank)};
        for (Eigen::Index i = 0; i < p.a.size(); ++i) {
            p.a.data()[i] = (2.0 * rng.uniform() - 1.0) * bound;
        }
        set.entries.emplace(name, std::move(p));
    }
    return set;
}

void validate_adapters(const Checkpoint& base, const LoraAdapterSet& adapters) {
    if (adapters.rank <= 0) {
        throw FormatError(fmt::format("LoRA rank must be positive, got {}", adapters.rank));
    }
    for (const auto& [name, p] : adapters.entries) {
        auto it = base.tensors.find(name);
        if (it == base.tensors.end()) {
            throw FormatError(fmt::format("adapter targets \"{}\" which is absent from the base checkpoint", name));
        }
        const auto& shape = it->second.shape();
        if (shape.size() != 2) {
            throw FormatError(fmt::format("adapter target \"{}\" is not a matrix", name));
        }
        if (p.a.rows() != adapters.rank || p.b.cols() != adapters.rank) {
            throw FormatError(fmt::format("adapter \"{}\" has A {}x{} and B {}x{}, inconsistent with rank {}", name,
                                          p.a.rows(), p.a.cols(), p.b.rows(), p.b.cols(), adapters.rank));
        }
        if (p.b.rows() != shape[0] || p.a.cols() != shape[1]) {
            throw FormatError(fmt::format("adapter \"{}\" maps {}x{} but base weight is {}", name, p.b.rows(),
                                          p.a.cols(), shape_string(shape)));
        }
    }
}

Checkpoint adapters_to_checkpoint(const LoraAdapterSet& adapters) {
    Checkpoint ckpt;
    ckpt.metadata["stage"] = "lora";
    ckpt.metadata["lora_rank"] = std::to_string(adapters.rank);
    ckpt.metadata["lora_alpha"] = fmt::format("{}", adapters.alpha);
    ckpt.metadata["lora_dropout"] = fmt::format("{}", adapters.dropout_rate);
    for (const auto& [name, p] : adapters.entries) {
        const auto stem = stem_of(name);
        ckpt.tensors.emplace(stem + std::string(kASuffix), to_tensor(p.a));
        ckpt.tensors.emplace(stem + std::string(kBSuffix), to_tensor(p.b));
    }
    return ckpt;
}

LoraAdapterSet adapters_from_checkpoint(const Checkpoint& ckpt) {
    LoraAdapterSet set;
    auto meta = [&](const char* key) -> const std::string& {
        auto it = ckpt.metadata.find(key);
        if (it == ckpt.metadata.end()) {
            throw FormatError(fmt::format("adapter file lacks metadata \"{}\"", key));
        }
        return it->second;
    };
    try {
        set.rank = std::stoi(meta("lora_rank"));
        set.alpha = std::stod(meta("lora_alpha"));
        if (ckpt.metadata.count("lora_dropout")) {
            set.dropout_rate = std::stod(ckpt.metadata.at("lora_dropout"));
        }
    } catch (const std::logic_error&) {
        throw FormatError("adapter metadata lora_rank/lora_alpha is not numeric");
    }
    if (set.rank <= 0) {
        throw FormatError(fmt::format("LoRA rank must be positive, got {}", set.rank));
    }
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.ends_with(kASuffix)) {
            const auto stem = name.substr(0, name.size() - kASuffix.size());
            auto b = ckpt.tensors.find(stem + std::string(kBSuffix));
            if (b == ckpt.tensors.end()) {
                throw FormatError(fmt::format("adapter \"{}\" has no matching lora_B", stem));
            }
            set.entries.emplace(stem + std::string(kWeightSuffix), LoraPair{to_matrix(t), to_matrix(b->second)});
        } else if (!name.ends_with(kBSuffix)) {
            throw FormatError(fmt::format("unexpected tensor \"{}\" in adapter file", name));
        } else {
            const auto stem = name.substr(0, name.size() - kBSuffix.size());
            if (!ckpt.tensors.count(stem + std::string(kASuffix))) {
                throw FormatError(fmt::format("adapter \"{}\" has no matching lora_A", stem));
            }
        }
    }
    return set;
}

} // namespace specforge
