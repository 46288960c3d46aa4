#include "specforge/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "specforge/error.hpp"
#include "specforge/rng.hpp"

namespace specforge {

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void check_beta(double beta) {
    if (!(beta > 0.0) || !std::isfinite(beta)) {
        throw ConfigError(fmt::format("beta must be a positive finite number, got {}", beta));
    }
}

void check_same_architecture(const DenseModel& policy, const DenseModel& reference) {
    CompatibilityReport report;
    for (const auto& [name, w] : policy.weights()) {
        auto it = reference.weights().find(name);
        if (it == reference.weights().end()) {
            report.only_in_a.push_back(name);
        } else if (it->second.rows() != w.rows() || it->second.cols() != w.cols()) {
            report.mismatched.push_back({name, fmt::format("[{}, {}] vs [{}, {}]", w.rows(), w.cols(),
                                                           it->second.rows(), it->second.cols())});
        }
    }
    for (const auto& [name, w] : reference.weights()) {
        if (!policy.weights().contains(name)) report.only_in_b.push_back(name);
    }
    if (!report.is_compatible()) throw IncompatibleError("policy vs reference", std::move(report));
}

std::size_t first_scored(const TokenSequence& prompt) { return std::max<std::size_t>(prompt.size(), 1); }

void require_finite(double loss, std::int64_t step) {
    if (!std::isfinite(loss)) {
        throw Error(fmt::format("training diverged: non-finite loss at step {}", step),
                    "lower the learning rate or enable gradient clipping");
    }
}

} // namespace

std::string_view task_name(SupervisedTask task) {
    switch (task) {
    case SupervisedTask::Classification: return "classification";
    case SupervisedTask::Summarization: return "summarization";
    case SupervisedTask::QASup: return "qa";
    }
    return "qa";
}

SupervisedTask parse_task(std::string_view name) {
    if (name == "classification") return SupervisedTask::Classification;
    if (name == "summarization") return SupervisedTask::Summarization;
    if (name == "qa") return SupervisedTask::QASup;
    throw FormatError(fmt::format("unknown task '{}' (expected classification, summarization or qa)", name));
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError(fmt::format("learning_rate must be positive, got {}", learning_rate));
    }
    check_beta(beta);
    if (!(epochs >= 0.0) || !std::isfinite(epochs)) throw ConfigError(fmt::format("epochs must be >= 0, got {}", epochs));
    if (batch_size <= 0) throw ConfigError(fmt::format("batch_size must be positive, got {}", batch_size));
    if (max_steps && *max_steps < 0) throw ConfigError(fmt::format("max_steps must be >= 0, got {}", *max_steps));
    if (!(clip_norm >= 0.0)) throw ConfigError(fmt::format("clip_norm must be >= 0, got {}", clip_norm));
}

AdapterGrads adapter_grads(const LoraAdapterSet& adapters, const WeightGrads& weight_grads) {
    AdapterGrads out;
    const double s = adapters.scale();
    for (const auto& [name, p] : adapters.entries) {
        auto it = weight_grads.find(name);
        if (it == weight_grads.end()) throw FormatError(fmt::format("no gradient for adapted tensor '{}'", name));
        const Matrix& dw = it->second;
        out.emplace(name, LoraPair{s * (p.b.transpose() * dw), s * (dw * p.a.transpose())});
    }
    return out;
}

double global_norm(const AdapterGrads& grads) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) sq += g.a.squaredNorm() + g.b.squaredNorm();
    return std::sqrt(sq);
}

DpoTerms dpo_from_logprobs(double policy_chosen, double ref_chosen, double policy_rejected, double ref_rejected,
                           double beta) {
    check_beta(beta);
    const double margin = (policy_chosen - ref_chosen) - (policy_rejected - ref_rejected);
    return {softplus(-beta * margin), margin};
}

ReferenceLogprobs reference_logprobs(const DenseModel& reference, const PreferencePair& pair) {
    return {sequence_logprob(reference, pair.prompt, pair.chosen), sequence_logprob(reference, pair.prompt, pair.rejected)};
}

DpoTerms dpo_loss(const DenseModel& policy_base, const LoraAdapterSet& adapters, const DenseModel& reference,
                  const PreferencePair& pair, double beta) {
    check_beta(beta);
    check_same_architecture(policy_base, reference);
    const DenseModel policy = policy_base.with_adapters(adapters);
    const auto ref = reference_logprobs(reference, pair);
    return dpo_from_logprobs(sequence_logprob(policy, pair.prompt, pair.chosen), ref.chosen,
                             sequence_logprob(policy, pair.prompt, pair.rejected), ref.rejected, beta);
}

DpoTerms dpo_loss(const Checkpoint& policy_base, const LoraAdapterSet& adapters, const Checkpoint& reference,
                  const PreferencePair& pair, double beta) {
    require_compatible(policy_base, reference, "policy vs reference");
    validate_adapters(policy_base, adapters);
    return dpo_loss(DenseModel::from_checkpoint(policy_base), adapters, DenseModel::from_checkpoint(reference), pair,
                    beta);
}

DpoGradient dpo_grad(const DenseModel& policy_base, const LoraAdapterSet& adapters, const DenseModel& reference,
                     const std::vector<PreferencePair>& batch, double beta, const std::vector<ReferenceLogprobs>& refs) {
    check_beta(beta);
    if (batch.empty()) throw ConfigError("dpo_grad needs a non-empty batch");
    if (!refs.empty() && refs.size() != batch.size()) throw ConfigError("reference log-probs do not match the batch");
    check_same_architecture(policy_base, reference);

    const DenseModel policy = policy_base.with_adapters(adapters);
    auto chosen_w = policy.zero_grads();
    auto rejected_w = policy.zero_grads();
    DpoGradient out;
    out.margins.reserve(batch.size());
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& pair = batch[i];
        const auto ref = refs.empty() ? reference_logprobs(reference, pair) : refs[i];
        const auto chosen_seq = concat(pair.prompt, pair.chosen);
        const auto rejected_seq = concat(pair.prompt, pair.rejected);
        const std::size_t start = first_scored(pair.prompt);

        const double lp_c = scored_logprob(policy, chosen_seq, start);
        const double lp_r = scored_logprob(policy, rejected_seq, start);
        const auto terms = dpo_from_logprobs(lp_c, ref.chosen, lp_r, ref.rejected, beta);
        out.mean_loss += terms.loss * inv_n;
        out.mean_margin += terms.margin * inv_n;
        out.margins.push_back(terms.margin);

        // dL/dm = -beta * sigmoid(-beta * m); m is +lp_c - lp_r.
        const double dm = -beta * sigmoid(-beta * terms.margin) * inv_n;
        scored_logprob(policy, chosen_seq, start, &chosen_w, dm);
        scored_logprob(policy, rejected_seq, start, &rejected_w, -dm);
    }

    auto chosen = adapter_grads(adapters, chosen_w);
    auto rejected = adapter_grads(adapters, rejected_w);
    out.chosen_grad_norm = global_norm(chosen);
    out.rejected_grad_norm = global_norm(rejected);
    for (auto& [name, g] : chosen) {
        const auto& r = rejected.at(name);
        g.a += r.a;
        g.b += r.b;
    }
    out.grads = std::move(chosen);
    return out;
}

double sft_loss(const DenseModel& policy, const SupervisedExample& ex, WeightGrads* grads, double weight) {
    if (ex.completion.empty()) throw FormatError("supervised example has an empty completion");
    const auto seq = concat(ex.prompt, ex.completion);
    const std::size_t start = first_scored(ex.prompt);
    if (seq.size() <= start) throw FormatError("supervised example has no scorable completion token");
    const double n = static_cast<double>(seq.size() - start);
    return -scored_logprob(policy, seq, start, grads, -weight / n) / n;
}

double sft_loss(const DenseModel& policy_base, const LoraAdapterSet& adapters, const SupervisedExample& ex) {
    return sft_loss(policy_base.with_adapters(adapters), ex);
}

LossGradient sft_grad(const DenseModel& policy_base, const LoraAdapterSet& adapters,
                      const std::vector<SupervisedExample>& batch) {
    if (batch.empty()) throw ConfigError("sft_grad needs a non-empty batch");
    const DenseModel policy = policy_base.with_adapters(adapters);
    auto w = policy.zero_grads();
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    LossGradient out;
    for (const auto& ex : batch) out.mean_loss += sft_loss(policy, ex, &w, inv_n) * inv_n;
    out.grads = adapter_grads(adapters, w);
    return out;
}

LossGradient cpt_grad(const DenseModel& policy_base, const LoraAdapterSet& adapters,
                      const std::vector<TokenSequence>& batch) {
    if (batch.empty()) throw ConfigError("cpt_grad needs a non-empty batch");
    const DenseModel policy = policy_base.with_adapters(adapters);
    auto w = policy.zero_grads();
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    LossGradient out;
    for (const auto& seq : batch) {
        if (seq.size() < 2) throw FormatError("CPT sequences need at least two tokens");
        const double n = static_cast<double>(seq.size() - 1);
        out.mean_loss += -scored_logprob(policy, seq, 1, &w, -inv_n / n) / n * inv_n;
    }
    out.grads = adapter_grads(adapters, w);
    return out;
}

std::int64_t planned_steps(const TrainConfig& cfg, std::size_t n) {
    if (cfg.max_steps) return *cfg.max_steps;
    if (n == 0) return 0;
    const auto per_epoch = static_cast<std::int64_t>((n + static_cast<std::size_t>(cfg.batch_size) - 1) /
                                                     static_cast<std::size_t>(cfg.batch_size));
    return std::llround(cfg.epochs * static_cast<double>(per_epoch));
}

namespace {

std::size_t dataset_size(const Objective& objective) {
    return std::visit(
        [](const auto& o) -> std::size_t {
            using T = std::decay_t<decltype(o)>;
            if constexpr (std::is_same_v<T, CptObjective>) return o.corpus.size();
            else if constexpr (std::is_same_v<T, SftObjective>) return o.examples.size();
            else return o.pairs.size();
        },
        objective);
}

// Yields batches of indices, reshuffling at each epoch boundary.
class BatchSchedule {
public:
    BatchSchedule(std::size_t n, int batch_size, std::uint64_t seed) : n_(n), batch_(batch_size), seed_(seed) {}

    std::vector<std::size_t> next() {
        if (pos_ >= order_.size()) reshuffle();
        const std::size_t end = std::min(order_.size(), pos_ + static_cast<std::size_t>(batch_));
        std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                     order_.begin() + static_cast<std::ptrdiff_t>(end));
        pos_ = end;
        return out;
    }

private:
    void reshuffle() {
        order_.resize(n_);
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        Rng rng(derive_seed(seed_, fmt::format("epoch{}", epoch_++)));
        rng.shuffle(order_);
        pos_ = 0;
    }

    std::size_t n_;
    int batch_;
    std::uint64_t seed_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    std::uint64_t epoch_ = 0;
};

template <typename T>
std::vector<T> gather(const std::vector<T>& data, const std::vector<std::size_t>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(data[i]);
    return out;
}

void apply_update(LoraAdapterSet& adapters, AdapterGrads& grads, double lr, double clip_norm) {
    double factor = lr;
    if (clip_norm > 0.0) {
        const double norm = global_norm(grads);
        if (norm > clip_norm) factor *= clip_norm / norm;
    }
    for (auto& [name, p] : adapters.entries) {
        const auto& g = grads.at(name);
        p.a -= factor * g.a;
        p.b -= factor * g.b;
    }
}

} // namespace

TrainResult train(const Checkpoint& policy_base, const LoraAdapterSet& adapters, const Objective& objective,
                  const TrainConfig& cfg) {
    cfg.validate();
    validate_adapters(policy_base, adapters);
    const std::size_t n = dataset_size(objective);
    if (n == 0) throw ConfigError("training dataset is empty");

    TrainResult result;
    result.adapters = adapters;
    const std::int64_t steps = planned_steps(cfg, n);
    if (steps == 0) return result;

    const DenseModel base = DenseModel::from_checkpoint(policy_base);
    std::optional<DenseModel> reference;
    std::vector<ReferenceLogprobs> refs;
    if (const auto* dpo = std::get_if<DpoObjective>(&objective)) {
        require_compatible(policy_base, dpo->reference, "policy vs reference");
        reference = DenseModel::from_checkpoint(dpo->reference);
        refs.reserve(dpo->pairs.size());
        for (const auto& pair : dpo->pairs) refs.push_back(reference_logprobs(*reference, pair));
    }

    BatchSchedule schedule(n, cfg.batch_size, cfg.seed);
    for (std::int64_t step = 0; step < steps; ++step) {
        const auto idx = schedule.next();
        AdapterGrads grads;
        double loss = 0.0;
        if (const auto* cpt = std::get_if<CptObjective>(&objective)) {
            auto g = cpt_grad(base, result.adapters, gather(cpt->corpus, idx));
            loss = g.mean_loss;
            grads = std::move(g.grads);
        } else if (const auto* sft = std::get_if<SftObjective>(&objective)) {
            auto g = sft_grad(base, result.adapters, gather(sft->examples, idx));
            loss = g.mean_loss;
            grads = std::move(g.grads);
        } else {
            const auto& dpo = std::get<DpoObjective>(objective);
            auto g = dpo_grad(base, result.adapters, *reference, gather(dpo.pairs, idx), cfg.beta, gather(refs, idx));
            loss = g.mean_loss;
            grads = std::move(g.grads);
            result.margin_trace.push_back(g.mean_margin);
            result.chosen_grad_norm.push_back(g.chosen_grad_norm);
            result.rejected_grad_norm.push_back(g.rejected_grad_norm);
            for (std::size_t k = 0; k < idx.size(); ++k) result.pair_margins.push_back({step, idx[k], g.margins[k]});
        }
        require_finite(loss, step);
        result.loss_trace.push_back(loss);
        apply_update(result.adapters, grads, cfg.learning_rate, cfg.clip_norm);
        result.steps = step + 1;
    }
    return result;
}

CurationResult curate_preferences(const std::vector<RatedItem>& items, double min_delta, double split_ratio,
                                  std::uint64_t seed) {
    if (!(min_delta >= 0.0) || !std::isfinite(min_delta)) {
        throw ConfigError(fmt::format("min_delta must be a finite number >= 0, got {}", min_delta));
    }
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) {
        throw ConfigError(fmt::format("split ratio must lie strictly between 0 and 1, got {}", split_ratio));
    }

    CurationResult out;
    std::map<std::string, std::vector<PreferencePair>> by_category;
    for (const auto& item : items) {
        if (!std::isfinite(item.rating_a) || !std::isfinite(item.rating_b)) {
            throw FormatError("preference ratings must be finite");
        }
        const double delta = item.rating_a - item.rating_b;
        if (item.response_a == item.response_b) {
            ++out.identical_responses;
            continue;
        }
        if (delta == 0.0) {
            ++out.ties;
            continue;
        }
        if (std::abs(delta) < min_delta) {
            ++out.below_threshold;
            continue;
        }
        const bool a_wins = delta > 0;
        by_category[item.category].push_back(PreferencePair{
            .prompt = item.prompt,
            .chosen = a_wins ? item.response_a : item.response_b,
            .rejected = a_wins ? item.response_b : item.response_a,
            .chosen_rating = a_wins ? item.rating_a : item.rating_b,
            .rejected_rating = a_wins ? item.rating_b : item.rating_a,
            .category = item.category,
        });
    }

    for (auto& [category, pairs] : by_category) {
        Rng rng(derive_seed(seed, "split/" + category));
        rng.shuffle(pairs);
        const auto n_train = static_cast<std::size_t>(std::llround(split_ratio * static_cast<double>(pairs.size())));
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            (i < n_train ? out.train : out.eval).push_back(std::move(pairs[i]));
        }
    }
    return out;
}

} // namespace specforge
