// ckpt, residual, lora, diag and toy subcommands.

#include <cmath>
#include <memory>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "app.hpp"
#include "specforge/blake3.hpp"
#include "specforge/datasets.hpp"
#include "specforge/toy_transformer.hpp"
#include "specforge/weight_ops.hpp"

namespace specforge::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string file_digest(const fs::path& p) { return digest_path(p).front().blake3; }

// ---------------------------------------------------------------------------
// ckpt

int ckpt_inspect(const std::string& path, bool as_json) {
    const auto ckpt = load_checkpoint(path);
    if (as_json) {
        json tensors = json::array();
        for (const auto& [name, t] : ckpt.tensors) {
            tensors.push_back({{"name", name}, {"dtype", dtype_name(t.dtype())}, {"shape", t.shape()}});
        }
        fmt::print("{}\n", json{{"path", path},
                                {"blake3", file_digest(path)},
                                {"parameters", ckpt.parameter_count()},
                                {"metadata", ckpt.metadata},
                                {"tensors", tensors}}
                               .dump(2));
        return kOk;
    }
    fmt::print("{}\n  blake3      {}\n  tensors     {}\n  parameters  {}\n", path, file_digest(path),
               ckpt.tensors.size(), ckpt.parameter_count());
    fmt::print("metadata\n");
    for (const auto& [k, v] : ckpt.metadata) fmt::print("  {:<24} {}\n", k, v);
    fmt::print("tensors\n");
    for (const auto& [name, t] : ckpt.tensors) {
        fmt::print("  {:<48} {:<4} {}\n", name, dtype_name(t.dtype()), shape_string(t.shape()));
    }
    return kOk;
}

int ckpt_diff(const std::string& a_path, const std::string& b_path, bool as_json) {
    const auto a = load_checkpoint(a_path);
    const auto b = load_checkpoint(b_path);
    const auto report = validate_compatibility(a, b);
    json differing = json::array();
    std::size_t equal = 0;
    for (const auto& [name, ta] : a.tensors) {
        if (!b.contains(name)) continue;
        const auto& tb = b.at(name);
        if (ta.shape() != tb.shape()) continue;
        if (ta == tb) {
            ++equal;
            continue;
        }
        const auto x = ta.to_f64();
        const auto y = tb.to_f64();
        double worst = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
        differing.push_back({{"name", name}, {"max_abs_diff", worst}});
    }
    json meta = json::object();
    for (const auto& [k, v] : a.metadata) {
        const auto it = b.metadata.find(k);
        if (it == b.metadata.end() || it->second != v) meta[k] = {v, it == b.metadata.end() ? json() : json(it->second)};
    }
    for (const auto& [k, v] : b.metadata) {
        if (!a.metadata.count(k)) meta[k] = {nullptr, v};
    }
    const bool identical = report.is_compatible() && differing.empty() && meta.empty();
    if (as_json) {
        json mismatched = json::array();
        for (const auto& m : report.mismatched) mismatched.push_back({{"name", m.name}, {"detail", m.detail}});
        fmt::print("{}\n", json{{"identical", identical},
                                {"only_in_a", report.only_in_a},
                                {"only_in_b", report.only_in_b},
                                {"mismatched", mismatched},
                                {"equal_tensors", equal},
                                {"differing_tensors", differing},
                                {"metadata_differences", meta}}
                               .dump(2));
        return kOk;
    }
    if (identical) {
        fmt::print("identical ({} tensors)\n", equal);
        return kOk;
    }
    if (!report.is_compatible()) fmt::print("{}\n", report.summary());
    fmt::print("{} tensors equal, {} differ\n", equal, differing.size());
    for (const auto& d : differing) {
        fmt::print("  {:<48} max |a-b| = {:.6g}\n", d["name"].get<std::string>(), d["max_abs_diff"].get<double>());
    }
    for (const auto& [k, v] : meta.items()) fmt::print("  metadata {}: {} -> {}\n", k, v[0].dump(), v[1].dump());
    return kOk;
}

// ---------------------------------------------------------------------------
// Weight algebra

void write_checkpoint_with_manifest(const Checkpoint& ckpt, const fs::path& out, RunManifest manifest,
                                    json summary = nullptr) {
    save_checkpoint(ckpt, out);
    manifest.add_output(out);
    manifest.set_summary(std::move(summary));
    manifest.write_for_file(out);
    spdlog::info("wrote {}", out.string());
}

void register_residual(CLI::App& app, Runtime& rt) {
    auto* group = app.add_subcommand("residual", "Instruction residual: extract W_inst - W_base, add it to a model");
    group->require_subcommand(1);

    struct ExtractOpts {
        std::string inst, base, out;
    };
    auto e = std::make_shared<ExtractOpts>();
    auto* extract = group->add_subcommand("extract", "Write inst - base as a residual checkpoint");
    extract->add_option("--inst", e->inst, "Instruction-tuned checkpoint")->required();
    extract->add_option("--base", e->base, "Base checkpoint")->required();
    extract->add_option("-o,--output", e->out, "Residual checkpoint to write")->required();
    extract->callback([&rt, e] {
        rt.action = [&rt, e] {
            const auto cfg = rt.config({});
            auto manifest = rt.manifest(cfg);
            const auto inst = load_checkpoint(e->inst);
            const auto base = load_checkpoint(e->base);
            manifest.add_input(e->inst);
            manifest.add_input(e->base);
            const auto residual = extract_residual(inst, base, {e->inst, e->base});
            write_checkpoint_with_manifest(residual, e->out, std::move(manifest));
            return kOk;
        };
    });

    struct ApplyOpts {
        std::string target, residual, out;
        double scale = 1.0;
    };
    auto a = std::make_shared<ApplyOpts>();
    auto* apply = group->add_subcommand("apply", "Write target + scale * residual");
    apply->add_option("--target", a->target, "Checkpoint receiving the residual")->required();
    apply->add_option("--residual", a->residual, "Residual checkpoint")->required();
    auto* scale_opt = apply->add_option("--scale", a->scale, "Residual scale")->capture_default_str();
    apply->add_option("-o,--output", a->out, "Checkpoint to write")->required();
    apply->callback([&rt, a, scale_opt] {
        rt.action = [&rt, a, scale_opt] {
            std::vector<std::pair<std::string, json>> flags;
            flag_if(flags, scale_opt, "residual.scale", a->scale);
            const auto cfg = rt.config({"residual.scale"}, flags);
            const double scale = cfg.get_double("residual.scale", 1.0);
            auto manifest = rt.manifest(cfg);
            const auto target = load_checkpoint(a->target);
            const auto residual = load_checkpoint(a->residual);
            manifest.add_input(a->target);
            manifest.add_input(a->residual);
            write_checkpoint_with_manifest(apply_residual(target, residual, scale), a->out, std::move(manifest));
            return kOk;
        };
    });
}

void register_lora(CLI::App& app, Runtime& rt) {
    auto* group = app.add_subcommand("lora", "LoRA adapters");
    group->require_subcommand(1);
    struct Opts {
        std::string base, adapters, out;
    };
    auto o = std::make_shared<Opts>();
    auto* merge = group->add_subcommand("merge", "Write base + (alpha/r) B A for every adapted tensor");
    merge->add_option("--base", o->base, "Base checkpoint")->required();
    merge->add_option("--adapters", o->adapters, "Adapter checkpoint (lora_A / lora_B tensors)")->required();
    merge->add_option("-o,--output", o->out, "Merged checkpoint to write")->required();
    merge->callback([&rt, o] {
        rt.action = [&rt, o] {
            const auto cfg = rt.config({});
            auto manifest = rt.manifest(cfg);
            const auto base = load_checkpoint(o->base);
            const auto adapters = adapters_from_checkpoint(load_checkpoint(o->adapters));
            manifest.add_input(o->base);
            manifest.add_input(o->adapters);
            write_checkpoint_with_manifest(merge_lora(base, adapters), o->out, std::move(manifest),
                                           {{"adapted_tensors", adapters.entries.size()},
                                            {"rank", adapters.rank},
                                            {"alpha", adapters.alpha}});
            return kOk;
        };
    });
}

Checkpoint delta_against(const Checkpoint& model, const std::optional<Checkpoint>& base) {
    return base ? extract_residual(model, *base) : model;
}

void register_diag(CLI::App& app, Runtime& rt) {
    auto* group = app.add_subcommand("diag", "Diagnostics over weight deltas");
    group->require_subcommand(1);
    struct Opts {
        std::string a, b, base;
        bool json = false;
    };
    auto o = std::make_shared<Opts>();
    auto* cosine = group->add_subcommand("cosine", "Cosine similarity of two deltas, per tensor and overall");
    cosine->add_option("a", o->a, "First delta (or model, with --base)")->required();
    cosine->add_option("b", o->b, "Second delta (or model, with --base)")->required();
    cosine->add_option("--base", o->base, "Subtract this checkpoint from both inputs first");
    cosine->add_flag("--json", o->json, "Machine-readable output");
    cosine->callback([&rt, o] {
        rt.action = [o] {
            std::optional<Checkpoint> base;
            if (!o->base.empty()) base = load_checkpoint(o->base);
            const auto r = subspace_diagnostics(delta_against(load_checkpoint(o->a), base),
                                                delta_against(load_checkpoint(o->b), base));
            if (o->json) {
                fmt::print("{}\n", json{{"global_cosine", r.global_cosine},
                                        {"global_zero_norm", r.global_zero_norm},
                                        {"norm_a", r.norm_a},
                                        {"norm_b", r.norm_b},
                                        {"per_tensor_cosine", r.per_tensor_cosine},
                                        {"per_tensor_zero_norm", r.per_tensor_zero_norm}}
                                       .dump(2));
                return kOk;
            }
            fmt::print("global cosine {:.12f}  (|a| = {:.6g}, |b| = {:.6g}{})\n", r.global_cosine, r.norm_a, r.norm_b,
                       r.global_zero_norm ? ", zero norm" : "");
            for (const auto& [name, c] : r.per_tensor_cosine) {
                fmt::print("  {:<48} {:+.6f}{}\n", name, c, r.per_tensor_zero_norm.at(name) ? "  (zero norm)" : "");
            }
            return kOk;
        };
    });
}

// ---------------------------------------------------------------------------
// toy

const std::set<std::string> kModelKeys = {"model.vocab_size", "model.d_model", "model.n_layers", "model.n_heads",
                                          "model.d_ff",       "model.max_seq_len", "model.seed"};

void register_toy(CLI::App& app, Runtime& rt) {
    auto* group = app.add_subcommand("toy", "Toy decoder-only transformer");
    group->require_subcommand(1);

    auto init_out = std::make_shared<std::string>();
    auto* init = group->add_subcommand("init", "Initialize a toy model from the [model] config section");
    init->add_option("-o,--output", *init_out, "Checkpoint to write")->required();
    init->callback([&rt, init_out] {
        rt.action = [&rt, init_out] {
            const auto cfg = rt.config(kModelKeys);
            const auto model = model_config_from(cfg);
            auto manifest = rt.manifest(cfg);
            const auto ckpt = init_model(model);
            write_checkpoint_with_manifest(ckpt, *init_out, std::move(manifest),
                                           {{"parameters", ckpt.parameter_count()}});
            return kOk;
        };
    });

    struct LossOpts {
        std::string model, tokens;
        bool json = false;
    };
    auto l = std::make_shared<LossOpts>();
    auto* loss = group->add_subcommand("loss", "Mean next-token loss of a model on a token file");
    loss->add_option("--model", l->model, "Model checkpoint")->required();
    loss->add_option("--tokens", l->tokens, "JSONL with {\"tokens\": [...]} per line")->required();
    loss->add_flag("--json", l->json, "Machine-readable output");
    loss->callback([&rt, l] {
        rt.action = [l] {
            const auto model = DenseModel::from_checkpoint(load_checkpoint(l->model));
            const auto seqs = load_token_sequences(l->tokens);
            if (seqs.empty()) throw Error(fmt::format("{} holds no sequences", l->tokens));
            std::vector<double> losses;
            for (const auto& s : seqs) {
                if (s.size() < 2) throw Error("every sequence needs at least 2 tokens");
                losses.push_back(lm_loss(model, s));
            }
            double mean = 0.0;
            for (double x : losses) mean += x;
            mean /= static_cast<double>(losses.size());
            if (l->json) {
                fmt::print("{}\n", json{{"mean_loss", mean}, {"per_sequence", losses}}.dump(2));
            } else {
                fmt::print("mean loss {:.6f} nats over {} sequences\n", mean, losses.size());
            }
            return kOk;
        };
    });
}

} // namespace

ModelConfig model_config_from(const LayeredConfig& cfg) {
    ModelConfig m;
    m.vocab_size = cfg.get_int("model.vocab_size", m.vocab_size);
    m.d_model = cfg.get_int("model.d_model", m.d_model);
    m.n_layers = cfg.get_int("model.n_layers", m.n_layers);
    m.n_heads = cfg.get_int("model.n_heads", m.n_heads);
    m.d_ff = cfg.get_int("model.d_ff", m.d_ff);
    m.max_seq_len = cfg.get_int("model.max_seq_len", m.max_seq_len);
    m.seed = cfg.get_uint("model.seed", m.seed);
    m.validate();
    return m;
}

const std::set<std::string>& model_keys() { return kModelKeys; }

void register_weight_commands(CLI::App& app, Runtime& rt) {
    auto* ckpt = app.add_subcommand("ckpt", "Checkpoint files");
    ckpt->require_subcommand(1);

    struct InspectOpts {
        std::string path;
        bool json = false;
    };
    auto i = std::make_shared<InspectOpts>();
    auto* inspect = ckpt->add_subcommand("inspect", "Print tensor names, shapes and metadata");
    inspect->add_option("path", i->path, "Checkpoint file")->required();
    inspect->add_flag("--json", i->json, "Machine-readable output");
    inspect->callback([&rt, i] { rt.action = [i] { return ckpt_inspect(i->path, i->json); }; });

    struct DiffOpts {
        std::string a, b;
        bool json = false;
    };
    auto d = std::make_shared<DiffOpts>();
    auto* diff = ckpt->add_subcommand("diff", "Compare two checkpoints tensor by tensor");
    diff->add_option("a", d->a, "First checkpoint")->required();
    diff->add_option("b", d->b, "Second checkpoint")->required();
    diff->add_flag("--json", d->json, "Machine-readable output");
    diff->callback([&rt, d] { rt.action = [d] { return ckpt_diff(d->a, d->b, d->json); }; });

    register_residual(app, rt);
    register_lora(app, rt);
    register_diag(app, rt);
    register_toy(app, rt);
}

} // namespace specforge::cli
