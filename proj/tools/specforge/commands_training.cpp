#include <array>
#include <functional>
#include <memory>
#include <optional>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "app.hpp"
#include "specforge/datasets.hpp"
#include "specforge/pipeline.hpp"
#include "specforge/rng.hpp"
#include "specforge/weight_ops.hpp"

namespace specforge::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

const std::vector<std::string> kStageFields = {"learning_rate", "beta",  "epochs", "batch_size",
                                               "seed",          "max_steps", "clip_norm", "rank",
                                               "alpha",         "dropout",   "targets"};

void add_stage_keys(std::set<std::string>& keys, const std::string& prefix) {
    for (const auto& f : kStageFields) keys.insert(prefix + "." + f);
}

StageConfig stage_from(const LayeredConfig& cfg, const std::string& p, StageConfig s) {
    s.train.learning_rate = cfg.get_double(p + ".learning_rate", s.train.learning_rate);
    s.train.beta = cfg.get_double(p + ".beta", s.train.beta);
    s.train.epochs = cfg.get_double(p + ".epochs", s.train.epochs);
    s.train.batch_size = static_cast<int>(cfg.get_int(p + ".batch_size", s.train.batch_size));
    s.train.seed = cfg.get_uint(p + ".seed", s.train.seed);
    if (const auto steps = cfg.get_optional_int(p + ".max_steps")) s.train.max_steps = *steps;
    s.train.clip_norm = cfg.get_double(p + ".clip_norm", s.train.clip_norm);
    s.rank = static_cast<int>(cfg.get_int(p + ".rank", s.rank));
    s.alpha = cfg.get_double(p + ".alpha", s.alpha);
    s.dropout = cfg.get_double(p + ".dropout", s.dropout);
    s.targets = cfg.get_string_list(p + ".targets", s.targets);
    s.train.validate();
    if (s.rank <= 0) throw ConfigError(fmt::format("{}.rank must be positive", p));
    if (!(s.alpha > 0.0)) throw ConfigError(fmt::format("{}.alpha must be positive", p));
    if (s.targets.empty()) throw ConfigError(fmt::format("{}.targets must name at least one module", p));
    return s;
}

json training_summary(const TrainResult& r) {
    json j = {{"steps", r.steps}, {"trainable_parameters", r.adapters.trainable_parameter_count()}};
    if (!r.loss_trace.empty()) {
        j["first_loss"] = r.loss_trace.front();
        j["last_loss"] = r.loss_trace.back();
    }
    if (!r.margin_trace.empty()) j["last_margin"] = r.margin_trace.back();
    return j;
}

json trace_json(const TrainResult& r) {
    return {{"steps", r.steps},
            {"loss", r.loss_trace},
            {"margin", r.margin_trace},
            {"chosen_grad_norm", r.chosen_grad_norm},
            {"rejected_grad_norm", r.rejected_grad_norm}};
}

// ---------------------------------------------------------------------------
// train cpt|sft|dpo

struct TrainOpts {
    std::string model, ref, data, out;
    std::int64_t max_steps = 0;
    std::uint64_t seed = 0;
};

int train_command(const Runtime& rt, const std::string& kind, const TrainOpts& o, const CLI::Option* steps_opt,
                  const CLI::Option* seed_opt) {
    std::set<std::string> keys;
    add_stage_keys(keys, "train");
    std::vector<std::pair<std::string, json>> flags;
    flag_if(flags, steps_opt, "train.max_steps", o.max_steps);
    flag_if(flags, seed_opt, "train.seed", o.seed);
    const auto cfg = rt.config(keys, flags);

    const StageConfig defaults = kind == "cpt"   ? default_cpt_stage(1.0)
                                 : kind == "sft" ? default_sft_stage()
                                                 : default_dpo_stage(2.5e-5);
    const auto stage = stage_from(cfg, "train", defaults);
    if (kind != "dpo" && !o.ref.empty()) throw ConfigError("--ref only applies to train dpo");

    auto manifest = rt.manifest(cfg);
    const auto base = load_checkpoint(o.model);
    manifest.add_input(o.model);
    manifest.add_input(o.data);

    Objective objective;
    if (kind == "cpt") {
        objective = CptObjective{load_token_sequences(o.data)};
    } else if (kind == "sft") {
        objective = SftObjective{load_supervised_examples(o.data)};
    } else {
        Checkpoint reference = o.ref.empty() ? base : load_checkpoint(o.ref);
        if (!o.ref.empty()) {
            require_compatible(base, reference, "policy vs reference");
            manifest.add_input(o.ref);
        }
        objective = DpoObjective{std::move(reference), load_preference_pairs(o.data)};
    }

    const auto adapters = create_lora(base, stage.targets, stage.rank, stage.alpha, stage.dropout,
                                      derive_seed(stage.train.seed, "train/" + kind));
    spdlog::info("training {} adapters on {} tensors, {} trainable parameters", kind, adapters.entries.size(),
                 adapters.trainable_parameter_count());
    const auto result = train(base, adapters, objective, stage.train);
    spdlog::info("finished {} steps", result.steps);

    Checkpoint merged = merge_lora(base, result.adapters);
    merged.metadata["stage"] = kind;
    const fs::path dir = o.out;
    fs::create_directories(dir);
    save_checkpoint(merged, dir / "model.safetensors");
    save_checkpoint(adapters_to_checkpoint(result.adapters), dir / "adapters.safetensors");
    write_text_file(dir / "trace.json", trace_json(result).dump(2) + "\n");
    for (const char* f : {"model.safetensors", "adapters.safetensors", "trace.json"}) manifest.add_output(dir / f);
    manifest.set_summary(training_summary(result));
    manifest.write_for_dir(dir);
    fmt::print("{}\n", training_summary(result).dump());
    return kOk;
}

void register_train(CLI::App& app, Runtime& rt) {
    auto* group = app.add_subcommand("train", "Train LoRA adapters on a model ([train] config section)");
    group->require_subcommand(1);
    const std::map<std::string, std::string> help = {
        {"cpt", "Continued pretraining on {\"tokens\"} sequences"},
        {"sft", "Supervised fine-tuning on {\"prompt\",\"completion\",\"task\"} examples"},
        {"dpo", "Preference optimization on {\"prompt\",\"chosen\",\"rejected\"} pairs"}};
    for (const auto& [kind, text] : help) {
        auto o = std::make_shared<TrainOpts>();
        auto* sub = group->add_subcommand(kind, text);
        sub->add_option("--model", o->model, "Checkpoint to adapt")->required();
        if (kind == "dpo") sub->add_option("--ref", o->ref, "Frozen reference checkpoint (default: --model)");
        sub->add_option("--data", o->data, "JSONL dataset")->required();
        sub->add_option("-o,--output", o->out, "Output directory")->required();
        auto* steps = sub->add_option("--max-steps", o->max_steps, "Stop after this many optimizer steps");
        auto* seed = sub->add_option("--seed", o->seed, "Training seed");
        sub->callback([&rt, k = kind, o, steps, seed] {
            rt.action = [&rt, k, o, steps, seed] { return train_command(rt, k, *o, steps, seed); };
        });
    }
}

// ---------------------------------------------------------------------------
// pipeline track1|track2

std::set<std::string> pipeline_keys(const std::string& track) {
    std::set<std::string> keys = model_keys();
    for (const char* k : {"inputs.base", "inputs.corpus", "inputs.prefs", "synthetic.seed",
                          "synthetic.corpus_sequences", "synthetic.corpus_length", "synthetic.pref_pairs"}) {
        keys.insert(k);
    }
    add_stage_keys(keys, "cpt");
    add_stage_keys(keys, "dpo");
    if (track == "track1") {
        for (const char* k : {"inputs.inst", "synthetic.inst_stddev", "residual.scale"}) keys.insert(k);
    } else {
        for (const char* k : {"inputs.struct", "synthetic.struct_examples"}) keys.insert(k);
        add_stage_keys(keys, "sft");
    }
    return keys;
}

int pipeline_command(const Runtime& rt, const std::string& track, const std::string& out) {
    const auto cfg = rt.config(pipeline_keys(track));
    const auto model = model_config_from(cfg);
    const std::uint64_t seed = cfg.get_uint("synthetic.seed", 7);
    std::vector<fs::path> inputs;
    // Each input comes from its file when configured, otherwise from the seeded generator.
    const auto from_file = [&](const std::string& key) -> std::optional<fs::path> {
        auto p = cfg.get_string(key, "");
        if (p.empty()) return std::nullopt;
        inputs.emplace_back(p);
        return fs::path(p);
    };

    const auto base_path = from_file("inputs.base");
    const Checkpoint base = base_path ? load_checkpoint(*base_path) : init_model(model);
    const auto base_cfg = read_config_metadata(base.metadata);

    const auto corpus_path = from_file("inputs.corpus");
    const auto corpus_n = cfg.get_uint("synthetic.corpus_sequences", 32);
    const auto corpus_len = cfg.get_uint("synthetic.corpus_length", 16);
    const auto corpus = corpus_path ? load_token_sequences(*corpus_path)
                                    : synthetic::domain_corpus(base_cfg, corpus_n, corpus_len, derive_seed(seed, "corpus"));

    const auto prefs_path = from_file("inputs.prefs");
    const auto prefs_n = cfg.get_uint("synthetic.pref_pairs", 64);
    const auto prefs = prefs_path ? load_preference_pairs(*prefs_path)
                                  : synthetic::preference_pairs(base_cfg, prefs_n, derive_seed(seed, "prefs"));

    const fs::path dir = out;
    std::function<TrackResult()> run_track;
    std::string final_stage;
    if (track == "track1") {
        const auto inst_path = from_file("inputs.inst");
        const auto stddev = cfg.get_double("synthetic.inst_stddev", 0.01);
        Checkpoint inst = inst_path ? load_checkpoint(*inst_path)
                                    : synthetic::instruct_reference(base, stddev, derive_seed(seed, "inst"));
        Track1Config t;
        t.cpt = stage_from(cfg, "cpt", t.cpt);
        t.dpo = stage_from(cfg, "dpo", t.dpo);
        t.residual_scale = cfg.get_double("residual.scale", 1.0);
        t.stage_dir = dir;
        run_track = [&, inst = std::move(inst), t] { return run_track1(base, inst, corpus, prefs, t); };
        final_stage = "qa";
    } else {
        const auto struct_path = from_file("inputs.struct");
        const auto struct_n = cfg.get_uint("synthetic.struct_examples", 24);
        auto structured = struct_path ? load_supervised_examples(*struct_path)
                                      : synthetic::struct_dataset(base_cfg, struct_n, derive_seed(seed, "struct"));
        Track2Config t;
        t.cpt = stage_from(cfg, "cpt", t.cpt);
        t.sft = stage_from(cfg, "sft", t.sft);
        t.dpo = stage_from(cfg, "dpo", t.dpo);
        t.stage_dir = dir;
        run_track = [&, structured = std::move(structured), t] { return run_track2(base, corpus, structured, prefs, t); };
        final_stage = "struct";
    }

    // Every key has been read at this point, so the digest covers resolved defaults.
    auto manifest = rt.manifest(cfg);
    for (const auto& p : inputs) manifest.add_input(p);
    const auto result = run_track();
    json stages = json::object();
    for (const auto& s : result.stages) {
        manifest.add_output(dir / (s.name + ".safetensors"));
        stages[s.name] = s.training ? training_summary(*s.training) : json{{"steps", 0}};
    }
    manifest.set_summary({{"track", track}, {"output", final_stage + ".safetensors"}, {"stages", stages}});
    manifest.write_for_dir(dir);
    fmt::print("{}\n", stages.dump());
    return kOk;
}

void register_pipeline(CLI::App& app, Runtime& rt) {
    auto* group = app.add_subcommand("pipeline", "End-to-end toy training tracks");
    group->require_subcommand(1);
    const std::map<std::string, std::string> help = {
        {"track1", "CPT, add the instruction residual, then DPO (writes cpt, ir, qa checkpoints)"},
        {"track2", "CPT, multi-task SFT, then DPO (writes cpt, sft, struct checkpoints)"}};
    for (const auto& [track, text] : help) {
        auto out = std::make_shared<std::string>();
        auto* sub = group->add_subcommand(track, text);
        sub->add_option("-o,--output", *out, "Output directory")->required();
        sub->callback([&rt, t = track, out] {
            rt.action = [&rt, t, out] { return pipeline_command(rt, t, *out); };
        });
    }
}

// ---------------------------------------------------------------------------
// prefs curate

void register_prefs(CLI::App& app, Runtime& rt) {
    auto* group = app.add_subcommand("prefs", "Preference data");
    group->require_subcommand(1);
    struct Opts {
        std::string in, out;
        double min_delta = 2.0;
        double split = 0.85;
        std::uint64_t seed = 0;
    };
    auto o = std::make_shared<Opts>();
    auto* curate = group->add_subcommand("curate", "Filter rated pairs by rating delta and split per category");
    curate->add_option("--in", o->in, "JSONL of rated items")->required();
    auto* delta = curate->add_option("--min-delta", o->min_delta, "Minimum |rating_a - rating_b|");
    auto* split = curate->add_option("--split", o->split, "Train fraction per category");
    auto* seed = curate->add_option("--seed", o->seed, "Shuffle seed");
    curate->add_option("-o,--output", o->out, "Output directory (train.jsonl, eval.jsonl)")->required();
    curate->callback([&rt, o, delta, split, seed] {
        rt.action = [&rt, o, delta, split, seed] {
            std::vector<std::pair<std::string, json>> flags;
            flag_if(flags, delta, "prefs.min_delta", o->min_delta);
            flag_if(flags, split, "prefs.split", o->split);
            flag_if(flags, seed, "prefs.seed", o->seed);
            const auto cfg = rt.config({"prefs.min_delta", "prefs.split", "prefs.seed"}, flags);
            const double min_delta = cfg.get_double("prefs.min_delta", 2.0);
            const double ratio = cfg.get_double("prefs.split", 0.85);
            const auto shuffle_seed = cfg.get_uint("prefs.seed", 0);
            auto manifest = rt.manifest(cfg);
            const auto items = load_rated_items(o->in);
            manifest.add_input(o->in);
            const auto r = curate_preferences(items, min_delta, ratio, shuffle_seed);
            if (r.empty()) spdlog::warn("no pair reached min_delta {}; train and eval are empty", min_delta);
            const fs::path dir = o->out;
            write_text_file(dir / "train.jsonl", to_jsonl(r.train));
            write_text_file(dir / "eval.jsonl", to_jsonl(r.eval));
            manifest.add_output(dir / "train.jsonl");
            manifest.add_output(dir / "eval.jsonl");
            std::map<std::string, std::array<std::size_t, 2>> per_category;
            for (const auto& p : r.train) ++per_category[p.category][0];
            for (const auto& p : r.eval) ++per_category[p.category][1];
            json cats = json::object();
            for (const auto& [c, n] : per_category) cats[c] = {{"train", n[0]}, {"eval", n[1]}};
            const json summary = {{"items", items.size()},         {"train", r.train.size()},
                                  {"eval", r.eval.size()},         {"below_threshold", r.below_threshold},
                                  {"ties", r.ties},                {"identical_responses", r.identical_responses},
                                  {"per_category", cats}};
            manifest.set_summary(summary);
            manifest.write_for_dir(dir);
            fmt::print("{}\n", summary.dump());
            return kOk;
        };
    });
}

} // namespace

void register_training_commands(CLI::App& app, Runtime& rt) {
    register_train(app, rt);
    register_pipeline(app, rt);
    register_prefs(app, rt);
}

} // namespace specforge::cli
