#include <algorithm>
#include <cstdio>
#include <memory>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "app.hpp"
#include "specforge/bench.hpp"
#include "specforge/corpus.hpp"
#include "specforge/datasets.hpp"
#include "specforge/router.hpp"

namespace specforge::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using Flags = std::vector<std::pair<std::string, json>>;

// ---------------------------------------------------------------------------
// corpus run

CorpusConfig corpus_config_from(const LayeredConfig& cfg) {
    CorpusConfig c;
    c.seed = cfg.get_uint("corpus.seed", c.seed);
    c.min_tokens = cfg.get_uint("corpus.min_tokens", c.min_tokens);
    c.max_tokens = cfg.get_uint("corpus.max_tokens", c.max_tokens);
    const auto order = cfg.get_string("corpus.date_order", "month_first");
    if (order == "month_first") {
        c.date_order = DateOrder::MonthFirst;
    } else if (order == "day_first") {
        c.date_order = DateOrder::DayFirst;
    } else {
        throw ConfigError(fmt::format("corpus.date_order must be month_first or day_first, got '{}'", order));
    }

    std::vector<std::string> all;
    for (auto t : all_entity_types()) all.emplace_back(entity_name(t));
    c.pii.enabled.clear();
    for (const auto& name : cfg.get_string_list("pii.enabled", all)) c.pii.enabled.insert(parse_entity(name));
    for (const auto& name : cfg.get_string_list("pii.disabled", {})) c.pii.enabled.erase(parse_entity(name));

    if (const auto* custom = cfg.get_raw("pii.custom")) {
        if (!custom->is_array()) throw ConfigError("pii.custom must be an array of {name, pattern} tables");
        for (const auto& d : *custom) {
            if (!d.is_object() || !d.contains("name") || !d.contains("pattern") || !d["name"].is_string() ||
                !d["pattern"].is_string()) {
                throw ConfigError("each pii.custom entry needs string fields name and pattern");
            }
            c.pii.custom.push_back({d["name"].get<std::string>(), d["pattern"].get<std::string>()});
        }
    }
    c.validate();
    return c;
}

void register_corpus(CLI::App& app, Runtime& rt) {
    auto* group = app.add_subcommand("corpus", "Domain corpus preparation");
    group->require_subcommand(1);
    struct Opts {
        std::string in, out;
        std::uint64_t seed = 0;
        std::size_t min_tokens = kDefaultMinTokens;
        std::size_t max_tokens = kDefaultMaxTokens;
    };
    auto o = std::make_shared<Opts>();
    auto* run = group->add_subcommand("run", "Deduplicate, clean, chunk and pseudonymize a document tree");
    run->add_option("--in", o->in, "Input directory (*.txt and *.jsonl, recursive)")->required();
    run->add_option("--out", o->out, "Output directory (chunks.jsonl, manifest.json)")->required();
    auto* seed = run->add_option("--seed", o->seed, "Pseudonymization seed");
    auto* min = run->add_option("--min-tokens", o->min_tokens, "Minimum chunk size in tokens");
    auto* max = run->add_option("--max-tokens", o->max_tokens, "Maximum chunk size in tokens");
    run->callback([&rt, o, seed, min, max] {
        rt.action = [&rt, o, seed, min, max] {
            Flags flags;
            flag_if(flags, seed, "corpus.seed", o->seed);
            flag_if(flags, min, "corpus.min_tokens", o->min_tokens);
            flag_if(flags, max, "corpus.max_tokens", o->max_tokens);
            const auto cfg = rt.config({"corpus.seed", "corpus.min_tokens", "corpus.max_tokens", "corpus.date_order",
                                        "pii.enabled", "pii.disabled", "pii.custom"},
                                       flags);
            const auto corpus_cfg = corpus_config_from(cfg);
            auto manifest = rt.manifest(cfg);
            if (!fs::is_directory(o->in)) {
                throw Error(fmt::format("input directory not found: {}", o->in), "pass an existing directory to --in");
            }
            manifest.add_input(o->in);
            const auto m = run_pipeline(o->in, o->out, corpus_cfg);
            const fs::path dir = o->out;
            if (fs::exists(dir / "chunks.jsonl")) manifest.add_output(dir / "chunks.jsonl");
            manifest.add_output(dir / "manifest.json");
            manifest.set_summary({{"documents_in", m.documents_in},
                                  {"duplicates_dropped", m.duplicates_dropped},
                                  {"chunks_emitted", m.chunks_emitted},
                                  {"skipped_files", m.skipped_files.size()}});
            manifest.write_for_dir(dir);
            for (const auto& s : m.skipped_files) spdlog::warn("skipped {}: {}", s.path, s.reason);
            fmt::print("{} documents, {} duplicates dropped, {} chunks ({} tokens)\n", m.documents_in,
                       m.duplicates_dropped, m.chunks_emitted, m.tokens_emitted);
            return kOk;
        };
    });
}

// ---------------------------------------------------------------------------
// route

const std::set<std::string> kRouteKeys = {"route.classifier",      "route.classifier_model", "route.timeout_ms",
                                           "route.retries",         "route.exemplars",        "route.qa_endpoint",
                                           "route.qa_model",        "route.struct_endpoint",  "route.struct_model",
                                           "route.expert_timeout_ms", "route.host",           "route.port",
                                           "route.classifier_token",  "route.qa_token",      "route.struct_token"};

struct RouteSetup {
    std::shared_ptr<ClassifierBackend> classifier;
    RouteOptions options;
    std::map<Expert, Endpoint> endpoints;
    std::chrono::milliseconds expert_timeout{60000};
};

// "stub", "replay:<file>" or an http:// chat-completion URL.
std::shared_ptr<ClassifierBackend> make_classifier(const std::string& spec, const std::string& model,
                                                   const std::string& token) {
    if (spec == "stub") return std::make_shared<KeywordStub>();
    if (spec.starts_with("replay:")) return std::make_shared<ScriptedReplay>(ScriptedReplay::from_file(spec.substr(7)));
    if (spec.starts_with("http://") || spec.starts_with("https://")) {
        return std::make_shared<RemoteChat>(Endpoint{spec, model, token});
    }
    throw ConfigError(fmt::format("unknown classifier '{}'", spec), "use stub, replay:<file> or an http:// URL");
}

RouteSetup route_setup(const LayeredConfig& cfg) {
    RouteSetup s;
    s.classifier = make_classifier(cfg.get_string("route.classifier", "stub"),
                                   cfg.get_string("route.classifier_model", "default"),
                                   cfg.get_string("route.classifier_token", ""));
    s.options.timeout = std::chrono::milliseconds(cfg.get_int("route.timeout_ms", 2000));
    s.options.retries = static_cast<int>(cfg.get_int("route.retries", 1));
    if (s.options.timeout.count() <= 0) throw ConfigError("route.timeout_ms must be positive");
    if (s.options.retries < 0) throw ConfigError("route.retries must not be negative");
    if (const auto ex = cfg.get_string("route.exemplars", ""); !ex.empty()) s.options.exemplars = load_exemplars(ex);
    if (const auto url = cfg.get_string("route.qa_endpoint", ""); !url.empty()) {
        s.endpoints[Expert::QAExpert] = {url, cfg.get_string("route.qa_model", "qa"), cfg.get_string("route.qa_token", "")};
    }
    if (const auto url = cfg.get_string("route.struct_endpoint", ""); !url.empty()) {
        s.endpoints[Expert::StructExpert] = {url, cfg.get_string("route.struct_model", "struct"),
                                             cfg.get_string("route.struct_token", "")};
    }
    s.expert_timeout = std::chrono::milliseconds(cfg.get_int("route.expert_timeout_ms", 60000));
    return s;
}

struct RouteOpts {
    std::string classifier, qa, structured, query, host = "127.0.0.1";
    int port = 8080;
    bool stream = false;
};

Flags route_flags(const RouteOpts& o, const std::map<std::string, CLI::Option*>& opts) {
    Flags f;
    flag_if(f, opts.at("classifier"), "route.classifier", o.classifier);
    flag_if(f, opts.at("qa"), "route.qa_endpoint", o.qa);
    flag_if(f, opts.at("struct"), "route.struct_endpoint", o.structured);
    if (opts.count("host")) {
        flag_if(f, opts.at("host"), "route.host", o.host);
        flag_if(f, opts.at("port"), "route.port", o.port);
    }
    return f;
}

std::map<std::string, CLI::Option*> add_route_options(CLI::App* sub, RouteOpts& o) {
    return {{"classifier", sub->add_option("--classifier", o.classifier, "stub, replay:<file> or http:// URL")},
            {"qa", sub->add_option("--qa-endpoint", o.qa, "QAExpert chat-completion URL")},
            {"struct", sub->add_option("--struct-endpoint", o.structured, "StructExpert chat-completion URL")}};
}

void register_route(CLI::App& app, Runtime& rt) {
    auto* group = app.add_subcommand("route", "Self-routing between the QA and structured-task experts");
    group->require_subcommand(1);

    auto once_opts = std::make_shared<RouteOpts>();
    auto* once = group->add_subcommand("once", "Classify one query, print the plan and, with endpoints, the reply");
    auto once_flags = add_route_options(once, *once_opts);
    once->add_option("--query", once_opts->query, "User query")->required();
    once->add_flag("--stream", once_opts->stream, "Ask the expert for a streamed reply");
    once->callback([&rt, once_opts, once_flags] {
        rt.action = [&rt, once_opts, once_flags] {
            const auto cfg = rt.config(kRouteKeys, route_flags(*once_opts, once_flags));
            const auto s = route_setup(cfg);
            const auto plan = route(once_opts->query, *s.classifier, s.options);
            json out = {{"plan", plan.to_json()}};
            if (plan.fallback_used) spdlog::warn("classifier fallback: {}", plan.fallback_reason);
            if (!s.endpoints.empty()) {
                const auto r = dispatch(plan, once_opts->query, s.endpoints, once_opts->stream, s.expert_timeout);
                out["response"] = {{"status", r.status}, {"content", r.content}, {"latency_s", r.latency_s}};
                if (r.ttft_s) out["response"]["ttft_s"] = *r.ttft_s;
            }
            fmt::print("{}\n", out.dump(2));
            return kOk;
        };
    });

    auto serve_opts = std::make_shared<RouteOpts>();
    auto* serve = group->add_subcommand("serve", "Serve a routing chat-completion endpoint until SIGINT/SIGTERM");
    auto serve_flags = add_route_options(serve, *serve_opts);
    serve_flags["host"] = serve->add_option("--host", serve_opts->host, "Listen address");
    serve_flags["port"] = serve->add_option("--port", serve_opts->port, "Listen port (0 picks a free one)");
    serve->callback([&rt, serve_opts, serve_flags] {
        rt.action = [&rt, serve_opts, serve_flags] {
            const auto cfg = rt.config(kRouteKeys, route_flags(*serve_opts, serve_flags));
            const auto s = route_setup(cfg);
            const auto host = cfg.get_string("route.host", "127.0.0.1");
            const auto port = static_cast<int>(cfg.get_int("route.port", 8080));
            ShutdownSignals signals;
            RouterService service(s.classifier, s.endpoints, s.options, s.expert_timeout);
            const int bound = service.start(host, port);
            fmt::print("listening on http://{}:{}\n", host, bound);
            std::fflush(stdout);
            const int sig = signals.wait();
            spdlog::info("signal {} received, shutting down; {}", sig, service.metrics().to_json().dump());
            service.stop();
            return kOk;
        };
    });
}

// ---------------------------------------------------------------------------
// bench

std::vector<std::size_t> parse_worker_list(const json& value) {
    std::vector<std::size_t> out;
    const auto add = [&](std::int64_t w) {
        if (w <= 0) throw ConfigError("worker counts must be positive");
        out.push_back(static_cast<std::size_t>(w));
    };
    if (value.is_number_integer()) {
        add(value.get<std::int64_t>());
    } else if (value.is_array()) {
        for (const auto& v : value) {
            if (!v.is_number_integer()) throw ConfigError("bench.workers must be a list of integers");
            add(v.get<std::int64_t>());
        }
    } else if (value.is_string()) {
        std::string item;
        for (char c : value.get<std::string>() + ",") {
            if (c != ',') {
                item += c;
                continue;
            }
            if (item.empty()) continue;
            try {
                std::size_t used = 0;
                const auto w = std::stoll(item, &used);
                if (used != item.size()) throw std::invalid_argument(item);
                add(w);
            } catch (const std::logic_error&) {
                throw ConfigError(fmt::format("bad worker count '{}'", item), "use a list such as 1,2,4,8");
            }
            item.clear();
        }
    } else {
        throw ConfigError("bench.workers must be a list of integers");
    }
    if (out.empty()) throw ConfigError("bench.workers is empty");
    return out;
}

void register_bench(CLI::App& app, Runtime& rt) {
    auto* group = app.add_subcommand("bench", "Closed-loop load benchmarking");
    group->require_subcommand(1);

    struct RunOpts {
        std::string endpoint, workers, prompts, out, model;
        std::size_t requests = 100;
        std::int64_t timeout_ms = 30000;
        bool stream = false;
        bool records = false;
    };
    auto r = std::make_shared<RunOpts>();
    auto* run = group->add_subcommand("run", "Benchmark an endpoint at each worker count; table to stdout");
    auto* endpoint = run->add_option("--endpoint", r->endpoint, "Chat-completion URL");
    auto* requests = run->add_option("--requests", r->requests, "Requests per worker count");
    auto* workers = run->add_option("--workers", r->workers, "Comma-separated worker counts, e.g. 1,2,4,8");
    auto* prompts = run->add_option("--prompts", r->prompts, "Prompt file (.jsonl with {\"prompt\"} or plain lines)");
    auto* timeout = run->add_option("--timeout-ms", r->timeout_ms, "Per-request timeout");
    auto* model = run->add_option("--model", r->model, "Model name sent in each request");
    run->add_flag("--stream", r->stream, "Use streamed responses and report TTFT");
    run->add_flag("--records", r->records, "Include per-request records in the JSON output");
    run->add_option("-o,--output", r->out, "Write the JSON report here");
    run->callback([&rt, r, endpoint, requests, workers, prompts, timeout, model] {
        rt.action = [&rt, r, endpoint, requests, workers, prompts, timeout, model] {
            Flags flags;
            flag_if(flags, endpoint, "bench.endpoint", r->endpoint);
            flag_if(flags, requests, "bench.requests", r->requests);
            flag_if(flags, workers, "bench.workers", r->workers);
            flag_if(flags, prompts, "bench.prompts", r->prompts);
            flag_if(flags, timeout, "bench.timeout_ms", r->timeout_ms);
            flag_if(flags, model, "bench.model", r->model);
            if (r->stream) flags.emplace_back("bench.stream", true);
            const auto cfg = rt.config({"bench.endpoint", "bench.requests", "bench.workers", "bench.prompts",
                                        "bench.timeout_ms", "bench.model", "bench.stream"},
                                       flags);
            BenchConfig base;
            base.endpoint = cfg.get_string("bench.endpoint", "");
            if (base.endpoint.empty()) throw ConfigError("no endpoint given", "pass --endpoint http://host:port");
            base.total_requests = cfg.get_uint("bench.requests", 100);
            base.model = cfg.get_string("bench.model", "default");
            base.stream = cfg.get_bool("bench.stream", false);
            base.timeout = std::chrono::milliseconds(cfg.get_int("bench.timeout_ms", 30000));
            const auto prompt_file = cfg.get_string("bench.prompts", "");
            if (!prompt_file.empty()) base.prompts = load_prompts(prompt_file);
            const auto* w = cfg.get_raw("bench.workers");
            const auto ladder = parse_worker_list(w ? *w : json::array({1}));
            auto manifest = rt.manifest(cfg);
            if (!prompt_file.empty()) manifest.add_input(prompt_file);

            std::vector<BenchConfig> configs;
            for (auto n : ladder) {
                auto c = base;
                c.workers = n;
                c.validate(); // fail before any traffic is sent
                configs.push_back(std::move(c));
            }
            std::vector<BenchReport> reports;
            for (const auto& c : configs) {
                spdlog::info("workers={} requests={}", c.workers, c.total_requests);
                reports.push_back(run_benchmark(c));
                if (reports.back().success_rate == 0.0) {
                    spdlog::warn("workers={}: no request succeeded (is {} reachable?)", c.workers, c.endpoint);
                }
            }
            fmt::print("{}", report_table(reports));
            if (!r->out.empty()) {
                auto j = reports_to_json(reports);
                if (r->records) {
                    std::sort(reports.begin(), reports.end(),
                              [](const auto& a, const auto& b) { return a.workers < b.workers; });
                    for (std::size_t i = 0; i < reports.size(); ++i) j["reports"][i] = reports[i].to_json(true);
                }
                write_text_file(r->out, j.dump(2) + "\n");
                manifest.add_output(r->out);
                manifest.write_for_file(r->out);
            }
            return kOk;
        };
    });

    struct StubOpts {
        std::string host, distribution;
        std::int64_t port = 0;
        double service_ms = 0, spread_ms = 0, ttft_ms = 0, failure_rate = 0;
        std::uint64_t seed = 0;
        std::uint64_t chunks = 0;
    };
    auto s = std::make_shared<StubOpts>();
    auto* stub = group->add_subcommand("stub", "Serve a stub chat-completion endpoint until SIGINT/SIGTERM");
    const std::map<std::string, CLI::Option*> stub_opts = {
        {"stub.host", stub->add_option("--host", s->host, "Listen address [127.0.0.1]")},
        {"stub.port", stub->add_option("--port", s->port, "Listen port, 0 picks a free one [8000]")},
        {"stub.service_ms", stub->add_option("--service-ms", s->service_ms, "Mean service time [100]")},
        {"stub.distribution", stub->add_option("--distribution", s->distribution, "fixed, uniform or exponential")},
        {"stub.spread_ms", stub->add_option("--spread-ms", s->spread_ms, "Uniform half-width around the mean [0]")},
        {"stub.ttft_ms", stub->add_option("--ttft-ms", s->ttft_ms, "Streaming: delay before the first chunk [0]")},
        {"stub.failure_rate", stub->add_option("--failure-rate", s->failure_rate, "Probability of HTTP 500 [0]")},
        {"stub.seed", stub->add_option("--seed", s->seed, "Seed for timing and failures [0]")},
        {"stub.chunks", stub->add_option("--chunks", s->chunks, "Streamed chunks per reply [4]")},
    };
    stub->callback([&rt, s, stub_opts] {
        rt.action = [&rt, s, stub_opts] {
            Flags flags;
            std::set<std::string> keys;
            for (const auto& [key, opt] : stub_opts) keys.insert(key);
            const auto opt = [&](const char* key) { return stub_opts.at(key); };
            flag_if(flags, opt("stub.host"), "stub.host", s->host);
            flag_if(flags, opt("stub.port"), "stub.port", s->port);
            flag_if(flags, opt("stub.service_ms"), "stub.service_ms", s->service_ms);
            flag_if(flags, opt("stub.distribution"), "stub.distribution", s->distribution);
            flag_if(flags, opt("stub.spread_ms"), "stub.spread_ms", s->spread_ms);
            flag_if(flags, opt("stub.ttft_ms"), "stub.ttft_ms", s->ttft_ms);
            flag_if(flags, opt("stub.failure_rate"), "stub.failure_rate", s->failure_rate);
            flag_if(flags, opt("stub.seed"), "stub.seed", s->seed);
            flag_if(flags, opt("stub.chunks"), "stub.chunks", s->chunks);
            const auto cfg = rt.config(keys, flags);
            StubProfile p;
            const auto dist = cfg.get_string("stub.distribution", "fixed");
            if (dist == "fixed") {
                p.service.kind = ServiceTime::Kind::Fixed;
            } else if (dist == "uniform") {
                p.service.kind = ServiceTime::Kind::Uniform;
            } else if (dist == "exponential") {
                p.service.kind = ServiceTime::Kind::Exponential;
            } else {
                throw ConfigError(fmt::format("unknown distribution '{}'", dist), "use fixed, uniform or exponential");
            }
            p.service.mean_ms = cfg.get_double("stub.service_ms", 100.0);
            p.service.spread_ms = cfg.get_double("stub.spread_ms", 0.0);
            p.first_token_delay_ms = cfg.get_double("stub.ttft_ms", 0.0);
            p.failure_rate = cfg.get_double("stub.failure_rate", 0.0);
            p.seed = cfg.get_uint("stub.seed", 0);
            p.stream_chunks = cfg.get_uint("stub.chunks", 4);
            if (p.service.mean_ms < 0 || p.service.spread_ms < 0 || p.first_token_delay_ms < 0) {
                throw ConfigError("stub times must not be negative");
            }
            if (p.failure_rate < 0 || p.failure_rate > 1) throw ConfigError("stub.failure_rate must be in [0, 1]");
            if (p.stream_chunks == 0) throw ConfigError("stub.chunks must be positive");
            const auto host = cfg.get_string("stub.host", "127.0.0.1");
            const auto port = static_cast<int>(cfg.get_int("stub.port", 8000));

            ShutdownSignals signals;
            StubServer server(p, host, port);
            fmt::print("listening on {}\n", server.url());
            std::fflush(stdout);
            signals.wait();
            spdlog::info("served {} requests", server.requests_served());
            server.stop();
            return kOk;
        };
    });
}

} // namespace

void register_service_commands(CLI::App& app, Runtime& rt) {
    register_corpus(app, rt);
    register_route(app, rt);
    register_bench(app, rt);
}

} // namespace specforge::cli
