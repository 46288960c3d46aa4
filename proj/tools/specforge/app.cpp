#include "app.hpp"

#include <pthread.h>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "specforge/error.hpp"

namespace specforge::cli {

LayeredConfig Runtime::config(std::set<std::string> known,
                              const std::vector<std::pair<std::string, nlohmann::json>>& flags) const {
    LayeredConfig cfg(std::move(known));
    if (!config_path.empty()) cfg.load_file(config_path);
    cfg.load_env(env);
    for (const auto& a : assignments) cfg.assign(a);
    for (const auto& [k, v] : flags) cfg.set(k, v);
    return cfg;
}

RunManifest Runtime::manifest(const LayeredConfig& cfg) const {
    return RunManifest(command_line, cfg.digest(), cfg.to_json());
}

ShutdownSignals::ShutdownSignals() {
    sigemptyset(&set_);
    sigaddset(&set_, SIGINT);
    sigaddset(&set_, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set_, &previous_);
}

ShutdownSignals::~ShutdownSignals() { pthread_sigmask(SIG_SETMASK, &previous_, nullptr); }

int ShutdownSignals::wait() {
    int sig = 0;
    sigwait(&set_, &sig);
    return sig;
}

namespace {

void configure_logging(const std::string& level) {
    static auto logger = [] {
        auto l = spdlog::stderr_color_mt("specforge");
        l->set_pattern("[%Y-%m-%dT%H:%M:%S.%e] [%^%l%$] %v");
        spdlog::set_default_logger(l);
        return l;
    }();
    const auto lvl = spdlog::level::from_str(level);
    if (lvl == spdlog::level::off && level != "off") {
        throw ConfigError(fmt::format("unknown log level '{}'", level), "use trace, debug, info, warn, error or off");
    }
    logger->set_level(lvl);
}

std::string join_args(const std::vector<std::string>& args) {
    std::string out;
    for (const auto& a : args) {
        if (!out.empty()) out += ' ';
        const bool quote = a.empty() || a.find_first_of(" \t\"'") != std::string::npos;
        out += quote ? "'" + a + "'" : a;
    }
    return out;
}

} // namespace

int run(const std::vector<std::string>& args) {
    Runtime rt;
    rt.command_line = join_args(args);
    rt.env = process_environment();

    CLI::App app{"Domain-adaptation toolkit: checkpoints, weight algebra, toy training, corpus preparation, "
                 "routing and load benchmarking.",
                 "specforge"};
    app.set_version_flag("--version", tool_version());
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--config", rt.config_path, "TOML config file (flags > SPECFORGE_* env > file > defaults)");
    app.add_option("--set", rt.assignments, "Override one config key, e.g. --set dpo.beta=0.1 (repeatable)");
    app.add_option("--log-level", rt.log_level, "trace, debug, info, warn, error or off")->capture_default_str();

    register_weight_commands(app, rt);
    register_training_commands(app, rt);
    register_service_commands(app, rt);

    std::vector<std::string> argv_rest(args.begin() + (args.empty() ? 0 : 1), args.end());
    std::reverse(argv_rest.begin(), argv_rest.end()); // CLI11 consumes a reversed vector
    try {
        app.parse(argv_rest);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsageError;
    }

    try {
        configure_logging(rt.log_level);
        if (!rt.action) return kUsageError;
        return rt.action();
    } catch (const Error& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        if (!e.hint().empty()) fmt::print(stderr, "hint: {}\n", e.hint());
        return kDomainError;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kDomainError;
    }
}

} // namespace specforge::cli
