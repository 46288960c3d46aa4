#pragma once

#include <csignal>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "layered_config.hpp"
#include "run_manifest.hpp"
#include "specforge/toy_transformer.hpp"

namespace specforge::cli {

enum ExitCode : int { kOk = 0, kDomainError = 1, kUsageError = 2 };

// State shared by every subcommand of one invocation.
struct Runtime {
    std::string config_path;
    std::vector<std::string> assignments;
    std::string log_level = "info";
    std::string command_line;
    std::map<std::string, std::string> env;

    // Set by the selected leaf subcommand during parsing, run afterwards.
    std::function<int()> action;

    // Layers: defaults (at the getters) < --config file < SPECFORGE_* < --set < flags.
    LayeredConfig config(std::set<std::string> known,
                         const std::vector<std::pair<std::string, nlohmann::json>>& flags = {}) const;
    RunManifest manifest(const LayeredConfig& cfg) const;
};

// Adds (key, value) to `flags` when the option was given on the command line.
template <typename T>
void flag_if(std::vector<std::pair<std::string, nlohmann::json>>& flags, const CLI::Option* opt, std::string key,
             const T& value) {
    if (opt->count() > 0) flags.emplace_back(std::move(key), value);
}

// Blocks SIGINT and SIGTERM for this thread and every thread started after
// construction, so long-running servers can be stopped cleanly from wait().
class ShutdownSignals {
public:
    ShutdownSignals();
    ~ShutdownSignals();
    ShutdownSignals(const ShutdownSignals&) = delete;
    ShutdownSignals& operator=(const ShutdownSignals&) = delete;
    int wait();

private:
    sigset_t set_;
    sigset_t previous_;
};

// The [model] section shared by toy init and the pipeline commands.
const std::set<std::string>& model_keys();
ModelConfig model_config_from(const LayeredConfig& cfg);

void register_weight_commands(CLI::App& app, Runtime& rt);
void register_training_commands(CLI::App& app, Runtime& rt);
void register_service_commands(CLI::App& app, Runtime& rt);

// args[0] is the program name. Returns the process exit code.
int run(const std::vector<std::string>& args);

} // namespace specforge::cli
