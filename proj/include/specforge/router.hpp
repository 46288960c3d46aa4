#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "specforge/chat.hpp"
#include "specforge/error.hpp"

namespace specforge {

enum class TaskCategory { QA = 1, Classification = 2, Summarization = 3 };

std::string_view category_name(TaskCategory c);

enum class Expert { QAExpert, StructExpert };

std::string_view expert_name(Expert e);
Expert parse_expert(std::string_view name);
Expert expert_for(TaskCategory c);

// ---------------------------------------------------------------------------
// Prompt

struct Exemplar {
    std::string text;
    TaskCategory category;
};

inline constexpr int kPromptTemplateVersion = 1;
inline constexpr std::string_view kNumberOnlyInstruction = "Answer with the category number only (1, 2, or 3).";
inline constexpr std::string_view kQueryHeader = "### Query\n";

// Six mortgage-lending exemplars, two per category.
const std::vector<Exemplar>& default_exemplars();

// JSONL: {"text": string, "category": 1|2|3} per line.
std::vector<Exemplar> load_exemplars(const std::filesystem::path& path);

// Category definitions, then exemplars, then the query verbatim, then
// kNumberOnlyInstruction as the final line. Throws Error("empty query") on a
// blank query and ConfigError when a category has no exemplar or the template
// version is unknown.
std::string build_classification_prompt(std::string_view query,
                                        const std::vector<Exemplar>& exemplars = default_exemplars(),
                                        int template_version = kPromptTemplateVersion);

// The query embedded in a prompt built above (text after the last query
// header, up to the instruction section).
std::string query_from_prompt(std::string_view prompt);

struct ParseFailure {
    std::string raw;
};

// First standalone digit 1, 2 or 3; otherwise the earliest category name
// (case-insensitive); otherwise ParseFailure.
std::variant<TaskCategory, ParseFailure> parse_category(std::string_view response);

// ---------------------------------------------------------------------------
// Classifier backends. complete() must be safe to call concurrently.

class ClassifierBackend {
public:
    virtual ~ClassifierBackend() = default;
    // Throws TimeoutError, ConnectionError, HttpStatusError or ProtocolError.
    virtual std::string complete(const std::string& prompt, std::chrono::milliseconds timeout) = 0;
    virtual bool healthy() = 0;
};

struct KeywordRule {
    std::string keyword; // matched case-insensitively as a substring of the query
    std::string response;
};

// Rules are tried in order; the first keyword found in the query wins.
const std::vector<KeywordRule>& default_keyword_rules();

// Deterministic in-process classifier. An optional artificial delay lets tests
// exercise the timeout path: a delay beyond the timeout raises TimeoutError
// after waiting the full timeout.
class KeywordStub : public ClassifierBackend {
public:
    explicit KeywordStub(std::vector<KeywordRule> rules = default_keyword_rules(), std::string fallback = "1",
                         std::chrono::milliseconds delay = std::chrono::milliseconds(0));
    std::string complete(const std::string& prompt, std::chrono::milliseconds timeout) override;
    bool healthy() override { return true; }

    // Classifies a bare query without the prompt wrapper.
    std::string respond(std::string_view query) const;

private:
    std::vector<KeywordRule> rules_;
    std::string fallback_;
    std::chrono::milliseconds delay_;
};

// Replays recorded classifier outputs keyed by query. Fixture: JSONL with
// {"query": string, "response": string}. Unknown queries raise ProtocolError.
class ScriptedReplay : public ClassifierBackend {
public:
    explicit ScriptedReplay(std::map<std::string, std::string> responses);
    static ScriptedReplay from_file(const std::filesystem::path& path);
    std::string complete(const std::string& prompt, std::chrono::milliseconds timeout) override;
    bool healthy() override { return true; }

private:
    std::map<std::string, std::string> responses_;
};

// Classifier behind a chat-completion endpoint. A fresh connection per call
// keeps it safe for concurrent use.
class RemoteChat : public ClassifierBackend {
public:
    explicit RemoteChat(Endpoint endpoint);
    std::string complete(const std::string& prompt, std::chrono::milliseconds timeout) override;
    bool healthy() override;

private:
    Endpoint endpoint_;
};

// ---------------------------------------------------------------------------
// Routing

// Raised when the classifier keeps failing for reasons other than a timeout.
class RouteError : public Error {
public:
    using Error::Error;
};

struct RouteOptions {
    std::chrono::milliseconds timeout{2000};
    int retries = 1;
    std::vector<Exemplar> exemplars = default_exemplars();
    int template_version = kPromptTemplateVersion;
};

struct RoutePlan {
    TaskCategory category = TaskCategory::QA;
    Expert expert = Expert::QAExpert;
    std::string raw_classifier_output;
    bool fallback_used = false;
    std::string fallback_reason; // "parse failure" or "timeout"
    int attempts = 0;
    double classification_latency_s = 0.0;

    nlohmann::json to_json() const;
};

// Unparseable output or a timeout after all retries routes to QAExpert with
// fallback_used set. Other backend failures after all retries raise RouteError.
RoutePlan route(std::string_view query, ClassifierBackend& backend, const RouteOptions& opts = {});

struct DispatchResult {
    int status = 0;
    std::string body; // verbatim
    std::string content;
    double latency_s = 0.0;
    std::optional<double> ttft_s;
};

// Forwards the query to the plan's expert. Throws ConfigError when that expert
// has no endpoint; TimeoutError, ConnectionError or HttpStatusError otherwise.
DispatchResult dispatch(const RoutePlan& plan, const std::string& query, const std::map<Expert, Endpoint>& endpoints,
                        bool stream = false, std::chrono::milliseconds timeout = std::chrono::milliseconds(60000));

// ---------------------------------------------------------------------------
// HTTP front end: accepts chat-completion requests, routes the last user
// message and returns the expert's body verbatim with X-Specforge-Expert and
// X-Specforge-Fallback headers. GET /metrics returns the counters as JSON.

struct RouterMetrics {
    std::atomic<std::uint64_t> requests{0};
    std::atomic<std::uint64_t> qa{0};
    std::atomic<std::uint64_t> structured{0};
    std::atomic<std::uint64_t> fallbacks{0};
    std::atomic<std::uint64_t> errors{0};

    nlohmann::json to_json() const;
};

class RouterService {
public:
    RouterService(std::shared_ptr<ClassifierBackend> backend, std::map<Expert, Endpoint> endpoints,
                  RouteOptions opts = {}, std::chrono::milliseconds expert_timeout = std::chrono::milliseconds(60000));
    ~RouterService();
    RouterService(const RouterService&) = delete;
    RouterService& operator=(const RouterService&) = delete;

    // Binds host:port (port 0 = ephemeral) and serves on a background thread.
    int start(const std::string& host, int port);
    void wait();
    void stop();
    const RouterMetrics& metrics() const { return metrics_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    RouterMetrics metrics_;
};

} // namespace specforge
