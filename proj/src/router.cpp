#include "specforge/router.hpp"
#include "http_socket.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

namespace specforge {

using Clock = std::chrono::steady_clock;

std::string_view category_name(TaskCategory c) {
    switch (c) {
    case TaskCategory::QA: return "QA";
    case TaskCategory::Classification: return "Classification";
    case TaskCategory::Summarization: return "Summarization";
    }
    return "QA";
}

std::string_view expert_name(Expert e) { return e == Expert::QAExpert ? "QAExpert" : "StructExpert"; }

Expert parse_expert(std::string_view name) {
    if (name == "QAExpert" || name == "qa") return Expert::QAExpert;
    if (name == "StructExpert" || name == "struct") return Expert::StructExpert;
    throw ConfigError(fmt::format("unknown expert '{}'", name), "use 'qa' or 'struct'");
}

Expert expert_for(TaskCategory c) { return c == TaskCategory::QA ? Expert::QAExpert : Expert::StructExpert; }

// ---------------------------------------------------------------------------
// Prompt

const std::vector<Exemplar>& default_exemplars() {
    static const std::vector<Exemplar> v = {
        {"What documents do I need to apply for a 30-year fixed mortgage?", TaskCategory::QA},
        {"Classify this borrower complaint by type: \"My escrow payment went up without any notice.\"",
         TaskCategory::Classification},
        {"Summarize the key terms of this closing disclosure: loan amount $320,000, rate 6.1%, "
         "cash to close $18,450, first payment due June 1.",
         TaskCategory::Summarization},
        {"How does private mortgage insurance affect my monthly payment?", TaskCategory::QA},
        {"Which document type is this: appraisal, title report or pay stub? \"Gross pay this period: $4,210.\"",
         TaskCategory::Classification},
        {"Give me a brief summary of this underwriting memo: the borrower's DTI is 38%, reserves cover "
         "four months, and the appraisal came in at value.",
         TaskCategory::Summarization},
    };
    return v;
}

namespace {

TaskCategory category_from_int(long long v, const std::string& where) {
    if (v < 1 || v > 3) throw FormatError(fmt::format("{}: category must be 1, 2 or 3", where));
    return static_cast<TaskCategory>(v);
}

std::string one_line(std::string_view s) {
    std::string out(s);
    std::replace(out.begin(), out.end(), '\n', ' ');
    std::replace(out.begin(), out.end(), '\r', ' ');
    return out;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

constexpr std::string_view kInstructionHeader = "\n\n### Instruction\n";

} // namespace

std::vector<Exemplar> load_exemplars(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot read exemplar file '{}'", path.string()));
    std::vector<Exemplar> out;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = fmt::format("{}:{}", path.string(), n);
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (!j.is_object() || !j.contains("text") || !j["text"].is_string() || !j.contains("category") ||
            !j["category"].is_number_integer()) {
            throw FormatError(fmt::format("{}: expected {{\"text\": string, \"category\": 1|2|3}}", where));
        }
        out.push_back({j["text"].get<std::string>(), category_from_int(j["category"].get<long long>(), where)});
    }
    return out;
}

std::string build_classification_prompt(std::string_view query, const std::vector<Exemplar>& exemplars,
                                        int template_version) {
    if (template_version != 1) {
        throw ConfigError(fmt::format("unknown prompt template version {}", template_version), "supported: 1");
    }
    if (std::all_of(query.begin(), query.end(), [](unsigned char c) { return std::isspace(c); })) {
        throw Error("empty query");
    }
    for (auto c : {TaskCategory::QA, TaskCategory::Classification, TaskCategory::Summarization}) {
        const bool covered =
            std::any_of(exemplars.begin(), exemplars.end(), [&](const Exemplar& e) { return e.category == c; });
        if (!covered) {
            throw ConfigError(fmt::format("exemplars do not cover category {} ({})", static_cast<int>(c),
                                          category_name(c)));
        }
    }
    std::string p =
        "You are the task router for a mortgage-lending assistant. Read the user query and decide which task "
        "category it belongs to.\n"
        "\n"
        "### Categories\n"
        "1. Q&A: questions, explanations or advice about lending, mortgages, policies and procedures.\n"
        "2. Classification: assigning a given text or item to a label, category or type.\n"
        "3. Summarization: condensing a given text into a shorter summary or its key points.\n"
        "\n"
        "### Examples\n";
    for (const auto& e : exemplars) {
        p += fmt::format("Query: {}\nCategory: {}\n\n", one_line(e.text), static_cast<int>(e.category));
    }
    p += kQueryHeader;
    p += query;
    p += kInstructionHeader;
    p += kNumberOnlyInstruction;
    return p;
}

std::string query_from_prompt(std::string_view prompt) {
    // The query may itself contain the header, so take the first header after
    // the examples and cut the fixed instruction suffix from the end.
    const auto examples = prompt.find("### Examples\n");
    const auto head = prompt.find(kQueryHeader, examples == std::string_view::npos ? 0 : examples);
    if (head == std::string_view::npos) return std::string(prompt);
    const auto start = head + kQueryHeader.size();
    const std::string suffix = std::string(kInstructionHeader) + std::string(kNumberOnlyInstruction);
    auto end = prompt.size();
    if (prompt.ends_with(suffix) && prompt.size() - suffix.size() >= start) end -= suffix.size();
    return std::string(prompt.substr(start, end - start));
}

std::variant<TaskCategory, ParseFailure> parse_category(std::string_view r) {
    const auto digit = [&](std::size_t i) { return i < r.size() && std::isdigit(static_cast<unsigned char>(r[i])); };
    for (std::size_t i = 0; i < r.size(); ++i) {
        if (!digit(i)) continue;
        const bool before = i > 0 && (digit(i - 1) || (r[i - 1] == '.' && i > 1 && digit(i - 2)));
        const bool after = digit(i + 1) || (i + 1 < r.size() && r[i + 1] == '.' && digit(i + 2));
        if (before || after) continue;
        if (r[i] >= '1' && r[i] <= '3') return static_cast<TaskCategory>(r[i] - '0');
    }
    static const std::regex names(R"(\b(q\s*&\s*a|qa|classification|summari[sz]ation)\b)", std::regex::icase);
    std::match_results<std::string_view::const_iterator> m;
    if (std::regex_search(r.begin(), r.end(), m, names)) {
        const std::string word = lower(m.str(1));
        if (word.rfind("class", 0) == 0) return TaskCategory::Classification;
        if (word.rfind("summ", 0) == 0) return TaskCategory::Summarization;
        return TaskCategory::QA;
    }
    return ParseFailure{std::string(r)};
}

// ---------------------------------------------------------------------------
// Backends

const std::vector<KeywordRule>& default_keyword_rules() {
    static const std::vector<KeywordRule> v = {
        {"summar", "3"},    {"tl;dr", "3"},     {"condense", "3"},    {"key points", "3"}, {"recap", "3"},
        {"classif", "2"},   {"categor", "2"},   {"label", "2"},       {"which type", "2"}, {"document type", "2"},
        {"tag this", "2"},  {"sort this", "2"},
    };
    return v;
}

KeywordStub::KeywordStub(std::vector<KeywordRule> rules, std::string fallback, std::chrono::milliseconds delay)
    : rules_(std::move(rules)), fallback_(std::move(fallback)), delay_(delay) {
    for (auto& r : rules_) r.keyword = lower(r.keyword);
}

std::string KeywordStub::respond(std::string_view query) const {
    const std::string q = lower(query);
    for (const auto& r : rules_) {
        if (q.find(r.keyword) != std::string::npos) return r.response;
    }
    return fallback_;
}

std::string KeywordStub::complete(const std::string& prompt, std::chrono::milliseconds timeout) {
    if (delay_ > timeout) {
        std::this_thread::sleep_for(timeout);
        throw TimeoutError(fmt::format("keyword stub exceeded the {} ms timeout", timeout.count()));
    }
    if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
    return respond(query_from_prompt(prompt));
}

ScriptedReplay::ScriptedReplay(std::map<std::string, std::string> responses) : responses_(std::move(responses)) {}

ScriptedReplay ScriptedReplay::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot read replay fixture '{}'", path.string()));
    std::map<std::string, std::string> responses;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (!j.is_object() || !j.contains("query") || !j["query"].is_string() || !j.contains("response") ||
            !j["response"].is_string()) {
            throw FormatError(
                fmt::format("{}:{}: expected {{\"query\": string, \"response\": string}}", path.string(), n));
        }
        responses[j["query"].get<std::string>()] = j["response"].get<std::string>();
    }
    return ScriptedReplay(std::move(responses));
}

std::string ScriptedReplay::complete(const std::string& prompt, std::chrono::milliseconds) {
    const auto q = query_from_prompt(prompt);
    const auto it = responses_.find(q);
    if (it == responses_.end()) throw ProtocolError(fmt::format("no scripted response for query '{}'", q));
    return it->second;
}

RemoteChat::RemoteChat(Endpoint endpoint) : endpoint_(std::move(endpoint)) { parse_url(endpoint_.url); }

std::string RemoteChat::complete(const std::string& prompt, std::chrono::milliseconds timeout) {
    ChatClient client(endpoint_, timeout);
    return client.complete(prompt, false).content;
}

bool RemoteChat::healthy() {
    ChatClient client(endpoint_, std::chrono::milliseconds(2000));
    return client.healthy();
}

// ---------------------------------------------------------------------------
// Routing

nlohmann::json RoutePlan::to_json() const {
    return {
        {"category", static_cast<int>(category)},
        {"category_name", category_name(category)},
        {"expert", expert_name(expert)},
        {"raw_classifier_output", raw_classifier_output},
        {"fallback_used", fallback_used},
        {"fallback_reason", fallback_reason},
        {"attempts", attempts},
        {"classification_latency_s", classification_latency_s},
    };
}

RoutePlan route(std::string_view query, ClassifierBackend& backend, const RouteOptions& opts) {
    if (opts.retries < 0) throw ConfigError("retries must be non-negative");
    const std::string prompt = build_classification_prompt(query, opts.exemplars, opts.template_version);
    RoutePlan plan;
    const auto start = Clock::now();
    std::optional<std::string> raw;
    bool timed_out = false;
    std::string last_error;
    for (int attempt = 0; attempt <= opts.retries && !raw; ++attempt) {
        ++plan.attempts;
        try {
            raw = backend.complete(prompt, opts.timeout);
        } catch (const TimeoutError& e) {
            timed_out = true;
            last_error = e.what();
        } catch (const Error& e) {
            timed_out = false;
            last_error = e.what();
        }
    }
    plan.classification_latency_s = std::chrono::duration<double>(Clock::now() - start).count();
    if (!raw) {
        if (!timed_out) {
            throw RouteError(fmt::format("classifier failed after {} attempts: {}", plan.attempts, last_error),
                             "check the classifier endpoint or switch to the stub backend");
        }
        plan.fallback_used = true;
        plan.fallback_reason = "timeout";
        return plan;
    }
    plan.raw_classifier_output = *raw;
    const auto parsed = parse_category(*raw);
    if (const auto* c = std::get_if<TaskCategory>(&parsed)) {
        plan.category = *c;
        plan.expert = expert_for(*c);
    } else {
        plan.fallback_used = true;
        plan.fallback_reason = "parse failure";
    }
    return plan;
}

DispatchResult dispatch(const RoutePlan& plan, const std::string& query, const std::map<Expert, Endpoint>& endpoints,
                        bool stream, std::chrono::milliseconds timeout) {
    const auto it = endpoints.find(plan.expert);
    if (it == endpoints.end()) {
        throw ConfigError(fmt::format("no endpoint configured for {}", expert_name(plan.expert)),
                          "set router.qa_endpoint and router.struct_endpoint in the config");
    }
    ChatClient client(it->second, timeout);
    auto r = client.complete(query, stream);
    return {r.status, std::move(r.body), std::move(r.content), r.latency_s, r.ttft_s};
}

// ---------------------------------------------------------------------------
// Service

nlohmann::json RouterMetrics::to_json() const {
    return {{"requests", requests.load()},
            {"qa", qa.load()},
            {"structured", structured.load()},
            {"fallbacks", fallbacks.load()},
            {"errors", errors.load()}};
}

struct RouterService::Impl {
    std::shared_ptr<ClassifierBackend> backend;
    std::map<Expert, Endpoint> endpoints;
    RouteOptions opts;
    std::chrono::milliseconds expert_timeout;
    httplib::Server server;
    std::thread thread;
};

RouterService::RouterService(std::shared_ptr<ClassifierBackend> backend, std::map<Expert, Endpoint> endpoints,
                             RouteOptions opts, std::chrono::milliseconds expert_timeout)
    : impl_(std::make_unique<Impl>()) {
    if (!backend) throw ConfigError("router needs a classifier backend");
    for (auto e : {Expert::QAExpert, Expert::StructExpert}) {
        if (!endpoints.contains(e)) throw ConfigError(fmt::format("no endpoint configured for {}", expert_name(e)));
    }
    impl_->backend = std::move(backend);
    impl_->endpoints = std::move(endpoints);
    impl_->opts = std::move(opts);
    impl_->expert_timeout = expert_timeout;

    auto& svr = impl_->server;
    svr.new_task_queue = [] { return new httplib::ThreadPool(64); };
    detail::configure_server(svr);
    svr.Get("/health", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("{\"status\":\"ok\"}", "application/json");
    });
    svr.Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
        res.set_content(metrics_.to_json().dump(), "application/json");
    });
    svr.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
        ++metrics_.requests;
        const auto body = nlohmann::json::parse(req.body, nullptr, false);
        const auto query = last_user_message(body);
        if (!query) {
            ++metrics_.errors;
            res.status = 400;
            res.set_content(R"({"error":"expected a chat-completion request with a user message"})",
                            "application/json");
            return;
        }
        const bool stream = body.value("stream", false);
        try {
            const auto plan = route(*query, *impl_->backend, impl_->opts);
            if (plan.fallback_used) ++metrics_.fallbacks;
            ++(plan.expert == Expert::QAExpert ? metrics_.qa : metrics_.structured);
            const auto out = dispatch(plan, *query, impl_->endpoints, stream, impl_->expert_timeout);
            res.set_header("X-Specforge-Expert", std::string(expert_name(plan.expert)));
            res.set_header("X-Specforge-Category", std::to_string(static_cast<int>(plan.category)));
            res.set_header("X-Specforge-Fallback", plan.fallback_used ? "true" : "false");
            res.set_content(out.body, stream ? "text/event-stream" : "application/json");
        } catch (const Error& e) {
            ++metrics_.errors;
            res.status = std::string_view(e.what()) == "empty query" ? 400 : 502;
            res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
        }
    });
}

RouterService::~RouterService() { stop(); }

int RouterService::start(const std::string& host, int port) {
    auto& svr = impl_->server;
    int bound = port;
    if (port == 0) {
        bound = svr.bind_to_any_port(host);
        if (bound <= 0) throw Error(fmt::format("cannot bind a port on {}", host));
    } else if (!svr.bind_to_port(host, port)) {
        throw Error(fmt::format("cannot listen on {}:{} (port in use?)", host, port));
    }
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    svr.wait_until_ready();
    return bound;
}

void RouterService::wait() {
    if (impl_->thread.joinable()) impl_->thread.join();
}

void RouterService::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

} // namespace specforge
