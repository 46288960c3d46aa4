#include "specforge/chat.hpp"

#include <sstream>

#include <fmt/format.h>
#include <httplib.h>

namespace specforge {

using Clock = std::chrono::steady_clock;

HttpStatusError::HttpStatusError(int status, std::string body)
    : Error(fmt::format("endpoint answered HTTP {}", status)), status_(status), body_(std::move(body)) {}

ParsedUrl parse_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError(fmt::format("endpoint '{}' needs an http:// scheme", url));
    const std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http") {
        throw ConfigError(fmt::format("endpoint '{}': only http is supported", url),
                          "put a TLS-terminating proxy in front of the endpoint");
    }
    const auto path_start = url.find('/', scheme_end + 3);
    ParsedUrl out;
    out.scheme_host_port = url.substr(0, path_start);
    out.path = path_start == std::string::npos ? "" : url.substr(path_start);
    if (out.scheme_host_port.size() <= scheme_end + 3) throw ConfigError(fmt::format("endpoint '{}' has no host", url));
    if (out.path.empty() || out.path == "/") out.path = "/v1/chat/completions";
    return out;
}

nlohmann::json chat_request(const std::string& model, const std::string& user_content, bool stream) {
    return {
        {"model", model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", user_content}}})},
        {"stream", stream},
    };
}

std::optional<std::string> last_user_message(const nlohmann::json& request) {
    if (!request.is_object() || !request.contains("messages") || !request["messages"].is_array()) return std::nullopt;
    const auto& messages = request["messages"];
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        if (it->is_object() && it->value("role", "") == "user" && it->contains("content") &&
            (*it)["content"].is_string()) {
            return (*it)["content"].get<std::string>();
        }
    }
    return std::nullopt;
}

std::string chat_response_body(const std::string& model, const std::string& content) {
    const nlohmann::json j = {
        {"object", "chat.completion"},
        {"model", model},
        {"choices", nlohmann::json::array({{{"index", 0},
                                            {"message", {{"role", "assistant"}, {"content", content}}},
                                            {"finish_reason", "stop"}}})},
    };
    return j.dump();
}

std::string sse_chunk(const std::string& model, const std::string& delta) {
    const nlohmann::json j = {
        {"object", "chat.completion.chunk"},
        {"model", model},
        {"choices", nlohmann::json::array({{{"index", 0}, {"delta", {{"content", delta}}}}})},
    };
    return "data: " + j.dump() + "\n\n";
}

std::string extract_content(const std::string& body, bool stream) {
    const auto content_of = [](const nlohmann::json& j, const char* field) -> std::string {
        if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) return {};
        const auto& choice = j["choices"][0];
        if (!choice.contains(field) || !choice[field].is_object()) return {};
        const auto& part = choice[field];
        return part.contains("content") && part["content"].is_string() ? part["content"].get<std::string>() : "";
    };
    try {
        if (!stream) {
            const auto j = nlohmann::json::parse(body);
            if (!j.contains("choices")) throw ProtocolError("response has no choices");
            return content_of(j, "message");
        }
        std::string out;
        std::istringstream lines(body);
        std::string line;
        while (std::getline(lines, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.rfind("data:", 0) != 0) continue;
            std::string data = line.substr(5);
            if (!data.empty() && data.front() == ' ') data.erase(0, 1);
            if (data == "[DONE]") break;
            out += content_of(nlohmann::json::parse(data), "delta");
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(fmt::format("malformed chat-completion response: {}", e.what()));
    }
}

struct ChatClient::Impl {
    explicit Impl(const std::string& base) : client(base) {}
    httplib::Client client;
};

ChatClient::ChatClient(Endpoint endpoint, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout), url_(parse_url(endpoint_.url)),
      impl_(std::make_unique<Impl>(url_.scheme_host_port)) {
    if (timeout_.count() <= 0) throw ConfigError("timeout must be positive");
    const auto secs = timeout_.count() / 1000;
    const auto usecs = (timeout_.count() % 1000) * 1000;
    impl_->client.set_connection_timeout(secs, usecs);
    impl_->client.set_read_timeout(secs, usecs);
    impl_->client.set_write_timeout(secs, usecs);
    impl_->client.set_keep_alive(true);
    impl_->client.set_tcp_nodelay(true);
    if (!endpoint_.bearer_token.empty()) impl_->client.set_bearer_token_auth(endpoint_.bearer_token);
}

ChatClient::~ChatClient() = default;

ChatResult ChatClient::complete(const std::string& user_content, bool stream) {
    ChatResult result;
    httplib::Request req;
    req.method = "POST";
    req.path = url_.path;
    req.set_header("Content-Type", "application/json");
    if (stream) req.set_header("Accept", "text/event-stream");
    req.body = chat_request(endpoint_.model, user_content, stream).dump();

    const auto start = Clock::now();
    const auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };
    const double budget = std::chrono::duration<double>(timeout_).count();
    bool over_budget = false;
    req.response_handler = [](const httplib::Response&) { return true; };
    req.content_receiver = [&](const char* data, std::size_t len, std::uint64_t, std::uint64_t) {
        if (!result.ttft_s && len > 0) result.ttft_s = elapsed();
        result.body.append(data, len);
        if (elapsed() > budget) {
            over_budget = true;
            return false;
        }
        return true;
    };

    httplib::Response res;
    httplib::Error err = httplib::Error::Success;
    const bool ok = impl_->client.send(req, res, err);
    result.latency_s = elapsed();
    if (!ok) {
        const bool timed_out = over_budget || err == httplib::Error::ConnectionTimeout ||
                               (err == httplib::Error::Read && result.latency_s >= 0.9 * budget);
        const std::string what = fmt::format("{} {}: {}", endpoint_.url, timed_out ? "timed out" : "failed",
                                             httplib::to_string(err));
        if (timed_out) throw TimeoutError(what);
        throw ConnectionError(what, "check that the endpoint is running and reachable");
    }
    result.status = res.status;
    if (res.status < 200 || res.status >= 300) throw HttpStatusError(res.status, result.body);
    if (!stream) result.ttft_s.reset();
    result.content = extract_content(result.body, stream);
    return result;
}

bool ChatClient::healthy() {
    for (const char* path : {"/health", "/v1/models"}) {
        auto res = impl_->client.Get(path);
        if (res && res->status == 200) return true;
    }
    return false;
}

} // namespace specforge
