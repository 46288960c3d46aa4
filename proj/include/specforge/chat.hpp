#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "specforge/error.hpp"

// Minimal chat-completion client over plain HTTP. The wire format is
// documented in docs/wire_format.md.
namespace specforge {

class TimeoutError : public Error {
public:
    using Error::Error;
};

class ConnectionError : public Error {
public:
    using Error::Error;
};

class HttpStatusError : public Error {
public:
    HttpStatusError(int status, std::string body);
    int status() const { return status_; }
    const std::string& body() const { return body_; }

private:
    int status_;
    std::string body_;
};

// The response arrived but is not a chat completion.
class ProtocolError : public Error {
public:
    using Error::Error;
};

struct Endpoint {
    std::string url; // http://host:port[/path]; the path defaults to /v1/chat/completions
    std::string model = "default";
    std::string bearer_token;
};

struct ParsedUrl {
    std::string scheme_host_port; // "http://host:port"
    std::string path;
};

ParsedUrl parse_url(const std::string& url);

nlohmann::json chat_request(const std::string& model, const std::string& user_content, bool stream);

// The last user message of a request body, or nullopt when the body is not a
// chat-completion request.
std::optional<std::string> last_user_message(const nlohmann::json& request);

std::string chat_response_body(const std::string& model, const std::string& content);
std::string sse_chunk(const std::string& model, const std::string& delta);
inline constexpr std::string_view kSseDone = "data: [DONE]\n\n";

// Assistant text from a single JSON response or a server-sent event stream.
std::string extract_content(const std::string& body, bool stream);

struct ChatResult {
    int status = 0;
    std::string body;
    std::string content;
    double latency_s = 0.0;
    std::optional<double> ttft_s; // streaming only: first body byte
};

// One connection per client; not safe for concurrent use. Keep one per thread.
class ChatClient {
public:
    ChatClient(Endpoint endpoint, std::chrono::milliseconds timeout);
    ~ChatClient();
    ChatClient(const ChatClient&) = delete;
    ChatClient& operator=(const ChatClient&) = delete;

    // Throws TimeoutError, ConnectionError, HttpStatusError or ProtocolError.
    ChatResult complete(const std::string& user_content, bool stream);

    bool healthy();

private:
    struct Impl;
    Endpoint endpoint_;
    std::chrono::milliseconds timeout_;
    ParsedUrl url_;
    std::unique_ptr<Impl> impl_;
};

} // namespace specforge
