#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace specforge {

// ---------------------------------------------------------------------------
// Stub chat-completion server with configurable timing

struct ServiceTime {
    enum class Kind { Fixed, Uniform, Exponential };
    Kind kind = Kind::Fixed;
    double mean_ms = 100.0;
    double spread_ms = 0.0; // Uniform: half-width around the mean
};

struct StubProfile {
    ServiceTime service;
    double first_token_delay_ms = 0.0; // streaming: delay before the first chunk
    double failure_rate = 0.0;         // probability of answering HTTP 500
    std::uint64_t seed = 0;
    std::size_t stream_chunks = 4;
    // Maps the last user message to the reply. Defaults to echo.
    std::function<std::string(const std::string&)> responder;
};

// Serves POST /v1/chat/completions, GET /health and GET /v1/models on a
// background thread. Each request draws its timing and failure outcome from
// Rng(derive_seed(seed, "request/<n>")) where n is the arrival index.
class StubServer {
public:
    // port 0 picks a free ephemeral port. Throws Error when the port is taken.
    explicit StubServer(StubProfile profile, std::string host = "127.0.0.1", int port = 0);
    ~StubServer();
    StubServer(const StubServer&) = delete;
    StubServer& operator=(const StubServer&) = delete;

    int port() const { return port_; }
    std::string url() const;
    std::uint64_t requests_served() const { return served_.load(); }

    // Blocks the caller until stop() is called from elsewhere (signal handler).
    void wait();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int port_ = 0;
    std::atomic<std::uint64_t> served_{0};
};

// ---------------------------------------------------------------------------
// Closed-loop load generator

struct BenchConfig {
    std::size_t total_requests = 100;
    std::size_t workers = 1;
    std::string endpoint;
    std::string model = "default";
    std::vector<std::string> prompts{"Hello"}; // cycled by request index
    bool stream = false;
    std::chrono::milliseconds timeout{30000};

    void validate() const;
};

struct RequestRecord {
    std::size_t index = 0;
    double start_s = 0.0; // relative to the benchmark start
    std::optional<double> first_byte_s;
    double end_s = 0.0;
    int status = 0; // HTTP status, 0 when no response arrived
    bool ok = false;
    std::string error;
};

struct BenchReport {
    std::size_t workers = 0;
    std::size_t total_requests = 0;
    std::size_t successes = 0;
    std::size_t failures = 0;
    double wall_s = 0.0; // last end minus first start
    double throughput_rps = 0.0;
    double success_rate = 0.0;
    // Latency statistics cover successful requests only.
    double avg_latency_s = 0.0;
    double p95_latency_s = 0.0;
    std::optional<double> avg_ttft_s;
    std::vector<RequestRecord> records;

    nlohmann::json to_json(bool with_records = false) const;
};

// ceil(p * n)-th smallest value (1-based), p in (0, 1]. Throws on empty input.
double percentile_nearest_rank(std::vector<double> values, double p);

BenchReport run_benchmark(const BenchConfig& cfg);

// Text table in ascending worker order: Workers, Throughput (req/s), Success
// Rate, Avg. Latency (s), P95 Latency (s), Avg. TTFT (s).
std::string report_table(std::vector<BenchReport> reports);
nlohmann::json reports_to_json(std::vector<BenchReport> reports);

// JSONL with {"prompt": ...} per line, or plain text with one prompt per line.
std::vector<std::string> load_prompts(const std::filesystem::path& path);

} // namespace specforge
