#include "specforge/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "specforge/chat.hpp"
#include "specforge/error.hpp"
#include "specforge/rng.hpp"
#include "http_socket.hpp"

namespace specforge {

using Clock = std::chrono::steady_clock;

namespace {

void sleep_ms(double ms) {
    if (ms > 0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
}

double draw_service_ms(const ServiceTime& s, Rng& rng) {
    switch (s.kind) {
    case ServiceTime::Kind::Fixed:
        return s.mean_ms;
    case ServiceTime::Kind::Uniform:
        return std::max(0.0, s.mean_ms - s.spread_ms + 2.0 * s.spread_ms * rng.uniform());
    case ServiceTime::Kind::Exponential: {
        double u = rng.uniform();
        while (u <= 0.0) u = rng.uniform();
        return -s.mean_ms * std::log(u);
    }
    }
    return s.mean_ms;
}

// Splits text into at most n pieces at character boundaries that keep UTF-8
// sequences whole.
std::vector<std::string> split_pieces(const std::string& text, std::size_t n) {
    std::vector<std::string> out;
    if (text.empty() || n <= 1) {
        out.push_back(text);
        return out;
    }
    const std::size_t step = std::max<std::size_t>(1, (text.size() + n - 1) / n);
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = std::min(text.size(), pos + step);
        while (end < text.size() && (static_cast<unsigned char>(text[end]) & 0xC0) == 0x80) ++end;
        out.push_back(text.substr(pos, end - pos));
        pos = end;
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// StubServer

struct StubServer::Impl {
    StubProfile profile;
    httplib::Server server;
    std::thread thread;
    std::atomic<std::uint64_t> arrivals{0};
};

StubServer::StubServer(StubProfile profile, std::string host, int port) : impl_(std::make_unique<Impl>()) {
    if (profile.failure_rate < 0.0 || profile.failure_rate > 1.0) throw ConfigError("failure_rate must be in [0, 1]");
    if (profile.service.mean_ms < 0.0 || profile.first_token_delay_ms < 0.0) {
        throw ConfigError("stub timings must be non-negative");
    }
    if (!profile.responder) profile.responder = [](const std::string& s) { return s; };
    impl_->profile = std::move(profile);
    auto& svr = impl_->server;
    svr.new_task_queue = [] { return new httplib::ThreadPool(128); };
    detail::configure_server(svr);

    svr.Get("/health", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("{\"status\":\"ok\"}", "application/json");
    });
    svr.Get("/v1/models", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"object":"list","data":[{"id":"stub","object":"model"}]})", "application/json");
    });
    svr.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
        const auto& p = impl_->profile;
        nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
        const auto message = last_user_message(body);
        if (!message) {
            res.status = 400;
            res.set_content(R"({"error":"expected a chat-completion request"})", "application/json");
            return;
        }
        const std::uint64_t n = impl_->arrivals.fetch_add(1);
        Rng rng(derive_seed(p.seed, fmt::format("request/{}", n)));
        const double service_ms = draw_service_ms(p.service, rng);
        const bool fail = rng.uniform() < p.failure_rate;
        const bool stream = body.value("stream", false);
        const std::string model = body.value("model", "stub");
        served_.fetch_add(1);
        if (fail) {
            sleep_ms(service_ms);
            res.status = 500;
            res.set_content(R"({"error":"injected failure"})", "application/json");
            return;
        }
        std::string reply = p.responder(*message);
        if (!stream) {
            sleep_ms(service_ms);
            res.set_content(chat_response_body(model, reply), "application/json");
            return;
        }
        const double ttft_ms = p.first_token_delay_ms;
        const std::size_t chunks = std::max<std::size_t>(1, p.stream_chunks);
        res.set_chunked_content_provider(
            "text/event-stream", [=](std::size_t, httplib::DataSink& sink) {
                const auto pieces = split_pieces(reply, chunks);
                const double rest_ms = std::max(0.0, service_ms - ttft_ms);
                sleep_ms(ttft_ms);
                for (std::size_t i = 0; i < pieces.size(); ++i) {
                    if (i > 0) sleep_ms(rest_ms / static_cast<double>(pieces.size()));
                    const std::string chunk = sse_chunk(model, pieces[i]);
                    if (!sink.write(chunk.data(), chunk.size())) return false;
                }
                if (pieces.size() == 1) sleep_ms(rest_ms);
                sink.write(kSseDone.data(), kSseDone.size());
                sink.done();
                return true;
            });
    });

    if (port == 0) {
        port_ = svr.bind_to_any_port(host);
        if (port_ <= 0) throw Error(fmt::format("cannot bind a port on {}", host));
    } else {
        if (!svr.bind_to_port(host, port)) {
            throw Error(fmt::format("cannot listen on {}:{} (port in use?)", host, port),
                        "choose another port or stop the process holding it");
        }
        port_ = port;
    }
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

StubServer::~StubServer() { stop(); }

std::string StubServer::url() const { return fmt::format("http://127.0.0.1:{}/v1/chat/completions", port_); }

void StubServer::wait() {
    if (impl_->thread.joinable()) impl_->thread.join();
}

void StubServer::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

// ---------------------------------------------------------------------------
// Load generator

void BenchConfig::validate() const {
    if (total_requests == 0) throw ConfigError("total_requests must be positive");
    if (workers == 0) throw ConfigError("workers must be positive");
    if (workers > total_requests) {
        throw ConfigError(fmt::format("workers ({}) exceed total_requests ({})", workers, total_requests));
    }
    if (timeout.count() <= 0) throw ConfigError("timeout must be positive");
    if (prompts.empty()) throw ConfigError("at least one prompt is required");
    parse_url(endpoint);
}

double percentile_nearest_rank(std::vector<double> values, double p) {
    if (values.empty()) throw ConfigError("percentile of an empty set");
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("percentile must be in (0, 1]");
    std::sort(values.begin(), values.end());
    // Integer rank avoids 0.95 * 100 landing on 95.00000000000001.
    const auto n = values.size();
    const auto ppm = static_cast<std::size_t>(std::llround(p * 1e6));
    std::size_t rank = (ppm * n + 999999) / 1000000;
    rank = std::clamp<std::size_t>(rank, 1, n);
    return values[rank - 1];
}

BenchReport run_benchmark(const BenchConfig& cfg) {
    cfg.validate();
    Endpoint endpoint{cfg.endpoint, cfg.model, {}};
    std::atomic<std::size_t> next{0};
    std::vector<std::vector<RequestRecord>> per_worker(cfg.workers);
    const auto t0 = Clock::now();
    const auto since = [&](Clock::time_point t) { return std::chrono::duration<double>(t - t0).count(); };

    std::vector<std::thread> threads;
    threads.reserve(cfg.workers);
    for (std::size_t w = 0; w < cfg.workers; ++w) {
        threads.emplace_back([&, w] {
            ChatClient client(endpoint, cfg.timeout);
            for (;;) {
                const std::size_t idx = next.fetch_add(1);
                if (idx >= cfg.total_requests) break;
                RequestRecord rec;
                rec.index = idx;
                const auto start = Clock::now();
                rec.start_s = since(start);
                try {
                    const auto r = client.complete(cfg.prompts[idx % cfg.prompts.size()], cfg.stream);
                    rec.status = r.status;
                    rec.ok = true;
                    if (r.ttft_s) rec.first_byte_s = rec.start_s + *r.ttft_s;
                } catch (const HttpStatusError& e) {
                    rec.status = e.status();
                    rec.error = e.what();
                } catch (const Error& e) {
                    rec.error = e.what();
                }
                rec.end_s = since(Clock::now());
                per_worker[w].push_back(std::move(rec));
            }
        });
    }
    for (auto& t : threads) t.join();

    BenchReport report;
    report.workers = cfg.workers;
    report.total_requests = cfg.total_requests;
    for (auto& v : per_worker) {
        for (auto& r : v) report.records.push_back(std::move(r));
    }
    std::sort(report.records.begin(), report.records.end(),
              [](const RequestRecord& a, const RequestRecord& b) { return a.index < b.index; });

    double first_start = report.records.front().start_s;
    double last_end = report.records.front().end_s;
    std::vector<double> latencies;
    double ttft_sum = 0.0;
    std::size_t ttft_n = 0;
    for (const auto& r : report.records) {
        first_start = std::min(first_start, r.start_s);
        last_end = std::max(last_end, r.end_s);
        if (!r.ok) continue;
        latencies.push_back(r.end_s - r.start_s);
        if (r.first_byte_s) {
            ttft_sum += *r.first_byte_s - r.start_s;
            ++ttft_n;
        }
    }
    report.successes = latencies.size();
    report.failures = report.total_requests - report.successes;
    report.success_rate = static_cast<double>(report.successes) / static_cast<double>(report.total_requests);
    report.wall_s = last_end - first_start;
    report.throughput_rps = report.wall_s > 0 ? static_cast<double>(report.successes) / report.wall_s : 0.0;
    if (!latencies.empty()) {
        double sum = 0.0;
        for (double l : latencies) sum += l;
        report.avg_latency_s = sum / static_cast<double>(latencies.size());
        report.p95_latency_s = percentile_nearest_rank(latencies, 0.95);
    }
    if (ttft_n > 0) report.avg_ttft_s = ttft_sum / static_cast<double>(ttft_n);
    return report;
}

nlohmann::json BenchReport::to_json(bool with_records) const {
    nlohmann::json j = {
        {"workers", workers},
        {"total_requests", total_requests},
        {"successes", successes},
        {"failures", failures},
        {"wall_s", wall_s},
        {"throughput_rps", throughput_rps},
        {"success_rate", success_rate},
        {"avg_latency_s", avg_latency_s},
        {"p95_latency_s", p95_latency_s},
        {"avg_ttft_s", avg_ttft_s ? nlohmann::json(*avg_ttft_s) : nlohmann::json(nullptr)},
    };
    if (with_records) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& r : records) {
            rows.push_back({
                {"index", r.index},
                {"start_s", r.start_s},
                {"first_byte_s", r.first_byte_s ? nlohmann::json(*r.first_byte_s) : nlohmann::json(nullptr)},
                {"end_s", r.end_s},
                {"status", r.status},
                {"ok", r.ok},
                {"error", r.error},
            });
        }
        j["records"] = rows;
    }
    return j;
}

namespace {

void sort_by_workers(std::vector<BenchReport>& reports) {
    std::stable_sort(reports.begin(), reports.end(),
                     [](const BenchReport& a, const BenchReport& b) { return a.workers < b.workers; });
}

} // namespace

std::string report_table(std::vector<BenchReport> reports) {
    sort_by_workers(reports);
    std::string out = fmt::format("{:>7}  {:>18}  {:>12}  {:>16}  {:>16}  {:>13}\n", "Workers", "Throughput (req/s)",
                                  "Success Rate", "Avg. Latency (s)", "P95 Latency (s)", "Avg. TTFT (s)");
    for (const auto& r : reports) {
        // Latency is measured over successes only, so a row without any has none to show.
        const bool any = r.success_rate > 0.0;
        out += fmt::format("{:>7}  {:>18.2f}  {:>12.2f}  {:>16}  {:>16}  {:>13}\n", r.workers, r.throughput_rps,
                           r.success_rate, any ? fmt::format("{:.3f}", r.avg_latency_s) : "-",
                           any ? fmt::format("{:.3f}", r.p95_latency_s) : "-",
                           r.avg_ttft_s ? fmt::format("{:.3f}", *r.avg_ttft_s) : "-");
    }
    return out;
}

nlohmann::json reports_to_json(std::vector<BenchReport> reports) {
    sort_by_workers(reports);
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : reports) rows.push_back(r.to_json());
    return {{"reports", rows}};
}

std::vector<std::string> load_prompts(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot read prompt file '{}'", path.string()));
    const bool jsonl = path.extension() == ".jsonl";
    std::vector<std::string> out;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (!jsonl) {
            out.push_back(line);
            continue;
        }
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (!j.is_object() || !j.contains("prompt") || !j["prompt"].is_string()) {
            throw FormatError(fmt::format("{}:{}: expected {{\"prompt\": string}}", path.string(), n));
        }
        out.push_back(j["prompt"].get<std::string>());
    }
    if (out.empty()) throw FormatError(fmt::format("prompt file '{}' is empty", path.string()));
    return out;
}

} // namespace specforge
