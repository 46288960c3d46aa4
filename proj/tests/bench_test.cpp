#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <gtest/gtest.h>

#include "specforge/bench.hpp"
#include "specforge/error.hpp"
#include "specforge/rng.hpp"

namespace fs = std::filesystem;
using namespace specforge;

namespace {

StubProfile fixed_profile(double mean_ms) {
    StubProfile p;
    p.service.kind = ServiceTime::Kind::Fixed;
    p.service.mean_ms = mean_ms;
    return p;
}

BenchReport bench(const StubServer& server, std::size_t workers, std::size_t total, bool stream = false) {
    BenchConfig cfg;
    cfg.endpoint = server.url();
    cfg.workers = workers;
    cfg.total_requests = total;
    cfg.stream = stream;
    cfg.prompts = {"What is escrow?", "Summarize this note"};
    return run_benchmark(cfg);
}

} // namespace

TEST(Percentile, NearestRankExample) {
    std::vector<double> v;
    for (int i = 1; i <= 100; ++i) v.push_back(i);
    std::shuffle(v.begin(), v.end(), std::mt19937(3));
    EXPECT_EQ(percentile_nearest_rank(v, 0.95), 95.0);
    EXPECT_EQ(percentile_nearest_rank(v, 1.0), 100.0);
    EXPECT_EQ(percentile_nearest_rank(v, 0.01), 1.0);
    EXPECT_EQ(percentile_nearest_rank({7.0}, 0.95), 7.0);
    EXPECT_THROW(percentile_nearest_rank({}, 0.95), Error);
    EXPECT_THROW(percentile_nearest_rank({1.0}, 0.0), Error);
}

TEST(Percentile, MatchesIntegerRankOracle) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.below(300);
        std::vector<double> v(n);
        for (auto& x : v) x = static_cast<double>(rng.below(1000)) / 7.0;
        auto sorted = v;
        std::sort(sorted.begin(), sorted.end());
        const std::size_t rank = (95 * n + 99) / 100; // ceil(0.95 n) in integers
        EXPECT_EQ(percentile_nearest_rank(v, 0.95), sorted[rank - 1]) << "n=" << n;
    }
}

TEST(BenchConfig, Validation) {
    BenchConfig cfg;
    cfg.endpoint = "http://127.0.0.1:1";
    EXPECT_NO_THROW(cfg.validate());
    auto bad = cfg;
    bad.workers = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = cfg;
    bad.total_requests = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = cfg;
    bad.prompts.clear();
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = cfg;
    bad.endpoint = "";
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Bench, SingleWorkerThroughputMatchesServiceTime) {
    StubServer server(fixed_profile(100));
    const auto r = bench(server, 1, 10);
    EXPECT_NEAR(r.throughput_rps, 10.0, 10.0 * 0.15);
    EXPECT_EQ(r.success_rate, 1.0);
    EXPECT_GE(r.avg_latency_s, 0.100);
    EXPECT_GE(r.p95_latency_s, r.avg_latency_s * 0.99);
    EXPECT_FALSE(r.avg_ttft_s);
    EXPECT_EQ(server.requests_served(), 10u);
}

TEST(Bench, ParallelWorkersScaleNearLinearly) {
    StubServer server(fixed_profile(100));
    const auto one = bench(server, 1, 10);
    const auto eight = bench(server, 8, 80);
    EXPECT_NEAR(eight.throughput_rps, 8 * one.throughput_rps, 8 * one.throughput_rps * 0.20);
}

TEST(Bench, ThroughputIsMonotoneInWorkers) {
    StubServer server(fixed_profile(50));
    double previous = 0.0;
    for (std::size_t k : {1, 2, 4, 8}) {
        const auto r = bench(server, k, 16);
        EXPECT_GE(r.throughput_rps, previous) << "workers=" << k;
        previous = r.throughput_rps;
    }
}

TEST(Bench, FailuresAreCountedNotTimed) {
    auto profile = fixed_profile(5);
    profile.failure_rate = 0.2;
    profile.seed = 11;
    StubServer server(profile);
    const auto r = bench(server, 4, 100);
    EXPECT_GE(r.success_rate, 0.70);
    EXPECT_LE(r.success_rate, 0.90);
    EXPECT_EQ(r.successes + r.failures, r.total_requests);
    ASSERT_EQ(r.records.size(), 100u);
    for (std::size_t i = 0; i < r.records.size(); ++i) {
        const auto& rec = r.records[i];
        EXPECT_EQ(rec.index, i);
        EXPECT_LE(rec.start_s, rec.end_s);
        if (!rec.ok) {
            EXPECT_EQ(rec.status, 500);
            EXPECT_FALSE(rec.error.empty());
        }
    }
}

TEST(Bench, FailureOutcomesDependOnlyOnArrivalIndex) {
    auto profile = fixed_profile(1);
    profile.failure_rate = 0.3;
    profile.seed = 2;
    std::size_t first = 0;
    {
        StubServer server(profile);
        first = bench(server, 1, 60).successes;
    }
    StubServer server(profile);
    EXPECT_EQ(bench(server, 6, 60).successes, first);
}

TEST(Bench, StreamingTimeToFirstToken) {
    auto profile = fixed_profile(200);
    profile.first_token_delay_ms = 150;
    StubServer server(profile);
    const auto r = bench(server, 2, 6, true);
    ASSERT_TRUE(r.avg_ttft_s);
    EXPECT_GE(*r.avg_ttft_s, 0.140);
    EXPECT_LE(*r.avg_ttft_s, 0.250);
    EXPECT_GE(r.avg_latency_s, *r.avg_ttft_s);
    EXPECT_EQ(r.success_rate, 1.0);
}

TEST(Bench, UnreachableEndpointCountsAsFailure) {
    int port = 0;
    {
        StubServer gone(fixed_profile(0));
        port = gone.port();
    }
    BenchConfig cfg;
    cfg.endpoint = fmt::format("http://127.0.0.1:{}", port);
    cfg.total_requests = 3;
    const auto r = run_benchmark(cfg);
    EXPECT_EQ(r.failures, 3u);
    EXPECT_EQ(r.success_rate, 0.0);
    EXPECT_EQ(r.records[0].status, 0);

    std::istringstream table(report_table({r}));
    std::string header, row;
    std::getline(table, header);
    std::getline(table, row);
    std::istringstream cells(row);
    std::string workers, tput, rate, avg, p95, ttft;
    cells >> workers >> tput >> rate >> avg >> p95 >> ttft;
    EXPECT_EQ(rate, "0.00");
    EXPECT_EQ(avg, "-");
    EXPECT_EQ(p95, "-");
}

TEST(Report, TableAndJsonAgreeInAscendingOrder) {
    StubServer server(fixed_profile(10));
    std::vector<BenchReport> reports = {bench(server, 4, 8), bench(server, 1, 4), bench(server, 2, 4, true)};
    const auto table = report_table(reports);
    const auto json = reports_to_json(reports);

    std::istringstream in(table);
    std::string header;
    std::getline(in, header);
    EXPECT_NE(header.find("Workers"), std::string::npos);
    EXPECT_NE(header.find("P95 Latency (s)"), std::string::npos);
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of("-+ |") == std::string::npos) continue; // separator
        std::istringstream cells(line);
        std::size_t workers;
        std::string tput, rate, avg, p95, ttft;
        cells >> workers >> tput >> rate >> avg >> p95 >> ttft;
        ASSERT_LT(row, json["reports"].size());
        const auto& j = json["reports"][row];
        EXPECT_EQ(workers, j["workers"].get<std::size_t>());
        EXPECT_EQ(tput, fmt::format("{:.2f}", j["throughput_rps"].get<double>()));
        EXPECT_EQ(rate, fmt::format("{:.2f}", j["success_rate"].get<double>()));
        ASSERT_GT(j["success_rate"].get<double>(), 0.0);
        EXPECT_EQ(avg, fmt::format("{:.3f}", j["avg_latency_s"].get<double>()));
        EXPECT_EQ(p95, fmt::format("{:.3f}", j["p95_latency_s"].get<double>()));
        if (j["avg_ttft_s"].is_null())
            EXPECT_EQ(ttft, "-");
        else
            EXPECT_EQ(ttft, fmt::format("{:.3f}", j["avg_ttft_s"].get<double>()));
        ++row;
    }
    EXPECT_EQ(row, 3u);
    EXPECT_EQ(json["reports"][0]["workers"], 1);
    EXPECT_EQ(json["reports"][2]["workers"], 4);
    EXPECT_FALSE(json["reports"][0].contains("records"));
    EXPECT_EQ(reports[0].to_json(true)["records"].size(), 8u);
}

TEST(StubServer, RejectsTakenPort) {
    StubServer first(fixed_profile(0));
    EXPECT_THROW(StubServer(fixed_profile(0), "127.0.0.1", first.port()), Error);
}

TEST(Prompts, LoadsJsonlAndPlainText) {
    const auto dir = fs::temp_directory_path();
    std::ofstream(dir / "sf_prompts.jsonl") << "{\"prompt\":\"a\"}\n\n{\"prompt\":\"b c\"}\n";
    std::ofstream(dir / "sf_prompts.txt") << "first line\n\nsecond line\n";
    EXPECT_EQ(load_prompts(dir / "sf_prompts.jsonl"), (std::vector<std::string>{"a", "b c"}));
    EXPECT_EQ(load_prompts(dir / "sf_prompts.txt"), (std::vector<std::string>{"first line", "second line"}));
    EXPECT_THROW(load_prompts(dir / "sf_missing.txt"), Error);
}
