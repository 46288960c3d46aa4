// End-to-end tests of the specforge executable: exit codes, config layering,
// output files and the long-running servers.
#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <map>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "specforge/blake3.hpp"
#include "test_util.hpp"

extern char** environ;

namespace specforge {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using test::TempDir;

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

std::vector<std::string> base_environment() {
    std::vector<std::string> env;
    for (char** e = environ; *e != nullptr; ++e) {
        if (std::string_view(*e).rfind("SPECFORGE_", 0) != 0) env.emplace_back(*e);
    }
    return env;
}

// A spawned specforge process with stdout and stderr redirected to files in `dir`.
class Process {
public:
    Process(const std::vector<std::string>& args, const fs::path& dir, const std::map<std::string, std::string>& extra_env)
        : out_(dir / fmt::format("stdout.{}", counter_)), err_(dir / fmt::format("stderr.{}", counter_)) {
        ++counter_;
        std::vector<std::string> argv_s{SPECFORGE_CLI_PATH};
        argv_s.insert(argv_s.end(), args.begin(), args.end());
        std::vector<char*> argv;
        for (auto& a : argv_s) argv.push_back(a.data());
        argv.push_back(nullptr);

        auto env_s = base_environment();
        for (const auto& [k, v] : extra_env) env_s.push_back(k + "=" + v);
        std::vector<char*> envp;
        for (auto& e : env_s) envp.push_back(e.data());
        envp.push_back(nullptr);

        posix_spawn_file_actions_t actions;
        posix_spawn_file_actions_init(&actions);
        posix_spawn_file_actions_addchdir_np(&actions, dir.c_str());
        posix_spawn_file_actions_addopen(&actions, 0, "/dev/null", O_RDONLY, 0);
        posix_spawn_file_actions_addopen(&actions, 1, out_.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        posix_spawn_file_actions_addopen(&actions, 2, err_.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        const int rc = posix_spawn(&pid_, argv[0], &actions, nullptr, argv.data(), envp.data());
        posix_spawn_file_actions_destroy(&actions);
        if (rc != 0) throw std::runtime_error(fmt::format("posix_spawn failed: {}", rc));
    }

    ~Process() {
        if (pid_ > 0) {
            ::kill(pid_, SIGKILL);
            ::waitpid(pid_, nullptr, 0);
        }
    }

    Result wait() {
        int status = 0;
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
        Result r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
        r.out = stdout_text();
        r.err = read_file(err_);
        return r;
    }

    void signal(int sig) const { ::kill(pid_, sig); }
    std::string stdout_text() const { return read_file(out_); }

    // Polls stdout for the "listening on <url>" line a server prints once bound.
    std::string wait_for_url(std::chrono::milliseconds limit = std::chrono::seconds(10)) const {
        const auto deadline = std::chrono::steady_clock::now() + limit;
        while (std::chrono::steady_clock::now() < deadline) {
            const auto text = stdout_text();
            const auto at = text.find("listening on ");
            const auto eol = at == std::string::npos ? at : text.find('\n', at);
            if (eol != std::string::npos) return text.substr(at + 13, eol - at - 13);
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        return {};
    }

private:
    static std::string read_file(const fs::path& p) {
        const auto bytes = test::read_bytes(p);
        return {bytes.begin(), bytes.end()};
    }

    static inline int counter_ = 0;
    fs::path out_;
    fs::path err_;
    pid_t pid_ = -1;
};

class Cli : public ::testing::Test {
protected:
    Result run(const std::vector<std::string>& args, const std::map<std::string, std::string>& env = {}) {
        return Process(args, dir(), env).wait();
    }

    // Runs a command expected to succeed and returns its stdout.
    std::string ok(const std::vector<std::string>& args, const std::map<std::string, std::string>& env = {}) {
        const auto r = run(args, env);
        EXPECT_EQ(r.code, 0) << r.err;
        return r.out;
    }

    const fs::path& dir() const { return tmp_.path(); }
    fs::path at(const std::string& name) const { return dir() / name; }

    void write(const std::string& name, const std::string& text) const { test::write_text(at(name), text); }

    std::string digest(const std::string& name) const {
        const auto bytes = test::read_bytes(at(name));
        return blake3_hex(std::string_view(bytes.data(), bytes.size()));
    }

    void write_token_file(const std::string& name, int rows, int len, std::uint64_t seed) const {
        Rng rng(seed);
        std::string text;
        for (int i = 0; i < rows; ++i) {
            json tokens = json::array();
            for (int t = 0; t < len; ++t) tokens.push_back(rng.below(32));
            text += json{{"tokens", tokens}}.dump() + "\n";
        }
        write(name, text);
    }

    void init_model(const std::string& name, int seed) {
        ok({"toy", "init", "--set", "model.vocab_size=32", "--set", fmt::format("model.seed={}", seed), "-o", name});
    }

private:
    TempDir tmp_;
};

json last_json_line(const std::string& out) {
    auto end = out.find_last_not_of('\n');
    auto begin = out.rfind('\n', end);
    return json::parse(out.substr(begin == std::string::npos ? 0 : begin + 1, end + 1));
}

double max_abs_diff(const json& diff) {
    double m = 0.0;
    for (const auto& t : diff["differing_tensors"]) m = std::max(m, t["max_abs_diff"].get<double>());
    return m;
}

TEST_F(Cli, HelpAndVersionExitZero) {
    const auto help = run({"--help"});
    EXPECT_EQ(help.code, 0);
    for (const char* sub : {"ckpt", "residual", "lora", "diag", "toy", "train", "pipeline", "prefs", "corpus", "route",
                            "bench"}) {
        EXPECT_NE(help.out.find(sub), std::string::npos) << sub;
    }
    const auto version = run({"--version"});
    EXPECT_EQ(version.code, 0);
    EXPECT_FALSE(version.out.empty());
}

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"bogus"}).code, 2);
    EXPECT_EQ(run({"ckpt", "inspect"}).code, 2);
    EXPECT_EQ(run({"ckpt", "inspect", "x", "--no-such-flag"}).code, 2);
    EXPECT_EQ(run({"train", "cpt", "--model", "m"}).code, 2);
}

TEST_F(Cli, DomainErrorsExitOneWithMessage) {
    const auto missing = run({"ckpt", "inspect", "missing.file"});
    EXPECT_EQ(missing.code, 1);
    EXPECT_NE(missing.err.find("file not found"), std::string::npos) << missing.err;
    EXPECT_NE(missing.err.find("hint:"), std::string::npos);

    write("garbage.safetensors", "not a checkpoint");
    EXPECT_EQ(run({"ckpt", "inspect", "garbage.safetensors"}).code, 1);

    const auto level = run({"--log-level", "loud", "ckpt", "inspect", "missing.file"});
    EXPECT_EQ(level.code, 1);
    EXPECT_NE(level.err.find("log level"), std::string::npos);
}

TEST_F(Cli, UnknownAndMalformedConfigIsRejected) {
    write("bad.toml", "[model]\nvocab = 32\n");
    const auto unknown = run({"--config", "bad.toml", "toy", "init", "-o", "m.safetensors"});
    EXPECT_EQ(unknown.code, 1);
    EXPECT_NE(unknown.err.find("unknown config key 'model.vocab'"), std::string::npos) << unknown.err;
    EXPECT_NE(unknown.err.find("model.vocab_size"), std::string::npos);

    const auto bad_set = run({"--set", "model.seed", "toy", "init", "-o", "m.safetensors"});
    EXPECT_EQ(bad_set.code, 1);
    const auto bad_type = run({"--set", "model.vocab_size=\"big\"", "toy", "init", "-o", "m.safetensors"});
    EXPECT_EQ(bad_type.code, 1);
    EXPECT_FALSE(fs::exists(at("m.safetensors")));

    write("broken.toml", "[model\n");
    EXPECT_EQ(run({"--config", "broken.toml", "toy", "init", "-o", "m.safetensors"}).code, 1);
    EXPECT_EQ(run({"--config", "absent.toml", "toy", "init", "-o", "m.safetensors"}).code, 1);
}

TEST_F(Cli, CheckpointInspectAndDiff) {
    init_model("a.safetensors", 1);
    init_model("b.safetensors", 2);
    const auto info = json::parse(ok({"ckpt", "inspect", "a.safetensors", "--json"}));
    EXPECT_EQ(info["blake3"], digest("a.safetensors"));
    EXPECT_GT(info["parameters"].get<int>(), 0);
    EXPECT_EQ(info["metadata"]["config.vocab_size"], "32");

    const auto same = json::parse(ok({"ckpt", "diff", "a.safetensors", "a.safetensors", "--json"}));
    EXPECT_TRUE(same["identical"]);
    const auto other = json::parse(ok({"ckpt", "diff", "a.safetensors", "b.safetensors", "--json"}));
    EXPECT_FALSE(other["identical"]);
    EXPECT_GT(max_abs_diff(other), 0.0);

    // A differing pair still exits 0; a missing side is an error.
    EXPECT_EQ(run({"ckpt", "diff", "a.safetensors", "b.safetensors"}).code, 0);
    EXPECT_EQ(run({"ckpt", "diff", "a.safetensors", "none.safetensors"}).code, 1);
}

TEST_F(Cli, ResidualRoundTripAndCosine) {
    init_model("base.safetensors", 1);
    init_model("inst.safetensors", 2);
    ok({"residual", "extract", "--inst", "inst.safetensors", "--base", "base.safetensors", "-o", "res.safetensors"});
    ok({"residual", "apply", "--target", "base.safetensors", "--residual", "res.safetensors", "-o", "back.safetensors"});
    const auto diff = json::parse(ok({"ckpt", "diff", "back.safetensors", "inst.safetensors", "--json"}));
    EXPECT_LT(max_abs_diff(diff), 1e-6);

    const auto manifest = json::parse(std::ifstream(at("back.safetensors.run_manifest.json")));
    EXPECT_EQ(manifest["outputs"][0]["blake3"], digest("back.safetensors"));
    EXPECT_EQ(manifest["inputs"].size(), 2u);

    ok({"residual", "apply", "--target", "base.safetensors", "--residual", "res.safetensors", "--scale", "0",
        "-o", "zero.safetensors"});
    EXPECT_LT(max_abs_diff(json::parse(ok({"ckpt", "diff", "zero.safetensors", "base.safetensors", "--json"}))), 1e-7);

    const auto cos = json::parse(ok({"diag", "cosine", "res.safetensors", "res.safetensors", "--json"}));
    EXPECT_NEAR(cos["global_cosine"].get<double>(), 1.0, 1e-9);
    const auto via_base = json::parse(
        ok({"diag", "cosine", "inst.safetensors", "inst.safetensors", "--base", "base.safetensors", "--json"}));
    EXPECT_NEAR(via_base["global_cosine"].get<double>(), 1.0, 1e-9);

    init_model("small.safetensors", 1);
    ok({"toy", "init", "--set", "model.vocab_size=16", "-o", "tiny.safetensors"});
    EXPECT_EQ(run({"residual", "extract", "--inst", "tiny.safetensors", "--base", "base.safetensors", "-o", "x"}).code,
              1);
}

TEST_F(Cli, TrainCommandsAndLoraMerge) {
    init_model("base.safetensors", 1);
    write_token_file("tok.jsonl", 8, 12, 5);
    const auto loss = json::parse(ok({"toy", "loss", "--model", "base.safetensors", "--tokens", "tok.jsonl", "--json"}));
    EXPECT_GT(loss["mean_loss"].get<double>(), 0.0);

    const auto cpt = last_json_line(ok({"train", "cpt", "--model", "base.safetensors", "--data", "tok.jsonl", "-o", "cpt",
                                        "--max-steps", "4"}));
    EXPECT_EQ(cpt["steps"], 4);
    for (const char* f : {"model.safetensors", "adapters.safetensors", "trace.json", "run_manifest.json"}) {
        EXPECT_TRUE(fs::exists(at("cpt") / f)) << f;
    }
    ok({"lora", "merge", "--base", "base.safetensors", "--adapters", "cpt/adapters.safetensors", "-o",
        "merged.safetensors"});
    // Adapters are stored as F32, so the re-merge agrees to float rounding.
    EXPECT_LT(max_abs_diff(json::parse(ok({"ckpt", "diff", "merged.safetensors", "cpt/model.safetensors", "--json"}))),
              1e-6);

    write("sft.jsonl", "{\"prompt\":[1,2,3],\"completion\":[4,5],\"task\":\"qa\"}\n"
                       "{\"prompt\":[6,7],\"completion\":[8,9,10],\"task\":\"summarization\"}\n");
    const auto sft = last_json_line(
        ok({"train", "sft", "--model", "base.safetensors", "--data", "sft.jsonl", "-o", "sft", "--max-steps", "3"}));
    EXPECT_EQ(sft["steps"], 3);

    write("prefs.jsonl", "{\"prompt\":[1,2],\"chosen\":[3,4],\"rejected\":[5,6]}\n"
                         "{\"prompt\":[7],\"chosen\":[8,9],\"rejected\":[10]}\n");
    const auto dpo = last_json_line(
        ok({"train", "dpo", "--model", "base.safetensors", "--data", "prefs.jsonl", "-o", "dpo", "--max-steps", "3"}));
    EXPECT_EQ(dpo["steps"], 3);
    EXPECT_NEAR(dpo["first_loss"].get<double>(), std::log(2.0), 1e-9);

    write("broken.jsonl", "{\"prompt\":[1],\"chosen\":[2]}\n");
    const auto broken = run({"train", "dpo", "--model", "base.safetensors", "--data", "broken.jsonl", "-o", "x"});
    EXPECT_EQ(broken.code, 1);
    EXPECT_NE(broken.err.find("broken.jsonl:1:"), std::string::npos) << broken.err;
}

TEST_F(Cli, ConfigLayersResolveFlagsOverSetOverEnvOverFile) {
    init_model("base.safetensors", 1);
    write_token_file("tok.jsonl", 8, 12, 5);
    write("c.toml", "[train]\nmax_steps = 9\n");
    const std::vector<std::string> cmd{"--config", "c.toml", "train", "cpt", "--model", "base.safetensors",
                                       "--data",   "tok.jsonl"};
    auto with = [&](std::vector<std::string> extra, const std::string& out) {
        auto args = cmd;
        args.insert(args.end(), {"-o", out});
        args.insert(args.end(), extra.begin(), extra.end());
        return args;
    };
    const std::map<std::string, std::string> env{{"SPECFORGE_TRAIN__MAX_STEPS", "7"}};

    EXPECT_EQ(last_json_line(ok(with({}, "file")))["steps"], 9);
    EXPECT_EQ(last_json_line(ok(with({}, "env"), env))["steps"], 7);
    auto set_args = cmd;
    set_args.insert(set_args.begin(), {"--set", "train.max_steps=5"});
    set_args.insert(set_args.end(), {"-o", "set"});
    EXPECT_EQ(last_json_line(ok(set_args, env))["steps"], 5);
    set_args.back() = "flag";
    set_args.insert(set_args.end(), {"--max-steps", "3"});
    EXPECT_EQ(last_json_line(ok(set_args, env))["steps"], 3);

    const auto manifest = json::parse(std::ifstream(at("flag") / "run_manifest.json"));
    EXPECT_EQ(manifest["config"]["train.max_steps"], 3);
    EXPECT_EQ(manifest["config_digest"].get<std::string>().size(), 64u);
}

TEST_F(Cli, PipelinesAreDeterministicAndRecordTheirOutputs) {
    write("t1.toml", "[model]\nvocab_size = 32\n[cpt]\nmax_steps = 5\n[dpo]\nmax_steps = 5\n");
    write("t2.toml", "[model]\nvocab_size = 32\n[cpt]\nmax_steps = 5\n[sft]\nmax_steps = 5\n");
    ok({"--config", "t1.toml", "pipeline", "track1", "-o", "a1"});
    ok({"--config", "t1.toml", "pipeline", "track1", "-o", "b1"});
    for (const char* stage : {"cpt", "ir", "qa"}) {
        const auto name = std::string(stage) + ".safetensors";
        EXPECT_EQ(digest("a1/" + name), digest("b1/" + name)) << stage;
    }
    const auto manifest = json::parse(std::ifstream(at("a1") / "run_manifest.json"));
    EXPECT_EQ(manifest["outputs"].size(), 3u);
    for (const auto& o : manifest["outputs"]) {
        EXPECT_EQ(o["blake3"], digest("a1/" + fs::path(o["path"].get<std::string>()).filename().string()));
    }

    const auto summary = last_json_line(ok({"--config", "t2.toml", "pipeline", "track2", "-o", "a2"}));
    EXPECT_EQ(summary["sft"]["steps"], 5);
    for (const char* stage : {"cpt", "sft", "struct"}) {
        EXPECT_TRUE(fs::exists(at("a2") / (std::string(stage) + ".safetensors"))) << stage;
    }
    // sft keys belong to track2 only.
    EXPECT_EQ(run({"--config", "t2.toml", "pipeline", "track1", "-o", "x"}).code, 1);
}

TEST_F(Cli, PrefsCurateSplitsByCategory) {
    std::string rated;
    for (int i = 0; i < 20; ++i) {
        rated += json{{"prompt", {1, i}},   {"response_a", {2, 3}}, {"rating_a", 5},
                      {"response_b", {4}},  {"rating_b", 1 + i % 5}, {"category", i % 2 ? "qa" : "summary"}}
                     .dump() +
                 "\n";
    }
    write("rated.jsonl", rated);
    const auto summary =
        last_json_line(ok({"prefs", "curate", "--in", "rated.jsonl", "--min-delta", "2", "-o", "curated"}));
    EXPECT_EQ(summary["items"], 20);
    EXPECT_EQ(summary["train"].get<int>() + summary["eval"].get<int>(), 12);
    EXPECT_TRUE(fs::exists(at("curated") / "train.jsonl"));
    EXPECT_TRUE(fs::exists(at("curated") / "eval.jsonl"));
    ok({"prefs", "curate", "--in", "rated.jsonl", "--min-delta", "2", "-o", "again"});
    EXPECT_EQ(digest("curated/train.jsonl"), digest("again/train.jsonl"));

    // Nothing passes the threshold: warn, write empty files, succeed.
    ok({"prefs", "curate", "--in", "rated.jsonl", "--min-delta", "10", "-o", "empty"});
    EXPECT_EQ(fs::file_size(at("empty") / "train.jsonl"), 0u);
    EXPECT_EQ(run({"prefs", "curate", "--in", "rated.jsonl", "--split", "1.5", "-o", "x"}).code, 1);
}

TEST_F(Cli, CorpusRunIsReproducible) {
    fs::create_directories(at("docs"));
    std::string body;
    for (int i = 0; i < 60; ++i) body += "Borrower John Smith called (212) 555-7342 about the escrow balance. ";
    write("docs/a.txt", body);
    write("docs/b.txt", body + "Closing is on 03/04/2024.");
    write("docs/dup.txt", body);
    ok({"corpus", "run", "--in", "docs", "--out", "one", "--seed", "3"});
    ok({"corpus", "run", "--in", "docs", "--out", "two", "--seed", "3"});
    EXPECT_EQ(digest("one/chunks.jsonl"), digest("two/chunks.jsonl"));
    EXPECT_EQ(digest("one/manifest.json"), digest("two/manifest.json"));
    const auto manifest = json::parse(std::ifstream(at("one") / "manifest.json"));
    EXPECT_EQ(manifest["duplicates_dropped"], 1);
    EXPECT_GT(manifest["pii_replacements"]["PHONE"].get<int>(), 0);
    EXPECT_TRUE(fs::exists(at("one") / "run_manifest.json"));

    std::ifstream chunks(at("one") / "chunks.jsonl");
    std::string line;
    while (std::getline(chunks, line)) EXPECT_EQ(line.find("555-7342"), std::string::npos);

    EXPECT_EQ(run({"corpus", "run", "--in", "nowhere", "--out", "x"}).code, 1);
    EXPECT_EQ(run({"corpus", "run", "--in", "docs", "--out", "x", "--min-tokens", "50", "--max-tokens", "10"}).code, 1);
}

TEST_F(Cli, RouteOnceWithStubClassifier) {
    const auto qa = json::parse(ok({"route", "once", "--query", "What is an escrow account?"}));
    EXPECT_EQ(qa["plan"]["expert"], "QAExpert");
    EXPECT_FALSE(qa.contains("response"));
    const auto summary = json::parse(ok({"route", "once", "--query", "Summarize this loan document"}));
    EXPECT_EQ(summary["plan"]["expert"], "StructExpert");

    EXPECT_EQ(run({"route", "once", "--query", "q", "--classifier", "replay:none.jsonl"}).code, 1);
    EXPECT_EQ(run({"route", "once", "--query", "q", "--classifier", "https://example.invalid/v1"}).code, 1);
}

TEST_F(Cli, ServersStopCleanlyOnSigterm) {
    Process stub({"bench", "stub", "--port", "0", "--service-ms", "10"}, dir(), {});
    const auto stub_url = stub.wait_for_url();
    ASSERT_FALSE(stub_url.empty());

    Process router({"route", "serve", "--port", "0", "--qa-endpoint", stub_url, "--struct-endpoint", stub_url}, dir(),
                   {});
    const auto router_url = router.wait_for_url();
    ASSERT_FALSE(router_url.empty());

    httplib::Client client(router_url);
    const json body{{"messages", {{{"role", "user"}, {"content", "Summarize the closing disclosure"}}}}};
    const auto res = client.Post("/v1/chat/completions", body.dump(), "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(res->get_header_value("X-Specforge-Expert"), "StructExpert");

    // A second server on the same port fails fast with a domain error.
    const auto port = router_url.substr(router_url.rfind(':') + 1);
    const auto taken = run({"route", "serve", "--port", port, "--qa-endpoint", stub_url, "--struct-endpoint", stub_url});
    EXPECT_EQ(taken.code, 1);

    const auto bench = run({"bench", "run", "--endpoint", stub_url, "--requests", "10", "--workers", "1,2", "-o",
                            "bench.json"});
    EXPECT_EQ(bench.code, 0) << bench.err;
    EXPECT_NE(bench.out.find("Throughput (req/s)"), std::string::npos);
    const auto report = json::parse(std::ifstream(at("bench.json")));
    ASSERT_EQ(report["reports"].size(), 2u);
    EXPECT_EQ(report["reports"][1]["workers"], 2);
    EXPECT_EQ(report["reports"][0]["success_rate"], 1.0);
    EXPECT_TRUE(fs::exists(at("bench.json.run_manifest.json")));
    EXPECT_EQ(run({"bench", "run", "--endpoint", stub_url, "--workers", "0"}).code, 1);

    router.signal(SIGTERM);
    EXPECT_EQ(router.wait().code, 0);
    stub.signal(SIGINT);
    EXPECT_EQ(stub.wait().code, 0);
}

} // namespace
} // namespace specforge
