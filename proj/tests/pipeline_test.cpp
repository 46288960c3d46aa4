#include "specforge/pipeline.hpp"

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "specforge/weight_ops.hpp"
#include "test_util.hpp"

namespace specforge {
namespace {

ModelConfig toy64() {
    return {.vocab_size = 64, .d_model = 16, .n_layers = 2, .n_heads = 2, .d_ff = 32, .max_seq_len = 32, .seed = 1};
}

struct World {
    Checkpoint base;
    Checkpoint inst;
    std::vector<TokenSequence> corpus;
    std::vector<PreferencePair> pairs;
    std::vector<SupervisedExample> sft;
};

World make_world() {
    const auto cfg = toy64();
    World w;
    w.base = init_model(cfg);
    w.inst = synthetic::instruct_reference(w.base, 0.01, 2);
    w.corpus = synthetic::domain_corpus(cfg, 32, 16, 3);
    w.pairs = synthetic::preference_pairs(cfg, 64, 4);
    w.sft = synthetic::struct_dataset(cfg, 24, 5);
    return w;
}

bool tensors_bit_equal(const Checkpoint& a, const Checkpoint& b) {
    if (a.tensors.size() != b.tensors.size()) return false;
    for (const auto& [name, t] : a.tensors) {
        if (!b.contains(name) || !(b.at(name) == t)) return false;
    }
    return true;
}

double max_abs_diff(const Checkpoint& a, const Checkpoint& b) {
    double worst = 0.0;
    for (const auto& [name, t] : a.tensors) {
        const auto x = t.to_f64();
        const auto y = b.at(name).to_f64();
        for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
    }
    return worst;
}

TEST(Track1Test, ZeroStepsReproducesInstructReference) {
    const auto w = make_world();
    Track1Config cfg;
    cfg.cpt.train.max_steps = 0;
    cfg.dpo.train.max_steps = 0;
    const auto r = run_track1(w.base, w.inst, w.corpus, w.pairs, cfg);
    EXPECT_LE(max_abs_diff(r.output, w.inst), 1e-6);
    ASSERT_EQ(r.stages.size(), 3u);
    EXPECT_EQ(r.stages[0].name, "cpt");
    EXPECT_EQ(r.stages[1].name, "ir");
    EXPECT_EQ(r.stages[2].name, "qa");
    EXPECT_EQ(r.output.metadata.at("stage"), "qa");
}

TEST(Track1Test, PreDpoCheckpointIsCptPlusResidual) {
    const auto w = make_world();
    Track1Config cfg;
    cfg.cpt.train.max_steps = 4;
    cfg.dpo.train.max_steps = 2;
    const auto r = run_track1(w.base, w.inst, w.corpus, w.pairs, cfg);
    const auto& cpt = r.stage("cpt").checkpoint;
    EXPECT_FALSE(tensors_bit_equal(cpt, w.base));
    const auto expected = apply_residual(cpt, extract_residual(w.inst, w.base));
    EXPECT_TRUE(tensors_bit_equal(r.stage("ir").checkpoint, expected));
}

TEST(Track1Test, TrainedDpoImprovesHeldOutPreferences) {
    const auto w = make_world();
    Track1Config cfg;
    cfg.dpo.train.max_steps = 500;
    const auto r = run_track1(w.base, w.inst, w.corpus, w.pairs, cfg);
    const auto held_out = synthetic::preference_pairs(toy64(), 32, 77);
    const auto policy = DenseModel::from_checkpoint(r.output);
    const auto reference = DenseModel::from_checkpoint(r.stage("ir").checkpoint);
    double margin = 0.0, loss = 0.0;
    for (const auto& p : held_out) {
        const auto t = dpo_loss(policy, LoraAdapterSet{.rank = 1}, reference, p, 0.2);
        margin += t.margin / static_cast<double>(held_out.size());
        loss += t.loss / static_cast<double>(held_out.size());
    }
    EXPECT_GT(margin, 0.0);
    EXPECT_LT(loss, std::numbers::ln2);
    EXPECT_EQ(r.stage("qa").training->steps, 500);
}

TEST(Track1Test, DeterministicAndPersistsStages) {
    const auto w = make_world();
    test::TempDir dir;
    Track1Config cfg;
    cfg.cpt.train.max_steps = 3;
    cfg.dpo.train.max_steps = 3;
    cfg.stage_dir = dir.path();
    const auto a = run_track1(w.base, w.inst, w.corpus, w.pairs, cfg);
    const auto b = run_track1(w.base, w.inst, w.corpus, w.pairs, cfg);
    EXPECT_EQ(serialize_checkpoint(a.output), serialize_checkpoint(b.output));
    for (const char* stage : {"cpt", "ir", "qa"}) {
        const auto path = dir.path() / (std::string(stage) + ".safetensors");
        ASSERT_TRUE(std::filesystem::exists(path)) << stage;
        EXPECT_EQ(load_checkpoint(path).metadata.at("stage"), stage);
    }
}

TEST(Track1Test, IncompatibleInstructRejected) {
    const auto w = make_world();
    auto cfg = toy64();
    cfg.d_ff = 16;
    EXPECT_THROW(run_track1(w.base, init_model(cfg), w.corpus, w.pairs, Track1Config{}), IncompatibleError);
}

TEST(Track2Test, ZeroSftAndDpoStepsReturnCptCheckpoint) {
    const auto w = make_world();
    Track2Config cfg;
    cfg.cpt.train.max_steps = 3;
    cfg.sft.train.max_steps = 0;
    cfg.dpo.train.max_steps = 0;
    const auto r = run_track2(w.base, w.corpus, w.sft, w.pairs, cfg);
    EXPECT_TRUE(tensors_bit_equal(r.output, r.stage("cpt").checkpoint));
    EXPECT_FALSE(tensors_bit_equal(r.output, w.base));
}

TEST(Track2Test, SftAdapterAccountingAndTraining) {
    ModelConfig cfg{.vocab_size = 32, .d_model = 16, .n_layers = 2, .n_heads = 2, .d_ff = 32, .max_seq_len = 32, .seed = 3};
    const auto base = init_model(cfg);
    const auto stage = default_sft_stage();
    EXPECT_EQ(stage.rank, 16);
    EXPECT_EQ(stage.alpha, 32.0);
    EXPECT_EQ(create_lora(base, stage.targets, stage.rank, stage.alpha, stage.dropout, 0).trainable_parameter_count(),
              2048);

    Track2Config t;
    t.cpt.train.max_steps = 2;
    t.dpo.train.max_steps = 2;
    const auto r = run_track2(base, synthetic::domain_corpus(cfg, 8, 12, 1), synthetic::struct_dataset(cfg, 24, 2),
                              synthetic::preference_pairs(cfg, 8, 3), t);
    const auto& sft = *r.stage("sft").training;
    EXPECT_EQ(sft.steps, planned_steps(t.sft.train, 24));
    EXPECT_LT(sft.loss_trace.back(), sft.loss_trace.front());
    EXPECT_EQ(r.output.metadata.at("stage"), "struct");
}

TEST(SyntheticTest, GeneratorsAreDeterministicAndInRange) {
    const auto cfg = toy64();
    EXPECT_EQ(synthetic::domain_corpus(cfg, 5, 10, 1), synthetic::domain_corpus(cfg, 5, 10, 1));
    EXPECT_EQ(synthetic::preference_pairs(cfg, 5, 1), synthetic::preference_pairs(cfg, 5, 1));
    for (const auto& p : synthetic::preference_pairs(cfg, 50, 2)) {
        for (auto t : p.chosen) EXPECT_LT(t, 16);
        for (auto t : p.rejected) EXPECT_GE(t, 48);
        EXPECT_NE(p.chosen, p.rejected);
    }
    for (const auto& ex : synthetic::struct_dataset(cfg, 30, 3)) {
        EXPECT_FALSE(ex.completion.empty());
        for (auto t : ex.completion) EXPECT_LT(t, 64);
    }
    EXPECT_THROW(synthetic::domain_corpus(cfg, 1, 100, 1), ConfigError);
}

} // namespace
} // namespace specforge
