#include "singsynth/dataset_io.hpp"
#include "singsynth/trainer.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

using namespace singsynth;
using namespace singsynth::train;

namespace {

class TrainerTest : public ::testing::Test {
protected:
    void SetUp() override {
        root_ = support::temp_dir("trainer");
        corpus_cfg_ = support::tiny_corpus();
        data_ = corpus::generate_corpus(corpus_cfg_, 7);
        io::write_dataset(root_ / "corpus", data_, corpus_cfg_);
    }
    void TearDown() override { std::filesystem::remove_all(root_); }

    TrainConfig config(const std::string& run) const {
        return support::tiny_train((root_ / "corpus").string(), (root_ / run).string());
    }

    std::vector<const corpus::Utterance*> batch(size_t n) const {
        std::vector<const corpus::Utterance*> b;
        for (size_t i = 0; i < n; ++i) {
            b.push_back(&data_.train[(i * 5) % data_.train.size()]);
        }
        return b;
    }

    static std::vector<std::string> lines(const std::filesystem::path& p) {
        std::ifstream in(p);
        std::vector<std::string> out;
        std::string line;
        while (std::getline(in, line)) {
            out.push_back(line);
        }
        return out;
    }

    std::filesystem::path root_;
    corpus::CorpusConfig corpus_cfg_;
    corpus::Dataset data_;
};

}  // namespace

TEST_F(TrainerTest, ZeroLambdaTotalIsExactSum) {
    TrainConfig c = config("run");
    c.lambda_mi = 0;
    Trainer trainer(c, corpus_cfg_);
    for (int i = 0; i < 3; ++i) {
        const StepMetrics m = trainer.train_step(batch(3));
        EXPECT_EQ(m.l_total, m.l_mu + m.l_diff);
    }
}

TEST_F(TrainerTest, TotalIsSumOfComponents) {
    Trainer trainer(config("run"), corpus_cfg_);
    for (int i = 0; i < 3; ++i) {
        const StepMetrics m = trainer.train_step(batch(3));
        EXPECT_NEAR(m.l_total, m.l_mu + m.l_diff + 0.01 * m.l_mi, 1e-6);
        EXPECT_TRUE(std::isfinite(m.q_loglik));
        EXPECT_EQ(m.step, i + 1);
    }
}

TEST_F(TrainerTest, PerfectOracleGivesZeroLosses) {
    Trainer trainer(config("run"), corpus_cfg_);
    const StepMetrics m = trainer.train_step(batch(3), OracleOverride{true, true});
    EXPECT_EQ(m.l_mu, 0.0);
    EXPECT_NEAR(m.l_diff, 0.0, 1e-10);
}

TEST_F(TrainerTest, SeedChangesInitialDiffusionLoss) {
    TrainConfig a = config("a");
    TrainConfig b = config("b");
    b.seed = 2;
    Trainer ta(a, corpus_cfg_);
    Trainer tb(b, corpus_cfg_);
    EXPECT_NE(ta.train_step(batch(3)).l_diff, tb.train_step(batch(3)).l_diff);
}

TEST_F(TrainerTest, SameSeedIsDeterministic) {
    Trainer ta(config("a"), corpus_cfg_);
    Trainer tb(config("b"), corpus_cfg_);
    for (int i = 0; i < 2; ++i) {
        const StepMetrics x = ta.train_step(ta.sample_batch(data_.train));
        const StepMetrics y = tb.train_step(tb.sample_batch(data_.train));
        EXPECT_EQ(x.l_total, y.l_total);
    }
}

TEST_F(TrainerTest, NonFiniteLossAbortsWithoutApplyingStep) {
    Trainer trainer(config("run"), corpus_cfg_);
    trainer.train_step(batch(3));
    ag::Var table = trainer.model().parameters().get("encoder.phone_table");
    table.mutable_value().setConstant(std::numeric_limits<Scalar>::quiet_NaN());
    const Matrix style_before = trainer.model().parameters().get("style_table").value();
    try {
        trainer.train_step(batch(3));
        FAIL() << "expected NonFiniteLoss";
    } catch (const NonFiniteLoss& e) {
        EXPECT_NE(std::string(e.what()).find(data_.train[0].utt_id), std::string::npos) << e.what();
    }
    EXPECT_EQ(trainer.step(), 1);
    EXPECT_EQ(trainer.model().parameters().get("style_table").value(), style_before);
}

TEST_F(TrainerTest, GradientIsolation) {
    TrainConfig c = config("run");
    c.lr = 0;  // main parameters stay put; only q may move
    Trainer trainer(c, corpus_cfg_);
    std::vector<Matrix> main_before;
    for (const auto& p : trainer.model().parameters().parameters()) {
        main_before.push_back(p.var.value());
    }
    std::vector<Matrix> q_before;
    for (const auto& p : trainer.q().parameters().parameters()) {
        q_before.push_back(p.var.value());
    }
    trainer.train_step(batch(3));
    for (size_t i = 0; i < main_before.size(); ++i) {
        EXPECT_EQ(trainer.model().parameters().parameters()[i].var.value(), main_before[i]);
    }
    bool q_moved = false;
    for (size_t i = 0; i < q_before.size(); ++i) {
        q_moved |= trainer.q().parameters().parameters()[i].var.value() != q_before[i];
    }
    EXPECT_TRUE(q_moved);

    // With q frozen at lr 0, the main step must not move q.
    TrainConfig frozen_q = config("run2");
    frozen_q.q_lr = 0;
    Trainer t2(frozen_q, corpus_cfg_);
    std::vector<Matrix> q2;
    for (const auto& p : t2.q().parameters().parameters()) {
        q2.push_back(p.var.value());
    }
    t2.train_step(batch(3));
    for (size_t i = 0; i < q2.size(); ++i) {
        EXPECT_EQ(t2.q().parameters().parameters()[i].var.value(), q2[i]);
    }
}

TEST_F(TrainerTest, CheckpointRoundTripIsBitExact) {
    Trainer a(config("run"), corpus_cfg_);
    a.train_step(batch(3));
    a.train_step(batch(3));
    const auto path = root_ / "ck.bin";
    a.save_checkpoint(path);
    const Matrix style_at_checkpoint = a.model().parameters().get("style_table").value();
    Trainer b(config("other"), corpus_cfg_);
    b.load_checkpoint(path);
    EXPECT_EQ(b.step(), 2);
    for (size_t i = 0; i < a.model().parameters().parameters().size(); ++i) {
        EXPECT_EQ(a.model().parameters().parameters()[i].var.value(),
                  b.model().parameters().parameters()[i].var.value());
    }
    for (size_t i = 0; i < a.q().parameters().parameters().size(); ++i) {
        EXPECT_EQ(a.q().parameters().parameters()[i].var.value(), b.q().parameters().parameters()[i].var.value());
    }
    // Optimizer and rng state travel too, so the next step matches.
    const auto next = a.sample_batch(data_.train);
    const auto next_b = b.sample_batch(data_.train);
    ASSERT_EQ(next, next_b);
    EXPECT_EQ(a.train_step(next).l_total, b.train_step(next_b).l_total);

    const auto loaded = load_model(path);
    EXPECT_EQ(loaded.train_config.batch_size, 3);
    EXPECT_EQ(loaded.corpus_config.train_per_speaker, corpus_cfg_.train_per_speaker);
    EXPECT_EQ(loaded.model->parameters().get("style_table").value(), style_at_checkpoint);
}

TEST_F(TrainerTest, RejectsCorruptCheckpoint) {
    const auto path = root_ / "junk.bin";
    std::ofstream(path) << "not a checkpoint";
    Trainer t(config("run"), corpus_cfg_);
    EXPECT_THROW(t.load_checkpoint(path), InvalidInput);
    EXPECT_THROW(t.load_checkpoint(root_ / "missing.bin"), InvalidInput);
}

TEST_F(TrainerTest, ResumeReproducesTrajectory) {
    TrainConfig full = config("full");
    full.steps = 6;
    train::train(full);

    TrainConfig part = config("part");
    part.steps = 3;
    part.checkpoint_every = 3;
    train::train(part);
    TrainConfig rest = part;
    rest.steps = 6;
    rest.resume = (root_ / "part" / "checkpoint_3.bin").string();
    train::train(rest);

    EXPECT_EQ(lines(root_ / "full" / "metrics.csv"), lines(root_ / "part" / "metrics.csv"));
}

TEST_F(TrainerTest, MetricsRowsMatchSteps) {
    TrainConfig c = config("run");
    c.steps = 5;
    c.validate_every = 2;
    const TrainResult r = train::train(c);
    const auto rows = lines(r.metrics);
    ASSERT_EQ(rows.size(), 6u);
    EXPECT_EQ(rows[0], kMetricsHeader);
    EXPECT_EQ(r.history.size(), 5u);
    EXPECT_EQ(r.validation.size(), 2u);
    EXPECT_TRUE(std::filesystem::exists(r.checkpoint));
    EXPECT_TRUE(std::filesystem::exists(root_ / "run" / "run.cfg"));
    const auto kv = KeyValueConfig::load(root_ / "run" / "run.cfg");
    EXPECT_NO_THROW(kv.check_known(train_config_keys()));
    EXPECT_EQ(train_config_from(kv).steps, 5);
}

TEST_F(TrainerTest, MissingCorpusIsStartupError) {
    TrainConfig c = config("run");
    c.corpus_dir = (root_ / "nowhere").string();
    EXPECT_THROW(train::train(c), InvalidInput);
}

TEST_F(TrainerTest, CropCapRespected) {
    TrainConfig c = config("run");
    c.crop_frames = 8;
    Trainer t(c, corpus_cfg_);
    EXPECT_NO_THROW(t.train_step(batch(3)));
    c.crop_frames = 385;
    EXPECT_THROW(validate(c), InvalidInput);
}

TEST(TrainConfig, Validation) {
    TrainConfig c;
    EXPECT_NO_THROW(validate(c));
    c.lambda_mi = -1;
    EXPECT_THROW(validate(c), InvalidInput);
    c = TrainConfig{};
    c.batch_size = 1;
    EXPECT_THROW(validate(c), InvalidInput);
    c.lambda_mi = 0;
    EXPECT_NO_THROW(validate(c));
    c = TrainConfig{};
    c.mu_weight = 2;
    EXPECT_THROW(validate(c), InvalidInput);
}

TEST(TrainConfig, KeyValueRoundTrip) {
    TrainConfig c;
    c.lambda_mi = 0.05;
    c.steps = 123;
    c.schedule.beta1 = 15;
    c.seed = 9;
    c.run_dir = "somewhere";
    c.mid_dilations = {1, 3};
    const TrainConfig back = train_config_from(to_key_value(c));
    EXPECT_EQ(back.mid_dilations, (std::vector<int>{1, 3}));
    EXPECT_DOUBLE_EQ(back.lambda_mi, 0.05);
    EXPECT_EQ(back.steps, 123);
    EXPECT_DOUBLE_EQ(back.schedule.beta1, 15);
    EXPECT_EQ(back.seed, 9u);
    EXPECT_EQ(back.run_dir, "somewhere");
    KeyValueConfig dil;
    dil.set("model.mid_dilations", std::string("2,x"));
    EXPECT_THROW(train_config_from(dil), InvalidInput);
    KeyValueConfig bad;
    bad.set("train.lamda_mi", 0.1);
    EXPECT_THROW(bad.check_known(train_config_keys()), InvalidInput);
}
