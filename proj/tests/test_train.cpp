// Optimizer, learning-rate schedule, and training-loop tests: hand-computed
// RMSProp updates, oracle equivalence, plateau scheduling, state
// persistence, and the split-run resume guarantee.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "softpose/optim.hpp"
#include "softpose/train.hpp"

namespace sp = softpose;

namespace {

std::string temp_dir(const std::string& name) {
    const std::string path = ::testing::TempDir() + "softpose_train_" + name;
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
    return path;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    EXPECT_TRUE(in) << "missing file " << path;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> stripped_runlog(const std::string& path) {
    std::ifstream in(path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(sp::strip_seconds(line));
    return lines;
}

/// Single-parameter list around an existing tensor.
sp::ParamList one_param(const std::string& name, sp::Tensor t) {
    sp::ParamList list;
    list.push_back({name, std::move(t)});
    return list;
}

/// Run a sum-of-elements backward so every element's gradient becomes 1.
void set_unit_gradient(sp::Tensor& t) {
    t.set_requires_grad(true);
    t.zero_grad();
    sp::Tensor loss = sp::reduce_sum(t);
    loss.backward();
}

// ---------------------------------------------------------------------------
// RMSProp.
// ---------------------------------------------------------------------------

TEST(RmsProp, HandComputedSingleScalarStep) {
    sp::Tensor p = sp::Tensor::zeros({1});
    set_unit_gradient(p);  // g = 1
    sp::ParamList params = one_param("p", p);
    sp::RmsPropState state;
    state.init(params);

    sp::rmsprop_step(params, state, /*lr=*/sp::real(0.1), /*rho=*/sp::real(0.9), /*eps=*/0);

    // v = 0.9*0 + 0.1*1 = 0.1;  dp = -0.1 * 1 / sqrt(0.1).
    EXPECT_NEAR(state.v[0][0], 0.1, 1e-15);
    EXPECT_NEAR(p.data()[0], -0.1 / std::sqrt(0.1), 1e-15);
    EXPECT_NEAR(p.data()[0], -0.31622776601683794, 1e-12);
}

TEST(RmsProp, ZeroGradientLeavesParametersUnchanged) {
    sp::Tensor p = sp::Tensor::from({3}, {1, -2, 3});
    p.set_requires_grad(true);
    p.zero_grad();  // allocates an all-zero gradient
    sp::ParamList params = one_param("p", p);
    sp::RmsPropState state;

    sp::rmsprop_step(params, state, sp::real(1e-3));
    EXPECT_EQ(p.data()[0], 1);
    EXPECT_EQ(p.data()[1], -2);
    EXPECT_EQ(p.data()[2], 3);
}

TEST(RmsProp, MatchesNaiveOracleOverRepeatedSteps) {
    sp::Rng rng(404);
    sp::Tensor p = sp::Tensor::zeros({7});
    p.set_requires_grad(true);
    for (int64_t i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform(-1, 1);
    std::vector<double> op(p.data(), p.data() + p.size());
    std::vector<double> ov(op.size(), 0.0);

    sp::ParamList params = one_param("p", p);
    sp::RmsPropState state;
    state.init(params);

    const sp::real lr = sp::real(0.01), rho = sp::real(0.9), eps = sp::real(1e-8);
    for (int step = 0; step < 25; ++step) {
        // Loss sum(w ⊙ p) gives gradient w: fresh random every step.
        std::vector<sp::real> w(static_cast<size_t>(p.size()));
        for (auto& v : w) v = rng.uniform(-2, 2);
        p.zero_grad();
        sp::Tensor loss =
            sp::reduce_sum(sp::mul(p, sp::Tensor::from({7}, std::vector<sp::real>(w))));
        loss.backward();
        sp::rmsprop_step(params, state, lr, rho, eps);

        std::vector<double> og(w.begin(), w.end());
        oracle::rmsprop_naive(op, og, ov, lr, rho, eps);
        for (size_t i = 0; i < op.size(); ++i) {
            EXPECT_NEAR(p.data()[i], op[i], 1e-12) << "step " << step << " element " << i;
            EXPECT_NEAR(state.v[0][i], ov[i], 1e-12);
        }
    }
}

TEST(RmsProp, NonFiniteGradientAbortsNamingTheParameter) {
    sp::Tensor a = sp::Tensor::zeros({2});
    sp::Tensor b = sp::Tensor::zeros({2});
    set_unit_gradient(a);
    set_unit_gradient(b);
    b.node()->grad[1] = std::numeric_limits<sp::real>::infinity();
    sp::ParamList params;
    params.push_back({"layer.alpha", a});
    params.push_back({"layer.beta", b});
    sp::RmsPropState state;

    const std::vector<sp::real> before = {b.data()[0], b.data()[1]};
    try {
        sp::rmsprop_step(params, state, sp::real(0.1));
        FAIL() << "expected NumericError";
    } catch (const sp::NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("layer.beta"), std::string::npos) << e.what();
    }
    // Aborted before touching any parameter.
    EXPECT_EQ(a.data()[0], 0);
    EXPECT_EQ(b.data()[0], before[0]);
    EXPECT_EQ(b.data()[1], before[1]);
}

// ---------------------------------------------------------------------------
// Plateau schedule.
// ---------------------------------------------------------------------------

TEST(Plateau, ImprovingHistoryKeepsLearningRate) {
    sp::PlateauScheduler sched(sp::real(1e-3));
    for (int i = 0; i < 20; ++i)
        EXPECT_EQ(sched.observe(sp::real(0.1) + sp::real(0.01) * i), sp::real(1e-3));
}

TEST(Plateau, FiveFlatEpochsCutLearningRateByFactor) {
    sp::PlateauScheduler sched(sp::real(1e-3));
    sched.observe(sp::real(0.5));  // baseline best
    for (int i = 0; i < 4; ++i) EXPECT_EQ(sched.observe(sp::real(0.5)), sp::real(1e-3));
    EXPECT_EQ(sched.observe(sp::real(0.5)), sp::real(1e-3) * sp::real(0.4));
    EXPECT_EQ(sched.wait(), 0);  // counter restarts after a cut
}

TEST(Plateau, ImprovementsBelowThresholdCountAsFlat) {
    sp::PlateauScheduler sched(sp::real(1e-3));
    sched.observe(sp::real(0.5));
    for (int i = 1; i <= 4; ++i) sched.observe(sp::real(0.5) + sp::real(5e-5));
    EXPECT_EQ(sched.observe(sp::real(0.5) + sp::real(9e-5)), sp::real(1e-3) * sp::real(0.4));
    EXPECT_EQ(sched.best(), sp::real(0.5));  // sub-threshold scores never became best
}

TEST(Plateau, RealImprovementResetsTheCounter) {
    sp::PlateauScheduler sched(sp::real(1e-3));
    sched.observe(sp::real(0.5));
    for (int i = 0; i < 4; ++i) sched.observe(sp::real(0.5));  // wait = 4
    EXPECT_EQ(sched.observe(sp::real(0.6)), sp::real(1e-3));   // resets
    for (int i = 0; i < 4; ++i) EXPECT_EQ(sched.observe(sp::real(0.6)), sp::real(1e-3));
    EXPECT_LT(sched.observe(sp::real(0.6)), sp::real(1e-3));  // full patience needed again
}

TEST(Plateau, LearningRateNeverFallsBelowFloor) {
    sp::PlateauConfig cfg;
    cfg.patience = 1;
    sp::PlateauScheduler sched(sp::real(4e-7), cfg);
    sched.observe(sp::real(0.5));
    for (int i = 0; i < 10; ++i) {
        const sp::real lr = sched.observe(sp::real(0.5));
        EXPECT_GE(lr, sp::real(1e-7));
    }
    EXPECT_EQ(sched.lr(), sp::real(1e-7));
}

TEST(Plateau, PureReplayMatchesStatefulScheduler) {
    sp::Rng rng(11);
    std::vector<sp::real> history;
    sp::PlateauScheduler sched(sp::real(1e-3));
    sp::real lr = sp::real(1e-3);
    for (int i = 0; i < 40; ++i) {
        history.push_back(rng.uniform(0, 1));
        lr = sched.observe(history.back());
        EXPECT_EQ(sp::lr_schedule(history, sp::real(1e-3)), lr);
    }
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

sp::ModelConfig tiny_model_config() {
    sp::ModelConfig mc;
    mc.K = 1;
    mc.n_joints = 8;
    mc.n_context = 1;
    mc.input_size = 16;
    mc.base_resolution = 2;
    mc.width_multiplier = sp::real(0.05);
    mc.num_resolutions = 2;
    mc.growth = 0;
    mc.batch_norm = true;
    mc.seed = 99;
    return mc;
}

std::vector<sp::Sample> tiny_dataset(int n, uint64_t seed) {
    sp::SyntheticSpec spec;
    spec.seed = seed;
    return sp::synth_samples(spec, n, 16);
}

sp::TrainConfig tiny_train_config(const std::string& out_dir) {
    sp::TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 4;
    cfg.seed = 5;
    cfg.out_dir = out_dir;
    return cfg;
}

TEST(TrainState, SaveLoadRoundTripIsExact) {
    sp::PoseModel model(tiny_model_config());
    sp::TrainState st;
    st.opt.init(model.parameters());
    sp::Rng rng(8);
    for (auto& arr : st.opt.v)
        for (auto& v : arr) v = rng.uniform(0, 2);
    st.epoch = 7;
    st.lr = sp::real(2.5e-4);
    st.sched_best = sp::real(0.875);
    st.sched_wait = 3;
    st.best_val = sp::real(0.9);

    const std::string dir = temp_dir("state");
    sp::save_train_state(dir + "/s", model.parameters(), st);
    const sp::TrainState back = sp::load_train_state(dir + "/s", model.parameters());

    EXPECT_EQ(back.epoch, st.epoch);
    EXPECT_EQ(back.lr, st.lr);
    EXPECT_EQ(back.sched_best, st.sched_best);
    EXPECT_EQ(back.sched_wait, st.sched_wait);
    EXPECT_EQ(back.best_val, st.best_val);
    ASSERT_EQ(back.opt.v.size(), st.opt.v.size());
    for (size_t i = 0; i < st.opt.v.size(); ++i) EXPECT_EQ(back.opt.v[i], st.opt.v[i]);

    // A model with different geometry rejects the state file.
    sp::ModelConfig other = tiny_model_config();
    other.width_multiplier = sp::real(0.08);
    sp::PoseModel wrong(other);
    EXPECT_THROW(sp::load_train_state(dir + "/s", wrong.parameters()), sp::ConfigError);
}

TEST(Train, ZeroEpochsWritesInitializationCheckpoint) {
    const std::string dir = temp_dir("zero_epochs");
    sp::PoseModel model(tiny_model_config());

    sp::TrainConfig cfg = tiny_train_config(dir);
    cfg.epochs = 0;
    const auto data = tiny_dataset(6, 1);
    const sp::TrainOutcome out =
        sp::train(model, {data.begin(), data.begin() + 4}, {data.begin() + 4, data.end()}, cfg);

    EXPECT_EQ(out.epochs_completed, 0);
    EXPECT_TRUE(out.log.epochs.empty());
    EXPECT_EQ(read_file(dir + "/runlog.txt"), "");

    // The written checkpoint equals a direct save of the untouched model.
    sp::PoseModel fresh(tiny_model_config());
    sp::save_checkpoint(dir + "/reference", fresh);
    EXPECT_EQ(read_file(dir + "/last.blob"), read_file(dir + "/reference.blob"));
    EXPECT_EQ(read_file(dir + "/last.manifest"), read_file(dir + "/reference.manifest"));
}

TEST(Train, RunsLogAndCheckpointsEveryEpoch) {
    const std::string dir = temp_dir("smoke");
    sp::PoseModel model(tiny_model_config());
    sp::TrainConfig cfg = tiny_train_config(dir);
    cfg.epochs = 2;
    const auto data = tiny_dataset(10, 2);
    const sp::TrainOutcome out =
        sp::train(model, {data.begin(), data.begin() + 8}, {data.begin() + 8, data.end()}, cfg);

    EXPECT_EQ(out.epochs_completed, 2);
    ASSERT_EQ(out.log.epochs.size(), 2u);
    for (const auto& e : out.log.epochs) {
        EXPECT_TRUE(std::isfinite(e.loss));
        EXPECT_GE(e.val_pck, 0);
        EXPECT_LE(e.val_pck, 1);
        EXPECT_EQ(e.lr, sp::real(1e-3));  // patience 5 cannot trigger in 2 epochs
    }
    EXPECT_TRUE(std::filesystem::exists(dir + "/best.blob"));
    EXPECT_TRUE(std::filesystem::exists(dir + "/last.blob"));
    EXPECT_TRUE(std::filesystem::exists(dir + "/last_state.blob"));

    const auto lines = stripped_runlog(dir + "/runlog.txt");
    ASSERT_EQ(lines.size(), 2u);
    EXPECT_EQ(lines[0], out.log.epochs[0].deterministic_line());
    EXPECT_EQ(lines[1], out.log.epochs[1].deterministic_line());
    EXPECT_EQ(lines[0].rfind("epoch=1 loss=", 0), 0u);
}

TEST(Train, SplitRunEqualsUnbrokenRunBitExactly) {
    const auto data = tiny_dataset(12, 3);
    const std::vector<sp::Sample> train_set(data.begin(), data.begin() + 9);
    const std::vector<sp::Sample> val_set(data.begin() + 9, data.end());

    // Unbroken: 6 epochs in one call.
    const std::string dir_full = temp_dir("unbroken");
    sp::TrainConfig cfg_full = tiny_train_config(dir_full);
    cfg_full.epochs = 6;
    sp::PoseModel model_full(tiny_model_config());
    sp::train(model_full, train_set, val_set, cfg_full);

    // Split: 3 epochs, then resume to 6 in the same directory.
    const std::string dir_split = temp_dir("split");
    sp::TrainConfig cfg_a = tiny_train_config(dir_split);
    cfg_a.epochs = 3;
    sp::PoseModel model_a(tiny_model_config());
    sp::train(model_a, train_set, val_set, cfg_a);

    sp::TrainConfig cfg_b = cfg_a;
    cfg_b.epochs = 6;
    const sp::ResumedRun resumed = sp::resume_train(train_set, val_set, cfg_b);
    EXPECT_EQ(resumed.outcome.epochs_completed, 6);
    EXPECT_EQ(resumed.outcome.log.epochs.size(), 3u);  // only the resumed part

    for (const char* name : {"/last.manifest", "/last.blob", "/last_state.manifest",
                             "/last_state.blob", "/best.manifest", "/best.blob"})
        EXPECT_EQ(read_file(dir_split + name), read_file(dir_full + name)) << name;
    EXPECT_EQ(stripped_runlog(dir_split + "/runlog.txt"),
              stripped_runlog(dir_full + "/runlog.txt"));
}

TEST(Train, RepeatedRunsAreBitIdentical) {
    const auto data = tiny_dataset(8, 4);
    const std::vector<sp::Sample> train_set(data.begin(), data.begin() + 6);
    const std::vector<sp::Sample> val_set(data.begin() + 6, data.end());

    std::string dirs[2];
    for (int r = 0; r < 2; ++r) {
        dirs[r] = temp_dir("repeat" + std::to_string(r));
        sp::TrainConfig cfg = tiny_train_config(dirs[r]);
        cfg.epochs = 2;
        cfg.augment = true;  // augmentation seeds must also be reproducible
        sp::PoseModel model(tiny_model_config());
        sp::train(model, train_set, val_set, cfg);
    }
    EXPECT_EQ(read_file(dirs[0] + "/last.blob"), read_file(dirs[1] + "/last.blob"));
    EXPECT_EQ(stripped_runlog(dirs[0] + "/runlog.txt"), stripped_runlog(dirs[1] + "/runlog.txt"));
}

TEST(Train, NonFiniteLossAbortsWithBatchIndex) {
    const std::string dir = temp_dir("poison");
    sp::PoseModel model(tiny_model_config());
    // Poison one stem weight so the first forward produces a non-finite loss.
    model.parameters()[0].tensor.data()[0] = std::numeric_limits<sp::real>::infinity();

    sp::TrainConfig cfg = tiny_train_config(dir);
    const auto data = tiny_dataset(6, 5);
    try {
        sp::train(model, {data.begin(), data.begin() + 4}, {data.begin() + 4, data.end()}, cfg);
        FAIL() << "expected NumericError";
    } catch (const sp::NumericError& e) {
        const std::string what = e.what();
        EXPECT_NE(what.find("batch"), std::string::npos) << what;
        EXPECT_NE(what.find("epoch 1"), std::string::npos) << what;
    }
}

TEST(Train, StackImagesLaysOutBatchesAndValidates) {
    sp::Rng rng(6);
    sp::Tensor a = sp::Tensor::zeros({3, 4, 4}), b = sp::Tensor::zeros({3, 4, 4});
    for (int64_t i = 0; i < a.size(); ++i) {
        a.data()[i] = rng.uniform();
        b.data()[i] = rng.uniform();
    }
    const sp::Tensor batch = sp::stack_images({&a, &b});
    ASSERT_EQ(batch.dim(0), 2);
    for (int64_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(batch.data()[i], a.data()[i]);
        EXPECT_EQ(batch.data()[a.size() + i], b.data()[i]);
    }
    sp::Tensor odd = sp::Tensor::zeros({3, 5, 4});
    EXPECT_THROW(sp::stack_images({&a, &odd}), std::invalid_argument);
}

} // namespace
