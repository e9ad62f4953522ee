// Loss tests: elastic-net coordinate loss and binary cross-entropy against
// naive oracles and hand-computed values, visibility masking, gradients, and
// the per-block assembly of the training loss.

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "softpose/gradcheck.hpp"
#include "softpose/losses.hpp"

namespace sp = softpose;
using sp::real;
using sp::Tensor;

// ---------------------------------------------------------------------------
// Elastic-net loss.
// ---------------------------------------------------------------------------

TEST(ElasticNet, HandComputedValue) {
    // One sample, two joints: d = (-0.2, -0.1) and (0, 0).
    Tensor pred = Tensor::from({1, 2, 2}, {real(0.3), real(0.4), real(0.7), real(0.2)});
    Tensor truth = Tensor::from({1, 2, 2}, {real(0.5), real(0.5), real(0.7), real(0.2)});
    Tensor mask = Tensor::from({1, 2}, {real(1), real(1)});
    const real expect = real(0.5) * (real(0.2) + real(0.1) + real(0.04) + real(0.01));
    EXPECT_NEAR(sp::elastic_net_loss(pred, truth, mask).item(), expect, 1e-15);
}

TEST(ElasticNet, MatchesNaiveOracle) {
    const int B = 3, NJ = 5;
    sp::Rng rng(201);
    std::vector<real> pred(static_cast<size_t>(B) * NJ * 2), truth(pred.size());
    for (real& v : pred) v = rng.uniform(0, 1);
    for (real& v : truth) v = rng.uniform(0, 1);
    std::vector<real> mask_r;
    std::vector<std::vector<int>> mask_per_sample(B);
    for (int b = 0; b < B; ++b)
        for (int j = 0; j < NJ; ++j) {
            const int m = rng.uniform() < 0.7 ? 1 : 0;
            mask_per_sample[static_cast<size_t>(b)].push_back(m);
            mask_r.push_back(m);
        }

    Tensor loss = sp::elastic_net_loss(Tensor::from({B, NJ, 2}, pred),
                                       Tensor::from({B, NJ, 2}, truth),
                                       Tensor::from({B, NJ}, mask_r));
    double expect = 0;
    for (int b = 0; b < B; ++b) {
        const size_t o = static_cast<size_t>(b) * NJ * 2;
        expect += oracle::elastic_net_naive(
            std::vector<double>(pred.begin() + o, pred.begin() + o + NJ * 2),
            std::vector<double>(truth.begin() + o, truth.begin() + o + NJ * 2),
            mask_per_sample[static_cast<size_t>(b)]);
    }
    expect /= B;
    EXPECT_NEAR(loss.item(), expect, 1e-12);
}

TEST(ElasticNet, ZeroAtEqualityAndMaskedJointsIgnored) {
    Tensor pred = Tensor::from({1, 2, 2}, {real(0.1), real(0.2), real(0.3), real(0.4)});
    Tensor mask_all = Tensor::from({1, 2}, {real(1), real(1)});
    EXPECT_EQ(sp::elastic_net_loss(pred, pred, mask_all).item(), 0);

    // Invisible joint: arbitrarily bad predictions there change nothing.
    Tensor truth = Tensor::from({1, 2, 2}, {real(0.1), real(0.2), real(0.9), real(0.9)});
    Tensor mask = Tensor::from({1, 2}, {real(1), real(0)});
    Tensor bad = Tensor::from({1, 2, 2}, {real(0.1), real(0.2), real(12), real(-7)});
    EXPECT_EQ(sp::elastic_net_loss(bad, truth, mask).item(), 0);
}

TEST(ElasticNet, PoseOverloadUsesTruthVisibility) {
    sp::Pose pred(3), truth(3);
    pred.set(0, real(0.2), real(0.3));
    truth.set(0, real(0.4), real(0.3));
    pred.set(1, real(0.5), real(0.5));
    truth.set(1, real(0.5), real(0.5));
    pred.set(2, real(0.9), real(0.9));
    truth.set(2, real(0.1), real(0.1));
    truth.visible[2] = 0;
    // Only joint 0 contributes: (|dx| + dx^2) / 3 with dx = -0.2.
    EXPECT_NEAR(sp::elastic_net_loss(pred, truth), (0.2 + 0.04) / 3.0, 1e-15);
}

TEST(ElasticNet, FiniteDifferenceGradient) {
    sp::Rng rng(202);
    const int B = 2, NJ = 3;
    std::vector<real> pred, truth;
    for (int i = 0; i < B * NJ * 2; ++i) {
        const real t = rng.uniform(0, 1);
        truth.push_back(t);
        // Keep |pred - truth| >= 0.05: |.| is non-differentiable at zero.
        pred.push_back(t + (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(real(0.05), real(0.3)));
    }
    Tensor truth_t = Tensor::from({B, NJ, 2}, truth);
    Tensor mask = Tensor::filled({B, NJ}, 1);
    EXPECT_LT(sp::finite_difference_check(
                  [&](const Tensor& t) { return sp::elastic_net_loss(t, truth_t, mask); },
                  Tensor::from({B, NJ, 2}, pred)),
              1e-8);
}

// ---------------------------------------------------------------------------
// Binary cross-entropy.
// ---------------------------------------------------------------------------

TEST(Bce, HandComputedValues) {
    // q = 0.5 costs ln 2 against either target.
    EXPECT_NEAR(sp::bce_loss({real(0.5)}, {real(1)}), std::log(2.0), 1e-15);
    EXPECT_NEAR(sp::bce_loss({real(0.5)}, {real(0)}), std::log(2.0), 1e-15);
    // Perfect confidence is clamped, not infinite.
    EXPECT_NEAR(sp::bce_loss({real(1)}, {real(1)}), -std::log(1.0 - 1e-7), 1e-12);
    EXPECT_TRUE(std::isfinite(sp::bce_loss({real(0)}, {real(1)})));
    EXPECT_NEAR(sp::bce_loss({real(0)}, {real(1)}), -std::log(1e-7), 1e-9);
}

TEST(Bce, MatchesNaiveOracle) {
    sp::Rng rng(203);
    std::vector<real> q(24), p(24);
    for (real& v : q) v = rng.uniform(real(0.01), real(0.99));
    for (real& v : p) v = rng.uniform() < 0.5 ? 0 : 1;
    EXPECT_NEAR(sp::bce_loss(q, p), oracle::bce_naive(q, p), 1e-12);
    // Soft targets are legal too.
    for (real& v : p) v = rng.uniform(0, 1);
    EXPECT_NEAR(sp::bce_loss(q, p), oracle::bce_naive(q, p), 1e-12);
}

TEST(Bce, FiniteDifferenceGradient) {
    sp::Rng rng(204);
    std::vector<real> q(12), p(12);
    for (real& v : q) v = rng.uniform(real(0.1), real(0.9)); // away from the clamp kinks
    for (real& v : p) v = rng.uniform() < 0.5 ? 0 : 1;
    Tensor target = Tensor::from({3, 4}, p);
    EXPECT_LT(sp::finite_difference_check(
                  [&](const Tensor& t) { return sp::bce_loss(t, target); },
                  Tensor::from({3, 4}, q)),
              1e-7);
}

// ---------------------------------------------------------------------------
// Training-loss assembly.
// ---------------------------------------------------------------------------

namespace {

sp::BlockPrediction fake_block(const std::vector<real>& pose, const std::vector<real>& det_prob,
                               const std::vector<real>& ctx_prob, int nj, int nc) {
    sp::BlockPrediction bp;
    bp.pose = Tensor::from({1, nj, 2}, pose);
    bp.det_prob = Tensor::from({1, nj}, det_prob);
    if (nc > 0) bp.ctx_prob = Tensor::from({1, nc * nj}, ctx_prob);
    return bp;
}

} // namespace

TEST(TrainingLoss, CombinesBlocksWithProbabilityWeight) {
    const int NJ = 2, NC = 1;
    std::vector<real> pose = {real(0.3), real(0.4), real(0.7), real(0.2)};
    std::vector<real> truth = {real(0.5), real(0.5), real(0.7), real(0.2)};
    std::vector<real> det_prob = {real(0.8), real(0.3)};
    std::vector<real> ctx_prob = {real(0.6), real(0.5)};

    sp::PredictionSet set;
    set.blocks.push_back(fake_block(pose, det_prob, ctx_prob, NJ, NC));
    set.blocks.push_back(fake_block(pose, det_prob, ctx_prob, NJ, NC));

    std::vector<sp::Pose> truths(1, sp::Pose(NJ));
    truths[0].set(0, truth[0], truth[1]);
    truths[0].set(1, truth[2], truth[3]);
    sp::BatchTargets targets = sp::make_targets(truths, NC);

    sp::TrainingLoss loss = sp::training_loss(set, targets, real(0.01));

    const double ly = oracle::elastic_net_naive(pose, truth, {1, 1});
    const double lp = oracle::bce_naive(det_prob, {1, 1}) + oracle::bce_naive(ctx_prob, {1, 1});
    EXPECT_NEAR(loss.report.coord_per_block[0], ly, 1e-12);
    EXPECT_NEAR(loss.report.prob_per_block[0], lp, 1e-12);
    EXPECT_NEAR(loss.report.total, 2 * (ly + 0.01 * lp), 1e-12);
    EXPECT_NEAR(loss.total.item(), loss.report.total, 1e-15);
    EXPECT_EQ(loss.report.coord_per_block.size(), 2u);
}

TEST(TrainingLoss, NoContextOmitsContextTerm) {
    const int NJ = 2;
    std::vector<real> pose = {real(0.3), real(0.4), real(0.7), real(0.2)};
    std::vector<real> det_prob = {real(0.8), real(0.3)};
    sp::PredictionSet set;
    set.blocks.push_back(fake_block(pose, det_prob, {}, NJ, 0));

    std::vector<sp::Pose> truths(1, sp::Pose(NJ));
    truths[0].set(0, real(0.5), real(0.5));
    truths[0].set(1, real(0.7), real(0.2));
    sp::BatchTargets targets = sp::make_targets(truths, 0);
    EXPECT_FALSE(targets.ctx_visibility.defined());

    sp::TrainingLoss loss = sp::training_loss(set, targets, real(0.01));
    EXPECT_NEAR(loss.report.prob_per_block[0], oracle::bce_naive(det_prob, {1, 1}), 1e-12);
}

TEST(TrainingLoss, MakeTargetsTilesVisibilityPerContext) {
    std::vector<sp::Pose> truths(2, sp::Pose(3));
    truths[0].visible = {1, 0, 1};
    truths[1].visible = {0, 1, 1};
    sp::BatchTargets t = sp::make_targets(truths, 2);
    ASSERT_EQ(t.ctx_visibility.shape(), (sp::Shape{2, 6}));
    const std::vector<real> expect = {1, 0, 1, 1, 0, 1, 0, 1, 1, 0, 1, 1};
    for (int64_t i = 0; i < 12; ++i) EXPECT_EQ(t.ctx_visibility.data()[i], expect[static_cast<size_t>(i)]);
    ASSERT_EQ(t.visibility.shape(), (sp::Shape{2, 3}));
    EXPECT_EQ(t.visibility.data()[1], 0);
    EXPECT_EQ(t.xy.shape(), (sp::Shape{2, 3, 2}));
}

TEST(TrainingLoss, GradientFlowsToPoseAndProbabilities) {
    const int NJ = 2, NC = 1;
    sp::Rng rng(205);
    std::vector<sp::Pose> truths(1, sp::Pose(NJ));
    truths[0].set(0, real(0.5), real(0.5));
    truths[0].set(1, real(0.25), real(0.75));
    sp::BatchTargets targets = sp::make_targets(truths, NC);

    auto loss_of = [&](const Tensor& pose, const Tensor& det, const Tensor& ctx) {
        sp::PredictionSet set;
        sp::BlockPrediction bp;
        bp.pose = pose;
        bp.det_prob = det;
        bp.ctx_prob = ctx;
        set.blocks.push_back(bp);
        return sp::training_loss(set, targets).total;
    };

    Tensor pose = Tensor::from({1, NJ, 2}, {real(0.31), real(0.42), real(0.63), real(0.14)});
    Tensor det = Tensor::from({1, NJ}, {real(0.8), real(0.3)});
    Tensor ctx = Tensor::from({1, NJ}, {real(0.6), real(0.45)});
    EXPECT_LT(sp::finite_difference_check(
                  [&](const Tensor& t) { return loss_of(t, det, ctx); }, pose),
              1e-8);
    EXPECT_LT(sp::finite_difference_check(
                  [&](const Tensor& t) { return loss_of(pose, t, ctx); }, det),
              1e-7);
    EXPECT_LT(sp::finite_difference_check(
                  [&](const Tensor& t) { return loss_of(pose, det, t); }, ctx),
              1e-7);
}
