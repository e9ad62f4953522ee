#pragma once

// Training losses: elastic-net coordinate loss, binary cross-entropy on
// joint probabilities, and the per-block training loss with intermediate
// supervision.  The differentiable versions are composed from tensor
// primitives; scalar overloads exist for evaluation code and tests.

#include <vector>

#include "softpose/model.hpp"
#include "softpose/pose.hpp"
#include "softpose/tensor.hpp"

namespace softpose {

/// Elastic-net coordinate loss, batched:
///   per sample (1/N_J) * sum_j mask_j * (|dx|+|dy| + dx^2+dy^2),
/// then averaged over the batch.  pred/truth B x N_J x 2, mask B x N_J.
inline Tensor elastic_net_loss(const Tensor& pred, const Tensor& truth, const Tensor& mask) {
    detail::check(pred.shape() == truth.shape() && pred.rank() == 3 && pred.dim(2) == 2,
                  "elastic_net_loss: pred/truth must be B x N_J x 2");
    detail::check(mask.rank() == 2 && mask.dim(0) == pred.dim(0) && mask.dim(1) == pred.dim(1),
                  "elastic_net_loss: mask must be B x N_J");
    const int nj = pred.dim(1);
    Tensor d = sub(pred, truth);
    Tensor per_joint = reduce_sum(add(abs(d), mul(d, d)), {2}); // B x N_J
    Tensor per_sample = reduce_sum(mul(per_joint, mask), {1});  // B
    return reduce_mean(scale(per_sample, real(1) / static_cast<real>(nj)));
}

/// Scalar convenience form over Pose pairs (mask = truth visibility).
inline real elastic_net_loss(const Pose& pred, const Pose& truth) {
    detail::check(pred.n_joints() == truth.n_joints(), "elastic_net_loss: N_J mismatch");
    const int nj = truth.n_joints();
    std::vector<real> m(static_cast<size_t>(nj));
    for (int j = 0; j < nj; ++j) m[static_cast<size_t>(j)] = truth.visible[static_cast<size_t>(j)];
    Tensor p = Tensor::from({1, nj, 2}, pred.xy);
    Tensor t = Tensor::from({1, nj, 2}, truth.xy);
    return elastic_net_loss(p, t, Tensor::from({1, nj}, m)).item();
}

/// Binary cross-entropy in the printed sign convention,
///   (1/N) * sum_n [(p_n - 1) * log(1 - q_n) - p_n * log(q_n)],
/// with predictions clamped to [1e-7, 1 - 1e-7]; mean over every element.
inline Tensor bce_loss(const Tensor& pred_probs, const Tensor& truth_probs) {
    detail::check(pred_probs.shape() == truth_probs.shape(), "bce_loss: shape mismatch");
    Tensor one = Tensor::scalar(1);
    Tensor q = clamp(pred_probs, real(1e-7), real(1) - real(1e-7));
    Tensor elem = sub(mul(sub(truth_probs, one), log(sub(one, q))), mul(truth_probs, log(q)));
    return reduce_mean(elem);
}

inline real bce_loss(const std::vector<real>& pred_probs, const std::vector<real>& truth_probs) {
    const int n = static_cast<int>(pred_probs.size());
    return bce_loss(Tensor::from({n}, pred_probs), Tensor::from({n}, truth_probs)).item();
}

struct LossReport {
    real coordinate_loss = 0;  // sum over blocks
    real probability_loss = 0; // sum over blocks
    real total = 0;            // sum_k (coord_k + lambda_p * prob_k)
    std::vector<real> coord_per_block;
    std::vector<real> prob_per_block;
};

struct TrainingLoss {
    Tensor total; // scalar, differentiable
    LossReport report;
};

/// Ground truth of one batch as constant tensors.
struct BatchTargets {
    Tensor xy;         // B x N_J x 2
    Tensor visibility; // B x N_J (0/1 reals)
    Tensor ctx_visibility; // B x (N_c*N_J), visibility tiled per context slot
};

inline BatchTargets make_targets(const std::vector<Pose>& truths, int n_context) {
    const int b = static_cast<int>(truths.size());
    detail::check(b > 0, "make_targets: empty batch");
    const int nj = truths[0].n_joints();
    std::vector<real> xy, vis, cvis;
    xy.reserve(static_cast<size_t>(b) * nj * 2);
    vis.reserve(static_cast<size_t>(b) * nj);
    for (const Pose& p : truths) {
        detail::check(p.n_joints() == nj, "make_targets: inconsistent N_J");
        xy.insert(xy.end(), p.xy.begin(), p.xy.end());
        for (int j = 0; j < nj; ++j) vis.push_back(p.visible[static_cast<size_t>(j)] ? 1 : 0);
    }
    BatchTargets t;
    t.xy = Tensor::from({b, nj, 2}, std::move(xy));
    t.visibility = Tensor::from({b, nj}, vis);
    if (n_context > 0) {
        cvis.reserve(vis.size() * static_cast<size_t>(n_context));
        for (int i = 0; i < b; ++i)
            for (int c = 0; c < n_context; ++c)
                cvis.insert(cvis.end(), vis.begin() + static_cast<int64_t>(i) * nj,
                            vis.begin() + static_cast<int64_t>(i + 1) * nj);
        t.ctx_visibility = Tensor::from({b, n_context * nj}, std::move(cvis));
    }
    return t;
}

/// Intermediate supervision: elastic-net loss on the aggregated pose and BCE
/// on detection probabilities at every block; context probabilities receive
/// the same BCE against the same visibility targets.  total = sum_k (L_y^k +
/// lambda_p * L_p^k).
inline TrainingLoss training_loss(const PredictionSet& set, const BatchTargets& targets,
                                  real lambda_p = real(0.01)) {
    detail::check(!set.blocks.empty(), "training_loss: empty prediction set");
    TrainingLoss out;
    Tensor total = Tensor::scalar(0);
    for (const BlockPrediction& bp : set.blocks) {
        Tensor ly = elastic_net_loss(bp.pose, targets.xy, targets.visibility);
        Tensor lp = bce_loss(bp.det_prob, targets.visibility);
        if (bp.ctx_prob.defined())
            lp = add(lp, bce_loss(bp.ctx_prob, targets.ctx_visibility));
        total = add(total, add(ly, scale(lp, lambda_p)));
        out.report.coord_per_block.push_back(ly.item());
        out.report.prob_per_block.push_back(lp.item());
        out.report.coordinate_loss += ly.item();
        out.report.probability_loss += lp.item();
    }
    out.total = total;
    out.report.total = total.item();
    return out;
}

} // namespace softpose
