#pragma once

// Full network: Stem followed by K prediction blocks (Block-A + Block-B),
// soft-argmax regression on every heat map, and batched detection/context
// aggregation.

#include <string>
#include <vector>

#include "softpose/blocks.hpp"
#include "softpose/pose.hpp"
#include "softpose/softargmax.hpp"

namespace softpose {

struct ModelConfig {
    int K = 8;            // prediction blocks
    int n_joints = 16;    // N_J
    int n_context = 2;    // N_c context maps per joint
    real alpha = real(0.8);
    int input_size = 256;
    int base_resolution = 32; // heat-map resolution (input_size / 8)
    real width_multiplier = 1;
    int num_resolutions = 3; // hourglass depth in Block-A
    int growth = 0;
    bool batch_norm = true;
    uint64_t seed = 1;

    void validate() const {
        detail::check(K >= 1, "ModelConfig: K must be >= 1");
        detail::check(n_joints >= 1, "ModelConfig: n_joints must be >= 1");
        detail::check(n_context >= 0, "ModelConfig: n_context must be >= 0");
        detail::check(alpha >= 0 && alpha <= 1, "ModelConfig: alpha must lie in [0,1]");
        detail::check(input_size == base_resolution * 8,
                      "ModelConfig: input_size must be 8 * base_resolution (stem geometry)");
        detail::check(base_resolution % (1 << (num_resolutions - 1)) == 0,
                      "ModelConfig: base_resolution not divisible for num_resolutions");
    }

    int heat_channels() const { return n_joints * (1 + n_context); }
};

/// Batched detection/context aggregation.
///   det_pose  : B x N_J x 2
///   ctx_pose  : B x (N_c*N_J) x 2, context c of joint j at index c*N_J + j
///   ctx_prob  : B x (N_c*N_J)
/// Output B x N_J x 2.  Weights are normalized per joint (w_i = p_i / T), and
/// joints with T < 1e-8 (or N_c = 0) fall back to the detection estimate.
inline Tensor context_aggregate(const Tensor& det_pose, const Tensor& ctx_pose,
                                const Tensor& ctx_prob, real alpha, int n_joints,
                                int n_context) {
    detail::check(det_pose.rank() == 3 && det_pose.dim(1) == n_joints && det_pose.dim(2) == 2,
                  "context_aggregate: det_pose must be B x N_J x 2");
    if (n_context == 0) return det_pose;
    const int B = det_pose.dim(0);
    const int nc = n_context * n_joints;
    detail::check(ctx_pose.rank() == 3 && ctx_pose.dim(0) == B && ctx_pose.dim(1) == nc &&
                      ctx_pose.dim(2) == 2,
                  "context_aggregate: ctx_pose must be B x (N_c*N_J) x 2");
    detail::check(ctx_prob.rank() == 2 && ctx_prob.dim(0) == B && ctx_prob.dim(1) == nc,
                  "context_aggregate: ctx_prob must be B x (N_c*N_J)");

    const real eps = real(1e-8);
    std::vector<real> out(static_cast<size_t>(B) * n_joints * 2);
    for (int b = 0; b < B; ++b)
        for (int j = 0; j < n_joints; ++j) {
            const size_t o = (static_cast<size_t>(b) * n_joints + j) * 2;
            real total = 0;
            for (int c = 0; c < n_context; ++c)
                total += ctx_prob.data()[static_cast<size_t>(b) * nc + c * n_joints + j];
            if (total < eps) {
                out[o] = det_pose.data()[o];
                out[o + 1] = det_pose.data()[o + 1];
                continue;
            }
            real cx = 0, cy = 0;
            for (int c = 0; c < n_context; ++c) {
                const size_t ci = static_cast<size_t>(b) * nc + c * n_joints + j;
                const real w = ctx_prob.data()[ci] / total;
                cx += w * ctx_pose.data()[ci * 2];
                cy += w * ctx_pose.data()[ci * 2 + 1];
            }
            out[o] = alpha * det_pose.data()[o] + (1 - alpha) * cx;
            out[o + 1] = alpha * det_pose.data()[o + 1] + (1 - alpha) * cy;
        }

    auto dn = det_pose.node();
    auto cn = ctx_pose.node();
    auto pn = ctx_prob.node();
    auto backward = [=](TapeNode& node) {
        for (int b = 0; b < B; ++b)
            for (int j = 0; j < n_joints; ++j) {
                const size_t o = (static_cast<size_t>(b) * n_joints + j) * 2;
                const real gx = node.grad[o], gy = node.grad[o + 1];
                real total = 0;
                for (int c = 0; c < n_context; ++c)
                    total += pn->value[static_cast<size_t>(b) * nc + c * n_joints + j];
                if (total < eps) {
                    if (dn->requires_grad) {
                        dn->ensure_grad();
                        dn->grad[o] += gx;
                        dn->grad[o + 1] += gy;
                    }
                    continue;
                }
                if (dn->requires_grad) {
                    dn->ensure_grad();
                    dn->grad[o] += alpha * gx;
                    dn->grad[o + 1] += alpha * gy;
                }
                real cx = 0, cy = 0;
                for (int c = 0; c < n_context; ++c) {
                    const size_t ci = static_cast<size_t>(b) * nc + c * n_joints + j;
                    const real w = pn->value[ci] / total;
                    cx += w * cn->value[ci * 2];
                    cy += w * cn->value[ci * 2 + 1];
                }
                for (int c = 0; c < n_context; ++c) {
                    const size_t ci = static_cast<size_t>(b) * nc + c * n_joints + j;
                    const real w = pn->value[ci] / total;
                    if (cn->requires_grad) {
                        cn->ensure_grad();
                        cn->grad[ci * 2] += (1 - alpha) * w * gx;
                        cn->grad[ci * 2 + 1] += (1 - alpha) * w * gy;
                    }
                    if (pn->requires_grad) {
                        pn->ensure_grad();
                        pn->grad[ci] += (1 - alpha) *
                                        (gx * (cn->value[ci * 2] - cx) +
                                         gy * (cn->value[ci * 2 + 1] - cy)) /
                                        total;
                    }
                }
            }
    };
    return detail::make_result("context_aggregate", {B, n_joints, 2}, std::move(out),
                               {det_pose, ctx_pose, ctx_prob}, std::move(backward));
}

/// Regression outputs of one prediction block (all tensors batched).
struct BlockPrediction {
    HeatMapSet maps;
    Tensor det_pose; // B x N_J x 2
    Tensor det_prob; // B x N_J
    Tensor ctx_pose; // B x (N_c*N_J) x 2 (undefined when N_c = 0)
    Tensor ctx_prob; // B x (N_c*N_J)
    Tensor pose;     // B x N_J x 2 aggregated
};

struct PredictionSet {
    std::vector<BlockPrediction> blocks; // length K
    const BlockPrediction& final_block() const { return blocks.back(); }
};

class PoseModel {
  public:
    explicit PoseModel(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(cfg_.seed);
        stem_ = Stem("stem", cfg_.width_multiplier, cfg_.batch_norm, rng);
        const int c = stem_.out_channels();
        for (int k = 0; k < cfg_.K; ++k) {
            const std::string base = "block" + std::to_string(k);
            BlockConfig bc;
            bc.channels_in = c;
            bc.channels_out = c;
            bc.num_resolutions = cfg_.num_resolutions;
            bc.base_resolution = cfg_.base_resolution;
            bc.growth = cfg_.growth;
            bc.batch_norm = cfg_.batch_norm;
            block_a_.emplace_back(base + ".a", bc, rng);
            block_b_.emplace_back(base + ".b", c, cfg_.n_joints, cfg_.n_context,
                                  cfg_.batch_norm, rng);
        }
        stem_.collect(params_, buffers_);
        for (int k = 0; k < cfg_.K; ++k) {
            block_a_[static_cast<size_t>(k)].collect(params_, buffers_);
            block_b_[static_cast<size_t>(k)].collect(params_, buffers_);
        }
    }

    const ModelConfig& config() const { return cfg_; }
    ParamList& parameters() { return params_; }
    ParamList& buffers() { return buffers_; }

    int64_t parameter_count() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p.tensor.size();
        return n;
    }

    /// Closed-form parameter count; must equal parameter_count() exactly.
    static int64_t expected_param_count(const ModelConfig& cfg) {
        const int c = Stem::widths(cfg.width_multiplier).w3;
        BlockConfig bc;
        bc.channels_in = c;
        bc.channels_out = c;
        bc.num_resolutions = cfg.num_resolutions;
        bc.base_resolution = cfg.base_resolution;
        bc.growth = cfg.growth;
        bc.batch_norm = cfg.batch_norm;
        return Stem::param_count(cfg.width_multiplier, cfg.batch_norm) +
               cfg.K * (BlockA::param_count(bc) +
                        BlockB::param_count(c, cfg.n_joints, cfg.n_context, cfg.batch_norm));
    }

    PredictionSet forward(const Tensor& images, bool training) {
        detail::check(images.rank() == 4 && images.dim(1) == 3 &&
                          images.dim(2) == cfg_.input_size && images.dim(3) == cfg_.input_size,
                      "forward: expected B x 3 x S x S input with S = input_size");
        PredictionSet set;
        Tensor feat = stem_(images, training);
        for (int k = 0; k < cfg_.K; ++k) {
            feat = block_a_[static_cast<size_t>(k)](feat, training);
            auto [maps, next] = block_b_[static_cast<size_t>(k)](feat, training);
            feat = next;

            BlockPrediction bp;
            bp.maps = maps;
            bp.det_pose = soft_argmax(maps.detection);
            bp.det_prob = joint_probability(maps.detection);
            if (cfg_.n_context > 0) {
                bp.ctx_pose = soft_argmax(maps.context);
                bp.ctx_prob = joint_probability(maps.context);
                bp.pose = context_aggregate(bp.det_pose, bp.ctx_pose, bp.ctx_prob, cfg_.alpha,
                                            cfg_.n_joints, cfg_.n_context);
            } else {
                bp.pose = bp.det_pose;
            }
            set.blocks.push_back(std::move(bp));
        }
        return set;
    }

    /// Final-block pose of batch item b (inference values).
    static Pose extract_pose(const PredictionSet& set, int b) {
        const BlockPrediction& bp = set.final_block();
        const int nj = bp.det_prob.dim(1);
        Pose pose(nj);
        for (int j = 0; j < nj; ++j) {
            const size_t o = (static_cast<size_t>(b) * nj + j) * 2;
            pose.set(j, bp.pose.data()[o], bp.pose.data()[o + 1]);
            pose.prob[static_cast<size_t>(j)] =
                bp.det_prob.data()[static_cast<size_t>(b) * nj + j];
        }
        return pose;
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

  private:
    ModelConfig cfg_;
    Stem stem_;
    std::vector<BlockA> block_a_;
    std::vector<BlockB> block_b_;
    ParamList params_, buffers_;
};

/// Inference wrapper: single image (3 x S x S or 1 x 3 x S x S) to final pose.
inline Pose predict(PoseModel& model, const Tensor& image) {
    Tensor batch = image;
    if (image.rank() == 3)
        batch = reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});
    PredictionSet set = model.forward(batch, /*training=*/false);
    return PoseModel::extract_pose(set, 0);
}

} // namespace softpose
