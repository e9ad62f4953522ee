#pragma once

// Spatial softmax, normalized-ramp soft-argmax with exact-Jacobian backward,
// and the joint-probability head.
//
// The soft-argmax here is the expectation of normalized ramp coordinates
// under the spatial softmax of a heat map.  The same result is obtainable as
// a fixed-weight convolution over the softmax output; both realizations
// accumulate their weighted sums in row-major plane order, so they agree
// bit-for-bit (tests rely on this).
//
// Backward uses the exact softmax Jacobian including cross-terms:
//   d h_ij = phi_ij * (w~_ij - sum_kl w~_kl * phi_kl),  w~ = gx*wx + gy*wy.

#include <map>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

#include "softpose/tensor.hpp"

namespace softpose {

/// Normalized 2D ramps over an H x W grid, stored row-major.
/// wx[r][c] = (c+1)/W and wy[r][c] = (r+1)/H, so values lie in (0,1] and the
/// last column / last row are exactly 1.
struct RampWeights {
    int height = 0, width = 0;
    std::vector<real> wx, wy;

    RampWeights(int h, int w) : height(h), width(w) {
        detail::check(h >= 1 && w >= 1, "RampWeights: dimensions must be positive");
        wx.resize(static_cast<size_t>(h) * w);
        wy.resize(static_cast<size_t>(h) * w);
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                wx[static_cast<size_t>(r) * w + c] = real(c + 1) / real(w);
                wy[static_cast<size_t>(r) * w + c] = real(r + 1) / real(h);
            }
    }

    /// Shared cache; heat-map geometry repeats across every block and batch.
    static const RampWeights& get(int h, int w) {
        static std::map<std::pair<int, int>, std::unique_ptr<RampWeights>> cache;
        static std::mutex mu;
        std::lock_guard<std::mutex> lock(mu);
        auto& slot = cache[{h, w}];
        if (!slot) slot = std::make_unique<RampWeights>(h, w);
        return *slot;
    }

    /// Ramps as a 2 x 1 x H x W kernel (channel 0 = wx, channel 1 = wy), for
    /// the fixed-weight-convolution realization of soft-argmax.
    Tensor as_conv_kernel() const {
        std::vector<real> k;
        k.reserve(wx.size() * 2);
        k.insert(k.end(), wx.begin(), wx.end());
        k.insert(k.end(), wy.begin(), wy.end());
        return Tensor::from({2, 1, height, width}, k);
    }
};

namespace detail {

/// Stable softmax of one plane in row-major order; both spatial_softmax and
/// the fused soft_argmax call this so their outputs are bit-identical.
inline void softmax_plane(const real* x, real* out, int64_t hw) {
    real m = x[0];
    for (int64_t i = 1; i < hw; ++i)
        if (x[i] > m) m = x[i];
    real s = 0;
    for (int64_t i = 0; i < hw; ++i) {
        out[i] = std::exp(x[i] - m);
        s += out[i];
    }
    for (int64_t i = 0; i < hw; ++i) out[i] /= s;
}

/// Planes = product of all dims except the trailing two (H, W).
inline int64_t plane_count(const Shape& s) {
    detail::check(s.size() >= 2, "expected a tensor with trailing H x W axes");
    int64_t n = 1;
    for (size_t i = 0; i + 2 < s.size(); ++i) n *= s[i];
    return n;
}

} // namespace detail

/// Softmax over the trailing two (spatial) axes of each plane, computed with
/// max subtraction.  Each plane of the output is positive and sums to 1.
inline Tensor spatial_softmax(const Tensor& h) {
    const Shape& s = h.shape();
    const int64_t planes = detail::plane_count(s);
    const int64_t hw = static_cast<int64_t>(s[s.size() - 2]) * s[s.size() - 1];
    std::vector<real> out(h.size());
    for (int64_t p = 0; p < planes; ++p)
        detail::softmax_plane(h.data() + p * hw, out.data() + p * hw, hw);

    auto xn = h.node();
    auto phi = std::make_shared<std::vector<real>>(out);
    return detail::make_result(
        "spatial_softmax", s, std::move(out), {h}, [xn, phi, planes, hw](TapeNode& node) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int64_t p = 0; p < planes; ++p) {
                const real* g = node.grad.data() + p * hw;
                const real* f = phi->data() + p * hw;
                real dot = 0;
                for (int64_t i = 0; i < hw; ++i) dot += g[i] * f[i];
                real* dx = xn->grad.data() + p * hw;
                for (int64_t i = 0; i < hw; ++i) dx[i] += f[i] * (g[i] - dot);
            }
        });
}

/// Soft-argmax over the trailing two axes: for each plane returns the
/// ramp-weighted average (x, y) of its spatial softmax, each in (0,1].
/// Shape: leading dims + [2]; a bare H x W map yields shape [2].
inline Tensor soft_argmax(const Tensor& h) {
    const Shape& s = h.shape();
    const int64_t planes = detail::plane_count(s);
    const int H = s[s.size() - 2], W = s[s.size() - 1];
    const int64_t hw = static_cast<int64_t>(H) * W;
    const RampWeights& ramp = RampWeights::get(H, W);

    auto phi = std::make_shared<std::vector<real>>(h.size());
    std::vector<real> out(static_cast<size_t>(planes) * 2);
    for (int64_t p = 0; p < planes; ++p) {
        real* f = phi->data() + p * hw;
        detail::softmax_plane(h.data() + p * hw, f, hw);
        real xv = 0, yv = 0;
        for (int64_t i = 0; i < hw; ++i) xv += f[i] * ramp.wx[static_cast<size_t>(i)];
        for (int64_t i = 0; i < hw; ++i) yv += f[i] * ramp.wy[static_cast<size_t>(i)];
        out[static_cast<size_t>(p) * 2] = xv;
        out[static_cast<size_t>(p) * 2 + 1] = yv;
    }

    Shape out_shape(s.begin(), s.end() - 2);
    out_shape.push_back(2);
    auto xn = h.node();
    return detail::make_result(
        "soft_argmax", out_shape, std::move(out), {h},
        [xn, phi, planes, hw, H, W](TapeNode& node) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const RampWeights& ramp = RampWeights::get(H, W);
            for (int64_t p = 0; p < planes; ++p) {
                const real gx = node.grad[static_cast<size_t>(p) * 2];
                const real gy = node.grad[static_cast<size_t>(p) * 2 + 1];
                const real* f = phi->data() + p * hw;
                real dot = 0;
                for (int64_t i = 0; i < hw; ++i)
                    dot += (gx * ramp.wx[static_cast<size_t>(i)] +
                            gy * ramp.wy[static_cast<size_t>(i)]) *
                           f[i];
                real* dx = xn->grad.data() + p * hw;
                for (int64_t i = 0; i < hw; ++i)
                    dx[i] += f[i] * (gx * ramp.wx[static_cast<size_t>(i)] +
                                     gy * ramp.wy[static_cast<size_t>(i)] - dot);
            }
        });
}

/// Closed-form gradient of gx*Psi_x(h) + gy*Psi_y(h) for a single H x W map;
/// same arithmetic as the fused op's backward (exact softmax Jacobian).
inline Tensor soft_argmax_backward(const Tensor& h, real gx, real gy) {
    detail::check(h.rank() == 2, "soft_argmax_backward: expected an H x W map");
    const int H = h.dim(0), W = h.dim(1);
    const int64_t hw = static_cast<int64_t>(H) * W;
    const RampWeights& ramp = RampWeights::get(H, W);
    std::vector<real> phi(static_cast<size_t>(hw));
    detail::softmax_plane(h.data(), phi.data(), hw);
    real dot = 0;
    for (int64_t i = 0; i < hw; ++i)
        dot += (gx * ramp.wx[static_cast<size_t>(i)] + gy * ramp.wy[static_cast<size_t>(i)]) *
               phi[static_cast<size_t>(i)];
    std::vector<real> dh(static_cast<size_t>(hw));
    for (int64_t i = 0; i < hw; ++i)
        dh[static_cast<size_t>(i)] =
            phi[static_cast<size_t>(i)] *
            (gx * ramp.wx[static_cast<size_t>(i)] + gy * ramp.wy[static_cast<size_t>(i)] - dot);
    return Tensor::from({H, W}, dh);
}

/// Joint presence probability: sigmoid of the global max of the pre-softmax
/// map, per plane.  Composed from primitives so the max tie-break rule and
/// gradients come from the tensor core.
inline Tensor joint_probability(const Tensor& h) {
    const Shape& s = h.shape();
    detail::check(s.size() >= 2, "joint_probability: expected trailing H x W axes");
    const int a = static_cast<int>(s.size());
    return sigmoid(reduce_max(h, {a - 2, a - 1}));
}

} // namespace softpose
