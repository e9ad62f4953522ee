#pragma once

// Pose containers and the detection/context aggregation rule.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "softpose/common.hpp"

namespace softpose {

/// One person's joints in normalized crop coordinates (top-left (0,0)).
struct Pose {
    std::vector<real> xy;          // 2*N_J, interleaved x,y
    std::vector<real> prob;        // N_J presence probabilities
    std::vector<uint8_t> visible;  // N_J ground-truth visibility flags

    Pose() = default;
    explicit Pose(int n_joints)
        : xy(static_cast<size_t>(n_joints) * 2, real(0)),
          prob(static_cast<size_t>(n_joints), real(1)),
          visible(static_cast<size_t>(n_joints), 1) {}

    int n_joints() const { return static_cast<int>(prob.size()); }
    real x(int j) const { return xy[static_cast<size_t>(j) * 2]; }
    real y(int j) const { return xy[static_cast<size_t>(j) * 2 + 1]; }
    void set(int j, real px, real py) {
        xy[static_cast<size_t>(j) * 2] = px;
        xy[static_cast<size_t>(j) * 2 + 1] = py;
    }
};

/// Aggregate one joint's detection estimate with its context estimates:
///   y = alpha * y_d + (1 - alpha) * sum_i w_i y_i,   w_i = p_i / sum p.
/// Total function: with no contexts or sum p below 1e-8 it returns y_d.
///
/// The weights are normalized before use (rather than dividing the weighted
/// sum once at the end) so the single-context case reduces to w = p/p = 1 and
/// the alpha = 0 identity holds exactly; final clamps pin the result inside
/// the convex hull of its operands, guarding the containment property against
/// last-ulp rounding.
inline std::array<real, 2> aggregate(const std::array<real, 2>& y_d,
                                     const std::vector<real>& p_c,
                                     const std::vector<std::array<real, 2>>& y_c,
                                     real alpha) {
    detail::check(p_c.size() == y_c.size(), "aggregate: probability/location count mismatch");
    real total = 0;
    for (real p : p_c) total += p;
    if (p_c.empty() || total < real(1e-8)) return y_d;

    std::array<real, 2> ctx = {0, 0};
    std::array<real, 2> lo = y_c[0], hi = y_c[0];
    for (size_t i = 0; i < p_c.size(); ++i) {
        const real w = p_c[i] / total;
        for (int d = 0; d < 2; ++d) {
            ctx[static_cast<size_t>(d)] += w * y_c[i][static_cast<size_t>(d)];
            lo[static_cast<size_t>(d)] = std::min(lo[static_cast<size_t>(d)],
                                                  y_c[i][static_cast<size_t>(d)]);
            hi[static_cast<size_t>(d)] = std::max(hi[static_cast<size_t>(d)],
                                                  y_c[i][static_cast<size_t>(d)]);
        }
    }
    std::array<real, 2> out;
    for (int d = 0; d < 2; ++d) {
        auto ud = static_cast<size_t>(d);
        ctx[ud] = std::min(std::max(ctx[ud], lo[ud]), hi[ud]);
        real v = alpha * y_d[ud] + (1 - alpha) * ctx[ud];
        const real vlo = std::min(y_d[ud], ctx[ud]);
        const real vhi = std::max(y_d[ud], ctx[ud]);
        out[ud] = std::min(std::max(v, vlo), vhi);
    }
    return out;
}

} // namespace softpose
