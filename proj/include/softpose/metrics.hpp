#pragma once

// Pose evaluation metrics: PCK (percentage of correct keypoints against a
// reference segment), PCKh (head-normalized PCK) and PCP (percentage of
// correct limb parts).  Distances are measured in pixel space, i.e. both
// predictions and ground truth are scaled by the crop resolution before
// comparison; the metrics are invariant to that resolution because the
// reference lengths scale identically.

#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "softpose/pose.hpp"

namespace softpose {

struct MetricConfig {
    real threshold = real(0.2);               // fraction of the reference length
    std::pair<int, int> normalizer{0, 1};     // joints defining the reference segment
    std::vector<std::pair<int, int>> limbs;   // PCP limb endpoints
    std::vector<std::string> joint_names;     // optional column labels
    std::vector<std::string> limb_names;      // optional column labels
};

struct MetricResult {
    std::vector<std::string> names; // per column
    std::vector<real> scores;       // percentage in [0, 100]; NaN when never counted
    std::vector<int64_t> counted;   // samples contributing per column
    std::vector<int64_t> excluded;  // skipped (invisible / degenerate) per column
    real mean = 0;                  // micro average: total correct / total counted, in percent
};

namespace detail {

inline real joint_dist(const Pose& a, int ja, const Pose& b, int jb, real pixel_scale) {
    const real dx = (a.x(ja) - b.x(jb)) * pixel_scale;
    const real dy = (a.y(ja) - b.y(jb)) * pixel_scale;
    return std::sqrt(dx * dx + dy * dy);
}

inline void check_metric_inputs(const std::vector<Pose>& preds, const std::vector<Pose>& truths) {
    softpose::detail::check(!preds.empty() && preds.size() == truths.size(),
                            "metrics: prediction/truth count mismatch or empty");
    for (size_t i = 0; i < preds.size(); ++i)
        softpose::detail::check(preds[i].n_joints() == truths[i].n_joints(),
                                "metrics: N_J mismatch at sample " + std::to_string(i));
}

inline std::string default_name(const std::string& prefix, int i) {
    return prefix + std::to_string(i);
}

inline MetricResult keypoint_metric(const std::vector<Pose>& preds,
                                    const std::vector<Pose>& truths, const MetricConfig& cfg,
                                    real pixel_scale) {
    check_metric_inputs(preds, truths);
    softpose::detail::check(cfg.threshold > 0, "metrics: threshold must be positive");
    softpose::detail::check(pixel_scale > 0, "metrics: pixel scale must be positive");
    const int nj = truths[0].n_joints();
    const auto [na, nb] = cfg.normalizer;
    softpose::detail::check(na >= 0 && na < nj && nb >= 0 && nb < nj && na != nb,
                            "metrics: normalizer joints out of range");
    std::vector<int64_t> correct(static_cast<size_t>(nj), 0), counted(static_cast<size_t>(nj), 0),
        excluded(static_cast<size_t>(nj), 0);
    for (size_t s = 0; s < truths.size(); ++s) {
        const Pose& t = truths[s];
        softpose::detail::check(t.visible[static_cast<size_t>(na)] &&
                                    t.visible[static_cast<size_t>(nb)],
                                "metrics: normalizer joint invisible in sample " +
                                    std::to_string(s));
        const real ref = cfg.threshold * joint_dist(t, na, t, nb, pixel_scale);
        softpose::detail::check(ref > 0, "metrics: degenerate normalizer segment in sample " +
                                             std::to_string(s));
        for (int j = 0; j < nj; ++j) {
            if (!t.visible[static_cast<size_t>(j)]) {
                ++excluded[static_cast<size_t>(j)];
                continue;
            }
            ++counted[static_cast<size_t>(j)];
            if (joint_dist(preds[s], j, t, j, pixel_scale) <= ref)
                ++correct[static_cast<size_t>(j)];
        }
    }
    MetricResult r;
    int64_t tot_correct = 0, tot_counted = 0;
    for (int j = 0; j < nj; ++j) {
        r.names.push_back(j < static_cast<int>(cfg.joint_names.size())
                              ? cfg.joint_names[static_cast<size_t>(j)]
                              : default_name("joint_", j));
        const int64_t c = counted[static_cast<size_t>(j)];
        r.scores.push_back(c > 0 ? real(100) * static_cast<real>(correct[static_cast<size_t>(j)]) /
                                       static_cast<real>(c)
                                 : std::nan(""));
        r.counted.push_back(c);
        r.excluded.push_back(excluded[static_cast<size_t>(j)]);
        tot_correct += correct[static_cast<size_t>(j)];
        tot_counted += c;
    }
    softpose::detail::check(tot_counted > 0, "metrics: no visible joints to evaluate");
    r.mean = real(100) * static_cast<real>(tot_correct) / static_cast<real>(tot_counted);
    return r;
}

} // namespace detail

/// PCK: joint correct when its distance to ground truth is within
/// threshold * |normalizer segment| of the same sample.  Invisible ground
/// truth joints are excluded from both numerator and denominator.
inline MetricResult pck(const std::vector<Pose>& preds, const std::vector<Pose>& truths,
                        const MetricConfig& cfg, real pixel_scale = 1) {
    return detail::keypoint_metric(preds, truths, cfg, pixel_scale);
}

/// PCKh: PCK with the head segment as normalizer (threshold conventionally
/// 0.5).  The head joints are supplied through cfg.normalizer.
inline MetricResult pckh(const std::vector<Pose>& preds, const std::vector<Pose>& truths,
                         MetricConfig cfg, real pixel_scale = 1) {
    if (cfg.threshold == real(0.2)) cfg.threshold = real(0.5);
    return detail::keypoint_metric(preds, truths, cfg, pixel_scale);
}

/// PCP: a limb is correct when both endpoints lie within
/// threshold * limb_length (ground truth) of their true locations.  Limbs
/// with an invisible endpoint are skipped; degenerate (zero-length) limbs
/// are excluded and reported through MetricResult::excluded.
inline MetricResult pcp(const std::vector<Pose>& preds, const std::vector<Pose>& truths,
                        const MetricConfig& cfg, real pixel_scale = 1) {
    detail::check_metric_inputs(preds, truths);
    softpose::detail::check(!cfg.limbs.empty(), "pcp: no limbs configured");
    softpose::detail::check(cfg.threshold > 0, "pcp: threshold must be positive");
    const int nj = truths[0].n_joints();
    const int nl = static_cast<int>(cfg.limbs.size());
    for (const auto& [a, b] : cfg.limbs)
        softpose::detail::check(a >= 0 && a < nj && b >= 0 && b < nj && a != b,
                                "pcp: limb joints out of range");
    std::vector<int64_t> correct(static_cast<size_t>(nl), 0), counted(static_cast<size_t>(nl), 0),
        excluded(static_cast<size_t>(nl), 0);
    for (size_t s = 0; s < truths.size(); ++s) {
        const Pose& t = truths[s];
        for (int l = 0; l < nl; ++l) {
            const auto [a, b] = cfg.limbs[static_cast<size_t>(l)];
            const real len = detail::joint_dist(t, a, t, b, pixel_scale);
            if (!t.visible[static_cast<size_t>(a)] || !t.visible[static_cast<size_t>(b)] ||
                len <= 0) {
                ++excluded[static_cast<size_t>(l)];
                continue;
            }
            ++counted[static_cast<size_t>(l)];
            const real ref = cfg.threshold * len;
            if (detail::joint_dist(preds[s], a, t, a, pixel_scale) <= ref &&
                detail::joint_dist(preds[s], b, t, b, pixel_scale) <= ref)
                ++correct[static_cast<size_t>(l)];
        }
    }
    MetricResult r;
    int64_t tot_correct = 0, tot_counted = 0;
    for (int l = 0; l < nl; ++l) {
        r.names.push_back(l < static_cast<int>(cfg.limb_names.size())
                              ? cfg.limb_names[static_cast<size_t>(l)]
                              : detail::default_name("limb_", l));
        const int64_t c = counted[static_cast<size_t>(l)];
        r.scores.push_back(c > 0 ? real(100) * static_cast<real>(correct[static_cast<size_t>(l)]) /
                                       static_cast<real>(c)
                                 : std::nan(""));
        r.counted.push_back(c);
        r.excluded.push_back(excluded[static_cast<size_t>(l)]);
        tot_correct += correct[static_cast<size_t>(l)];
        tot_counted += c;
    }
    softpose::detail::check(tot_counted > 0, "pcp: no measurable limbs");
    r.mean = real(100) * static_cast<real>(tot_correct) / static_cast<real>(tot_counted);
    return r;
}

/// Two-line CSV table: header with column names plus a final "Mean" column,
/// then the scores rendered with one decimal place.
inline std::string to_csv(const MetricResult& r, const std::string& label = "metric") {
    std::string head = label, row;
    for (const std::string& n : r.names) head += "," + n;
    head += ",Mean";
    char buf[64];
    for (real s : r.scores) {
        std::snprintf(buf, sizeof(buf), ",%.1f", static_cast<double>(s));
        row += buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.1f", static_cast<double>(r.mean));
    row += buf;
    return head + "\nscore" + row + "\n";
}

} // namespace softpose
