#pragma once

// The full finite-difference gradient suite: one named case per
// differentiable operation (tensor core, convolutions, soft-argmax stack,
// layers, blocks, losses, aggregation) plus a small end-to-end model case.
// Each case samples `instances` random problem instances and reports the
// worst relative error between analytic and central-difference gradients.

#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "softpose/blocks.hpp"
#include "softpose/gradcheck.hpp"
#include "softpose/losses.hpp"
#include "softpose/model.hpp"

namespace softpose {
namespace gradsuite {

inline constexpr real kOpTolerance = real(1e-5);
inline constexpr real kEndToEndTolerance = real(1e-4);

namespace detail {

using softpose::detail::check;

inline Tensor uniform(Rng& rng, Shape shape, real lo, real hi) {
    Tensor t = Tensor::zeros(shape);
    for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

/// Values with |v| in [margin, margin + span]: keeps relu/abs kinks farther
/// than any finite-difference step from every sample point.
inline Tensor signed_away_from_zero(Rng& rng, Shape shape, real margin = real(0.05),
                                    real span = real(0.95)) {
    Tensor t = Tensor::zeros(shape);
    for (int64_t i = 0; i < t.size(); ++i) {
        const real mag = margin + rng.uniform(0, span);
        t.data()[i] = rng.uniform() < real(0.5) ? -mag : mag;
    }
    return t;
}

/// A shuffled arithmetic grid: all pairwise gaps >= step, so max-style ops
/// keep their argmax under finite-difference perturbations.
inline Tensor separated(Rng& rng, Shape shape, real step = real(0.013)) {
    Tensor t = Tensor::zeros(shape);
    std::vector<int64_t> order(static_cast<size_t>(t.size()));
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    const real base = rng.uniform(-1, 0);
    for (int64_t i = 0; i < t.size(); ++i)
        t.data()[i] = base + step * static_cast<real>(order[static_cast<size_t>(i)]);
    return t;
}

/// Random cotangent: reduces a tensor-valued op to the scalar the checker
/// needs while still probing the full Jacobian.
inline Tensor cotangent(Rng& rng, const Shape& shape) {
    Tensor w = Tensor::zeros(shape);
    for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1, 1);
    return w;
}

inline Tensor dot(const Tensor& value, const Tensor& w) { return reduce_sum(mul(value, w)); }

/// Worst error over `instances` independently seeded instances.
inline real worst_of(int instances, uint64_t seed,
                     const std::function<real(Rng&)>& one_instance) {
    real worst = 0;
    for (int i = 0; i < instances; ++i) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(i), 0xC4));
        worst = std::max(worst, one_instance(rng));
    }
    return worst;
}

} // namespace detail

/// Build the whole suite.  `seed` fixes every random instance.
inline std::vector<GradCheckCase> build_suite(int instances = 20, uint64_t seed = 811) {
    namespace d = detail;
    std::vector<GradCheckCase> cases;
    uint64_t stream = 0;
    auto add_case = [&](const std::string& name, real tol, std::function<real(Rng&)> fn) {
        const uint64_t case_seed = derive_seed(seed, ++stream, 0x5D);
        cases.push_back(
            {name, tol, [=]() { return d::worst_of(instances, case_seed, fn); }});
    };
    const Shape s34 = {3, 4};
    const Shape s234 = {2, 3, 4};

    // --- tensor core -------------------------------------------------------
    add_case("tensor.add", kOpTolerance, [=](Rng& rng) {
        const Tensor b = d::uniform(rng, s234, -1, 1), w = d::cotangent(rng, s234);
        return finite_difference_check(
            [&](const Tensor& x) { return d::dot(add(x, b), w); }, d::uniform(rng, s234, -1, 1));
    });
    add_case("tensor.sub", kOpTolerance, [=](Rng& rng) {
        const Tensor b = d::uniform(rng, s234, -1, 1), w = d::cotangent(rng, s234);
        return finite_difference_check(
            [&](const Tensor& x) { return d::dot(sub(x, b), w); }, d::uniform(rng, s234, -1, 1));
    });
    add_case("tensor.mul", kOpTolerance, [=](Rng& rng) {
        const Tensor b = d::uniform(rng, s234, -1, 1), w = d::cotangent(rng, s234);
        return finite_difference_check(
            [&](const Tensor& x) { return d::dot(mul(x, b), w); }, d::uniform(rng, s234, -1, 1));
    });
    add_case("tensor.div.numerator", kOpTolerance, [=](Rng& rng) {
        const Tensor b = d::uniform(rng, s234, real(0.6), real(1.6));
        const Tensor w = d::cotangent(rng, s234);
        return finite_difference_check(
            [&](const Tensor& x) { return d::dot(div(x, b), w); }, d::uniform(rng, s234, -1, 1));
    });
    add_case("tensor.div.denominator", kOpTolerance, [=](Rng& rng) {
        const Tensor a = d::uniform(rng, s234, -1, 1), w = d::cotangent(rng, s234);
        return finite_difference_check([&](const Tensor& x) { return d::dot(div(a, x), w); },
                                       d::uniform(rng, s234, real(0.6), real(1.6)));
    });
    add_case("tensor.exp", kOpTolerance, [=](Rng& rng) {
        const Tensor w = d::cotangent(rng, s234);
        return finite_difference_check([&](const Tensor& x) { return d::dot(exp(x), w); },
                                       d::uniform(rng, s234, -1, 1));
    });
    add_case("tensor.log", kOpTolerance, [=](Rng& rng) {
        const Tensor w = d::cotangent(rng, s234);
        return finite_difference_check([&](const Tensor& x) { return d::dot(log(x), w); },
                                       d::uniform(rng, s234, real(0.2), real(1.5)));
    });
    add_case("tensor.relu", kOpTolerance, [=](Rng& rng) {
        const Tensor w = d::cotangent(rng, s234);
        return finite_difference_check([&](const Tensor& x) { return d::dot(relu(x), w); },
                                       d::signed_away_from_zero(rng, s234));
    });
    add_case("tensor.sigmoid", kOpTolerance, [=](Rng& rng) {
        const Tensor w = d::cotangent(rng, s234);
        return finite_difference_check([&](const Tensor& x) { return d::dot(sigmoid(x), w); },
                                       d::uniform(rng, s234, -2, 2));
    });
    add_case("tensor.scale", kOpTolerance, [=](Rng& rng) {
        const real c = rng.uniform(-2, 2);
        const Tensor w = d::cotangent(rng, s234);
        return finite_difference_check([&](const Tensor& x) { return d::dot(scale(x, c), w); },
                                       d::uniform(rng, s234, -1, 1));
    });
    add_case("tensor.abs", kOpTolerance, [=](Rng& rng) {
        const Tensor w = d::cotangent(rng, s234);
        return finite_difference_check([&](const Tensor& x) { return d::dot(abs(x), w); },
                                       d::signed_away_from_zero(rng, s234));
    });
    add_case("tensor.clamp", kOpTolerance, [=](Rng& rng) {
        // Values at least 0.1 away from both clamp bounds, on either side.
        Tensor x = Tensor::zeros(s234);
        for (int64_t i = 0; i < x.size(); ++i) {
            const real inside = rng.uniform(-real(0.4), real(0.4));
            const real outside = (rng.uniform() < real(0.5) ? -1 : 1) * rng.uniform(real(0.6), 1);
            x.data()[i] = rng.uniform() < real(0.5) ? inside : outside;
        }
        const Tensor w = d::cotangent(rng, s234);
        return finite_difference_check(
            [&](const Tensor& t) { return d::dot(clamp(t, -real(0.5), real(0.5)), w); }, x);
    });
    add_case("tensor.reduce_sum", kOpTolerance, [=](Rng& rng) {
        const Tensor w = d::cotangent(rng, {2, 4});
        return finite_difference_check(
            [&](const Tensor& x) { return d::dot(reduce_sum(x, {1}), w); },
            d::uniform(rng, s234, -1, 1));
    });
    add_case("tensor.reduce_mean", kOpTolerance, [=](Rng& rng) {
        const Tensor w = d::cotangent(rng, {3});
        return finite_difference_check(
            [&](const Tensor& x) { return d::dot(reduce_mean(x, {0, 2}), w); },
            d::uniform(rng, s234, -1, 1));
    });
    add_case("tensor.reduce_max", kOpTolerance, [=](Rng& rng) {
        const Tensor w = d::cotangent(rng, {2, 3});
        return finite_difference_check(
            [&](const Tensor& x) { return d::dot(reduce_max(x, {2}), w); },
            d::separated(rng, s234));
    });
    add_case("tensor.reshape", kOpTolerance, [=](Rng& rng) {
        const Tensor w = d::cotangent(rng, {4, 6});
        return finite_difference_check(
            [&](const Tensor& x) { return d::dot(reshape(x, {4, 6}), w); },
            d::uniform(rng, s234, -1, 1));
    });
    add_case("tensor.select", kOpTolerance, [=](Rng& rng) {
        const int64_t idx = rng.below(2);
        const Tensor w = d::cotangent(rng, s34);
        return finite_difference_check(
            [&](const Tensor& x) { return d::dot(select(x, idx), w); },
            d::uniform(rng, s234, -1, 1));
    });
    add_case("tensor.slice_channels", kOpTolerance, [=](Rng& rng) {
        const Shape in = {2, 6, 3, 3};
        const Tensor w = d::cotangent(rng, {2, 3, 3, 3});
        return finite_difference_check(
            [&](const Tensor& x) { return d::dot(slice_channels(x, 1, 4), w); },
            d::uniform(rng, in, -1, 1));
    });

    // --- convolutions ------------------------------------------------------
    struct ConvGeom {
        int stride;
        Padding pad;
    };
    auto conv_geom = [](Rng& rng) {
        return ConvGeom{rng.uniform() < real(0.5) ? 1 : 2,
                        rng.uniform() < real(0.5) ? Padding::same : Padding::valid};
    };
    add_case("conv.conv2d.input", kOpTolerance, [=](Rng& rng) {
        const auto g = conv_geom(rng);
        const Tensor k = d::uniform(rng, {3, 2, 3, 3}, -1, 1);
        const Tensor b = d::uniform(rng, {3}, -1, 1);
        Tensor probe = conv2d(d::uniform(rng, {1, 2, 5, 5}, -1, 1), k, b, g.stride, g.pad);
        const Tensor w = d::cotangent(rng, probe.shape());
        return finite_difference_check(
            [&](const Tensor& x) { return d::dot(conv2d(x, k, b, g.stride, g.pad), w); },
            d::uniform(rng, {1, 2, 5, 5}, -1, 1));
    });
    add_case("conv.conv2d.kernel", kOpTolerance, [=](Rng& rng) {
        const auto g = conv_geom(rng);
        const Tensor in = d::uniform(rng, {2, 2, 5, 5}, -1, 1);
        const Tensor b = d::uniform(rng, {3}, -1, 1);
        Tensor probe = conv2d(in, d::uniform(rng, {3, 2, 3, 3}, -1, 1), b, g.stride, g.pad);
        const Tensor w = d::cotangent(rng, probe.shape());
        return finite_difference_check(
            [&](const Tensor& k) { return d::dot(conv2d(in, k, b, g.stride, g.pad), w); },
            d::uniform(rng, {3, 2, 3, 3}, -1, 1));
    });
    add_case("conv.conv2d.bias", kOpTolerance, [=](Rng& rng) {
        const auto g = conv_geom(rng);
        const Tensor in = d::uniform(rng, {1, 2, 5, 5}, -1, 1);
        const Tensor k = d::uniform(rng, {3, 2, 3, 3}, -1, 1);
        Tensor probe = conv2d(in, k, g.stride, g.pad);
        const Tensor w = d::cotangent(rng, probe.shape());
        return finite_difference_check(
            [&](const Tensor& b) { return d::dot(conv2d(in, k, b, g.stride, g.pad), w); },
            d::uniform(rng, {3}, -1, 1));
    });
    add_case("conv.depthwise.input", kOpTolerance, [=](Rng& rng) {
        const auto g = conv_geom(rng);
        const Tensor k = d::uniform(rng, {3, 3, 3}, -1, 1);
        Tensor probe = depthwise_conv2d(d::uniform(rng, {1, 3, 5, 5}, -1, 1), k, g.stride, g.pad);
        const Tensor w = d::cotangent(rng, probe.shape());
        return finite_difference_check(
            [&](const Tensor& x) { return d::dot(depthwise_conv2d(x, k, g.stride, g.pad), w); },
            d::uniform(rng, {1, 3, 5, 5}, -1, 1));
    });
    add_case("conv.depthwise.kernels", kOpTolerance, [=](Rng& rng) {
        const auto g = conv_geom(rng);
        const Tensor in = d::uniform(rng, {2, 3, 5, 5}, -1, 1);
        Tensor probe = depthwise_conv2d(in, d::uniform(rng, {3, 3, 3}, -1, 1), g.stride, g.pad);
        const Tensor w = d::cotangent(rng, probe.shape());
        return finite_difference_check(
            [&](const Tensor& k) { return d::dot(depthwise_conv2d(in, k, g.stride, g.pad), w); },
            d::uniform(rng, {3, 3, 3}, -1, 1));
    });
    add_case("conv.sep_conv2d.input", kOpTolerance, [=](Rng& rng) {
        const auto g = conv_geom(rng);
        const Tensor dk = d::uniform(rng, {2, 3, 3}, -1, 1);
        const Tensor pk = d::uniform(rng, {4, 2, 1, 1}, -1, 1);
        Tensor probe = sep_conv2d(d::uniform(rng, {1, 2, 5, 5}, -1, 1), dk, pk, g.stride, g.pad);
        const Tensor w = d::cotangent(rng, probe.shape());
        return finite_difference_check(
            [&](const Tensor& x) { return d::dot(sep_conv2d(x, dk, pk, g.stride, g.pad), w); },
            d::uniform(rng, {1, 2, 5, 5}, -1, 1));
    });
    add_case("conv.sep_conv2d.depth_kernels", kOpTolerance, [=](Rng& rng) {
        const auto g = conv_geom(rng);
        const Tensor in = d::uniform(rng, {1, 2, 5, 5}, -1, 1);
        const Tensor pk = d::uniform(rng, {4, 2, 1, 1}, -1, 1);
        Tensor probe = sep_conv2d(in, d::uniform(rng, {2, 3, 3}, -1, 1), pk, g.stride, g.pad);
        const Tensor w = d::cotangent(rng, probe.shape());
        return finite_difference_check(
            [&](const Tensor& dk) { return d::dot(sep_conv2d(in, dk, pk, g.stride, g.pad), w); },
            d::uniform(rng, {2, 3, 3}, -1, 1));
    });
    add_case("conv.sep_conv2d.point_kernel", kOpTolerance, [=](Rng& rng) {
        const auto g = conv_geom(rng);
        const Tensor in = d::uniform(rng, {1, 2, 5, 5}, -1, 1);
        const Tensor dk = d::uniform(rng, {2, 3, 3}, -1, 1);
        Tensor probe = sep_conv2d(in, dk, d::uniform(rng, {4, 2, 1, 1}, -1, 1), g.stride, g.pad);
        const Tensor w = d::cotangent(rng, probe.shape());
        return finite_difference_check(
            [&](const Tensor& pk) { return d::dot(sep_conv2d(in, dk, pk, g.stride, g.pad), w); },
            d::uniform(rng, {4, 2, 1, 1}, -1, 1));
    });
    add_case("conv.maxpool2", kOpTolerance, [=](Rng& rng) {
        const Tensor w = d::cotangent(rng, {1, 2, 3, 3});
        return finite_difference_check([&](const Tensor& x) { return d::dot(maxpool2(x), w); },
                                       d::separated(rng, {1, 2, 6, 6}));
    });
    add_case("conv.upsample_nearest2", kOpTolerance, [=](Rng& rng) {
        const Tensor w = d::cotangent(rng, {1, 2, 6, 6});
        return finite_difference_check(
            [&](const Tensor& x) { return d::dot(upsample_nearest2(x), w); },
            d::uniform(rng, {1, 2, 3, 3}, -1, 1));
    });

    // --- soft-argmax stack -------------------------------------------------
    add_case("softargmax.spatial_softmax", kOpTolerance, [=](Rng& rng) {
        const Shape s = {2, 3, 4, 4};
        const Tensor w = d::cotangent(rng, s);
        return finite_difference_check(
            [&](const Tensor& h) { return d::dot(spatial_softmax(h), w); },
            d::uniform(rng, s, -2, 2));
    });
    add_case("softargmax.soft_argmax", kOpTolerance, [=](Rng& rng) {
        const Shape s = {1, 2, 4, 6};
        const Tensor w = d::cotangent(rng, {1, 2, 2});
        return finite_difference_check([&](const Tensor& h) { return d::dot(soft_argmax(h), w); },
                                       d::uniform(rng, s, -2, 2));
    });
    add_case("softargmax.joint_probability", kOpTolerance, [=](Rng& rng) {
        const Shape s = {2, 2, 4, 4};
        const Tensor w = d::cotangent(rng, {2, 2});
        return finite_difference_check(
            [&](const Tensor& h) { return d::dot(joint_probability(h), w); },
            d::separated(rng, s));
    });

    // --- layers ------------------------------------------------------------
    add_case("layers.batch_norm.input", kOpTolerance, [=](Rng& rng) {
        const Shape s = {2, 3, 4, 4};
        const Tensor gamma = d::uniform(rng, {3}, real(0.5), real(1.5));
        const Tensor beta = d::uniform(rng, {3}, -1, 1);
        const Tensor w = d::cotangent(rng, s);
        const bool training = rng.uniform() < real(0.5);
        return finite_difference_check(
            [&](const Tensor& x) {
                Tensor rm = Tensor::zeros({3});  // fresh buffers each call
                Tensor rv = Tensor::filled({3}, 1);
                return d::dot(batch_norm(x, gamma, beta, rm, rv, training), w);
            },
            d::uniform(rng, s, -1, 1));
    });
    add_case("layers.batch_norm.gamma", kOpTolerance, [=](Rng& rng) {
        const Shape s = {2, 3, 4, 4};
        const Tensor in = d::uniform(rng, s, -1, 1);
        const Tensor beta = d::uniform(rng, {3}, -1, 1);
        const Tensor w = d::cotangent(rng, s);
        return finite_difference_check(
            [&](const Tensor& g) {
                Tensor rm = Tensor::zeros({3});
                Tensor rv = Tensor::filled({3}, 1);
                return d::dot(batch_norm(in, g, beta, rm, rv, /*training=*/true), w);
            },
            d::uniform(rng, {3}, real(0.5), real(1.5)));
    });
    add_case("layers.batch_norm.beta", kOpTolerance, [=](Rng& rng) {
        const Shape s = {2, 3, 4, 4};
        const Tensor in = d::uniform(rng, s, -1, 1);
        const Tensor gamma = d::uniform(rng, {3}, real(0.5), real(1.5));
        const Tensor w = d::cotangent(rng, s);
        return finite_difference_check(
            [&](const Tensor& b) {
                Tensor rm = Tensor::zeros({3});
                Tensor rv = Tensor::filled({3}, 1);
                return d::dot(batch_norm(in, gamma, b, rm, rv, /*training=*/true), w);
            },
            d::uniform(rng, {3}, -1, 1));
    });

    // --- blocks ------------------------------------------------------------
    add_case("blocks.res_sepconv", kOpTolerance, [=](Rng& rng) {
        Rng init(rng.next_u64());
        ResSepConv unit("u", 3, 4, /*use_bn=*/true, init);
        Tensor probe = unit(d::uniform(rng, {1, 3, 6, 6}, -1, 1), true);
        const Tensor w = d::cotangent(rng, probe.shape());
        return finite_difference_check([&](const Tensor& x) { return d::dot(unit(x, true), w); },
                                       d::uniform(rng, {1, 3, 6, 6}, -1, 1));
    });
    add_case("blocks.block_a", kOpTolerance, [=](Rng& rng) {
        Rng init(rng.next_u64());
        BlockConfig bc;
        bc.channels_in = 3;
        bc.channels_out = 3;
        bc.num_resolutions = 2;
        bc.base_resolution = 8;
        bc.growth = 1;
        bc.batch_norm = true;
        BlockA block("a", bc, init);
        const Tensor w = d::cotangent(rng, {1, 3, 8, 8});
        return finite_difference_check([&](const Tensor& x) { return d::dot(block(x, true), w); },
                                       d::uniform(rng, {1, 3, 8, 8}, -1, 1));
    });
    add_case("blocks.block_b", kOpTolerance, [=](Rng& rng) {
        Rng init(rng.next_u64());
        BlockB block("b", 4, /*n_joints=*/2, /*n_context=*/1, /*use_bn=*/true, init);
        const Tensor wm = d::cotangent(rng, {1, 4, 6, 6});  // maps: 2*(1+1)=4 channels
        const Tensor wo = d::cotangent(rng, {1, 4, 6, 6});  // features
        return finite_difference_check(
            [&](const Tensor& x) {
                auto [maps, out] = block(x, true);
                return add(d::dot(maps.all, wm), d::dot(out, wo));
            },
            d::uniform(rng, {1, 4, 6, 6}, -1, 1));
    });
    add_case("blocks.stem", kOpTolerance, [=](Rng& rng) {
        Rng init(rng.next_u64());
        Stem stem("s", real(0.02), /*use_bn=*/true, init);
        Tensor probe = stem(d::uniform(rng, {1, 3, 16, 16}, -1, 1), true);
        const Tensor w = d::cotangent(rng, probe.shape());
        return finite_difference_check([&](const Tensor& x) { return d::dot(stem(x, true), w); },
                                       d::uniform(rng, {1, 3, 16, 16}, -1, 1));
    });

    // --- losses ------------------------------------------------------------
    add_case("loss.elastic_net", kOpTolerance, [=](Rng& rng) {
        const Shape ps = {2, 3, 2};
        Tensor pred = d::uniform(rng, ps, real(0.2), real(0.8));
        // Keep |pred - truth| >= 0.05 so the L1 kink stays out of reach.
        Tensor truth = Tensor::zeros(ps);
        for (int64_t i = 0; i < pred.size(); ++i) {
            const real off = (rng.uniform() < real(0.5) ? -1 : 1) *
                             rng.uniform(real(0.05), real(0.15));
            truth.data()[i] = pred.data()[i] + off;
        }
        Tensor mask = Tensor::zeros({2, 3});
        for (int64_t i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < real(0.7);
        if (reduce_sum(mask).item() == 0) mask.data()[0] = 1;
        return finite_difference_check(
            [&](const Tensor& p) { return elastic_net_loss(p, truth, mask); }, pred);
    });
    add_case("loss.bce", kOpTolerance, [=](Rng& rng) {
        const Shape s = {2, 4};
        Tensor target = Tensor::zeros(s);
        for (int64_t i = 0; i < target.size(); ++i)
            target.data()[i] = rng.uniform() < real(0.5) ? (rng.uniform() < real(0.5) ? 0 : 1)
                                                         : rng.uniform();
        return finite_difference_check([&](const Tensor& q) { return bce_loss(q, target); },
                                       d::uniform(rng, s, real(0.1), real(0.9)));
    });

    // --- detection/context aggregation --------------------------------------
    const int anj = 3, anc = 2;
    auto agg_inputs = [anj, anc](Rng& rng) {
        return std::tuple<Tensor, Tensor, Tensor>(
            d::uniform(rng, {1, anj, 2}, real(0.1), real(0.9)),
            d::uniform(rng, {1, anc * anj, 2}, real(0.1), real(0.9)),
            d::uniform(rng, {1, anc * anj}, real(0.05), real(1)));
    };
    add_case("aggregate.detection", kOpTolerance, [=](Rng& rng) {
        auto [det, ctx, prob] = agg_inputs(rng);
        const real alpha = rng.uniform(real(0.1), real(0.9));
        const Tensor w = d::cotangent(rng, {1, anj, 2});
        return finite_difference_check(
            [&](const Tensor& x) {
                return d::dot(context_aggregate(x, ctx, prob, alpha, anj, anc), w);
            },
            det);
    });
    add_case("aggregate.context", kOpTolerance, [=](Rng& rng) {
        auto [det, ctx, prob] = agg_inputs(rng);
        const real alpha = rng.uniform(real(0.1), real(0.9));
        const Tensor w = d::cotangent(rng, {1, anj, 2});
        return finite_difference_check(
            [&](const Tensor& x) {
                return d::dot(context_aggregate(det, x, prob, alpha, anj, anc), w);
            },
            ctx);
    });
    add_case("aggregate.probability", kOpTolerance, [=](Rng& rng) {
        auto [det, ctx, prob] = agg_inputs(rng);
        const real alpha = rng.uniform(real(0.1), real(0.9));
        const Tensor w = d::cotangent(rng, {1, anj, 2});
        return finite_difference_check(
            [&](const Tensor& x) {
                return d::dot(context_aggregate(det, ctx, x, alpha, anj, anc), w);
            },
            prob);
    });

    // --- end to end ---------------------------------------------------------
    add_case("model.end_to_end", kEndToEndTolerance, [=](Rng& rng) {
        ModelConfig mc;
        mc.K = 2;
        mc.n_joints = 2;
        mc.n_context = 1;
        mc.input_size = 16;
        mc.base_resolution = 2;
        mc.width_multiplier = real(0.02);
        mc.num_resolutions = 2;
        mc.growth = 0;
        mc.batch_norm = true;
        mc.seed = rng.next_u64();
        PoseModel model(mc);

        std::vector<Pose> truths(1, Pose(mc.n_joints));
        for (int j = 0; j < mc.n_joints; ++j)
            truths[0].set(j, rng.uniform(real(0.15), real(0.85)),
                          rng.uniform(real(0.15), real(0.85)));
        truths[0].visible[1] = rng.uniform() < real(0.5);
        const BatchTargets targets = make_targets(truths, mc.n_context);

        // Perturb a coarse 4x4 seed image, upsampled to the input size: the
        // full Jacobian path runs through every layer while keeping the
        // finite-difference sweep tractable.
        return finite_difference_check(
            [&](const Tensor& seed_img) {
                Tensor img = upsample_nearest2(upsample_nearest2(seed_img));
                PredictionSet set = model.forward(img, /*training=*/true);
                return training_loss(set, targets, real(0.01)).total;
            },
            d::uniform(rng, {1, 3, 4, 4}, real(0.1), real(0.9)));
    });

    return cases;
}

} // namespace gradsuite
} // namespace softpose
