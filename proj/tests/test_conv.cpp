#include <gtest/gtest.h>

#include "oracles.hpp"
#include "softpose/conv.hpp"
#include "softpose/gradcheck.hpp"
#include "softpose/random.hpp"

using namespace softpose;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, real lo = -1, real hi = 1) {
    std::vector<real> v(static_cast<size_t>(numel(shape)));
    for (real& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v));
}

} // namespace

TEST(Conv2d, OneByOneKernelScales) {
    Tensor x = Tensor::filled({1, 1, 3, 3}, 1);
    Tensor k = Tensor::from({1, 1, 1, 1}, {2});
    Tensor y = conv2d(x, k, 1, Padding::valid);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
    for (int i = 0; i < 9; ++i) EXPECT_EQ(y.data()[i], real(2));
}

TEST(Conv2d, FullSupportKernelSums) {
    Rng rng(5);
    Tensor x = random_tensor({1, 1, 3, 3}, rng);
    Tensor k = Tensor::filled({1, 1, 3, 3}, 1);
    Tensor y = conv2d(x, k, 1, Padding::valid);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
    real s = 0;
    for (int i = 0; i < 9; ++i) s += x.data()[i];
    EXPECT_NEAR(y.item(), s, 1e-12);
}

TEST(Conv2d, MatchesNaiveOracleRandom5x5) {
    Rng rng(7);
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor k = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    for (Padding pad : {Padding::same, Padding::valid}) {
        Tensor y = conv2d(x, k, b, 1, pad);
        auto ref = oracle::conv2d_naive(x.values(), 1, 2, 5, 5, k.values(), 3, 3, 3,
                                        b.data(), 1, pad == Padding::same);
        ASSERT_EQ(y.dim(2), ref.h);
        ASSERT_EQ(y.dim(3), ref.w);
        for (size_t i = 0; i < ref.data.size(); ++i)
            EXPECT_NEAR(y.data()[i], ref.data[i], 1e-12);
    }
}

TEST(Conv2d, MatchesNaiveOracleAllSmallShapes) {
    Rng rng(9);
    for (int H = 1; H <= 8; H += 2) {
        for (int kh : {1, 2, 3}) {
            for (int stride : {1, 2}) {
                for (Padding pad : {Padding::same, Padding::valid}) {
                    if (pad == Padding::valid && kh > H) continue;
                    const int W = H, kw = kh, N = 2, C = 2, Cout = 3;
                    Tensor x = random_tensor({N, C, H, W}, rng);
                    Tensor k = random_tensor({Cout, C, kh, kw}, rng);
                    Tensor y = conv2d(x, k, stride, pad);
                    auto ref = oracle::conv2d_naive(x.values(), N, C, H, W, k.values(), Cout,
                                                    kh, kw, nullptr, stride,
                                                    pad == Padding::same);
                    ASSERT_EQ(y.dim(2), ref.h) << "H=" << H << " kh=" << kh << " s=" << stride;
                    ASSERT_EQ(y.dim(3), ref.w);
                    for (size_t i = 0; i < ref.data.size(); ++i)
                        ASSERT_NEAR(y.data()[i], ref.data[i], 1e-12)
                            << "H=" << H << " kh=" << kh << " s=" << stride;
                }
            }
        }
    }
}

TEST(Conv2d, SamePaddingGeometry) {
    // same -> ceil(in/stride) regardless of kernel size.
    Tensor x = Tensor::filled({1, 1, 7, 5}, 1);
    Tensor k = Tensor::filled({1, 1, 3, 3}, 1);
    Tensor y = conv2d(x, k, 2, Padding::same);
    EXPECT_EQ(y.dim(2), 4); // ceil(7/2)
    EXPECT_EQ(y.dim(3), 3); // ceil(5/2)
}

TEST(Conv2d, ChannelMismatchThrows) {
    Tensor x = Tensor::filled({1, 2, 4, 4}, 1);
    Tensor k = Tensor::filled({1, 3, 3, 3}, 1);
    EXPECT_THROW(conv2d(x, k, 1, Padding::same), std::invalid_argument);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
    Rng rng(13);
    Tensor x0 = random_tensor({2, 2, 4, 4}, rng);
    Tensor k0 = random_tensor({3, 2, 3, 3}, rng);
    Tensor b0 = random_tensor({3}, rng);

    auto wrt_input = [&](const Tensor& x) {
        Tensor y = conv2d(x, k0, b0, 1, Padding::same);
        return reduce_sum(mul(y, y));
    };
    EXPECT_LT(finite_difference_check(wrt_input, x0), 1e-5);

    auto wrt_kernel = [&](const Tensor& k) {
        Tensor y = conv2d(x0, k, b0, 2, Padding::same);
        return reduce_sum(mul(y, y));
    };
    EXPECT_LT(finite_difference_check(wrt_kernel, k0), 1e-5);

    auto wrt_bias = [&](const Tensor& b) {
        Tensor y = conv2d(x0, k0, b, 1, Padding::valid);
        return reduce_sum(mul(y, y));
    };
    EXPECT_LT(finite_difference_check(wrt_bias, b0), 1e-5);
}

TEST(DepthwiseConv2d, DeltaKernelIsIdentity) {
    Rng rng(17);
    Tensor x = random_tensor({1, 2, 4, 4}, rng);
    Tensor k = Tensor::from({2, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0,
                                        0, 0, 0, 0, 1, 0, 0, 0, 0});
    Tensor y = depthwise_conv2d(x, k, 1, Padding::same);
    ASSERT_EQ(y.shape(), x.shape());
    for (int64_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(DepthwiseConv2d, MatchesPerChannelNaiveConv) {
    Rng rng(19);
    const int N = 2, C = 3, H = 5, W = 5;
    Tensor x = random_tensor({N, C, H, W}, rng);
    Tensor k = random_tensor({C, 3, 3}, rng);
    Tensor y = depthwise_conv2d(x, k, 1, Padding::same);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            std::vector<real> xc(x.data() + (static_cast<int64_t>(n) * C + c) * H * W,
                                 x.data() + (static_cast<int64_t>(n) * C + c + 1) * H * W);
            std::vector<real> kc(k.data() + static_cast<int64_t>(c) * 9,
                                 k.data() + static_cast<int64_t>(c + 1) * 9);
            auto ref = oracle::conv2d_naive(xc, 1, 1, H, W, kc, 1, 3, 3, nullptr, 1, true);
            for (int i = 0; i < H * W; ++i)
                ASSERT_NEAR(y.data()[(static_cast<int64_t>(n) * C + c) * H * W + i],
                            ref.data[static_cast<size_t>(i)], 1e-12);
        }
}

TEST(DepthwiseConv2d, GradientsMatchFiniteDifferences) {
    Rng rng(23);
    Tensor x0 = random_tensor({1, 2, 4, 4}, rng);
    Tensor k0 = random_tensor({2, 3, 3}, rng);
    auto wrt_input = [&](const Tensor& x) {
        return reduce_sum(mul(depthwise_conv2d(x, k0, 1, Padding::same),
                              depthwise_conv2d(x, k0, 1, Padding::same)));
    };
    EXPECT_LT(finite_difference_check(wrt_input, x0), 1e-5);
    auto wrt_kernel = [&](const Tensor& k) {
        Tensor y = depthwise_conv2d(x0, k, 2, Padding::same);
        return reduce_sum(mul(y, y));
    };
    EXPECT_LT(finite_difference_check(wrt_kernel, k0), 1e-5);
}

TEST(MaxPool2, ValuesAndGradientRouting) {
    Tensor x = Tensor::from({1, 1, 4, 4},
                            {1, 2, 5, 5,
                             3, 4, 5, 5,
                             0, 0, 9, 8,
                             0, 0, 7, 6},
                            true);
    Tensor y = maxpool2(x);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
    EXPECT_EQ(y.values(), (std::vector<real>{4, 5, 0, 9}));
    reduce_sum(y).backward();
    // Ties route to the first element in row-major window order.
    EXPECT_EQ(x.grad(), (std::vector<real>{0, 0, 1, 0,
                                           0, 1, 0, 0,
                                           1, 0, 1, 0,
                                           0, 0, 0, 0}));
}

TEST(MaxPool2, GradientMatchesFiniteDifferencesAwayFromTies) {
    // Distinct values in every window guarantee a stable argmax under the
    // finite-difference probe.
    std::vector<real> v(16);
    for (int i = 0; i < 16; ++i) v[static_cast<size_t>(i)] = real(i) * real(0.37) - 2;
    Tensor x0 = Tensor::from({1, 1, 4, 4}, v);
    auto f = [](const Tensor& x) {
        Tensor y = maxpool2(x);
        return reduce_sum(mul(y, y));
    };
    EXPECT_LT(finite_difference_check(f, x0), 1e-5);
}

TEST(UpsampleNearest2, ValuesAndGradient) {
    Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}, true);
    Tensor y = upsample_nearest2(x);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
    EXPECT_EQ(y.values(), (std::vector<real>{1, 1, 2, 2,
                                             1, 1, 2, 2,
                                             3, 3, 4, 4,
                                             3, 3, 4, 4}));
    reduce_sum(mul(y, y)).backward();
    // d/dx of sum(y^2) with y = broadcast(x): each source cell sees 4 copies.
    EXPECT_EQ(x.grad(), (std::vector<real>{8, 16, 24, 32}));
}

TEST(Determinism, ConvForwardBackwardBitIdentical) {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Tensor x = random_tensor({2, 3, 6, 6}, rng);
        Tensor k = random_tensor({4, 3, 3, 3}, rng);
        x.set_requires_grad(true);
        k.set_requires_grad(true);
        Tensor y = conv2d(x, k, 2, Padding::same);
        reduce_sum(mul(y, y)).backward();
        return std::make_tuple(y.values(), x.grad(), k.grad());
    };
    auto a = run(123);
    auto b = run(123);
    EXPECT_EQ(std::get<0>(a), std::get<0>(b));
    EXPECT_EQ(std::get<1>(a), std::get<1>(b));
    EXPECT_EQ(std::get<2>(a), std::get<2>(b));
}
