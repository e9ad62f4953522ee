#pragma once

// Convolution, pooling and upsampling ops on NCHW tensors.
//
// conv2d lowers to im2col plus a small GEMM kept in saxpy form (innermost
// loop over output columns), so every output element accumulates its terms
// in a fixed k-order: results are bit-identical for any thread count.
// Parallel regions only ever partition whole samples; cross-sample
// reductions (weight/bias gradients) are summed serially in sample order.

#include <cstring>
#include <vector>

#include "softpose/tensor.hpp"

namespace softpose {

enum class Padding { same, valid };

namespace detail {

struct ConvGeom {
    int out_h = 0, out_w = 0;
    int pad_top = 0, pad_left = 0;
};

/// Output size: same -> ceil(in / stride); valid -> floor((in - k)/stride) + 1.
inline ConvGeom conv_geometry(int h, int w, int kh, int kw, int stride, Padding pad) {
    ConvGeom g;
    if (pad == Padding::same) {
        g.out_h = (h + stride - 1) / stride;
        g.out_w = (w + stride - 1) / stride;
        const int pad_h = std::max((g.out_h - 1) * stride + kh - h, 0);
        const int pad_w = std::max((g.out_w - 1) * stride + kw - w, 0);
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
    } else {
        detail::check(h >= kh && w >= kw, "conv2d: kernel larger than input");
        g.out_h = (h - kh) / stride + 1;
        g.out_w = (w - kw) / stride + 1;
    }
    return g;
}

/// C[m][n] += sum_k A[m][k] * B[k][n]; per-element accumulation in k order.
inline void gemm_accum(real* C, const real* A, const real* B, int64_t M, int64_t K,
                       int64_t N) {
    for (int64_t m = 0; m < M; ++m) {
        real* c = C + m * N;
        const real* a = A + m * K;
        for (int64_t k = 0; k < K; ++k) {
            const real av = a[k];
            const real* b = B + k * N;
            for (int64_t n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

/// col[k][p] layout, k = (c*kh + r)*kw + s, p = oy*outW + ox.
inline void im2col(const real* x, int c, int h, int w, int kh, int kw, int stride,
                   const ConvGeom& g, real* col) {
    const int64_t P = static_cast<int64_t>(g.out_h) * g.out_w;
    int64_t k = 0;
    for (int ch = 0; ch < c; ++ch) {
        const real* plane = x + static_cast<int64_t>(ch) * h * w;
        for (int r = 0; r < kh; ++r) {
            for (int s = 0; s < kw; ++s, ++k) {
                real* dst = col + k * P;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * stride + r - g.pad_top;
                    if (iy < 0 || iy >= h) {
                        std::memset(dst + static_cast<int64_t>(oy) * g.out_w, 0,
                                    static_cast<size_t>(g.out_w) * sizeof(real));
                        continue;
                    }
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * stride + s - g.pad_left;
                        dst[static_cast<int64_t>(oy) * g.out_w + ox] =
                            (ix >= 0 && ix < w) ? plane[static_cast<int64_t>(iy) * w + ix]
                                                : real(0);
                    }
                }
            }
        }
    }
}

/// Transposed layout colT[p][k]; used when the K dimension must be innermost.
inline void im2col_t(const real* x, int c, int h, int w, int kh, int kw, int stride,
                     const ConvGeom& g, real* colt) {
    const int64_t K = static_cast<int64_t>(c) * kh * kw;
    int64_t p = 0;
    for (int oy = 0; oy < g.out_h; ++oy) {
        for (int ox = 0; ox < g.out_w; ++ox, ++p) {
            real* dst = colt + p * K;
            int64_t k = 0;
            for (int ch = 0; ch < c; ++ch) {
                const real* plane = x + static_cast<int64_t>(ch) * h * w;
                for (int r = 0; r < kh; ++r) {
                    const int iy = oy * stride + r - g.pad_top;
                    for (int s = 0; s < kw; ++s, ++k) {
                        const int ix = ox * stride + s - g.pad_left;
                        dst[k] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                     ? plane[static_cast<int64_t>(iy) * w + ix]
                                     : real(0);
                    }
                }
            }
        }
    }
}

inline void col2im_accum(const real* col, int c, int h, int w, int kh, int kw, int stride,
                         const ConvGeom& g, real* dx) {
    const int64_t P = static_cast<int64_t>(g.out_h) * g.out_w;
    int64_t k = 0;
    for (int ch = 0; ch < c; ++ch) {
        real* plane = dx + static_cast<int64_t>(ch) * h * w;
        for (int r = 0; r < kh; ++r) {
            for (int s = 0; s < kw; ++s, ++k) {
                const real* src = col + k * P;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * stride + r - g.pad_top;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * stride + s - g.pad_left;
                        if (ix >= 0 && ix < w)
                            plane[static_cast<int64_t>(iy) * w + ix] +=
                                src[static_cast<int64_t>(oy) * g.out_w + ox];
                    }
                }
            }
        }
    }
}

} // namespace detail

/// 2D cross-correlation. input N x Cin x H x W, kernel Cout x Cin x kh x kw,
/// optional bias of shape [Cout].
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor* bias,
                     int stride, Padding pad) {
    detail::check(input.rank() == 4 && kernel.rank() == 4, "conv2d: expected NCHW tensors");
    detail::check(stride >= 1, "conv2d: stride must be >= 1");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int Cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    detail::check(kernel.dim(1) == C, "conv2d: channel mismatch between input and kernel");
    if (bias)
        detail::check(bias->rank() == 1 && bias->dim(0) == Cout,
                      "conv2d: bias shape must be [Cout]");
    const auto g = detail::conv_geometry(H, W, kh, kw, stride, pad);
    const int64_t K = static_cast<int64_t>(C) * kh * kw;
    const int64_t P = static_cast<int64_t>(g.out_h) * g.out_w;

    std::vector<real> out(static_cast<size_t>(N) * Cout * P, real(0));
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
        std::vector<real> col(static_cast<size_t>(K) * P);
        detail::im2col(input.data() + static_cast<int64_t>(n) * C * H * W, C, H, W, kh, kw,
                       stride, g, col.data());
        real* y = out.data() + static_cast<int64_t>(n) * Cout * P;
        detail::gemm_accum(y, kernel.data(), col.data(), Cout, K, P);
        if (bias) {
            const real* b = bias->data();
            for (int m = 0; m < Cout; ++m)
                for (int64_t p = 0; p < P; ++p) y[m * P + p] += b[m];
        }
    }

    auto xn = input.node();
    auto wn = kernel.node();
    auto bn = bias ? bias->node() : nullptr;
    std::vector<Tensor> inputs = {input, kernel};
    if (bias) inputs.push_back(*bias);
    auto backward = [=](TapeNode& node) {
        const real* dy = node.grad.data();
        if (bn && bn->requires_grad) {
            bn->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int m = 0; m < Cout; ++m) {
                    real s = 0;
                    const real* row = dy + (static_cast<int64_t>(n) * Cout + m) * P;
                    for (int64_t p = 0; p < P; ++p) s += row[p];
                    bn->grad[static_cast<size_t>(m)] += s;
                }
        }
        if (wn->requires_grad) {
            std::vector<std::vector<real>> partial(static_cast<size_t>(N));
#pragma omp parallel for schedule(static)
            for (int n = 0; n < N; ++n) {
                std::vector<real> colt(static_cast<size_t>(P) * K);
                detail::im2col_t(xn->value.data() + static_cast<int64_t>(n) * C * H * W, C,
                                 H, W, kh, kw, stride, g, colt.data());
                auto& dw = partial[static_cast<size_t>(n)];
                dw.assign(static_cast<size_t>(Cout) * K, real(0));
                detail::gemm_accum(dw.data(), dy + static_cast<int64_t>(n) * Cout * P,
                                   colt.data(), Cout, P, K);
            }
            wn->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (size_t i = 0; i < wn->grad.size(); ++i)
                    wn->grad[i] += partial[static_cast<size_t>(n)][i];
        }
        if (xn->requires_grad) {
            xn->ensure_grad();
            std::vector<real> wt(static_cast<size_t>(K) * Cout);
            for (int m = 0; m < Cout; ++m)
                for (int64_t k = 0; k < K; ++k)
                    wt[static_cast<size_t>(k * Cout + m)] = wn->value[static_cast<size_t>(m * K + k)];
#pragma omp parallel for schedule(static)
            for (int n = 0; n < N; ++n) {
                std::vector<real> dcol(static_cast<size_t>(K) * P, real(0));
                detail::gemm_accum(dcol.data(), wt.data(), dy + static_cast<int64_t>(n) * Cout * P,
                                   K, Cout, P);
                detail::col2im_accum(dcol.data(), C, H, W, kh, kw, stride, g,
                                     xn->grad.data() + static_cast<int64_t>(n) * C * H * W);
            }
        }
    };
    return detail::make_result("conv2d", {N, Cout, g.out_h, g.out_w}, std::move(out),
                               std::move(inputs), std::move(backward));
}

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                     int stride, Padding pad) {
    return conv2d(input, kernel, &bias, stride, pad);
}
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, Padding pad) {
    return conv2d(input, kernel, nullptr, stride, pad);
}

/// Depthwise convolution: one kh x kw kernel per input channel, kernels C x kh x kw.
inline Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernels, int stride,
                               Padding pad) {
    detail::check(input.rank() == 4 && kernels.rank() == 3,
                  "depthwise_conv2d: expected NCHW input and CxKhxKw kernels");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int kh = kernels.dim(1), kw = kernels.dim(2);
    detail::check(kernels.dim(0) == C, "depthwise_conv2d: one kernel required per channel");
    const auto g = detail::conv_geometry(H, W, kh, kw, stride, pad);
    const int64_t P = static_cast<int64_t>(g.out_h) * g.out_w;

    std::vector<real> out(static_cast<size_t>(N) * C * P, real(0));
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const real* plane = input.data() + (static_cast<int64_t>(n) * C + c) * H * W;
            const real* k = kernels.data() + static_cast<int64_t>(c) * kh * kw;
            real* y = out.data() + (static_cast<int64_t>(n) * C + c) * P;
            for (int oy = 0; oy < g.out_h; ++oy)
                for (int ox = 0; ox < g.out_w; ++ox) {
                    real acc = 0;
                    for (int r = 0; r < kh; ++r) {
                        const int iy = oy * stride + r - g.pad_top;
                        if (iy < 0 || iy >= H) continue;
                        for (int s = 0; s < kw; ++s) {
                            const int ix = ox * stride + s - g.pad_left;
                            if (ix >= 0 && ix < W)
                                acc += k[r * kw + s] * plane[static_cast<int64_t>(iy) * W + ix];
                        }
                    }
                    y[static_cast<int64_t>(oy) * g.out_w + ox] = acc;
                }
        }
    }

    auto xn = input.node();
    auto kn = kernels.node();
    auto backward = [=](TapeNode& node) {
        const real* dy = node.grad.data();
        if (kn->requires_grad) {
            std::vector<std::vector<real>> partial(static_cast<size_t>(N));
#pragma omp parallel for schedule(static)
            for (int n = 0; n < N; ++n) {
                auto& dk = partial[static_cast<size_t>(n)];
                dk.assign(kn->value.size(), real(0));
                for (int c = 0; c < C; ++c) {
                    const real* plane =
                        xn->value.data() + (static_cast<int64_t>(n) * C + c) * H * W;
                    const real* gy = dy + (static_cast<int64_t>(n) * C + c) * P;
                    real* dkc = dk.data() + static_cast<int64_t>(c) * kh * kw;
                    for (int oy = 0; oy < g.out_h; ++oy)
                        for (int ox = 0; ox < g.out_w; ++ox) {
                            const real gv = gy[static_cast<int64_t>(oy) * g.out_w + ox];
                            for (int r = 0; r < kh; ++r) {
                                const int iy = oy * stride + r - g.pad_top;
                                if (iy < 0 || iy >= H) continue;
                                for (int s = 0; s < kw; ++s) {
                                    const int ix = ox * stride + s - g.pad_left;
                                    if (ix >= 0 && ix < W)
                                        dkc[r * kw + s] +=
                                            gv * plane[static_cast<int64_t>(iy) * W + ix];
                                }
                            }
                        }
                }
            }
            kn->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (size_t i = 0; i < kn->grad.size(); ++i)
                    kn->grad[i] += partial[static_cast<size_t>(n)][i];
        }
        if (xn->requires_grad) {
            xn->ensure_grad();
#pragma omp parallel for schedule(static)
            for (int n = 0; n < N; ++n) {
                for (int c = 0; c < C; ++c) {
                    real* dx = xn->grad.data() + (static_cast<int64_t>(n) * C + c) * H * W;
                    const real* k = kn->value.data() + static_cast<int64_t>(c) * kh * kw;
                    const real* gy = dy + (static_cast<int64_t>(n) * C + c) * P;
                    for (int oy = 0; oy < g.out_h; ++oy)
                        for (int ox = 0; ox < g.out_w; ++ox) {
                            const real gv = gy[static_cast<int64_t>(oy) * g.out_w + ox];
                            for (int r = 0; r < kh; ++r) {
                                const int iy = oy * stride + r - g.pad_top;
                                if (iy < 0 || iy >= H) continue;
                                for (int s = 0; s < kw; ++s) {
                                    const int ix = ox * stride + s - g.pad_left;
                                    if (ix >= 0 && ix < W)
                                        dx[static_cast<int64_t>(iy) * W + ix] +=
                                            gv * k[r * kw + s];
                                }
                            }
                        }
                }
            }
        }
    };
    return detail::make_result("depthwise_conv2d", {N, C, g.out_h, g.out_w}, std::move(out),
                               {input, kernels}, std::move(backward));
}

/// 2x2 max pooling with stride 2. Gradients route to the first maximal
/// element of each window in row-major order.
inline Tensor maxpool2(const Tensor& input) {
    detail::check(input.rank() == 4, "maxpool2: expected NCHW tensor");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    detail::check(H % 2 == 0 && W % 2 == 0, "maxpool2: spatial dims must be even");
    const int oh = H / 2, ow = W / 2;
    const int64_t planes = static_cast<int64_t>(N) * C;
    std::vector<real> out(static_cast<size_t>(planes) * oh * ow);
    std::vector<int64_t> argmax(out.size());
    const real* x = input.data();
    for (int64_t pl = 0; pl < planes; ++pl) {
        const real* in = x + pl * H * W;
        real* y = out.data() + pl * oh * ow;
        int64_t* am = argmax.data() + pl * oh * ow;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                real best = 0;
                int64_t bi = -1;
                for (int r = 0; r < 2; ++r)
                    for (int s = 0; s < 2; ++s) {
                        const int64_t i = static_cast<int64_t>(oy * 2 + r) * W + ox * 2 + s;
                        if (bi < 0 || in[i] > best) {
                            best = in[i];
                            bi = i;
                        }
                    }
                y[static_cast<int64_t>(oy) * ow + ox] = best;
                am[static_cast<int64_t>(oy) * ow + ox] = pl * H * W + bi;
            }
    }
    auto xn = input.node();
    auto am = std::make_shared<std::vector<int64_t>>(std::move(argmax));
    return detail::make_result("maxpool2", {N, C, oh, ow}, std::move(out), {input},
                               [xn, am](TapeNode& node) {
                                   if (!xn->requires_grad) return;
                                   xn->ensure_grad();
                                   for (size_t o = 0; o < node.grad.size(); ++o)
                                       xn->grad[static_cast<size_t>((*am)[o])] += node.grad[o];
                               });
}

/// Nearest-neighbor 2x upsampling.
inline Tensor upsample_nearest2(const Tensor& input) {
    detail::check(input.rank() == 4, "upsample_nearest2: expected NCHW tensor");
    const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int oh = H * 2, ow = W * 2;
    const int64_t planes = static_cast<int64_t>(N) * C;
    std::vector<real> out(static_cast<size_t>(planes) * oh * ow);
    const real* x = input.data();
    for (int64_t pl = 0; pl < planes; ++pl) {
        const real* in = x + pl * H * W;
        real* y = out.data() + pl * oh * ow;
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                y[static_cast<int64_t>(oy) * ow + ox] =
                    in[static_cast<int64_t>(oy / 2) * W + ox / 2];
    }
    auto xn = input.node();
    return detail::make_result(
        "upsample_nearest2", {N, C, oh, ow}, std::move(out), {input},
        [xn, planes, H, W, oh, ow](TapeNode& node) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (int64_t pl = 0; pl < planes; ++pl) {
                const real* g = node.grad.data() + pl * oh * ow;
                real* dx = xn->grad.data() + pl * H * W;
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox)
                        dx[static_cast<int64_t>(oy / 2) * W + ox / 2] +=
                            g[static_cast<int64_t>(oy) * ow + ox];
            }
        });
}

} // namespace softpose
