#pragma once

// Parameterized layers on top of the tensor ops: convolution with owned
// weights, batch normalization (dedicated op with closed-form backward), and
// the depthwise-separable convolution building block.
//
// Every layer registers its parameters (trainable) and buffers (batch-norm
// running statistics) under hierarchical names; construction order is fixed,
// and all weights are drawn from a caller-supplied Rng, so a given seed
// yields bit-identical initialization.

#include <string>
#include <utility>
#include <vector>

#include "softpose/conv.hpp"
#include "softpose/random.hpp"
#include "softpose/tensor.hpp"

namespace softpose {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

/// Depthwise separable convolution as a pure op: per-channel spatial
/// convolution followed by a 1x1 cross-channel projection.
inline Tensor sep_conv2d(const Tensor& input, const Tensor& depth_kernels,
                         const Tensor& point_kernel, int stride = 1,
                         Padding pad = Padding::same) {
    detail::check(point_kernel.rank() == 4 && point_kernel.dim(2) == 1 &&
                      point_kernel.dim(3) == 1,
                  "sep_conv2d: point kernel must be Cout x Cin x 1 x 1");
    detail::check(point_kernel.dim(1) == input.dim(1),
                  "sep_conv2d: point kernel channel mismatch");
    return conv2d(depthwise_conv2d(input, depth_kernels, stride, pad), point_kernel, 1,
                  Padding::valid);
}

namespace detail {

/// Fan-in-scaled uniform init, bound sqrt(6 / fan_in).
inline Tensor init_uniform(Shape shape, int64_t fan_in, Rng& rng) {
    const real bound = std::sqrt(real(6) / static_cast<real>(fan_in));
    std::vector<real> v(static_cast<size_t>(numel(shape)));
    for (real& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from(std::move(shape), std::move(v), true);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Batch normalization.
// ---------------------------------------------------------------------------

/// Per-channel batch normalization over (N, H, W).  In training mode the
/// batch statistics (biased variance) normalize the activations and the
/// running buffers are updated in place:
///     running <- momentum * running + (1 - momentum) * batch.
/// In inference mode the running statistics are used, making every sample
/// independent of its batch.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         Tensor& running_mean, Tensor& running_var, bool training,
                         real momentum = real(0.9), real eps = real(1e-5)) {
    detail::check(x.rank() == 4, "batch_norm: expected NCHW tensor");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    detail::check(gamma.size() == C && beta.size() == C && running_mean.size() == C &&
                      running_var.size() == C,
                  "batch_norm: per-channel arrays must have length C");
    const int64_t hw = static_cast<int64_t>(H) * W;
    const int64_t cnt = static_cast<int64_t>(N) * hw;

    std::vector<real> mean(static_cast<size_t>(C)), var(static_cast<size_t>(C));
    if (training) {
        for (int c = 0; c < C; ++c) {
            real s = 0;
            for (int n = 0; n < N; ++n) {
                const real* p = x.data() + (static_cast<int64_t>(n) * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) s += p[i];
            }
            const real m = s / static_cast<real>(cnt);
            real v = 0;
            for (int n = 0; n < N; ++n) {
                const real* p = x.data() + (static_cast<int64_t>(n) * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) v += (p[i] - m) * (p[i] - m);
            }
            mean[static_cast<size_t>(c)] = m;
            var[static_cast<size_t>(c)] = v / static_cast<real>(cnt);
        }
        for (int c = 0; c < C; ++c) {
            running_mean.data()[c] =
                momentum * running_mean.data()[c] + (1 - momentum) * mean[static_cast<size_t>(c)];
            running_var.data()[c] =
                momentum * running_var.data()[c] + (1 - momentum) * var[static_cast<size_t>(c)];
        }
    } else {
        for (int c = 0; c < C; ++c) {
            mean[static_cast<size_t>(c)] = running_mean.data()[c];
            var[static_cast<size_t>(c)] = running_var.data()[c];
        }
    }

    std::vector<real> inv_sigma(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c)
        inv_sigma[static_cast<size_t>(c)] = real(1) / std::sqrt(var[static_cast<size_t>(c)] + eps);

    std::vector<real> out(static_cast<size_t>(x.size()));
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const real* p = x.data() + (static_cast<int64_t>(n) * C + c) * hw;
            real* q = out.data() + (static_cast<int64_t>(n) * C + c) * hw;
            const real m = mean[static_cast<size_t>(c)];
            const real is = inv_sigma[static_cast<size_t>(c)];
            const real g = gamma.data()[c], b = beta.data()[c];
            for (int64_t i = 0; i < hw; ++i) q[i] = g * ((p[i] - m) * is) + b;
        }

    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    auto mu = std::make_shared<std::vector<real>>(std::move(mean));
    auto is = std::make_shared<std::vector<real>>(std::move(inv_sigma));
    auto backward = [=](TapeNode& node) {
        // Closed form for the batch-statistics path; in inference mode the
        // statistics are constants and the correction terms vanish.
        const real* g = node.grad.data();
        for (int c = 0; c < C; ++c) {
            const real m = (*mu)[static_cast<size_t>(c)];
            const real isig = (*is)[static_cast<size_t>(c)];
            real sum_g = 0, sum_gx = 0;
            for (int n = 0; n < N; ++n) {
                const real* gp = g + (static_cast<int64_t>(n) * C + c) * hw;
                const real* xp = xn->value.data() + (static_cast<int64_t>(n) * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                    sum_g += gp[i];
                    sum_gx += gp[i] * ((xp[i] - m) * isig);
                }
            }
            if (gn->requires_grad) {
                gn->ensure_grad();
                gn->grad[static_cast<size_t>(c)] += sum_gx;
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                bn->grad[static_cast<size_t>(c)] += sum_g;
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                const real gam = gn->value[static_cast<size_t>(c)];
                const real mg = training ? sum_g / static_cast<real>(cnt) : real(0);
                const real mgx = training ? sum_gx / static_cast<real>(cnt) : real(0);
                for (int n = 0; n < N; ++n) {
                    const real* gp = g + (static_cast<int64_t>(n) * C + c) * hw;
                    const real* xp = xn->value.data() + (static_cast<int64_t>(n) * C + c) * hw;
                    real* dx = xn->grad.data() + (static_cast<int64_t>(n) * C + c) * hw;
                    for (int64_t i = 0; i < hw; ++i)
                        dx[i] += gam * isig * (gp[i] - mg - ((xp[i] - m) * isig) * mgx);
                }
            }
        }
    };
    return detail::make_result("batch_norm", x.shape(), std::move(out), {x, gamma, beta},
                               std::move(backward));
}

class BatchNormLayer {
  public:
    BatchNormLayer() = default;
    BatchNormLayer(std::string name, int channels)
        : name_(std::move(name)),
          gamma_(Tensor::filled({channels}, 1, true)),
          beta_(Tensor::zeros({channels}, true)),
          running_mean_(Tensor::zeros({channels})),
          running_var_(Tensor::filled({channels}, 1)) {}

    Tensor operator()(const Tensor& x, bool training) {
        return batch_norm(x, gamma_, beta_, running_mean_, running_var_, training);
    }

    void collect(ParamList& params, ParamList& buffers) {
        params.push_back({name_ + ".gamma", gamma_});
        params.push_back({name_ + ".beta", beta_});
        buffers.push_back({name_ + ".running_mean", running_mean_});
        buffers.push_back({name_ + ".running_var", running_var_});
    }

    static int64_t param_count(int channels) { return 2 * static_cast<int64_t>(channels); }

  private:
    std::string name_;
    Tensor gamma_, beta_, running_mean_, running_var_;
};

// ---------------------------------------------------------------------------
// Convolution layers.
// ---------------------------------------------------------------------------

/// Plain convolution with owned weights; bias optional.
class Conv2dLayer {
  public:
    Conv2dLayer() = default;
    Conv2dLayer(std::string name, int cin, int cout, int k, int stride, Padding pad,
                bool bias, Rng& rng)
        : name_(std::move(name)),
          stride_(stride),
          pad_(pad),
          weight_(detail::init_uniform({cout, cin, k, k},
                                       static_cast<int64_t>(cin) * k * k, rng)) {
        if (bias) bias_ = Tensor::zeros({cout}, true);
    }

    Tensor operator()(const Tensor& x) const {
        return bias_.defined() ? conv2d(x, weight_, bias_, stride_, pad_)
                               : conv2d(x, weight_, stride_, pad_);
    }

    void collect(ParamList& params, ParamList&) {
        params.push_back({name_ + ".weight", weight_});
        if (bias_.defined()) params.push_back({name_ + ".bias", bias_});
    }

    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }

    static int64_t param_count(int cin, int cout, int k, bool bias) {
        return static_cast<int64_t>(cout) * cin * k * k + (bias ? cout : 0);
    }

  private:
    std::string name_;
    int stride_ = 1;
    Padding pad_ = Padding::same;
    Tensor weight_, bias_;
};

/// Convolution -> (batch norm) -> ReLU.  Without batch norm the convolution
/// carries a bias instead.
class ConvBnRelu {
  public:
    ConvBnRelu() = default;
    ConvBnRelu(const std::string& name, int cin, int cout, int k, int stride, bool use_bn,
               Rng& rng)
        : use_bn_(use_bn), conv_(name + ".conv", cin, cout, k, stride, Padding::same, !use_bn, rng) {
        if (use_bn) bn_ = BatchNormLayer(name + ".bn", cout);
    }

    Tensor operator()(const Tensor& x, bool training) {
        Tensor y = conv_(x);
        if (use_bn_) y = bn_(y, training);
        return relu(y);
    }

    void collect(ParamList& params, ParamList& buffers) {
        conv_.collect(params, buffers);
        if (use_bn_) bn_.collect(params, buffers);
    }

    static int64_t param_count(int cin, int cout, int k, bool use_bn) {
        return Conv2dLayer::param_count(cin, cout, k, !use_bn) +
               (use_bn ? BatchNormLayer::param_count(cout) : 0);
    }

  private:
    bool use_bn_ = true;
    Conv2dLayer conv_;
    BatchNormLayer bn_;
};

/// Depthwise separable convolution with owned kernels:
///   depthwise -> BN -> ReLU -> pointwise -> BN, linear output.
/// The linear tail lets residual blocks add it to a shortcut; callers that
/// want an activated feature apply relu() on top.
class SepConvLayer {
  public:
    SepConvLayer() = default;
    SepConvLayer(const std::string& name, int cin, int cout, int k, bool use_bn, Rng& rng)
        : use_bn_(use_bn),
          depth_(detail::init_uniform({cin, k, k}, static_cast<int64_t>(k) * k, rng)),
          point_(detail::init_uniform({cout, cin, 1, 1}, cin, rng)),
          depth_name_(name + ".depthwise"),
          point_name_(name + ".pointwise") {
        if (use_bn) {
            bn1_ = BatchNormLayer(name + ".bn1", cin);
            bn2_ = BatchNormLayer(name + ".bn2", cout);
        } else {
            point_bias_ = Tensor::zeros({cout}, true);
        }
    }

    Tensor operator()(const Tensor& x, bool training) {
        Tensor d = depthwise_conv2d(x, depth_, 1, Padding::same);
        if (use_bn_) d = bn1_(d, training);
        d = relu(d);
        Tensor p = point_bias_.defined()
                       ? conv2d(d, point_, point_bias_, 1, Padding::valid)
                       : conv2d(d, point_, 1, Padding::valid);
        if (use_bn_) p = bn2_(p, training);
        return p;
    }

    void collect(ParamList& params, ParamList& buffers) {
        params.push_back({depth_name_, depth_});
        if (use_bn_) bn1_.collect(params, buffers);
        params.push_back({point_name_, point_});
        if (point_bias_.defined()) params.push_back({point_name_ + ".bias", point_bias_});
        if (use_bn_) bn2_.collect(params, buffers);
    }

    void zero_weights() {
        std::fill(depth_.data(), depth_.data() + depth_.size(), real(0));
        std::fill(point_.data(), point_.data() + point_.size(), real(0));
    }

    static int64_t param_count(int cin, int cout, int k, bool use_bn) {
        const int64_t core = static_cast<int64_t>(cin) * k * k + static_cast<int64_t>(cout) * cin;
        return use_bn ? core + BatchNormLayer::param_count(cin) + BatchNormLayer::param_count(cout)
                      : core + cout;
    }

  private:
    bool use_bn_ = true;
    Tensor depth_, point_, point_bias_;
    std::string depth_name_, point_name_;
    BatchNormLayer bn1_, bn2_;
};

} // namespace softpose
