#pragma once

// The architecture vocabulary: residual separable convolutions, the
// hourglass feature refiner (Block-A), the heat-map producer (Block-B) and
// the entry Stem.
//
// Activation placement (documented defaults; the reference material does not
// pin these down):
//  - every feature convolution is followed by batch norm and ReLU;
//  - the separable branch inside a residual unit ends linearly (BN, no ReLU)
//    and there is no activation after the residual add, so a zeroed branch
//    leaves the shortcut untouched;
//  - shortcut/projection 1x1 convolutions and the heat-map head are bare
//    linear convolutions (the head keeps full range, it feeds a softmax).

#include <string>
#include <vector>

#include "softpose/layers.hpp"

namespace softpose {

struct BlockConfig {
    int channels_in = 0;
    int channels_out = 0;
    int num_resolutions = 3; // hourglass depth: base, base/2, ... base/2^(n-1)
    int base_resolution = 32;
    int growth = 0; // extra channels per hourglass level below the base
    bool batch_norm = true;

    void validate() const {
        detail::check(num_resolutions >= 1, "BlockConfig: num_resolutions must be >= 1");
        detail::check(base_resolution % (1 << (num_resolutions - 1)) == 0,
                      "BlockConfig: base_resolution must be divisible by 2^(num_resolutions-1)");
        detail::check(channels_in >= 1 && channels_out >= 1,
                      "BlockConfig: channel counts must be positive");
    }
};

/// Residual separable convolution: out = shortcut(x) + branch(x), where the
/// branch is depthwise -> BN -> ReLU -> pointwise -> BN and the shortcut is
/// the identity when channel counts match, else a bare 1x1 convolution.
class ResSepConv {
  public:
    ResSepConv() = default;
    ResSepConv(const std::string& name, int cin, int cout, bool use_bn, Rng& rng, int k = 3)
        : projecting_(cin != cout), branch_(name + ".sep", cin, cout, k, use_bn, rng) {
        if (projecting_)
            shortcut_ = Conv2dLayer(name + ".shortcut", cin, cout, 1, 1, Padding::valid,
                                    /*bias=*/false, rng);
    }

    Tensor operator()(const Tensor& x, bool training) {
        Tensor base = projecting_ ? shortcut_(x) : x;
        return add(base, branch_(x, training));
    }

    void collect(ParamList& params, ParamList& buffers) {
        if (projecting_) shortcut_.collect(params, buffers);
        branch_.collect(params, buffers);
    }

    void zero_branch() { branch_.zero_weights(); }

    static int64_t param_count(int cin, int cout, bool use_bn, int k = 3) {
        return SepConvLayer::param_count(cin, cout, k, use_bn) +
               (cin != cout ? Conv2dLayer::param_count(cin, cout, 1, false) : 0);
    }

  private:
    bool projecting_ = false;
    Conv2dLayer shortcut_;
    SepConvLayer branch_;
};

/// Block-A: hourglass over cfg.num_resolutions resolutions with Res-SepConv
/// units at every node.  Per level l (channels c_l = channels_out + growth*l):
///   up   = ResSep(x)                     at resolution r_l
///   low  = ResSep(maxpool2(x))           at resolution r_l / 2
///   deep = recurse(low)
///   out  = up + upsample2(ResSep(deep))
/// The deepest level is a single Res-SepConv.  Output shape equals input
/// shape.
class BlockA {
  public:
    BlockA() = default;
    BlockA(const std::string& name, const BlockConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        const int levels = cfg_.num_resolutions;
        auto ch = [&](int l) { return cfg_.channels_out + cfg_.growth * l; };
        // The first unit may also project channels_in -> channels_out.
        for (int l = 0; l + 1 < levels; ++l) {
            const std::string p = name + ".l" + std::to_string(l);
            up_.emplace_back(p + ".up", l == 0 ? cfg_.channels_in : ch(l), ch(l),
                             cfg_.batch_norm, rng);
            down_.emplace_back(p + ".down", l == 0 ? cfg_.channels_in : ch(l), ch(l + 1),
                               cfg_.batch_norm, rng);
            post_.emplace_back(p + ".post", ch(l + 1), ch(l), cfg_.batch_norm, rng);
        }
        bottom_ = ResSepConv(name + ".bottom",
                             levels == 1 ? cfg_.channels_in : ch(levels - 1), ch(levels - 1),
                             cfg_.batch_norm, rng);
    }

    Tensor operator()(const Tensor& x, bool training) { return run(x, 0, training); }

    void collect(ParamList& params, ParamList& buffers) {
        for (size_t l = 0; l < up_.size(); ++l) {
            up_[l].collect(params, buffers);
            down_[l].collect(params, buffers);
            post_[l].collect(params, buffers);
        }
        bottom_.collect(params, buffers);
    }

    void zero_branches() {
        for (size_t l = 0; l < up_.size(); ++l) {
            up_[l].zero_branch();
            down_[l].zero_branch();
            post_[l].zero_branch();
        }
        bottom_.zero_branch();
    }

    static int64_t param_count(const BlockConfig& cfg) {
        auto ch = [&](int l) { return cfg.channels_out + cfg.growth * l; };
        int64_t total = 0;
        for (int l = 0; l + 1 < cfg.num_resolutions; ++l) {
            total += ResSepConv::param_count(l == 0 ? cfg.channels_in : ch(l), ch(l),
                                             cfg.batch_norm);
            total += ResSepConv::param_count(l == 0 ? cfg.channels_in : ch(l), ch(l + 1),
                                             cfg.batch_norm);
            total += ResSepConv::param_count(ch(l + 1), ch(l), cfg.batch_norm);
        }
        total += ResSepConv::param_count(
            cfg.num_resolutions == 1 ? cfg.channels_in : ch(cfg.num_resolutions - 1),
            ch(cfg.num_resolutions - 1), cfg.batch_norm);
        return total;
    }

  private:
    Tensor run(const Tensor& x, int level, bool training) {
        if (level + 1 == cfg_.num_resolutions) return bottom_(x, training);
        auto ul = static_cast<size_t>(level);
        Tensor up = up_[ul](x, training);
        Tensor low = down_[ul](maxpool2(x), training);
        Tensor deep = run(low, level + 1, training);
        return add(up, upsample_nearest2(post_[ul](deep, training)));
    }

    BlockConfig cfg_;
    std::vector<ResSepConv> up_, down_, post_;
    ResSepConv bottom_;
};

/// Heat maps (detection + context channels) of one prediction block.
struct HeatMapSet {
    Tensor detection; // N x N_J x H x W
    Tensor context;   // N x (N_c * N_J) x H x W; undefined when N_c == 0
    Tensor all;       // N x M x H x W, M = N_J + N_c * N_J (pre-softmax)
};

/// Block-B: produces the heat maps and reinjects them into the feature flow.
///   f     = relu(SepConv(x))
///   maps  = conv1x1(f) + bias                      (linear, M channels)
///   out   = x + f + conv1x1(maps)                  (linear projection back)
class BlockB {
  public:
    BlockB() = default;
    BlockB(const std::string& name, int channels, int n_joints, int n_context, bool use_bn,
           Rng& rng)
        : n_joints_(n_joints),
          n_context_(n_context),
          sep_(name + ".sep", channels, channels, 3, use_bn, rng),
          head_(name + ".head", channels, n_joints * (1 + n_context), 1, 1, Padding::valid,
                /*bias=*/true, rng),
          proj_(name + ".proj", n_joints * (1 + n_context), channels, 1, 1, Padding::valid,
                /*bias=*/false, rng) {}

    std::pair<HeatMapSet, Tensor> operator()(const Tensor& x, bool training) {
        Tensor f = relu(sep_(x, training));
        Tensor maps = head_(f);
        HeatMapSet set;
        set.all = maps;
        set.detection = slice_channels(maps, 0, n_joints_);
        if (n_context_ > 0)
            set.context = slice_channels(maps, n_joints_, n_joints_ * (1 + n_context_));
        Tensor out = add(add(x, f), proj_(maps));
        return {set, out};
    }

    void collect(ParamList& params, ParamList& buffers) {
        sep_.collect(params, buffers);
        head_.collect(params, buffers);
        proj_.collect(params, buffers);
    }

    static int64_t param_count(int channels, int n_joints, int n_context, bool use_bn) {
        const int m = n_joints * (1 + n_context);
        return SepConvLayer::param_count(channels, channels, 3, use_bn) +
               Conv2dLayer::param_count(channels, m, 1, true) +
               Conv2dLayer::param_count(m, channels, 1, false);
    }

  private:
    int n_joints_ = 0, n_context_ = 0;
    SepConvLayer sep_;
    Conv2dLayer head_;
    Conv2dLayer proj_;
};

/// Stem: 8x spatial reduction from the input image to the base resolution.
///   conv3x3 /2 -> conv3x3 -> conv3x3 /2 -> (SepConv || 1x1 shortcut) -> pool /2
/// with widths 64 -> 64 -> 128 -> 196 scaled by the width multiplier.
class Stem {
  public:
    struct Widths {
        int w1, w2, w3;
    };
    static Widths widths(real multiplier) {
        auto scale = [multiplier](int w) {
            int v = static_cast<int>(std::lround(w * multiplier));
            return v < 1 ? 1 : v;
        };
        return {scale(64), scale(128), scale(196)};
    }

    Stem() = default;
    Stem(const std::string& name, real width_multiplier, bool use_bn, Rng& rng) {
        const Widths w = widths(width_multiplier);
        out_channels_ = w.w3;
        c1_ = ConvBnRelu(name + ".c1", 3, w.w1, 3, 2, use_bn, rng);
        c2_ = ConvBnRelu(name + ".c2", w.w1, w.w1, 3, 1, use_bn, rng);
        c3_ = ConvBnRelu(name + ".c3", w.w1, w.w2, 3, 2, use_bn, rng);
        merge_ = ResSepConv(name + ".merge", w.w2, w.w3, use_bn, rng);
    }

    Tensor operator()(const Tensor& image, bool training) {
        return maxpool2(merge_(c3_(c2_(c1_(image, training), training), training), training));
    }

    void collect(ParamList& params, ParamList& buffers) {
        c1_.collect(params, buffers);
        c2_.collect(params, buffers);
        c3_.collect(params, buffers);
        merge_.collect(params, buffers);
    }

    int out_channels() const { return out_channels_; }

    static int64_t param_count(real width_multiplier, bool use_bn) {
        const Widths w = widths(width_multiplier);
        return ConvBnRelu::param_count(3, w.w1, 3, use_bn) +
               ConvBnRelu::param_count(w.w1, w.w1, 3, use_bn) +
               ConvBnRelu::param_count(w.w1, w.w2, 3, use_bn) +
               ResSepConv::param_count(w.w2, w.w3, use_bn);
    }

  private:
    int out_channels_ = 0;
    ConvBnRelu c1_, c2_, c3_;
    ResSepConv merge_;
};

} // namespace softpose
