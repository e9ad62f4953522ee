#pragma once

// Data pipeline: annotation files, subject crops with coordinate
// normalization, keypoint-aware augmentation, and a deterministic synthetic
// pose-dataset generator.
//
// Annotation schema (one record per line, space separated):
//
//     <image-ref> <center-x> <center-y> <scale> <x1> <y1> <v1> ... <xN> <yN> <vN>
//
// where <image-ref> is a PNG path relative to the annotation file or an
// inline synthetic reference "synth:canvas=<int>;radius=<real>;noise=<real>;
// seed=<u64>" rendered on the fly, coordinates are continuous pixels
// (top-left corner (0,0)), <scale> sizes the square crop (side =
// scale * 200 pixels), and <vK> is the 0/1 visibility bit of joint K.
// Reals are written with enough digits to round-trip bit-exactly.

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "softpose/image.hpp"
#include "softpose/pose.hpp"
#include "softpose/random.hpp"
#include "softpose/tensor.hpp"

namespace softpose {

/// Square-crop side per unit of annotation scale.
inline constexpr real kCropReference = 200;

struct Annotation {
    std::string image_ref;
    real cx = 0, cy = 0;  // crop center, pixels
    real scale = 1;       // crop side = scale * kCropReference
    std::vector<real> joints;      // 2*N_J interleaved pixel coordinates
    std::vector<uint8_t> visible;  // N_J

    int n_joints() const { return static_cast<int>(visible.size()); }
    real x(int j) const { return joints[static_cast<size_t>(j) * 2]; }
    real y(int j) const { return joints[static_cast<size_t>(j) * 2 + 1]; }
};

namespace detail {

inline std::string fmt_real(real v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(v));
    return buf;
}

[[noreturn]] inline void annotation_error(const std::string& path, int line,
                                          const std::string& what) {
    throw ConfigError(path + ":" + std::to_string(line) + ": " + what);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Annotation files.
// ---------------------------------------------------------------------------

inline std::vector<Annotation> load_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open annotation file '" + path + "'");
    std::vector<Annotation> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        Annotation ann;
        if (!(ss >> ann.image_ref))
            detail::annotation_error(path, lineno, "missing image reference");
        std::vector<real> nums;
        real v;
        while (ss >> v) nums.push_back(v);
        if (!ss.eof()) detail::annotation_error(path, lineno, "non-numeric field");
        if (nums.size() < 3 || (nums.size() - 3) % 3 != 0)
            detail::annotation_error(path, lineno,
                                     "expected center-x center-y scale plus x y v triples, got " +
                                         std::to_string(nums.size()) + " numeric fields");
        ann.cx = nums[0];
        ann.cy = nums[1];
        ann.scale = nums[2];
        if (!(ann.scale > 0)) detail::annotation_error(path, lineno, "scale must be positive");
        const size_t nj = (nums.size() - 3) / 3;
        if (nj == 0) detail::annotation_error(path, lineno, "annotation has no joints");
        for (size_t j = 0; j < nj; ++j) {
            const real jx = nums[3 + j * 3], jy = nums[4 + j * 3], jv = nums[5 + j * 3];
            if (!std::isfinite(jx) || !std::isfinite(jy))
                detail::annotation_error(path, lineno,
                                         "non-finite coordinate for joint " + std::to_string(j));
            if (jv != 0 && jv != 1)
                detail::annotation_error(path, lineno,
                                         "visibility of joint " + std::to_string(j) +
                                             " must be 0 or 1");
            ann.joints.push_back(jx);
            ann.joints.push_back(jy);
            ann.visible.push_back(jv != 0);
        }
        if (!std::isfinite(ann.cx) || !std::isfinite(ann.cy) || !std::isfinite(ann.scale))
            detail::annotation_error(path, lineno, "non-finite center/scale");
        out.push_back(std::move(ann));
    }
    return out;
}

inline void save_annotations(const std::string& path, const std::vector<Annotation>& anns) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write annotation file '" + path + "'");
    for (const Annotation& ann : anns) {
        detail::check(ann.image_ref.find_first_of(" \t\n") == std::string::npos,
                      "save_annotations: image reference must not contain whitespace");
        out << ann.image_ref << " " << detail::fmt_real(ann.cx) << " " << detail::fmt_real(ann.cy)
            << " " << detail::fmt_real(ann.scale);
        for (int j = 0; j < ann.n_joints(); ++j)
            out << " " << detail::fmt_real(ann.x(j)) << " " << detail::fmt_real(ann.y(j)) << " "
                << (ann.visible[static_cast<size_t>(j)] ? 1 : 0);
        out << "\n";
    }
    if (!out) throw ConfigError("failed writing annotation file '" + path + "'");
}

// ---------------------------------------------------------------------------
// Crop + coordinate normalization.
// ---------------------------------------------------------------------------

/// Square crop frame of an annotation in source-image pixels.
struct CropFrame {
    real left, top, side;

    static CropFrame of(const Annotation& ann) {
        const real side = ann.scale * kCropReference;
        detail::check(side > 0, "crop_normalize: degenerate crop (zero area)");
        return {ann.cx - side / 2, ann.cy - side / 2, side};
    }
    /// Pixel -> normalized crop coordinates in [0,1].
    std::array<real, 2> normalize(real px, real py) const {
        return {(px - left) / side, (py - top) / side};
    }
    /// Normalized crop coordinates -> source pixels (exact inverse affine).
    std::array<real, 2> denormalize(real nx, real ny) const {
        return {left + nx * side, top + ny * side};
    }
};

/// Crop the annotated square region, resize to out_size x out_size
/// (bilinear, zero fill), and map joints to normalized [0,1] crop
/// coordinates; joints outside the crop are marked invisible.
inline std::pair<Tensor, Pose> crop_normalize(const Tensor& image, const Annotation& ann,
                                              int out_size) {
    detail::check(out_size > 0, "crop_normalize: out_size must be positive");
    const CropFrame frame = CropFrame::of(ann);
    // Output continuous coords u in [0, S] map to input x = left + u*side/S.
    Affine out_to_in;
    out_to_in.a = frame.side / static_cast<real>(out_size);
    out_to_in.d = frame.side / static_cast<real>(out_size);
    out_to_in.tx = frame.left;
    out_to_in.ty = frame.top;
    Tensor crop = warp_affine(image, out_to_in, out_size, out_size);

    Pose pose(ann.n_joints());
    for (int j = 0; j < ann.n_joints(); ++j) {
        const auto n = frame.normalize(ann.x(j), ann.y(j));
        pose.set(j, n[0], n[1]);
        const bool inside = n[0] >= 0 && n[0] <= 1 && n[1] >= 0 && n[1] <= 1;
        pose.visible[static_cast<size_t>(j)] = ann.visible[static_cast<size_t>(j)] && inside;
        pose.prob[static_cast<size_t>(j)] = pose.visible[static_cast<size_t>(j)] ? 1 : 0;
    }
    return {std::move(crop), std::move(pose)};
}

// ---------------------------------------------------------------------------
// Augmentation.
// ---------------------------------------------------------------------------

struct AugmentParams {
    real rotation_range_deg = 40; // rotation drawn from +/- this range
    real scale_lo = real(0.7);
    real scale_hi = real(1.3);
    uint64_t seed = 0;
};

/// Apply one random rotation + rescale about the crop center to both the
/// crop image (bilinear, zero fill) and the normalized pose.  Joints leaving
/// [0,1]^2 become invisible; no joint ever becomes visible.
inline std::pair<Tensor, Pose> augment(const Tensor& image, const Pose& pose,
                                       const AugmentParams& params) {
    detail::check(params.rotation_range_deg >= 0 && params.scale_lo > 0 &&
                      params.scale_hi >= params.scale_lo,
                  "augment: invalid parameter ranges");
    detail::check(image.rank() == 3 && image.dim(1) == image.dim(2),
                  "augment: expected square C x S x S crop");
    Rng rng(params.seed);
    const real theta = rng.uniform(-params.rotation_range_deg, params.rotation_range_deg) *
                       real(M_PI) / 180;
    const real s = rng.uniform(params.scale_lo, params.scale_hi);

    // Forward map in normalized coordinates: p' = c + s R(theta) (p - c).
    const Affine fwd = Affine::rotation_scale_about(real(0.5), real(0.5), theta, s);
    Pose out(pose.n_joints());
    for (int j = 0; j < pose.n_joints(); ++j) {
        const auto p = fwd(pose.x(j), pose.y(j));
        out.set(j, p[0], p[1]);
        const bool inside = p[0] >= 0 && p[0] <= 1 && p[1] >= 0 && p[1] <= 1;
        out.visible[static_cast<size_t>(j)] = pose.visible[static_cast<size_t>(j)] && inside;
        out.prob[static_cast<size_t>(j)] = out.visible[static_cast<size_t>(j)] ? 1 : 0;
    }

    // The image warp samples the input at the inverse of the forward map,
    // expressed in pixels: scale normalized coords by S on both sides.
    const int S = image.dim(1);
    const Affine to_norm{real(1) / S, 0, 0, 0, real(1) / S, 0};
    const Affine to_pix{static_cast<real>(S), 0, 0, 0, static_cast<real>(S), 0};
    const Affine out_to_in = to_pix.compose(fwd.inverse().compose(to_norm));
    Tensor warped = warp_affine(image, out_to_in, S, S);
    return {std::move(warped), std::move(out)};
}

// ---------------------------------------------------------------------------
// Synthetic dataset generation.
// ---------------------------------------------------------------------------

/// Fixed 8-joint, 2-level kinematic tree (root -> children -> grandchildren)
/// describing a stylized figure.
struct Skeleton {
    static constexpr int kJoints = 8;
    // joint:         0 pelvis, 1 neck, 2 head, 3 l_hand, 4 r_hand,
    //                5 l_knee, 6 r_knee, 7 l_foot
    static const std::array<int, 8>& parents() {
        static const std::array<int, 8> p = {-1, 0, 1, 1, 1, 0, 0, 5};
        return p;
    }
    static const std::array<const char*, 8>& joint_names() {
        static const std::array<const char*, 8> n = {"pelvis", "neck",   "head",   "l_hand",
                                                     "r_hand", "l_knee", "r_knee", "l_foot"};
        return n;
    }
    /// Nominal bone direction (radians; x right, y down: -pi/2 points up)
    /// for the bone ending at each non-root joint.
    static const std::array<real, 8>& bone_angles() {
        static const std::array<real, 8> a = {0,
                                              real(-M_PI / 2),      // pelvis -> neck: up
                                              real(-M_PI / 2),      // neck -> head: up
                                              real(M_PI * 5 / 6),   // neck -> l_hand: down-left
                                              real(M_PI / 6),       // neck -> r_hand: down-right
                                              real(M_PI * 2 / 3),   // pelvis -> l_knee
                                              real(M_PI / 3),       // pelvis -> r_knee
                                              real(M_PI / 2)};      // l_knee -> l_foot: down
        return a;
    }
    /// Nominal bone length as a fraction of the canvas.
    static const std::array<real, 8>& bone_lengths() {
        static const std::array<real, 8> l = {0,          real(0.20), real(0.10), real(0.17),
                                              real(0.17), real(0.16), real(0.16), real(0.12)};
        return l;
    }
    static std::vector<std::pair<int, int>> limbs() {
        std::vector<std::pair<int, int>> out;
        for (int j = 1; j < kJoints; ++j) out.emplace_back(parents()[static_cast<size_t>(j)], j);
        return out;
    }
};

struct SyntheticSpec {
    int canvas = 96;            // square canvas side, pixels
    int n_joints = Skeleton::kJoints;
    real blob_radius = 4;       // Gaussian sigma = blob_radius / 2
    real angle_range = real(0.45); // +/- radians of per-bone wobble
    real length_jitter = real(0.2);  // relative bone-length variation
    real noise_amplitude = real(0.25); // background texture strength
    uint64_t seed = 1;

    void validate() const {
        detail::check(n_joints == Skeleton::kJoints,
                      "SyntheticSpec: the synthetic skeleton has exactly 8 joints");
        detail::check(blob_radius >= 1, "SyntheticSpec: blob radius must be >= 1");
        detail::check(canvas >= static_cast<int>(8 * blob_radius),
                      "SyntheticSpec: canvas too small for the blob radius");
        detail::check(angle_range >= 0 && length_jitter >= 0 && length_jitter < 1 &&
                          noise_amplitude >= 0 && noise_amplitude <= 1,
                      "SyntheticSpec: parameter out of range");
    }

    /// Inline annotation reference rendering this spec's imagery for one
    /// background seed.
    std::string inline_ref(uint64_t bg_seed) const {
        std::ostringstream ss;
        ss << "synth:canvas=" << canvas << ";radius=" << detail::fmt_real(blob_radius)
           << ";noise=" << detail::fmt_real(noise_amplitude) << ";seed=" << bg_seed;
        return ss.str();
    }
};

namespace detail {

/// Smooth value-noise background: an 8x8 grid of per-channel random levels,
/// bilinearly interpolated across the canvas.
inline Tensor noise_background(int canvas, real amplitude, uint64_t seed) {
    constexpr int G = 8;
    Rng rng(seed);
    std::array<std::array<real, G * G>, 3> grid;
    for (auto& ch : grid)
        for (real& v : ch) v = rng.uniform(0, amplitude);
    Tensor img = Tensor::zeros({3, canvas, canvas});
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < canvas; ++i)
            for (int j = 0; j < canvas; ++j) {
                const real gy = static_cast<real>(i) / canvas * (G - 1);
                const real gx = static_cast<real>(j) / canvas * (G - 1);
                const int y0 = static_cast<int>(gy), x0 = static_cast<int>(gx);
                const int y1 = std::min(y0 + 1, G - 1), x1 = std::min(x0 + 1, G - 1);
                const real ay = gy - y0, ax = gx - x0;
                const auto& ch = grid[static_cast<size_t>(c)];
                img.data()[(static_cast<int64_t>(c) * canvas + i) * canvas + j] =
                    (1 - ay) * ((1 - ax) * ch[static_cast<size_t>(y0 * G + x0)] +
                                ax * ch[static_cast<size_t>(y0 * G + x1)]) +
                    ay * ((1 - ax) * ch[static_cast<size_t>(y1 * G + x0)] +
                          ax * ch[static_cast<size_t>(y1 * G + x1)]);
            }
    return img;
}

} // namespace detail

/// Render one synthetic image: textured noise background plus one distinctly
/// colored Gaussian blob per visible joint (blob center = joint coordinate).
inline Tensor render_synthetic(int canvas, real blob_radius, real noise_amplitude,
                               uint64_t bg_seed, const std::vector<real>& joints_xy,
                               const std::vector<uint8_t>& visible) {
    detail::check(joints_xy.size() == visible.size() * 2,
                  "render_synthetic: joints/visibility size mismatch");
    Tensor img = detail::noise_background(canvas, noise_amplitude, bg_seed);
    const real sigma = blob_radius / 2;
    const real inv2s2 = 1 / (2 * sigma * sigma);
    const real cutoff = 3 * blob_radius;
    for (size_t j = 0; j < visible.size(); ++j) {
        if (!visible[j]) continue;
        const real bx = joints_xy[j * 2], by = joints_xy[j * 2 + 1];
        const Rgb color = joint_color(static_cast<int>(j));
        const int i0 = std::max(0, static_cast<int>(std::floor(by - cutoff)));
        const int i1 = std::min(canvas - 1, static_cast<int>(std::ceil(by + cutoff)));
        const int j0 = std::max(0, static_cast<int>(std::floor(bx - cutoff)));
        const int j1 = std::min(canvas - 1, static_cast<int>(std::ceil(bx + cutoff)));
        for (int i = i0; i <= i1; ++i)
            for (int jj = j0; jj <= j1; ++jj) {
                const real dx = (static_cast<real>(jj) + real(0.5)) - bx;
                const real dy = (static_cast<real>(i) + real(0.5)) - by;
                const real g = std::exp(-(dx * dx + dy * dy) * inv2s2);
                for (int c = 0; c < 3; ++c) {
                    real& px = img.data()[(static_cast<int64_t>(c) * canvas + i) * canvas + jj];
                    px = std::min(real(1), px + color[static_cast<size_t>(c)] * g);
                }
            }
    }
    return img;
}

/// One generated sample: the rendered image plus its annotation (center crop
/// covering the full canvas, all joints visible).
struct SynthSample {
    Tensor image;
    Annotation annotation;
};

/// Generate n samples.  Sample i depends only on (spec.seed, i), so any
/// prefix of a longer run is reproduced exactly.
inline std::vector<SynthSample> synth_generate(const SyntheticSpec& spec, int n) {
    spec.validate();
    detail::check(n >= 0, "synth_generate: n must be >= 0");
    const auto& parents = Skeleton::parents();
    const auto& angles = Skeleton::bone_angles();
    const auto& lengths = Skeleton::bone_lengths();
    const real margin = 2 * spec.blob_radius;

    std::vector<SynthSample> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(i), 1));
        std::vector<real> joints(Skeleton::kJoints * 2);
        // Root near the canvas center; children follow sampled bones.
        joints[0] = spec.canvas * rng.uniform(real(0.42), real(0.58));
        joints[1] = spec.canvas * rng.uniform(real(0.45), real(0.62));
        for (int j = 1; j < Skeleton::kJoints; ++j) {
            const int p = parents[static_cast<size_t>(j)];
            const real len = lengths[static_cast<size_t>(j)] * spec.canvas *
                             rng.uniform(1 - spec.length_jitter, 1 + spec.length_jitter);
            const real ang = angles[static_cast<size_t>(j)] +
                             rng.uniform(-spec.angle_range, spec.angle_range);
            joints[static_cast<size_t>(j) * 2] =
                joints[static_cast<size_t>(p) * 2] + len * std::cos(ang);
            joints[static_cast<size_t>(j) * 2 + 1] =
                joints[static_cast<size_t>(p) * 2 + 1] + len * std::sin(ang);
        }
        // Keep every blob fully on canvas (ground truth is the clamped pose).
        for (real& v : joints) v = std::min(spec.canvas - margin, std::max(margin, v));

        SynthSample sample;
        const uint64_t bg_seed = derive_seed(spec.seed, static_cast<uint64_t>(i), 2);
        sample.annotation.image_ref = spec.inline_ref(bg_seed);
        sample.annotation.cx = real(spec.canvas) / 2;
        sample.annotation.cy = real(spec.canvas) / 2;
        sample.annotation.scale = real(spec.canvas) / kCropReference;
        sample.annotation.joints = joints;
        sample.annotation.visible.assign(Skeleton::kJoints, 1);
        sample.image = render_synthetic(spec.canvas, spec.blob_radius, spec.noise_amplitude,
                                        bg_seed, joints, sample.annotation.visible);
        out.push_back(std::move(sample));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sample loading (PNG refs and inline synthetic refs).
// ---------------------------------------------------------------------------

namespace detail {

struct InlineSynthRef {
    int canvas = 0;
    real radius = 0;
    real noise = 0;
    uint64_t seed = 0;
};

inline InlineSynthRef parse_inline_ref(const std::string& ref) {
    InlineSynthRef r;
    bool have_canvas = false, have_radius = false, have_seed = false;
    std::stringstream ss(ref.substr(6)); // past "synth:"
    std::string item;
    while (std::getline(ss, item, ';')) {
        const size_t eq = item.find('=');
        if (eq == std::string::npos)
            throw ConfigError("malformed synthetic reference '" + ref + "'");
        const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
        try {
            if (key == "canvas") {
                r.canvas = std::stoi(val);
                have_canvas = true;
            } else if (key == "radius") {
                r.radius = static_cast<real>(std::stod(val));
                have_radius = true;
            } else if (key == "noise") {
                r.noise = static_cast<real>(std::stod(val));
            } else if (key == "seed") {
                r.seed = std::stoull(val);
                have_seed = true;
            } else {
                throw ConfigError("unknown key '" + key + "' in synthetic reference");
            }
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("malformed synthetic reference '" + ref + "'");
        }
    }
    if (!have_canvas || !have_radius || !have_seed)
        throw ConfigError("synthetic reference '" + ref + "' is missing canvas/radius/seed");
    return r;
}

} // namespace detail

/// Materialize the image an annotation refers to: decode a PNG (relative
/// paths resolve against base_dir) or render an inline synthetic reference.
inline Tensor load_sample_image(const Annotation& ann, const std::string& base_dir) {
    if (ann.image_ref.rfind("synth:", 0) == 0) {
        const auto r = detail::parse_inline_ref(ann.image_ref);
        return render_synthetic(r.canvas, r.radius, r.noise, r.seed, ann.joints, ann.visible);
    }
    const bool absolute = !ann.image_ref.empty() && ann.image_ref.front() == '/';
    const std::string path =
        absolute || base_dir.empty() ? ann.image_ref : base_dir + "/" + ann.image_ref;
    return read_png(path);
}

// ---------------------------------------------------------------------------
// Prepared training samples.
// ---------------------------------------------------------------------------

/// One network-ready sample: a 3 x S x S crop and its normalized pose.
struct Sample {
    Tensor image;
    Pose pose;
};

/// Load, crop and normalize every annotation into network-ready samples.
inline std::vector<Sample> make_samples(const std::vector<Annotation>& anns,
                                        const std::string& base_dir, int input_size) {
    std::vector<Sample> out;
    out.reserve(anns.size());
    for (const Annotation& ann : anns) {
        const Tensor img = load_sample_image(ann, base_dir);
        auto [crop, pose] = crop_normalize(img, ann, input_size);
        out.push_back({std::move(crop), std::move(pose)});
    }
    return out;
}

/// Generate n synthetic samples already cropped to the network input size.
inline std::vector<Sample> synth_samples(const SyntheticSpec& spec, int n, int input_size) {
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(n));
    for (SynthSample& s : synth_generate(spec, n)) {
        auto [crop, pose] = crop_normalize(s.image, s.annotation, input_size);
        out.push_back({std::move(crop), std::move(pose)});
    }
    return out;
}

/// Deterministic validation carve: the last round(n * fraction) samples
/// (at least one when fraction > 0 and n > 1) become the validation set.
inline std::pair<std::vector<Sample>, std::vector<Sample>> split_validation(
    std::vector<Sample> samples, real fraction) {
    detail::check(fraction >= 0 && fraction < 1, "split_validation: fraction must be in [0, 1)");
    const int64_t n = static_cast<int64_t>(samples.size());
    int64_t n_val = static_cast<int64_t>(std::llround(static_cast<double>(n) * fraction));
    if (fraction > 0 && n > 1 && n_val == 0) n_val = 1;
    if (n_val >= n) n_val = n - 1;
    std::vector<Sample> val(std::make_move_iterator(samples.end() - n_val),
                            std::make_move_iterator(samples.end()));
    samples.resize(static_cast<size_t>(n - n_val));
    return {std::move(samples), std::move(val)};
}

} // namespace softpose
