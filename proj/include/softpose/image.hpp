#pragma once

// Image utilities: PNG input/output (libpng), bilinear affine warps with
// zero fill, and the drawing helpers used for prediction overlays and
// heat-map mosaics.
//
// Coordinate convention (used consistently by the data pipeline): continuous
// image coordinates have their origin at the top-left corner of the image;
// pixel (i, j) covers the unit square [j, j+1) x [i, i+1) and its center sits
// at (j + 0.5, i + 0.5).  Bilinear sampling interpolates between pixel
// centers and reads zero outside the canvas.

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "softpose/tensor.hpp"

namespace softpose {

// ---------------------------------------------------------------------------
// PNG I/O.  Images are 3 x H x W tensors with values in [0, 1].
// ---------------------------------------------------------------------------

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

} // namespace detail

/// Read a PNG file as a 3 x H x W tensor in [0, 1].  Grayscale, palette and
/// alpha variants are converted to 8-bit RGB.
inline Tensor read_png(const std::string& path) {
    std::unique_ptr<std::FILE, detail::FileCloser> file(std::fopen(path.c_str(), "rb"));
    if (!file) throw ConfigError("cannot open image '" + path + "'");

    png_byte header[8];
    if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw ConfigError("'" + path + "' is not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ConfigError("libpng initialization failed reading '" + path + "'");
    }
    std::vector<png_byte> interleaved;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ConfigError("failed to decode PNG '" + path + "'");
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_expand(png);           // palette/low-bit-depth/tRNS to full bytes
    png_set_strip_16(png);         // 16-bit samples down to 8
    png_set_strip_alpha(png);      // drop alpha
    png_set_gray_to_rgb(png);      // promote grayscale
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    if (png_get_channels(png, info) != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ConfigError("unexpected channel layout decoding '" + path + "'");
    }
    interleaved.resize(static_cast<size_t>(h) * w * 3);
    rows.resize(static_cast<size_t>(h));
    for (int i = 0; i < h; ++i) rows[static_cast<size_t>(i)] = &interleaved[static_cast<size_t>(i) * w * 3];
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor out = Tensor::zeros({3, h, w});
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                out.data()[(static_cast<int64_t>(c) * h + i) * w + j] =
                    static_cast<real>(interleaved[(static_cast<size_t>(i) * w + j) * 3 + c]) /
                    real(255);
    return out;
}

/// Write a 3 x H x W (RGB) or 1 x H x W (grayscale, replicated) tensor as an
/// 8-bit RGB PNG; values are clamped to [0, 1].
inline void write_png(const std::string& path, const Tensor& image) {
    detail::check(image.rank() == 3 && (image.dim(0) == 3 || image.dim(0) == 1),
                  "write_png: expected 3 x H x W or 1 x H x W image");
    const int C = image.dim(0), h = image.dim(1), w = image.dim(2);

    std::unique_ptr<std::FILE, detail::FileCloser> file(std::fopen(path.c_str(), "wb"));
    if (!file) throw ConfigError("cannot write image '" + path + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw ConfigError("libpng initialization failed writing '" + path + "'");
    }
    std::vector<png_byte> interleaved(static_cast<size_t>(h) * w * 3);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ConfigError("failed to encode PNG '" + path + "'");
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < 3; ++c) {
                const real v = image.data()[(static_cast<int64_t>(C == 3 ? c : 0) * h + i) * w + j];
                const real clamped = std::min(real(1), std::max(real(0), v));
                interleaved[(static_cast<size_t>(i) * w + j) * 3 + c] =
                    static_cast<png_byte>(std::lround(clamped * 255));
            }
        rows[static_cast<size_t>(i)] = &interleaved[static_cast<size_t>(i) * w * 3];
    }
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// Affine transforms and bilinear warping.
// ---------------------------------------------------------------------------

/// 2D affine map p' = A p + t over continuous image coordinates.
struct Affine {
    real a = 1, b = 0, tx = 0; // x' = a x + b y + tx
    real c = 0, d = 1, ty = 0; // y' = c x + d y + ty

    std::array<real, 2> operator()(real x, real y) const {
        return {a * x + b * y + tx, c * x + d * y + ty};
    }

    Affine inverse() const {
        const real det = a * d - b * c;
        detail::check(std::abs(det) > real(1e-12), "Affine::inverse: singular transform");
        Affine inv;
        inv.a = d / det;
        inv.b = -b / det;
        inv.c = -c / det;
        inv.d = a / det;
        inv.tx = -(inv.a * tx + inv.b * ty);
        inv.ty = -(inv.c * tx + inv.d * ty);
        return inv;
    }

    /// this after other: (this * other)(p) = this(other(p)).
    Affine compose(const Affine& other) const {
        Affine r;
        r.a = a * other.a + b * other.c;
        r.b = a * other.b + b * other.d;
        r.c = c * other.a + d * other.c;
        r.d = c * other.b + d * other.d;
        const auto t = (*this)(other.tx, other.ty);
        r.tx = t[0];
        r.ty = t[1];
        return r;
    }

    /// Rotation by `radians` and uniform scaling about a fixed center.
    /// Positive angles map (cx + r, cy) toward (cx, cy + r): the rotation
    /// matrix [[cos, -sin], [sin, cos]] applied in x-right / y-down
    /// coordinates.
    static Affine rotation_scale_about(real cx, real cy, real radians, real scale) {
        const real co = std::cos(radians) * scale, si = std::sin(radians) * scale;
        Affine r;
        r.a = co;
        r.b = -si;
        r.c = si;
        r.d = co;
        r.tx = cx - (co * cx - si * cy);
        r.ty = cy - (si * cx + co * cy);
        return r;
    }
};

/// Bilinear sample of channel plane `plane` (H x W, row-major) at continuous
/// coordinates (x, y); zero outside the canvas.
inline real sample_bilinear(const real* plane, int h, int w, real x, real y) {
    const real sx = x - real(0.5), sy = y - real(0.5); // to pixel-center grid
    const real fx = std::floor(sx), fy = std::floor(sy);
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
    const real ax = sx - fx, ay = sy - fy;
    auto at = [&](int yy, int xx) -> real {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0;
        return plane[static_cast<int64_t>(yy) * w + xx];
    };
    return (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
           ay * ((1 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
}

/// Resample a C x H x W image into out_h x out_w.  `out_to_in` maps
/// continuous output coordinates to continuous input coordinates.
inline Tensor warp_affine(const Tensor& image, const Affine& out_to_in, int out_h, int out_w) {
    detail::check(image.rank() == 3, "warp_affine: expected C x H x W image");
    detail::check(out_h > 0 && out_w > 0, "warp_affine: output size must be positive");
    const int C = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out = Tensor::zeros({C, out_h, out_w});
    for (int c = 0; c < C; ++c) {
        const real* src = image.data() + static_cast<int64_t>(c) * h * w;
        real* dst = out.data() + static_cast<int64_t>(c) * out_h * out_w;
        for (int i = 0; i < out_h; ++i)
            for (int j = 0; j < out_w; ++j) {
                const auto p = out_to_in(static_cast<real>(j) + real(0.5),
                                         static_cast<real>(i) + real(0.5));
                dst[static_cast<int64_t>(i) * out_w + j] = sample_bilinear(src, h, w, p[0], p[1]);
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Drawing.
// ---------------------------------------------------------------------------

using Rgb = std::array<real, 3>;

/// Reserved per-joint marker colors (cycled past 16 joints).
inline Rgb joint_color(int j) {
    static constexpr double table[16][3] = {
        {1, 0, 0},       {0, 1, 0},       {0.2, 0.4, 1},   {1, 1, 0},
        {1, 0, 1},       {0, 1, 1},       {1, 0.5, 0},     {0.6, 0.2, 1},
        {0.5, 1, 0.5},   {1, 0.6, 0.6},   {0.6, 0.8, 1},   {0.9, 0.9, 0.5},
        {0.8, 0.4, 0.4}, {0.4, 0.8, 0.8}, {1, 0.8, 0.2},   {0.7, 0.7, 0.7}};
    const double* t = table[static_cast<size_t>(j) % 16];
    return {static_cast<real>(t[0]), static_cast<real>(t[1]), static_cast<real>(t[2])};
}

/// Reserved per-limb line colors (cycled).
inline Rgb limb_color(int l) {
    static constexpr double table[12][3] = {
        {0.9, 0.1, 0.1}, {0.1, 0.9, 0.1}, {0.1, 0.3, 0.9}, {0.9, 0.9, 0.1},
        {0.9, 0.1, 0.9}, {0.1, 0.9, 0.9}, {0.9, 0.5, 0.1}, {0.5, 0.1, 0.9},
        {0.5, 0.9, 0.3}, {0.9, 0.4, 0.6}, {0.4, 0.6, 0.9}, {0.7, 0.7, 0.3}};
    const double* t = table[static_cast<size_t>(l) % 12];
    return {static_cast<real>(t[0]), static_cast<real>(t[1]), static_cast<real>(t[2])};
}

/// Filled disc centered at continuous coordinates (cx, cy).
inline void draw_disc(Tensor& image, real cx, real cy, real radius, const Rgb& color) {
    detail::check(image.rank() == 3 && image.dim(0) == 3, "draw_disc: expected 3 x H x W image");
    const int h = image.dim(1), w = image.dim(2);
    const int i0 = std::max(0, static_cast<int>(std::floor(cy - radius - 1)));
    const int i1 = std::min(h - 1, static_cast<int>(std::ceil(cy + radius)));
    const int j0 = std::max(0, static_cast<int>(std::floor(cx - radius - 1)));
    const int j1 = std::min(w - 1, static_cast<int>(std::ceil(cx + radius)));
    for (int i = i0; i <= i1; ++i)
        for (int j = j0; j <= j1; ++j) {
            const real dx = (static_cast<real>(j) + real(0.5)) - cx;
            const real dy = (static_cast<real>(i) + real(0.5)) - cy;
            if (dx * dx + dy * dy > radius * radius) continue;
            for (int c = 0; c < 3; ++c)
                image.data()[(static_cast<int64_t>(c) * h + i) * w + j] =
                    color[static_cast<size_t>(c)];
        }
}

/// Line segment drawn as a chain of discs (half-pixel steps).
inline void draw_line(Tensor& image, real x0, real y0, real x1, real y1, real thickness,
                      const Rgb& color) {
    const real len = std::hypot(x1 - x0, y1 - y0);
    const int steps = std::max(1, static_cast<int>(std::ceil(len * 2)));
    for (int s = 0; s <= steps; ++s) {
        const real t = static_cast<real>(s) / static_cast<real>(steps);
        draw_disc(image, x0 + t * (x1 - x0), y0 + t * (y1 - y0), thickness / 2, color);
    }
}

/// Tile C heat maps into one grayscale mosaic (each map min-max normalized,
/// one-pixel separators), scaled up by an integer factor for visibility.
inline Tensor heatmap_mosaic(const Tensor& maps, int upscale = 4) {
    detail::check(maps.rank() == 3, "heatmap_mosaic: expected C x H x W maps");
    detail::check(upscale >= 1, "heatmap_mosaic: upscale must be >= 1");
    const int C = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(C))));
    const int rows = (C + cols - 1) / cols;
    const int th = h * upscale, tw = w * upscale;
    const int gh = rows * th + (rows - 1), gw = cols * tw + (cols - 1);
    Tensor out = Tensor::zeros({1, gh, gw});
    for (int m = 0; m < C; ++m) {
        const real* src = maps.data() + static_cast<int64_t>(m) * h * w;
        real lo = src[0], hi = src[0];
        for (int64_t i = 1; i < static_cast<int64_t>(h) * w; ++i) {
            lo = std::min(lo, src[i]);
            hi = std::max(hi, src[i]);
        }
        const real span = hi - lo > 0 ? hi - lo : real(1);
        const int base_i = (m / cols) * (th + 1), base_j = (m % cols) * (tw + 1);
        for (int i = 0; i < th; ++i)
            for (int j = 0; j < tw; ++j)
                out.data()[static_cast<int64_t>(base_i + i) * gw + base_j + j] =
                    (src[static_cast<int64_t>(i / upscale) * w + j / upscale] - lo) / span;
    }
    return out;
}

} // namespace softpose
