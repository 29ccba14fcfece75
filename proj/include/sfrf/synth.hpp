#pragma once

// Synthetic scene and deformation generation (the benchmark stand-in for
// the public IVIF datasets) and the deterministic modality bridge that
// replaces the learned style-transfer front end: the bridge only has to
// make visible images comparable to infrared for correlation (edges
// aligned, polarity matched), which inversion + blur + stretch provides
// without a pretrained network.

#include <cmath>

#include "sfrf/field.hpp"
#include "sfrf/image.hpp"

namespace sfrf {

// Separable Gaussian blur with edge replication.
inline Tensor gaussian_blur(const Tensor& img, double sigma) {
    const std::size_t h = img.shape[0], w = img.shape[1];
    const long radius = std::max(1L, static_cast<long>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double norm = 0.0;
    for (long i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        norm += k[i + radius];
    }
    for (auto& v : k) v /= norm;

    auto clampi = [](long v, long lo, long hi) { return std::min(hi, std::max(lo, v)); };
    Tensor tmp({h, w}), out({h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (long i = -radius; i <= radius; ++i)
                acc += k[i + radius] *
                       img.at2(y, static_cast<std::size_t>(
                                      clampi(static_cast<long>(x) + i, 0, static_cast<long>(w) - 1)));
            tmp.at2(y, x) = acc;
        }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (long i = -radius; i <= radius; ++i)
                acc += k[i + radius] *
                       tmp.at2(static_cast<std::size_t>(
                                   clampi(static_cast<long>(y) + i, 0, static_cast<long>(h) - 1)),
                               x);
            out.at2(y, x) = acc;
        }
    return out;
}

// Pseudo-infrared: clamp(1 − v), Gaussian blur σ=1, histogram stretch to
// [0,1]. Stretching a constant image is defined as identity.
inline Image modality_bridge(const Image& visible) {
    Tensor inv(visible.pixels.shape);
    for (std::size_t i = 0; i < inv.numel(); ++i)
        inv[i] = std::min(1.0, std::max(0.0, 1.0 - visible.pixels[i]));
    Tensor blurred = gaussian_blur(inv, 1.0);
    double lo = blurred[0], hi = blurred[0];
    for (double v : blurred.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo > 1e-12)
        for (auto& v : blurred.data) v = (v - lo) / (hi - lo);
    Image out(std::move(blurred));
    out.clamp();
    return out;
}

struct SyntheticPair {
    Image visible;
    Image infrared_gt;      // aligned infrared
    Image infrared_warped;  // distorted input to registration
    DeformationField gt_field;  // pull field registering warped back to aligned
    Image hot_mask;         // side channel for the heat-aware fusion checks
};

// Displacement field of the affine map about the image center:
// rotation (degrees), translation (pixels), isotropic scale.
inline DeformationField affine_field(std::size_t h, std::size_t w, double rot_deg,
                                     double ty, double tx, double scale) {
    DeformationField f(h, w);
    const double cy = 0.5 * static_cast<double>(h - 1);
    const double cx = 0.5 * static_cast<double>(w - 1);
    const double th = rot_deg * 3.141592653589793 / 180.0;
    const double c = std::cos(th) * scale, s = std::sin(th) * scale;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double ry = static_cast<double>(y) - cy;
            const double rx = static_cast<double>(x) - cx;
            f.dy(y, x) = (c * ry - s * rx) + cy + ty - static_cast<double>(y);
            f.dx(y, x) = (s * ry + c * rx) + cx + tx - static_cast<double>(x);
        }
    return f;
}

inline DeformationField gen_deformation(std::uint64_t seed, std::size_t h, std::size_t w,
                                        double affine_mag, double elastic_mag) {
    if (affine_mag < 0 || elastic_mag < 0)
        throw std::invalid_argument("deformation magnitudes must be >= 0");
    Rng rng(seed ^ 0x5f0f0e0d0c0b0a09ULL);

    DeformationField f(h, w);
    if (affine_mag > 0) {
        const double rot = rng.uniform(-affine_mag, affine_mag);
        const double ty = rng.uniform(-affine_mag, affine_mag);
        const double tx = rng.uniform(-affine_mag, affine_mag);
        const double sc = 1.0 + rng.uniform(-affine_mag, affine_mag) / 100.0;
        f = affine_field(h, w, rot, ty, tx, sc);
    }
    if (elastic_mag > 0) {
        Tensor ny({h, w}), nx({h, w});
        for (auto& v : ny.data) v = rng.normal();
        for (auto& v : nx.data) v = rng.normal();
        ny = gaussian_blur(ny, 6.0);
        nx = gaussian_blur(nx, 6.0);
        double peak = 0.0;
        for (std::size_t i = 0; i < ny.numel(); ++i)
            peak = std::max(peak, std::hypot(ny[i], nx[i]));
        const double s = peak > 0 ? elastic_mag / peak : 0.0;
        for (std::size_t i = 0; i < ny.numel(); ++i) {
            f.displacement[i] += ny[i] * s;
            f.displacement[ny.numel() + i] += nx[i] * s;
        }
    }
    return f;
}

// Approximate inverse of a pull field by fixed-point iteration:
// inv(p) = −f(p + inv(p)).
inline DeformationField invert_field(const DeformationField& f, std::size_t iters = 12) {
    DeformationField inv(f.height(), f.width());
    for (std::size_t it = 0; it < iters; ++it) {
        Tensor sampled = warp_bilinear(f.displacement, inv);
        for (std::size_t i = 0; i < sampled.numel(); ++i)
            inv.displacement[i] = -sampled[i];
    }
    return inv;
}

// Textured visible scene plus an aligned infrared counterpart. Hot
// shapes flip polarity in the infrared image and are recorded in the
// mask. Deterministic per seed.
inline void gen_scene(std::uint64_t seed, std::size_t h, std::size_t w, Image& visible,
                      Image& infrared, Image& hot_mask) {
    if (h < 32 || h > 512 || w < 32 || w > 512)
        throw std::invalid_argument("gen_scene extents must be in [32, 512]");
    Rng rng(seed);

    // band-limited noise background, bright in the visible band so it reads
    // as cool (dim) in the inverted infrared
    Tensor noise({h, w});
    for (auto& v : noise.data) v = rng.normal();
    Tensor bg = gaussian_blur(noise, 4.0);
    double lo = bg[0], hi = bg[0];
    for (double v : bg.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (auto& v : bg.data) v = 0.5 + 0.25 * (hi > lo ? (v - lo) / (hi - lo) : 0.5);

    Image vis(h, w), ir(h, w), mask(h, w);
    vis.pixels = bg;

    const std::size_t n_shapes = 4 + rng.uniform_index(4);
    for (std::size_t s = 0; s < n_shapes; ++s) {
        const bool hot = s < 2 || rng.uniform01() < 0.4;  // at least two hot shapes
        const bool circle = rng.uniform01() < 0.5;
        const double cy = rng.uniform(0.15, 0.85) * static_cast<double>(h);
        const double cx = rng.uniform(0.15, 0.85) * static_cast<double>(w);
        const double ry = rng.uniform(0.06, 0.18) * static_cast<double>(h);
        const double rx = circle ? ry : rng.uniform(0.06, 0.18) * static_cast<double>(w);
        // hot objects are dark in the visible band, cold ones bright
        const double vis_level = hot ? rng.uniform(0.1, 0.3) : rng.uniform(0.8, 0.95);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double dy = (static_cast<double>(y) - cy) / ry;
                const double dx = (static_cast<double>(x) - cx) / rx;
                const bool inside = circle ? dy * dy + dx * dx <= 1.0
                                           : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
                if (inside) {
                    vis.at(y, x) = vis_level;
                    if (hot) mask.at(y, x) = 1.0;
                }
            }
    }

    // The infrared is the matched affine inversion of the visible scene:
    // the same polarity flip the modality bridge applies, rescaled to the
    // scene's nominal dynamic range. Hot objects (dark visible) come out
    // bright, and the pseudo-infrared derived from the visible image is
    // radiometrically comparable to the true infrared — residual-based
    // loss terms then measure misalignment rather than a built-in
    // cross-modality intensity gap.
    for (std::size_t i = 0; i < vis.pixels.numel(); ++i)
        ir.pixels[i] = (0.9 - vis.pixels[i]) / 0.8;

    // infrared: blur and independent sensor noise
    ir.pixels = gaussian_blur(ir.pixels, 1.0);
    for (auto& v : ir.pixels.data) v += 0.02 * rng.normal();
    vis.clamp();
    ir.clamp();
    visible = std::move(vis);
    infrared = std::move(ir);
    hot_mask = std::move(mask);
}

inline SyntheticPair gen_pair(std::uint64_t seed, std::size_t h, std::size_t w,
                              double affine_mag, double elastic_mag) {
    SyntheticPair pair;
    gen_scene(seed, h, w, pair.visible, pair.infrared_gt, pair.hot_mask);
    pair.gt_field = gen_deformation(seed, h, w, affine_mag, elastic_mag);
    // warp the aligned infrared with the inverse so that warping the
    // result by gt_field recovers the aligned image
    DeformationField inv = invert_field(pair.gt_field);
    Tensor warped = warp_bilinear(
        Tensor({1, h, w}, pair.infrared_gt.pixels.data), inv);
    pair.infrared_warped = Image(Tensor({h, w}, std::move(warped.data)));
    pair.infrared_warped.clamp();
    return pair;
}

inline void write_pair(const SyntheticPair& pair, const std::string& prefix) {
    write_pgm(pair.visible, prefix + "_vis.pgm");
    write_pgm(pair.infrared_gt, prefix + "_ir_gt.pgm");
    write_pgm(pair.infrared_warped, prefix + "_ir_warp.pgm");
    write_field(pair.gt_field, prefix + "_field.sfrf");
    write_pgm(pair.hot_mask, prefix + "_hot.pgm");
}

inline SyntheticPair read_pair(const std::string& prefix) {
    SyntheticPair pair;
    pair.visible = read_pgm(prefix + "_vis.pgm");
    pair.infrared_gt = read_pgm(prefix + "_ir_gt.pgm");
    pair.infrared_warped = read_pgm(prefix + "_ir_warp.pgm");
    pair.gt_field = read_field(prefix + "_field.sfrf");
    pair.hot_mask = read_pgm(prefix + "_hot.pgm");
    return pair;
}

}  // namespace sfrf
