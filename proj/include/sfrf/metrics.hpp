#pragma once

// Evaluation metrics: registration (NCC, RMSE, MEE, endpoint error) and
// fusion (CC, SSIM, mean gradient, edge intensity). Error metrics use the
// 0-255 intensity scale. SSIM also exists in differentiable form because
// the fusion loss trains through it.

#include <algorithm>
#include <map>
#include <string>

#include "sfrf/field.hpp"
#include "sfrf/image.hpp"

namespace sfrf {

class MetricError : public std::runtime_error {
public:
    explicit MetricError(const std::string& what) : std::runtime_error(what) {}
};

namespace metric_detail {

inline bool is_constant(const Tensor& t) {
    for (double v : t.data)
        if (v != t[0]) return false;
    return true;
}

inline double pearson(const Tensor& a, const Tensor& b) {
    if (is_constant(a) || is_constant(b))
        throw MetricError("correlation undefined: constant input image");
    double ma = a.mean(), mb = b.mean();
    double num = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        num += da * db;
        va += da * da;
        vb += db * db;
    }
    return num / std::sqrt(va * vb);
}

}  // namespace metric_detail

// Global zero-mean normalized cross-correlation.
inline double ncc(const Image& a, const Image& b) {
    if (!a.pixels.same_shape(b.pixels)) throw std::invalid_argument("ncc extent mismatch");
    return metric_detail::pearson(a.pixels, b.pixels);
}

// Root-mean-square error and median square error on the 0-255 scale. The
// even-count median takes the lower-middle element so the value is
// deterministic across implementations.
inline std::pair<double, double> rmse_mee(const Image& a, const Image& b) {
    if (!a.pixels.same_shape(b.pixels))
        throw std::invalid_argument("rmse_mee extent mismatch");
    std::vector<double> sq(a.pixels.numel());
    double sum = 0.0;
    for (std::size_t i = 0; i < sq.size(); ++i) {
        const double e = (a.pixels[i] - b.pixels[i]) * 255.0;
        sq[i] = e * e;
        sum += sq[i];
    }
    std::nth_element(sq.begin(), sq.begin() + (sq.size() - 1) / 2, sq.end());
    const double mee = sq[(sq.size() - 1) / 2];
    return {std::sqrt(sum / static_cast<double>(sq.size())), mee};
}

// Mean of the Pearson correlations of the fused image against both sources.
inline double cc(const Image& fused, const Image& ir, const Image& vis) {
    if (!fused.pixels.same_shape(ir.pixels) || !fused.pixels.same_shape(vis.pixels))
        throw std::invalid_argument("cc extent mismatch");
    return 0.5 * (metric_detail::pearson(fused.pixels, ir.pixels) +
                  metric_detail::pearson(fused.pixels, vis.pixels));
}

// Differentiable SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
// K2 = 0.03, dynamic range 1, averaged over valid (unpadded) windows.
inline ad::Var ssim_v(const ad::Var& a, const ad::Var& b) {
    using namespace ad;
    const Tensor& av = a->value;
    if (av.rank() != 2 || !av.same_shape(b->value))
        throw std::invalid_argument("ssim expects matching H×W images");
    constexpr std::size_t kWin = 11;
    if (av.shape[0] < kWin || av.shape[1] < kWin)
        throw std::invalid_argument("ssim needs extents >= 11");

    Tensor kernel({1, 1, kWin, kWin});
    double norm = 0.0;
    for (std::size_t y = 0; y < kWin; ++y)
        for (std::size_t x = 0; x < kWin; ++x) {
            const double dy = static_cast<double>(y) - 5.0, dx = static_cast<double>(x) - 5.0;
            const double g = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
            kernel[y * kWin + x] = g;
            norm += g;
        }
    for (auto& v : kernel.data) v /= norm;
    Var k = constant(std::move(kernel));

    auto win_mean = [&](const Var& x) {
        return conv2d(reshape(x, {1, av.shape[0], av.shape[1]}), k, 1, 0);
    };
    Var mu_a = win_mean(a), mu_b = win_mean(b);
    Var var_a = sub(win_mean(mul(a, a)), mul(mu_a, mu_a));
    Var var_b = sub(win_mean(mul(b, b)), mul(mu_b, mu_b));
    Var cov = sub(win_mean(mul(a, b)), mul(mu_a, mu_b));

    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    Var num = mul(add_scalar(mul_scalar(mul(mu_a, mu_b), 2.0), c1),
                  add_scalar(mul_scalar(cov, 2.0), c2));
    Var den = mul(add_scalar(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), c1),
                  add_scalar(add(var_a, var_b), c2));
    return mean_all(div(num, den));
}

inline double ssim(const Image& a, const Image& b) {
    return ssim_v(ad::constant(a.pixels), ad::constant(b.pixels))->value[0];
}

// Sharpness proxies on the 0-255 scale: mean forward-difference gradient
// sqrt((dx^2 + dy^2)/2) over the pixels with both forward neighbours, and
// mean Sobel magnitude over the 3x3-valid interior.
inline std::pair<double, double> gradient_metrics(const Image& img) {
    const std::size_t h = img.height(), w = img.width();
    if (h < 3 || w < 3) throw std::invalid_argument("gradient_metrics needs extents >= 3");

    double mg = 0.0;
    for (std::size_t y = 0; y + 1 < h; ++y)
        for (std::size_t x = 0; x + 1 < w; ++x) {
            const double dy = (img.at(y + 1, x) - img.at(y, x)) * 255.0;
            const double dx = (img.at(y, x + 1) - img.at(y, x)) * 255.0;
            mg += std::sqrt((dx * dx + dy * dy) / 2.0);
        }
    mg /= static_cast<double>((h - 1) * (w - 1));

    double ei = 0.0;
    for (std::size_t y = 1; y + 1 < h; ++y)
        for (std::size_t x = 1; x + 1 < w; ++x) {
            const double gx = (img.at(y - 1, x + 1) + 2 * img.at(y, x + 1) +
                               img.at(y + 1, x + 1) - img.at(y - 1, x - 1) -
                               2 * img.at(y, x - 1) - img.at(y + 1, x - 1)) *
                              255.0;
            const double gy = (img.at(y + 1, x - 1) + 2 * img.at(y + 1, x) +
                               img.at(y + 1, x + 1) - img.at(y - 1, x - 1) -
                               2 * img.at(y - 1, x) - img.at(y - 1, x + 1)) *
                              255.0;
            ei += std::sqrt(gx * gx + gy * gy);
        }
    ei /= static_cast<double>((h - 2) * (w - 2));
    return {mg, ei};
}

// Mean Euclidean distance between corresponding displacement vectors.
inline double mean_endpoint_error(const DeformationField& pred,
                                  const DeformationField& gt) {
    if (!pred.displacement.same_shape(gt.displacement))
        throw std::invalid_argument("endpoint error extent mismatch");
    const std::size_t h = pred.height(), w = pred.width();
    double acc = 0.0;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            acc += std::hypot(pred.dy(y, x) - gt.dy(y, x), pred.dx(y, x) - gt.dx(y, x));
    return acc / static_cast<double>(h * w);
}

struct MetricReport {
    std::map<std::string, double> values;
    std::string id;
    std::size_t height = 0, width = 0;
};

}  // namespace sfrf
