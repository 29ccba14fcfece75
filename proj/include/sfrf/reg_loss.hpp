#pragma once

// Registration loss components: spectral-distribution KL consistency,
// uncertainty-weighted reconstruction with its regularizer, windowed-NCC
// similarity, and the diffusion smoothness penalty.

#include <utility>

#include "sfrf/field.hpp"
#include "sfrf/synth.hpp"

namespace sfrf {

inline constexpr double kLossEps = 1e-8;

// Amplitude spectrum normalized into a probability distribution over
// frequency bins.
inline ad::Var spectral_distribution_v(const ad::Var& image) {
    using namespace ad;
    if (image->value.rank() != 2)
        throw std::invalid_argument("spectral_distribution expects H×W");
    Var amp = complex_abs(fft2_op(image));
    Var total = sum_all(amp);
    if (total->value[0] <= 0.0)
        throw std::invalid_argument("degenerate spectral distribution: all-zero image");
    return div(amp, total);
}

inline Tensor spectral_distribution(const Tensor& image) {
    return spectral_distribution_v(ad::constant(image))->value;
}

// KL divergence between the reference and predicted spectral
// distributions. Both sides are additively smoothed by eps and
// renormalized, which keeps the divergence non-negative, exactly zero on
// identical inputs, and finite on empty bins.
inline ad::Var freq_consistency_loss_v(const ad::Var& registered, const Tensor& gt) {
    using namespace ad;
    if (registered->value.shape != gt.shape)
        throw std::invalid_argument("freq_consistency_loss extent mismatch");
    const double n = static_cast<double>(gt.numel());
    const double norm = 1.0 / (1.0 + n * kLossEps);

    Var p = mul_scalar(add_scalar(spectral_distribution_v(ad::constant(gt)), kLossEps), norm);
    Var q = mul_scalar(add_scalar(spectral_distribution_v(registered), kLossEps), norm);
    return sum_all(mul(p, sub(log_(p), log_(q))));
}

inline double freq_consistency_loss(const Image& registered, const Image& gt) {
    return freq_consistency_loss_v(ad::constant(registered.pixels), gt.pixels)->value[0];
}

// Per-scale (residual, uncertainty) pairs -> (u1, u2):
// u1 = sum_i mean(r/(sigma+eps) + log(sigma+eps)), u2 = sum_i mean(sigma).
inline std::pair<ad::Var, ad::Var> uncertainty_loss_v(
    const std::vector<std::pair<ad::Var, ad::Var>>& scales) {
    using namespace ad;
    if (scales.empty()) throw std::invalid_argument("uncertainty_loss needs >= 1 scale");
    Var u1, u2;
    for (const auto& [r, sigma] : scales) {
        if (!r->value.same_shape(sigma->value))
            throw std::invalid_argument("uncertainty_loss residual/sigma shape mismatch");
        for (double v : sigma->value.data)
            if (v < 0.0) throw std::invalid_argument("uncertainty_loss: negative sigma");
        Var s = add_scalar(sigma, kLossEps);
        Var term1 = mean_all(add(div(r, s), log_(s)));
        Var term2 = mean_all(sigma);
        u1 = u1 ? add(u1, term1) : term1;
        u2 = u2 ? add(u2, term2) : term2;
    }
    return {u1, u2};
}

// 1 - mean windowed zero-mean NCC over 9x9 neighbourhoods; in [0, 2].
inline ad::Var similarity_loss_v(const ad::Var& registered, const ad::Var& pseudo_ir,
                                 std::size_t window = 9) {
    using namespace ad;
    if (registered->value.shape != pseudo_ir->value.shape)
        throw std::invalid_argument("similarity_loss extent mismatch");
    const std::size_t h = registered->value.shape[0], w = registered->value.shape[1];
    Var ncc = windowed_zncc_v(reshape(registered, {1, h, w}), reshape(pseudo_ir, {1, h, w}),
                              window);
    return sub(constant(Tensor({1}, 1.0)), mean_all(ncc));
}

inline double similarity_loss(const Image& registered, const Image& pseudo_ir) {
    return similarity_loss_v(ad::constant(registered.pixels),
                             ad::constant(pseudo_ir.pixels))
        ->value[0];
}

// Mean squared forward-difference gradient, averaged per channel over the
// two directions and then across channels: a unit ramp in one channel and
// one direction scores 0.5.
inline ad::Var smoothness_loss_v(const ad::Var& field) {
    using namespace ad;
    if (field->value.rank() != 3 || field->value.shape[0] != 2)
        throw std::invalid_argument("smoothness_loss expects a 2×H×W field");
    const std::size_t h = field->value.shape[1], w = field->value.shape[2];
    Var acc;
    for (std::size_t c = 0; c < 2; ++c) {
        Var plane = slice(field, {c, 0, 0}, {1, h, w});
        Var dy = sub(slice(plane, {0, 1, 0}, {1, h - 1, w}),
                     slice(plane, {0, 0, 0}, {1, h - 1, w}));
        Var dx = sub(slice(plane, {0, 0, 1}, {1, h, w - 1}),
                     slice(plane, {0, 0, 0}, {1, h, w - 1}));
        Var term = add(mean_all(mul(dy, dy)), mean_all(mul(dx, dx)));
        acc = acc ? add(acc, term) : term;
    }
    return mul_scalar(acc, 0.5);
}

inline double smoothness_loss(const DeformationField& field) {
    return smoothness_loss_v(ad::constant(field.displacement))->value[0];
}

// Residual maps for the uncertainty loss: L1 distance between the
// registered infrared and the pseudo-infrared, both average-pooled down
// to each pyramid scale (index 0 = coarsest), paired with that scale's
// uncertainty map.
inline std::vector<std::pair<ad::Var, ad::Var>> residual_scales(
    const ad::Var& registered_1hw, const Tensor& pseudo_hw,
    const std::vector<ad::Var>& sigmas) {
    using namespace ad;
    const std::size_t levels = sigmas.size();
    Var reg = registered_1hw;
    Var pir = constant(Tensor({1, pseudo_hw.shape[0], pseudo_hw.shape[1]}, pseudo_hw.data));
    std::vector<std::pair<ad::Var, ad::Var>> out(levels);
    for (std::size_t j = 0; j < levels; ++j) {
        const std::size_t level = levels - 1 - j;  // finest first
        out[level] = {abs_(sub(reg, pir)), sigmas[level]};
        if (j + 1 < levels) {
            reg = avg_pool2(reg);
            pir = avg_pool2(pir);
        }
    }
    return out;
}

struct RegLossBreakdown {
    double freq = 0, u1 = 0, u2 = 0, sim = 0, smooth = 0, total = 0;
};

struct RegLossGraph {
    ad::Var freq, u1, u2, sim, smooth, total;

    RegLossBreakdown values() const {
        return {freq->value[0], u1->value[0],  u2->value[0],
                sim->value[0],  smooth->value[0], total->value[0]};
    }
};

// Composes the full registration loss with unit weights.
// registered: 1×H×W graph output; gt: aligned infrared; pseudo: bridged
// visible image; sigmas: per-scale uncertainty maps (coarse -> fine);
// field: final deformation field.
inline RegLossGraph total_reg_loss_v(const ad::Var& registered, const Tensor& gt,
                                     const Tensor& pseudo,
                                     const std::vector<ad::Var>& sigmas,
                                     const ad::Var& field) {
    using namespace ad;
    const std::size_t h = registered->value.shape[1], w = registered->value.shape[2];
    Var reg_hw = reshape(registered, {h, w});

    RegLossGraph g;
    g.freq = freq_consistency_loss_v(reg_hw, gt);
    auto [u1, u2] = uncertainty_loss_v(residual_scales(registered, pseudo, sigmas));
    g.u1 = u1;
    g.u2 = u2;
    g.sim = similarity_loss_v(reg_hw, constant(pseudo));
    g.smooth = smoothness_loss_v(field);
    g.total = add(add(add(g.freq, add(g.u1, g.u2)), g.sim), g.smooth);
    return g;
}

}  // namespace sfrf
