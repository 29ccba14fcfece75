#pragma once

// Multi-scale iterative registration: shared feature-pyramid encoder,
// Monte Carlo field estimation with dropout-derived uncertainty, ConvGRU
// residual refinement, uncertainty-weighted multi-scale field fusion, and
// the end-to-end register pipeline.
//
// Pyramid indexing: level 0 is the coarsest (1/2^K resolution, widest
// channels), level K the finest (full resolution).

#include <optional>
#include <utility>

#include "sfrf/field.hpp"
#include "sfrf/params.hpp"
#include "sfrf/synth.hpp"

namespace sfrf {

struct RegConfig {
    std::size_t scales = 2;       // K; the pyramid has K+1 levels
    std::size_t mc_samples = 10;  // N forward passes per field estimate
    double dropout_rate = 0.2;    // rho
    std::size_t gru_steps = 3;    // T refinement iterations
    std::size_t int_steps = 4;    // scaling-and-squaring steps
    double beta = 1.0;            // confidence scale in the fusion weights
    std::size_t corr_window = 3;  // field-correlation window
};

struct ConvLayer {
    ad::Var w, b;
};

inline ad::Var apply_conv(const ConvLayer& l, const ad::Var& x, std::size_t stride,
                          std::size_t pad) {
    return ad::conv2d(x, l.w, l.b, stride, pad);
}

// Depthwise convolution: one k×k filter per channel (kernel C×1×k×k),
// realized as per-channel slices so the shared conv kernel stays simple.
inline ad::Var depthwise_conv(const ad::Var& x, const ConvLayer& l, std::size_t pad) {
    const std::size_t c = x->value.shape[0];
    const std::size_t h = x->value.shape[1], w = x->value.shape[2];
    const std::size_t k = l.w->value.shape[2];
    std::vector<ad::Var> planes;
    planes.reserve(c);
    for (std::size_t ci = 0; ci < c; ++ci) {
        ad::Var xc = ad::slice(x, {ci, 0, 0}, {1, h, w});
        ad::Var wc = ad::slice(l.w, {ci, 0, 0, 0}, {1, 1, k, k});
        ad::Var bc = ad::slice(l.b, {ci}, {1});
        planes.push_back(ad::conv2d(xc, wc, bc, 1, pad));
    }
    return ad::concat(planes, 0);
}

struct MirModel {
    RegConfig cfg;
    std::vector<std::size_t> widths;  // channel width per level, coarse -> fine

    ConvLayer stem;                   // 1 -> finest width, 3x3
    std::vector<ConvLayer> lk_depth;  // per level: depthwise 7x7
    std::vector<ConvLayer> lk_point;  // per level: pointwise 1x1
    std::vector<ConvLayer> down;      // K stride-2 3x3 convs, fine -> coarse order

    struct Mcfe {
        ConvLayer c1, c2, c3;  // 3x3 convs; c3 maps to the 2 field channels
    };
    std::vector<Mcfe> mcfe;  // per level

    static constexpr std::size_t kGruHidden = 16;
    // Displacement search radius for the local matching-cost channels that
    // accompany the feature maps into refinement; (2r+1)^2 cost channels
    // plus the two soft-argmax displacement proposal channels.
    static constexpr long kCostRadius = 2;
    static constexpr std::size_t kCostChans =
        static_cast<std::size_t>((2 * kCostRadius + 1) * (2 * kCostRadius + 1)) + 2;
    struct Frb {
        ConvLayer wz, wr, wc, proj;  // ConvGRU gates + output projection
    };
    std::vector<Frb> frb;  // per level

    std::vector<ConvLayer> msf_mod;  // modulation conv for fusion scales k >= 1

    MirModel(ParamStore& store, const RegConfig& config, Rng& rng) : cfg(config) {
        const std::size_t k = cfg.scales;
        widths.resize(k + 1);
        // coarse -> fine: [32, 16, 8] for K = 2
        for (std::size_t i = 0; i <= k; ++i) widths[i] = 8ULL << (k - i);

        auto make_conv = [&](const std::string& name, std::size_t co, std::size_t ci,
                             std::size_t ksz) {
            return ConvLayer{store.create(name + ".w", {co, ci, ksz, ksz}, rng),
                             store.create_zero(name + ".b", {co})};
        };

        const std::size_t fine_w = widths[k];
        stem = make_conv("enc.stem", fine_w, 1, 3);
        lk_depth.resize(k + 1);
        lk_point.resize(k + 1);
        for (std::size_t i = 0; i <= k; ++i) {
            const std::string tag = "enc.lk" + std::to_string(i);
            lk_depth[i] = ConvLayer{store.create(tag + ".dw.w", {widths[i], 1, 7, 7}, rng),
                                    store.create_zero(tag + ".dw.b", {widths[i]})};
            lk_point[i] = make_conv(tag + ".pw", widths[i], widths[i], 1);
        }
        down.resize(k);
        for (std::size_t j = 0; j < k; ++j) {
            // down[j] maps level (k-j) width to level (k-j-1) width
            down[j] = make_conv("enc.down" + std::to_string(j), widths[k - j - 1],
                                widths[k - j], 3);
        }

        mcfe.resize(k + 1);
        frb.resize(k + 1);
        for (std::size_t i = 0; i <= k; ++i) {
            const std::size_t c = widths[i];
            const std::string mt = "mcfe" + std::to_string(i);
            mcfe[i] = Mcfe{make_conv(mt + ".c1", c, 2 * c, 3), make_conv(mt + ".c2", c, c, 3),
                           make_conv(mt + ".c3", 2, c, 3)};
            // field + both feature maps + matching-cost channels + corr
            const std::size_t gin = 2 + 2 * c + kCostChans + 1;
            const std::string ft = "frb" + std::to_string(i);
            // The output projection starts at zero so refinement is initially
            // silent: the field begins as the MC estimate alone and the GRU's
            // corrections grow from a clean identity-like starting point.
            frb[i] = Frb{make_conv(ft + ".wz", kGruHidden, gin + kGruHidden, 3),
                         make_conv(ft + ".wr", kGruHidden, gin + kGruHidden, 3),
                         make_conv(ft + ".wc", kGruHidden, gin + kGruHidden, 3),
                         ConvLayer{store.create_zero(ft + ".proj.w", {2, kGruHidden, 3, 3}),
                                   store.create_zero(ft + ".proj.b", {2})}};
        }

        msf_mod.resize(k);
        for (std::size_t i = 0; i < k; ++i) {
            msf_mod[i] = make_conv("msf.mod" + std::to_string(i + 1), 1, 1, 3);
            // positive gate bias so coarse-scale fields initially pass through
            // fusion nearly unattenuated (sigmoid(2) ~ 0.88) instead of being
            // halved; a closed gate at init systematically under-scales the
            // fused field and training must first undo that
            msf_mod[i].b->value.fill(2.0);
        }
    }
};

// ---------------------------------------------------------------------------
// Encoder

inline std::vector<ad::Var> encode_multiscale(const ad::Var& image, const MirModel& m) {
    const Tensor& v = image->value;
    if (v.rank() != 2) throw std::invalid_argument("encode_multiscale expects H×W");
    const std::size_t k = m.cfg.scales;
    const std::size_t divisor = 1ULL << k;
    if (v.shape[0] % divisor != 0 || v.shape[1] % divisor != 0)
        throw std::invalid_argument("image extents must be divisible by " +
                                    std::to_string(divisor));

    auto lk_block = [&](const ad::Var& x, std::size_t level) {
        ad::Var d = depthwise_conv(x, m.lk_depth[level], 3);
        return ad::tanh_(apply_conv(m.lk_point[level], d, 1, 0));
    };

    ad::Var x = ad::reshape(image, {1, v.shape[0], v.shape[1]});
    x = ad::tanh_(apply_conv(m.stem, x, 1, 1));

    std::vector<ad::Var> pyramid(k + 1);
    pyramid[k] = lk_block(x, k);  // finest level
    ad::Var cur = pyramid[k];
    for (std::size_t j = 0; j < k; ++j) {
        ad::Var d = ad::tanh_(apply_conv(m.down[j], cur, 2, 1));
        const std::size_t level = k - j - 1;
        pyramid[level] = lk_block(d, level);
        cur = pyramid[level];
    }
    return pyramid;  // index 0 = coarsest
}

// ---------------------------------------------------------------------------
// Monte Carlo field estimation

struct McfeResult {
    ad::Var mean;   // 2×H×W
    ad::Var sigma;  // 1×H×W, channel-mean of the per-channel variance
};

inline McfeResult mcfe_sample(const ad::Var& f_ir, const ad::Var& f_pir,
                              const MirModel::Mcfe& p, std::size_t n_samples,
                              double dropout_rate, Rng& rng,
                              std::vector<ad::Var>* samples_out = nullptr) {
    using namespace ad;
    if (n_samples < 1) throw std::invalid_argument("mcfe_sample needs n_samples >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw std::invalid_argument("dropout rate must be in [0,1)");
    const std::size_t h = f_ir->value.shape[1], w = f_ir->value.shape[2];

    Var x = concat({f_ir, f_pir}, 0);
    Var trunk = tanh_(apply_conv(p.c2, tanh_(apply_conv(p.c1, x, 1, 1)), 1, 1));

    auto head = [&](bool stochastic) {
        Var t = stochastic ? dropout(trunk, dropout_rate, rng) : trunk;
        return apply_conv(p.c3, t, 1, 1);
    };

    // With no dropout (or a single sample) every pass is identical, so the
    // mean is the single pass and the variance is exactly zero; running the
    // averaging arithmetic instead would leave rounding dust in sigma.
    if (dropout_rate == 0.0 || n_samples == 1) {
        Var mean = head(dropout_rate != 0.0);
        if (samples_out) samples_out->push_back(mean);
        return {mean, constant(Tensor({1, h, w}))};
    }

    std::vector<Var> samples;
    samples.reserve(n_samples);
    for (std::size_t n = 0; n < n_samples; ++n) samples.push_back(head(true));
    if (samples_out) *samples_out = samples;

    Var acc = samples[0];
    for (std::size_t n = 1; n < n_samples; ++n) acc = add(acc, samples[n]);
    Var mean = mul_scalar(acc, 1.0 / static_cast<double>(n_samples));

    Var var_acc;
    for (std::size_t n = 0; n < n_samples; ++n) {
        Var d = sub(samples[n], mean);
        Var sq = mul(d, d);
        var_acc = n == 0 ? sq : add(var_acc, sq);
    }
    Var var = mul_scalar(var_acc, 1.0 / static_cast<double>(n_samples));
    return {mean, mean_axis(var, 0)};  // 1×H×W
}

// ---------------------------------------------------------------------------
// Local matching costs
//
// Per-displacement similarity evidence for the refinement stage: one
// channel per candidate integer displacement in a (2r+1)×(2r+1)
// neighborhood (edge-replicated), plus two soft-argmax displacement
// proposal channels.
//
// Raw feature dot products are dominated by local energy — bright or
// high-magnitude regions win every comparison regardless of structure —
// so each feature map is first high-pass filtered (3×3 box mean removed)
// and divided by its windowed RMS, and the per-displacement products are
// box-aggregated over the same window. The result is a local normalized
// cross-correlation surface. The proposal channels hold its
// correlation-weighted mean displacement with the sign flipped into the
// pull-field convention (the best-matching shift approximates the inverse
// of the field that undoes the motion).

inline constexpr long kCostAggRadius = 3;  // correlation aggregation window radius
inline constexpr double kCostTau = 8.0;    // soft-argmax sharpness

// Per-channel box mean via a constant depthwise kernel.
inline ad::Var box_mean(const ad::Var& x, long radius) {
    const std::size_t c = x->value.shape[0];
    const std::size_t k = static_cast<std::size_t>(2 * radius + 1);
    Tensor kern({c, 1, k, k});
    for (auto& v : kern.data) v = 1.0 / static_cast<double>(k * k);
    ConvLayer l{ad::constant(std::move(kern)), ad::constant(Tensor({c}))};
    return depthwise_conv(x, l, static_cast<std::size_t>(radius));
}

inline ad::Var local_cost_volume(const ad::Var& f_a, const ad::Var& f_b, long radius) {
    using namespace ad;
    if (f_a->value.shape != f_b->value.shape || f_a->value.rank() != 3)
        throw std::invalid_argument("local_cost_volume expects matching C×H×W inputs");
    const std::size_t h = f_a->value.shape[1], w = f_a->value.shape[2];

    auto normalize = [&](const Var& f) {
        Var hp = sub(f, box_mean(f, 1));
        Var energy = box_mean(mul(hp, hp), kCostAggRadius);
        return div(hp, add_scalar(sqrt_eps(energy, 1e-12), 1e-3));
    };
    Var na = normalize(f_a), nb = normalize(f_b);

    std::vector<Var> chans;
    chans.reserve(static_cast<std::size_t>((2 * radius + 1) * (2 * radius + 1)));
    for (long dy = -radius; dy <= radius; ++dy)
        for (long dx = -radius; dx <= radius; ++dx) {
            Tensor shift({2, h, w});
            for (std::size_t i = 0; i < h * w; ++i) {
                shift[i] = static_cast<double>(dy);
                shift[h * w + i] = static_cast<double>(dx);
            }
            Var shifted = warp_bilinear_v(nb, constant(std::move(shift)));
            chans.push_back(box_mean(mean_axis(mul(na, shifted), 0), kCostAggRadius));
        }
    Var costs = concat(chans, 0);

    Var smax = softmax(mul_scalar(costs, kCostTau), 0);
    Var prop_y, prop_x;
    std::size_t d = 0;
    for (long dy = -radius; dy <= radius; ++dy)
        for (long dx = -radius; dx <= radius; ++dx, ++d) {
            Var wd = slice(smax, {d, 0, 0}, {1, h, w});
            Var ty = mul_scalar(wd, -static_cast<double>(dy));
            Var tx = mul_scalar(wd, -static_cast<double>(dx));
            prop_y = prop_y ? add(prop_y, ty) : ty;
            prop_x = prop_x ? add(prop_x, tx) : tx;
        }
    return concat({costs, prop_y, prop_x}, 0);
}

// ---------------------------------------------------------------------------
// GRU-based residual refinement

inline ad::Var frb_refine(const ad::Var& phi0, const ad::Var& feat, const ad::Var& corr,
                          const MirModel::Frb& p, std::size_t t_steps) {
    using namespace ad;
    const std::size_t h = phi0->value.shape[1], w = phi0->value.shape[2];
    if (feat->value.shape[1] != h || feat->value.shape[2] != w ||
        corr->value.shape[0] != h || corr->value.shape[1] != w)
        throw std::invalid_argument("frb_refine extent mismatch");
    Var corr3 = reshape(corr, {1, h, w});

    Var phi = phi0;
    Var hidden = constant(Tensor({MirModel::kGruHidden, h, w}));
    for (std::size_t t = 0; t < t_steps; ++t) {
        Var x = concat({phi, feat, corr3}, 0);
        Var xh = concat({x, hidden}, 0);
        Var z = sigmoid(apply_conv(p.wz, xh, 1, 1));
        Var r = sigmoid(apply_conv(p.wr, xh, 1, 1));
        Var cand = tanh_(apply_conv(p.wc, concat({x, mul(r, hidden)}, 0), 1, 1));
        hidden = add(mul(sub(constant(Tensor({1}, 1.0)), z), hidden), mul(z, cand));
        phi = add(phi, apply_conv(p.proj, hidden, 1, 1));
    }
    return phi;
}

// ---------------------------------------------------------------------------
// Uncertainty-weighted multi-scale fusion

struct ScaleEstimate {
    ad::Var field;  // refined field at its native scale, 2×h×w
    ad::Var sigma;  // uncertainty at its native scale, 1×h×w
};

inline ad::Var msf_fuse(const ad::Var& refined, const ad::Var& sigma_k,
                        const std::vector<ScaleEstimate>& history, std::size_t k,
                        const MirModel& m) {
    using namespace ad;
    if (history.size() != k)
        throw std::invalid_argument("msf_fuse expects exactly k history entries");
    const std::size_t h = refined->value.shape[1], w = refined->value.shape[2];

    std::vector<Var> candidates, logits;
    auto push_scale = [&](const Var& field_up, const Var& sigma_native, bool modulate) {
        Var r = field_correlation_v(field_up, refined, m.cfg.corr_window);  // h×w
        Var r3 = reshape(r, {1, h, w});
        Var cand = field_up;
        if (modulate) {
            Var gate = sigmoid(apply_conv(m.msf_mod[k - 1], r3, 1, 1));
            cand = mul(field_up, gate);  // 1×h×w gate broadcasts over channels
        }
        Var sig_up = resize_bilinear(sigma_native, h, w);  // variance is not rescaled
        candidates.push_back(cand);
        logits.push_back(mul_scalar(mul(sig_up, r3), -m.cfg.beta));
    };

    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t factor = 1ULL << (k - i);
        push_scale(upsample_field_v(history[i].field, factor), history[i].sigma, true);
    }
    push_scale(refined, sigma_k, false);

    Var fused;
    if (candidates.size() == 1) {
        fused = candidates[0];
    } else {
        Var weights = softmax(concat(logits, 0), 0);  // (k+1)×h×w, sums to 1 pixelwise
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            Var wi = slice(weights, {i, 0, 0}, {1, h, w});
            Var term = mul(candidates[i], wi);
            fused = i == 0 ? term : add(fused, term);
        }
    }
    return vecint_v(fused, m.cfg.int_steps);
}

// ---------------------------------------------------------------------------
// End-to-end registration

struct ScaleRecordV {
    ad::Var mean;     // MCFE mean field (residual at this scale)
    ad::Var sigma;    // 1×h×w uncertainty
    ad::Var refined;  // total refined field at this scale
    ad::Var fused;    // MSF output at this scale
};

struct RegistrationGraph {
    ad::Var final_field;  // 2×H×W
    ad::Var registered;   // 1×H×W warped infrared
    std::vector<ScaleRecordV> per_scale;
};

inline RegistrationGraph register_graph(const ad::Var& i_ir, const Tensor& i_vis,
                                        const MirModel& m, Rng& rng) {
    using namespace ad;
    const Tensor& irv = i_ir->value;
    if (irv.rank() != 2 || irv.shape != i_vis.shape)
        throw std::invalid_argument("register expects matching H×W images");

    const Tensor pseudo = modality_bridge(Image(i_vis)).pixels;
    std::vector<Var> pyr_ir = encode_multiscale(i_ir, m);
    std::vector<Var> pyr_p = encode_multiscale(constant(pseudo), m);

    RegistrationGraph out;
    std::vector<ScaleEstimate> history;
    Var prev_fused;
    const std::size_t K = m.cfg.scales;
    for (std::size_t k = 0; k <= K; ++k) {
        Var f_ir = pyr_ir[k];
        Var prewarp;
        if (k > 0) {
            prewarp = upsample_field_v(prev_fused, 2);
            f_ir = warp_bilinear_v(f_ir, prewarp);
        }
        Var corr = correlation_map(f_ir, pyr_p[k]);
        McfeResult est =
            mcfe_sample(f_ir, pyr_p[k], m.mcfe[k], m.cfg.mc_samples, m.cfg.dropout_rate, rng);
        Var costs = local_cost_volume(f_ir, pyr_p[k], MirModel::kCostRadius);
        Var feat = concat({f_ir, pyr_p[k], costs}, 0);
        Var refined = frb_refine(est.mean, feat, corr, m.frb[k], m.cfg.gru_steps);
        // The estimate is a residual on top of the pre-warp; fold the
        // pre-warp in so fields from different scales live in the same
        // (total-deformation) frame before fusion.
        if (k > 0) refined = compose_fields_v(prewarp, refined);
        Var fused = msf_fuse(refined, est.sigma, history, k, m);
        history.push_back({refined, est.sigma});
        out.per_scale.push_back({est.mean, est.sigma, refined, fused});
        prev_fused = fused;
    }

    out.final_field = prev_fused;
    out.registered =
        warp_bilinear_v(reshape(i_ir, {1, irv.shape[0], irv.shape[1]}), out.final_field);
    return out;
}

struct ScaleRecord {
    Tensor mean;
    Tensor sigma;
    Tensor refined;
    Tensor fused;
};

struct RegistrationOutput {
    DeformationField final_field;
    Image registered;
    std::vector<ScaleRecord> per_scale;
};

inline RegistrationOutput register_images(const Image& i_ir, const Image& i_vis,
                                          const MirModel& m, std::uint64_t seed) {
    Rng rng(seed);
    RegistrationGraph g = register_graph(ad::constant(i_ir.pixels), i_vis.pixels, m, rng);
    RegistrationOutput out;
    out.final_field = DeformationField(g.final_field->value);
    Tensor reg = g.registered->value;
    out.registered = Image(Tensor({reg.shape[1], reg.shape[2]}, std::move(reg.data)));
    for (const auto& rec : g.per_scale)
        out.per_scale.push_back(
            {rec.mean->value, rec.sigma->value, rec.refined->value, rec.fused->value});
    return out;
}

}  // namespace sfrf
