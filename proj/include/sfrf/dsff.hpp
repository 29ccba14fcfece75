#pragma once

// Dual-branch spatial-frequency fusion: spectral decomposition, heat-aware
// phase fusion, patchwise-attention amplitude fusion, a spatial attention
// branch, residual reconstruction, and the fusion losses.

#include "sfrf/metrics.hpp"
#include "sfrf/mir.hpp"
#include "sfrf/params.hpp"

namespace sfrf {

struct SpectralPair {
    Tensor amplitude;  // H×W, >= 0
    Tensor phase;      // H×W, radians in (-pi, pi]
};

struct SpectralPairV {
    ad::Var amplitude;
    ad::Var phase;
};

inline SpectralPairV decompose_fft_v(const ad::Var& image) {
    using namespace ad;
    if (image->value.rank() != 2) throw std::invalid_argument("decompose_fft expects H×W");
    Var spec = fft2_op(image);
    return {complex_abs(spec), complex_arg(spec)};
}

inline SpectralPair decompose_fft(const Image& image) {
    SpectralPairV v = decompose_fft_v(ad::constant(image.pixels));
    return {v.amplitude->value, v.phase->value};
}

// Reassembles the image from an (amplitude, phase) pair.
inline ad::Var reconstruct_check_v(const ad::Var& amplitude, const ad::Var& phase) {
    return ad::ifft2_op(ad::complex_from_polar(amplitude, phase));
}

// Heat prior: infrared intensity min-max normalized to [0,1]; a constant
// image carries no heat contrast and maps to zero.
inline Tensor heat_prior(const Tensor& ir) {
    double lo = ir[0], hi = ir[0];
    for (double v : ir.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Tensor out(ir.shape);
    if (hi - lo > 1e-12)
        for (std::size_t i = 0; i < ir.numel(); ++i) out[i] = (ir[i] - lo) / (hi - lo);
    return out;
}

struct DsffModel {
    static constexpr std::size_t kPatch = 8;    // self-attention patch extent
    static constexpr std::size_t kAttnDim = 4;  // query/key embedding width

    ConvLayer head_ir_p, head_vis_p, head_ir_a, head_vis_a;  // 1x1 feature heads

    // Phase attention: 3x3 conv over (F_ir^P, F_vis^P, heat) + sigmoid. The
    // heat-channel taps are stored pre-softplus so the effective weights are
    // strictly positive and a rising heat prior can never lower the gate.
    ad::Var pf_w_feat;  // 1×2×3×3
    ad::Var pf_w_heat;  // 1×1×3×3, used as softplus(raw)
    ad::Var pf_b;       // 1

    ConvLayer sa_q, sa_k, sa_v;  // 1x1 convs for the patch attention

    struct SpatialBlock {
        ad::Var ca_w, ca_b;  // channel attention: dense mix of channel means
        ConvLayer ca_out;    // closes the attention branch; zero weights = identity block
        ConvLayer ff_gate, ff_value, ff_out;  // gated feed-forward (1x1 convs)
    };
    static constexpr std::size_t kSpatialBlocks = 3;
    static constexpr std::size_t kSpatialChannels = 2;  // the (ir, vis) concat
    std::vector<SpatialBlock> spatial;
    ConvLayer spatial_proj;  // 1x1, 2 -> 1

    struct ResBlock {
        ConvLayer c1, c2;  // 3x3 convs
    };
    static constexpr std::size_t kResBlocks = 4;
    std::vector<ResBlock> recon;
    ConvLayer recon_proj;  // 1x1, 2 -> 1

    DsffModel(ParamStore& store, Rng& rng) {
        auto make_conv = [&](const std::string& name, std::size_t co, std::size_t ci,
                             std::size_t k) {
            return ConvLayer{store.create(name + ".w", {co, ci, k, k}, rng),
                             store.create_zero(name + ".b", {co})};
        };
        head_ir_p = make_conv("dsff.head_ir_p", 1, 1, 1);
        head_vis_p = make_conv("dsff.head_vis_p", 1, 1, 1);
        head_ir_a = make_conv("dsff.head_ir_a", 1, 1, 1);
        head_vis_a = make_conv("dsff.head_vis_a", 1, 1, 1);
        // Spectral edits start near zero: unit-scale head weights rotate the
        // DC phase so far that the reconstructed image leaves [0,1] wholesale
        // and the output clamp zeroes every gradient in the branch.
        for (ConvLayer* l : {&head_ir_p, &head_vis_p, &head_ir_a, &head_vis_a})
            for (auto& v : l->w->value.data) v *= 0.1;

        pf_w_feat = store.create("dsff.pf.w_feat", {1, 2, 3, 3}, rng);
        pf_w_heat = store.create("dsff.pf.w_heat", {1, 1, 3, 3}, rng);
        pf_b = store.create_zero("dsff.pf.b", {1});

        sa_q = make_conv("dsff.sa.q", kAttnDim, 1, 1);
        sa_k = make_conv("dsff.sa.k", kAttnDim, 1, 1);
        sa_v = make_conv("dsff.sa.v", 1, 1, 1);
        for (ConvLayer* l : {&sa_q, &sa_k, &sa_v})
            for (auto& v : l->w->value.data) v *= 0.1;

        spatial.resize(kSpatialBlocks);
        for (std::size_t i = 0; i < kSpatialBlocks; ++i) {
            const std::string tag = "dsff.spa" + std::to_string(i);
            spatial[i].ca_w = store.create(
                tag + ".ca.w", {kSpatialChannels, kSpatialChannels, 1, 1}, rng);
            spatial[i].ca_b = store.create_zero(tag + ".ca.b", {kSpatialChannels});
            spatial[i].ca_out = make_conv(tag + ".ca_out", kSpatialChannels,
                                          kSpatialChannels, 1);
            spatial[i].ff_gate = make_conv(tag + ".ff_gate", kSpatialChannels,
                                           kSpatialChannels, 1);
            spatial[i].ff_value = make_conv(tag + ".ff_value", kSpatialChannels,
                                            kSpatialChannels, 1);
            spatial[i].ff_out = make_conv(tag + ".ff_out", kSpatialChannels,
                                          kSpatialChannels, 1);
        }
        spatial_proj = make_conv("dsff.spa_proj", 1, kSpatialChannels, 1);

        recon.resize(kResBlocks);
        for (std::size_t i = 0; i < kResBlocks; ++i) {
            const std::string tag = "dsff.res" + std::to_string(i);
            recon[i].c1 = make_conv(tag + ".c1", 2, 2, 3);
            recon[i].c2 = make_conv(tag + ".c2", 2, 2, 3);
        }
        recon_proj = make_conv("dsff.recon_proj", 1, 2, 1);
    }
};

namespace dsff_detail {

// 1x1 head applied to an H×W map.
inline ad::Var head(const ConvLayer& l, const ad::Var& x) {
    const std::size_t h = x->value.shape[0], w = x->value.shape[1];
    return ad::reshape(ad::conv2d(ad::reshape(x, {1, h, w}), l.w, l.b, 1, 0), {h, w});
}

// Replicate-pad a 1×H×W map on the bottom/right to multiples of `m`.
inline ad::Var pad_to_multiple(const ad::Var& x, std::size_t m) {
    using namespace ad;
    std::size_t h = x->value.shape[1], w = x->value.shape[2];
    Var out = x;
    if (w % m != 0) {
        Var last = slice(out, {0, 0, w - 1}, {1, h, 1});
        std::vector<Var> parts{out};
        for (std::size_t i = 0; i < m - w % m; ++i) parts.push_back(last);
        out = concat(parts, 2);
        w = out->value.shape[2];
    }
    if (h % m != 0) {
        Var last = slice(out, {0, h - 1, 0}, {1, 1, w});
        std::vector<Var> parts{out};
        for (std::size_t i = 0; i < m - h % m; ++i) parts.push_back(last);
        out = concat(parts, 1);
    }
    return out;
}

}  // namespace dsff_detail

// Eq-style phase fusion: a = sigma(conv(F_ir^P, F_vis^P, heat)),
// output = a * F_ir^P + (1 - a) * F_vis^P + P_vis.
struct PhaseFusion {
    ad::Var fused;      // H×W
    ad::Var attention;  // H×W in (0,1)
};

inline PhaseFusion phase_fusion_v(const SpectralPairV& ir, const SpectralPairV& vis,
                                  const ad::Var& heat, const DsffModel& m) {
    using namespace ad;
    const std::size_t h = ir.phase->value.shape[0], w = ir.phase->value.shape[1];
    if (vis.phase->value.shape != ir.phase->value.shape ||
        heat->value.shape != ir.phase->value.shape)
        throw std::invalid_argument("phase_fusion extent mismatch");

    Var f_ir = dsff_detail::head(m.head_ir_p, ir.phase);
    Var f_vis = dsff_detail::head(m.head_vis_p, vis.phase);

    Var stack = concat({reshape(f_ir, {1, h, w}), reshape(f_vis, {1, h, w}),
                        reshape(heat, {1, h, w})},
                       0);
    Var kernel = concat({m.pf_w_feat, softplus(m.pf_w_heat)}, 1);
    Var a = reshape(sigmoid(conv2d(stack, kernel, m.pf_b, 1, 1)), {h, w});

    Var one_minus_a = sub(constant(Tensor({1}, 1.0)), a);
    Var fused = add(add(mul(a, f_ir), mul(one_minus_a, f_vis)), vis.phase);
    return {fused, a};
}

// Patchwise self-attention gain over the infrared amplitude features:
// softmax(q·k / sqrt(d)) within non-overlapping 8x8 patches, applied to a
// 1-channel value projection.
inline ad::Var sa_gain_v(const ad::Var& feat_hw, const DsffModel& m) {
    using namespace ad;
    const std::size_t h = feat_hw->value.shape[0], w = feat_hw->value.shape[1];
    constexpr std::size_t P = DsffModel::kPatch;
    constexpr std::size_t D = DsffModel::kAttnDim;

    Var x = dsff_detail::pad_to_multiple(reshape(feat_hw, {1, h, w}), P);
    const std::size_t ph = x->value.shape[1], pw = x->value.shape[2];

    Var q = conv2d(x, m.sa_q.w, m.sa_q.b, 1, 0);  // D×ph×pw
    Var k = conv2d(x, m.sa_k.w, m.sa_k.b, 1, 0);
    Var v = conv2d(x, m.sa_v.w, m.sa_v.b, 1, 0);  // 1×ph×pw

    std::vector<Var> rows;
    for (std::size_t py = 0; py < ph; py += P) {
        std::vector<Var> cols;
        for (std::size_t px = 0; px < pw; px += P) {
            Var qp = reshape(slice(q, {0, py, px}, {D, P, P}), {D, P * P});
            Var kp = reshape(slice(k, {0, py, px}, {D, P, P}), {D, P * P});
            Var vp = reshape(slice(v, {0, py, px}, {1, P, P}), {1, P * P});
            // logits(i,j) = sum_d q(d,i) k(d,j) / sqrt(D)
            Var outer = mul(reshape(qp, {D, P * P, 1}), reshape(kp, {D, 1, P * P}));
            Var logits = mul_scalar(sum_axis(outer, 0), 1.0 / std::sqrt(double(D)));
            Var att = softmax(reshape(logits, {P * P, P * P}), 1);
            Var out = sum_axis(mul(att, vp), 1);  // (P*P)×1
            cols.push_back(reshape(out, {1, P, P}));
        }
        rows.push_back(concat(cols, 2));
    }
    Var full = concat(rows, 1);
    return reshape(slice(full, {0, 0, 0}, {1, h, w}), {h, w});
}

// A_f = SA(F_ir^A) * F_vis^A + A_ir.
inline ad::Var amplitude_fusion_v(const SpectralPairV& ir, const SpectralPairV& vis,
                                  const DsffModel& m) {
    using namespace ad;
    if (vis.amplitude->value.shape != ir.amplitude->value.shape)
        throw std::invalid_argument("amplitude_fusion extent mismatch");
    Var f_ir = dsff_detail::head(m.head_ir_a, ir.amplitude);
    Var f_vis = dsff_detail::head(m.head_vis_a, vis.amplitude);
    Var gain = sa_gain_v(f_ir, m);
    return add(mul(gain, f_vis), ir.amplitude);
}

struct FreqBranch {
    ad::Var image;      // H×W in [0,1]
    ad::Var attention;  // phase-fusion gate, H×W
};

// The heat prior is supplied by the caller as data: it guides the phase
// gate but is not itself part of the differentiable graph.
inline FreqBranch freq_branch_v(const ad::Var& registered_ir, const ad::Var& visible,
                                const ad::Var& heat, const DsffModel& m) {
    using namespace ad;
    if (registered_ir->value.shape != visible->value.shape)
        throw std::invalid_argument("freq_branch extent mismatch");
    SpectralPairV ir = decompose_fft_v(registered_ir);
    SpectralPairV vis = decompose_fft_v(visible);
    PhaseFusion pf = phase_fusion_v(ir, vis, heat, m);
    Var amp = amplitude_fusion_v(ir, vis, m);
    return {clamp01(reconstruct_check_v(amp, pf.fused)), pf.attention};
}

inline ad::Var spatial_branch_v(const ad::Var& registered_ir, const ad::Var& visible,
                                const DsffModel& m) {
    using namespace ad;
    if (registered_ir->value.shape != visible->value.shape)
        throw std::invalid_argument("spatial_branch extent mismatch");
    const std::size_t h = registered_ir->value.shape[0], w = registered_ir->value.shape[1];
    Var x = concat({reshape(registered_ir, {1, h, w}), reshape(visible, {1, h, w})}, 0);

    for (const auto& blk : m.spatial) {
        // channel attention: dense mix of the spatial channel means
        Var means = mean_axis(mean_axis(x, 2), 1);  // C×1×1
        Var gate = sigmoid(conv2d(means, blk.ca_w, blk.ca_b, 1, 0));
        x = add(x, apply_conv(blk.ca_out, mul(x, gate), 1, 0));
        // gated feed-forward
        Var g = sigmoid(apply_conv(blk.ff_gate, x, 1, 0));
        Var u = apply_conv(blk.ff_value, x, 1, 0);
        x = add(x, apply_conv(blk.ff_out, mul(g, u), 1, 0));
    }
    return clamp01(reshape(apply_conv(m.spatial_proj, x, 1, 0), {h, w}));
}

inline ad::Var reconstruct_final_v(const ad::Var& i_spa, const ad::Var& i_freq,
                                   const DsffModel& m) {
    using namespace ad;
    if (i_spa->value.shape != i_freq->value.shape)
        throw std::invalid_argument("reconstruct_final extent mismatch");
    const std::size_t h = i_spa->value.shape[0], w = i_spa->value.shape[1];
    Var x = concat({reshape(i_spa, {1, h, w}), reshape(i_freq, {1, h, w})}, 0);
    for (const auto& blk : m.recon)
        x = add(x, apply_conv(blk.c2, tanh_(apply_conv(blk.c1, x, 1, 1)), 1, 1));
    return clamp01(reshape(apply_conv(m.recon_proj, x, 1, 0), {h, w}));
}

struct FusionGraph {
    ad::Var final_image;  // H×W in [0,1]
    ad::Var freq_image;
    ad::Var spatial_image;
    ad::Var attention;  // phase gate, for the heat-aware checks
};

// Branch switches for ablation studies; a disabled branch's reconstruction
// input is substituted by the other branch's output.
struct FuseOptions {
    bool use_freq = true;
    bool use_spatial = true;
};

inline FusionGraph fuse_graph(const ad::Var& registered_ir, const ad::Var& visible,
                              const DsffModel& m, const FuseOptions& opt = {}) {
    if (!opt.use_freq && !opt.use_spatial)
        throw std::invalid_argument("fuse_graph needs at least one branch");
    FreqBranch fb;
    ad::Var spa;
    if (opt.use_freq) {
        ad::Var heat = ad::constant(heat_prior(registered_ir->value));
        fb = freq_branch_v(registered_ir, visible, heat, m);
    }
    if (opt.use_spatial) spa = spatial_branch_v(registered_ir, visible, m);
    ad::Var f = opt.use_freq ? fb.image : spa;
    ad::Var s = opt.use_spatial ? spa : fb.image;
    return {reconstruct_final_v(s, f, m), f, s, fb.attention};
}

inline Image fuse_images(const Image& registered_ir, const Image& visible,
                         const DsffModel& m, const FuseOptions& opt = {}) {
    FusionGraph g = fuse_graph(ad::constant(registered_ir.pixels),
                               ad::constant(visible.pixels), m, opt);
    return Image(g.final_image->value);
}

// ---------------------------------------------------------------------------
// Fusion losses

struct FusionLossBreakdown {
    double phase_l = 0, amp_l = 0, int_l = 0, grad_l = 0, ssim_l = 0, total = 0;
};

struct FusionLossGraph {
    ad::Var phase_l, amp_l, int_l, grad_l, ssim_l, total;

    FusionLossBreakdown values() const {
        return {phase_l->value[0], amp_l->value[0],  int_l->value[0],
                grad_l->value[0],  ssim_l->value[0], total->value[0]};
    }
};

namespace dsff_detail {

// Wrapped angular difference: atan2(sin d, cos d), continuous across the
// branch cut.
inline ad::Var wrap_angle(const ad::Var& d) {
    using namespace ad;
    const std::size_t h = d->value.shape[0], w = d->value.shape[1];
    Var ones = constant(Tensor({h, w}, 1.0));
    return complex_arg(complex_from_polar(ones, d));
}

// Sobel gradient pair (dy, dx) of an H×W map as a 2×H×W tensor.
inline ad::Var sobel(const ad::Var& img) {
    using namespace ad;
    const std::size_t h = img->value.shape[0], w = img->value.shape[1];
    Tensor k({2, 1, 3, 3}, {-1, -2, -1, 0, 0, 0, 1, 2, 1,    // dy
                            -1, 0, 1, -2, 0, 2, -1, 0, 1});  // dx
    return conv2d(reshape(img, {1, h, w}), constant(std::move(k)), 1, 1);
}

}  // namespace dsff_detail

// Squared spectral distances of the fused image against both sources:
// wrapped-phase and amplitude, each mean-reduced.
inline std::pair<ad::Var, ad::Var> fusion_freq_loss_v(const ad::Var& final_img,
                                                      const Tensor& ir, const Tensor& vis) {
    using namespace ad;
    SpectralPairV f = decompose_fft_v(final_img);
    SpectralPair si = decompose_fft(Image(ir));
    SpectralPair sv = decompose_fft(Image(vis));

    auto sq_phase = [&](const Tensor& ref) {
        Var d = dsff_detail::wrap_angle(sub(f.phase, constant(ref)));
        return mean_all(mul(d, d));
    };
    auto sq_amp = [&](const Tensor& ref) {
        Var d = sub(f.amplitude, constant(ref));
        return mean_all(mul(d, d));
    };
    return {add(sq_phase(si.phase), sq_phase(sv.phase)),
            add(sq_amp(si.amplitude), sq_amp(sv.amplitude))};
}

// Intensity, gradient, and SSIM spatial losses with per-pixel max-selection
// targets.
inline std::tuple<ad::Var, ad::Var, ad::Var> fusion_spatial_loss_v(const ad::Var& final_img,
                                                                   const Tensor& ir,
                                                                   const Tensor& vis) {
    using namespace ad;
    Tensor target(ir.shape);
    for (std::size_t i = 0; i < ir.numel(); ++i) target[i] = std::max(ir[i], vis[i]);
    Var int_l = mean_all(abs_(sub(final_img, constant(target))));

    Tensor gi = dsff_detail::sobel(constant(ir))->value;
    Tensor gv = dsff_detail::sobel(constant(vis))->value;
    Tensor gtarget(gi.shape);
    const std::size_t hw = ir.numel();
    for (std::size_t i = 0; i < hw; ++i) {
        const double mi = std::hypot(gi[i], gi[hw + i]);
        const double mv = std::hypot(gv[i], gv[hw + i]);
        const bool pick_ir = mi >= mv;
        gtarget[i] = pick_ir ? gi[i] : gv[i];
        gtarget[hw + i] = pick_ir ? gi[hw + i] : gv[hw + i];
    }
    Var grad_l =
        mean_all(abs_(sub(dsff_detail::sobel(final_img), constant(std::move(gtarget)))));

    Var mean_ssim = mul_scalar(add(ssim_v(final_img, constant(ir)),
                                   ssim_v(final_img, constant(vis))),
                               0.5);
    Var ssim_l = sub(constant(Tensor({1}, 1.0)), mean_ssim);
    return {int_l, grad_l, ssim_l};
}

inline FusionLossGraph total_fusion_loss_v(const ad::Var& final_img, const Tensor& ir,
                                           const Tensor& vis) {
    FusionLossGraph g;
    auto [phase_l, amp_l] = fusion_freq_loss_v(final_img, ir, vis);
    auto [int_l, grad_l, ssim_l] = fusion_spatial_loss_v(final_img, ir, vis);
    g.phase_l = phase_l;
    g.amp_l = amp_l;
    g.int_l = int_l;
    g.grad_l = grad_l;
    g.ssim_l = ssim_l;
    g.total = ad::add(ad::add(phase_l, amp_l), ad::add(ad::add(int_l, grad_l), ssim_l));
    return g;
}

}  // namespace sfrf
