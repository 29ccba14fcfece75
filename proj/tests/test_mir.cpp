#include <catch2/catch_amalgamated.hpp>

#include "sfrf/gradcheck.hpp"
#include "sfrf/mir.hpp"

using namespace sfrf;
using ad::Var;

namespace {

struct Fixture {
    ParamStore store;
    Rng rng;
    MirModel model;
    explicit Fixture(std::uint64_t seed = 1234, RegConfig cfg = {})
        : rng(seed), model(store, cfg, rng) {}
};

Tensor random_image(std::uint64_t seed, std::size_t h, std::size_t w) {
    Rng rng(seed);
    return Tensor::random_uniform({h, w}, rng);
}

}  // namespace

TEST_CASE("encoder pyramid shapes and determinism") {
    Fixture fx;
    Var img = ad::constant(random_image(5, 64, 64));
    auto p1 = encode_multiscale(img, fx.model);
    REQUIRE(p1.size() == 3);
    CHECK(p1[0]->value.shape == Shape{32, 16, 16});
    CHECK(p1[1]->value.shape == Shape{16, 32, 32});
    CHECK(p1[2]->value.shape == Shape{8, 64, 64});

    auto p2 = encode_multiscale(img, fx.model);
    for (std::size_t i = 0; i < 3; ++i) CHECK(p1[i]->value.data == p2[i]->value.data);
}

TEST_CASE("encoder rejects indivisible extents, naming the required multiple") {
    Fixture fx;
    CHECK_THROWS_WITH(encode_multiscale(ad::constant(Tensor({30, 64})), fx.model),
                      Catch::Matchers::ContainsSubstring("divisible by 4"));
}

TEST_CASE("zero image with zero biases encodes to all-zero maps") {
    Fixture fx;
    auto pyr = encode_multiscale(ad::constant(Tensor({16, 16})), fx.model);
    for (const auto& level : pyr)
        for (double v : level->value.data) CHECK(v == 0.0);
}

TEST_CASE("uncertainty is exactly zero without stochasticity") {
    Fixture fx;
    Rng data_rng(9);
    Var f_ir = ad::constant(Tensor::random_uniform({8, 8, 8}, data_rng, -1, 1));
    Var f_pir = ad::constant(Tensor::random_uniform({8, 8, 8}, data_rng, -1, 1));

    Rng mc_rng(10);
    McfeResult no_drop = mcfe_sample(f_ir, f_pir, fx.model.mcfe[2], 10, 0.0, mc_rng);
    for (double v : no_drop.sigma->value.data) CHECK(v == 0.0);

    McfeResult single = mcfe_sample(f_ir, f_pir, fx.model.mcfe[2], 1, 0.2, mc_rng);
    for (double v : single.sigma->value.data) CHECK(v == 0.0);

    CHECK_THROWS_AS(mcfe_sample(f_ir, f_pir, fx.model.mcfe[2], 10, 1.0, mc_rng),
                    std::invalid_argument);
}

TEST_CASE("mean and variance match recomputation from logged samples") {
    Fixture fx;
    Rng data_rng(11);
    Var f_ir = ad::constant(Tensor::random_uniform({8, 8, 8}, data_rng, -1, 1));
    Var f_pir = ad::constant(Tensor::random_uniform({8, 8, 8}, data_rng, -1, 1));

    const std::size_t n = 10;
    Rng mc_rng(77);
    std::vector<Var> samples;
    McfeResult est = mcfe_sample(f_ir, f_pir, fx.model.mcfe[2], n, 0.2, mc_rng, &samples);
    REQUIRE(samples.size() == n);

    const std::size_t numel = est.mean->value.numel();
    for (std::size_t i = 0; i < numel; ++i) {
        double mean = 0.0;
        for (const auto& s : samples) mean += s->value[i];
        mean /= static_cast<double>(n);
        CHECK(est.mean->value[i] == Catch::Approx(mean).margin(1e-12));
    }
    // sigma is the channel-mean of the per-channel population variance
    const std::size_t hw = numel / 2;
    for (std::size_t q = 0; q < hw; ++q) {
        double var = 0.0;
        for (std::size_t c = 0; c < 2; ++c) {
            double mean = 0.0;
            for (const auto& s : samples) mean += s->value[c * hw + q];
            mean /= static_cast<double>(n);
            for (const auto& s : samples) {
                const double d = s->value[c * hw + q] - mean;
                var += d * d;
            }
        }
        var /= static_cast<double>(2 * n);
        CHECK(est.sigma->value[q] == Catch::Approx(var).margin(1e-12));
        CHECK(est.sigma->value[q] >= 0.0);
    }
}

TEST_CASE("refinement is residual: T = 0 and zero projection are identities") {
    Fixture fx;
    Rng data_rng(12);
    const std::size_t c = 8, h = 8, w = 8;
    Var phi0 = ad::constant(Tensor::random_uniform({2, h, w}, data_rng, -1, 1));
    Var feat = ad::constant(
        Tensor::random_uniform({2 * c + MirModel::kCostChans, h, w}, data_rng, -1, 1));
    Var corr = ad::constant(Tensor::random_uniform({h, w}, data_rng, -1, 1));

    Var out0 = frb_refine(phi0, feat, corr, fx.model.frb[2], 0);
    CHECK(out0->value.data == phi0->value.data);

    Fixture zeroed;
    zeroed.model.frb[2].proj.w->value.fill(0.0);
    zeroed.model.frb[2].proj.b->value.fill(0.0);
    Var out3 = frb_refine(phi0, feat, corr, zeroed.model.frb[2], 3);
    for (std::size_t i = 0; i < phi0->value.numel(); ++i)
        CHECK(out3->value[i] == Catch::Approx(phi0->value[i]).margin(1e-15));
}

TEST_CASE("refinement equals a manual unroll and accumulates its updates") {
    Fixture fx;
    Rng data_rng(13);
    const std::size_t c = 8, h = 8, w = 8;
    Var phi0 = ad::constant(Tensor::random_uniform({2, h, w}, data_rng, -0.5, 0.5));
    Var feat = ad::constant(
        Tensor::random_uniform({2 * c + MirModel::kCostChans, h, w}, data_rng, -1, 1));
    Var corr = ad::constant(Tensor::random_uniform({h, w}, data_rng, -1, 1));
    auto& p = fx.model.frb[2];
    // the projection initializes to zero; give it structure so the unroll
    // oracle exercises a non-trivial residual accumulation
    p.proj.w->value = Tensor::random_uniform({2, MirModel::kGruHidden, 3, 3}, data_rng, -0.3, 0.3);
    p.proj.b->value = Tensor::random_uniform({2}, data_rng, -0.1, 0.1);

    Var out = frb_refine(phi0, feat, corr, p, 3);

    // manual unroll with the same parameters
    using namespace ad;
    Var corr3 = reshape(corr, {1, h, w});
    Var phi = phi0;
    Var hidden = constant(Tensor({MirModel::kGruHidden, h, w}));
    Tensor update_sum({2, h, w});
    for (int t = 0; t < 3; ++t) {
        Var x = concat({phi, feat, corr3}, 0);
        Var xh = concat({x, hidden}, 0);
        Var z = sigmoid(conv2d(xh, p.wz.w, p.wz.b, 1, 1));
        Var r = sigmoid(conv2d(xh, p.wr.w, p.wr.b, 1, 1));
        Var cand = tanh_(conv2d(concat({x, mul(r, hidden)}, 0), p.wc.w, p.wc.b, 1, 1));
        for (double v : z->value.data) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
        hidden = add(mul(sub(constant(Tensor({1}, 1.0)), z), hidden), mul(z, cand));
        Var upd = conv2d(hidden, p.proj.w, p.proj.b, 1, 1);
        for (std::size_t i = 0; i < update_sum.numel(); ++i)
            update_sum[i] += upd->value[i];
        phi = add(phi, upd);
    }
    for (std::size_t i = 0; i < out->value.numel(); ++i) {
        CHECK(out->value[i] == Catch::Approx(phi->value[i]).margin(1e-12));
        // residual property: output - input = sum of projected updates
        CHECK(out->value[i] - phi0->value[i] ==
              Catch::Approx(update_sum[i]).margin(1e-12));
    }
}

TEST_CASE("single-scale fusion integrates the refined field directly") {
    Fixture fx;
    Rng data_rng(14);
    Var refined = ad::constant(Tensor::random_uniform({2, 8, 8}, data_rng, -1, 1));
    Var sigma = ad::constant(Tensor::random_uniform({1, 8, 8}, data_rng, 0, 0.3));
    Var fused = msf_fuse(refined, sigma, {}, 0, fx.model);
    Var ref = vecint_v(refined, fx.model.cfg.int_steps);
    for (std::size_t i = 0; i < ref->value.numel(); ++i)
        CHECK(fused->value[i] == Catch::Approx(ref->value[i]).margin(1e-12));

    CHECK_THROWS_AS(msf_fuse(refined, sigma, {}, 1, fx.model), std::invalid_argument);
}

TEST_CASE("two-scale fusion matches a step-by-step oracle and weights sum to one") {
    Fixture fx;
    Rng data_rng(15);
    const std::size_t h = 8, w = 8;
    ScaleEstimate hist{ad::constant(Tensor::random_uniform({2, h / 2, w / 2}, data_rng, -1, 1)),
                       ad::constant(Tensor::random_uniform({1, h / 2, w / 2}, data_rng, 0, 0.3))};
    Var refined = ad::constant(Tensor::random_uniform({2, h, w}, data_rng, -1, 1));
    Var sigma = ad::constant(Tensor::random_uniform({1, h, w}, data_rng, 0, 0.3));

    Var fused = msf_fuse(refined, sigma, {hist}, 1, fx.model);

    using namespace ad;
    const auto& mod = fx.model.msf_mod[0];
    Var up = upsample_field_v(hist.field, 2);
    Var r0 = reshape(field_correlation_v(up, refined, 3), {1, h, w});
    Var cand0 = mul(up, sigmoid(conv2d(r0, mod.w, mod.b, 1, 1)));
    Var r1 = reshape(field_correlation_v(refined, refined, 3), {1, h, w});
    Var sig0 = resize_bilinear(hist.sigma, h, w);
    Var logits = concat({mul_scalar(mul(sig0, r0), -fx.model.cfg.beta),
                         mul_scalar(mul(sigma, r1), -fx.model.cfg.beta)},
                        0);
    Var weights = softmax(logits, 0);
    Var blended = add(mul(cand0, slice(weights, {0, 0, 0}, {1, h, w})),
                      mul(refined, slice(weights, {1, 0, 0}, {1, h, w})));
    Var ref = vecint_v(blended, fx.model.cfg.int_steps);

    for (std::size_t i = 0; i < ref->value.numel(); ++i)
        CHECK(fused->value[i] == Catch::Approx(ref->value[i]).margin(1e-9));

    for (std::size_t q = 0; q < h * w; ++q) {
        const double w0 = weights->value[q], w1 = weights->value[h * w + q];
        CHECK(w0 + w1 == Catch::Approx(1.0).margin(1e-9));
        CHECK(w0 >= 0.0);
        CHECK(w0 <= 1.0);
    }
}

TEST_CASE("zero confidence scale gives uniform fusion weights") {
    RegConfig cfg;
    cfg.beta = 0.0;
    cfg.int_steps = 0;  // read the blended field before integration
    Fixture fx(99, cfg);
    fx.model.msf_mod[0].w->value.fill(0.0);  // gate = sigmoid(0) = 0.5 exactly
    fx.model.msf_mod[0].b->value.fill(0.0);

    Rng data_rng(16);
    const std::size_t h = 8, w = 8;
    ScaleEstimate hist{ad::constant(Tensor::random_uniform({2, h / 2, w / 2}, data_rng, -1, 1)),
                       ad::constant(Tensor::random_uniform({1, h / 2, w / 2}, data_rng, 0, 0.3))};
    Var refined = ad::constant(Tensor::random_uniform({2, h, w}, data_rng, -1, 1));
    Var sigma = ad::constant(Tensor::random_uniform({1, h, w}, data_rng, 0, 0.3));

    Var fused = msf_fuse(refined, sigma, {hist}, 1, fx.model);
    Var up = upsample_field_v(hist.field, 2);
    // uniform halves of (0.5 * upsampled) and refined
    for (std::size_t i = 0; i < fused->value.numel(); ++i)
        CHECK(fused->value[i] ==
              Catch::Approx(0.5 * (0.5 * up->value[i]) + 0.5 * refined->value[i])
                  .margin(1e-12));
}

TEST_CASE("larger uncertainty never gains fusion weight as beta grows") {
    Rng data_rng(17);
    const std::size_t h = 8, w = 8;
    // identical non-constant fields at both scales so R is ~1 for both and
    // only sigma separates the logits
    Tensor coarse = Tensor::random_uniform({2, h / 2, w / 2}, data_rng, -1, 1);

    auto weight0 = [&](double beta) {
        RegConfig cfg;
        cfg.beta = beta;
        cfg.int_steps = 0;
        Fixture fx(5, cfg);
        fx.model.msf_mod[0].w->value.fill(0.0);
        fx.model.msf_mod[0].b->value.fill(0.0);

        ScaleEstimate hist{ad::constant(coarse),
                           ad::constant(Tensor({1, h / 2, w / 2}, 0.2))};
        Var refined = upsample_field_v(ad::constant(coarse), 2);
        Var sigma = ad::constant(Tensor({1, h, w}, 0.1));
        Var fused = msf_fuse(refined, sigma, {hist}, 1, fx.model);
        // fused = (w0*0.5 + w1) * refined with w0 + w1 = 1 -> recover w0
        double w0_mean = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < fused->value.numel(); ++i) {
            const double r = refined->value[i];
            if (std::abs(r) < 0.2) continue;
            w0_mean += 2.0 * (1.0 - fused->value[i] / r);
            ++n;
        }
        REQUIRE(n > 0);
        return w0_mean / static_cast<double>(n);
    };

    const double w0_b0 = weight0(0.0), w0_b1 = weight0(1.0), w0_b4 = weight0(4.0);
    CHECK(w0_b0 == Catch::Approx(0.5).margin(1e-6));
    CHECK(w0_b1 < w0_b0 + 1e-9);
    CHECK(w0_b4 < w0_b1 + 1e-9);
}

TEST_CASE("untrained end-to-end registration honours its output contract") {
    Fixture fx(2024);
    SyntheticPair pair = gen_pair(3, 64, 64, 4.0, 2.0);

    RegistrationOutput out1 = register_images(pair.infrared_warped, pair.visible,
                                              fx.model, 555);
    CHECK(out1.final_field.displacement.shape == Shape{2, 64, 64});
    CHECK(out1.final_field.displacement.all_finite());
    CHECK(out1.registered.in_range());
    REQUIRE(out1.per_scale.size() == 3);
    for (const auto& rec : out1.per_scale)
        for (double v : rec.sigma.data) CHECK(v >= 0.0);

    RegistrationOutput out2 = register_images(pair.infrared_warped, pair.visible,
                                              fx.model, 555);
    CHECK(out1.final_field.displacement.data == out2.final_field.displacement.data);
    CHECK(out1.registered.pixels.data == out2.registered.pixels.data);
}

TEST_CASE("full registration graph passes the gradient check") {
    RegConfig cfg;
    cfg.mc_samples = 2;
    cfg.gru_steps = 1;
    Fixture fx(31, cfg);
    Tensor vis = random_image(41, 16, 16);
    Tensor ir = random_image(42, 16, 16);

    const double err = ad::finite_diff_check(
        [&](const Var& x) {
            Rng rng(321);  // same dropout masks on every evaluation
            RegistrationGraph g = register_graph(x, vis, fx.model, rng);
            return ad::mean_all(ad::mul(g.registered, g.registered));
        },
        ir, 1e-6);
    CHECK(err < 1e-3);
}
