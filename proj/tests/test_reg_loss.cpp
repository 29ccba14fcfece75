#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "sfrf/gradcheck.hpp"
#include "sfrf/mir.hpp"
#include "sfrf/reg_loss.hpp"

using namespace sfrf;
using ad::Var;

TEST_CASE("spectral distribution basics") {
    Tensor flat({4, 4}, 0.3);
    Tensor d = spectral_distribution(flat);
    CHECK(d.at2(0, 0) == Catch::Approx(1.0).margin(1e-12));
    for (std::size_t i = 1; i < 16; ++i) CHECK(d[i] == Catch::Approx(0.0).margin(1e-12));

    Rng rng(1);
    for (int t = 0; t < 10; ++t) {
        Tensor img = Tensor::random_uniform({8, 8}, rng);
        Tensor p = spectral_distribution(img);
        double sum = 0.0;
        for (double v : p.data) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(sum == Catch::Approx(1.0).margin(1e-12));
    }

    // single impulse: all DFT magnitudes equal, so the distribution is uniform
    Tensor impulse({2, 2}, {1, 0, 0, 0});
    Tensor u = spectral_distribution(impulse);
    for (double v : u.data) CHECK(v == Catch::Approx(0.25).margin(1e-12));

    CHECK_THROWS_WITH(spectral_distribution(Tensor({4, 4})),
                      Catch::Matchers::ContainsSubstring("degenerate"));
}

TEST_CASE("frequency consistency loss is a true divergence") {
    Rng rng(2);
    Tensor img = Tensor::random_uniform({8, 8}, rng, 0.1, 0.9);
    CHECK(freq_consistency_loss(Image(img), Image(img)) ==
          Catch::Approx(0.0).margin(1e-12));

    for (int t = 0; t < 1000; ++t) {
        Tensor a = Tensor::random_uniform({8, 8}, rng, 0.0, 1.0);
        Tensor b = Tensor::random_uniform({8, 8}, rng, 0.0, 1.0);
        CHECK(freq_consistency_loss(Image(a), Image(b)) >= -1e-12);
    }
}

TEST_CASE("frequency consistency matches a direct DFT + KL oracle") {
    Tensor gt({2, 2}, {1, 0, 0, 0});
    Tensor reg({2, 2}, {0.5, 0.5, 0.5, 0.5});
    auto dist = [](const Tensor& img) {
        auto spec = oracle::dft2_direct(img);
        std::vector<double> p(spec.size());
        double sum = 0.0;
        for (std::size_t i = 0; i < spec.size(); ++i) {
            p[i] = std::abs(spec[i]);
            sum += p[i];
        }
        for (auto& v : p) v /= sum;
        return p;
    };
    auto pg = dist(gt), pr = dist(reg);
    // the prediction's spectrum has empty bins, so the oracle applies the
    // same eps smoothing the loss contract specifies
    auto smooth = [](std::vector<double> p) {
        double sum = 0.0;
        for (auto& v : p) {
            v += kLossEps;
            sum += v;
        }
        for (auto& v : p) v /= sum;
        return p;
    };
    pg = smooth(pg);
    pr = smooth(pr);
    double kl = 0.0;
    for (std::size_t i = 0; i < 4; ++i) kl += pg[i] * std::log(pg[i] / pr[i]);
    CHECK(freq_consistency_loss(Image(reg), Image(gt)) ==
          Catch::Approx(kl).margin(1e-9));
}

TEST_CASE("frequency consistency is differentiable in the prediction") {
    Rng rng(3);
    Tensor gt = Tensor::random_uniform({6, 6}, rng, 0.1, 0.9);
    const double err = ad::finite_diff_check(
        [&](const Var& x) { return freq_consistency_loss_v(x, gt); },
        Tensor::random_uniform({6, 6}, rng, 0.1, 0.9), 1e-6);
    CHECK(err < 1e-3);
}

TEST_CASE("uncertainty loss plug-in values") {
    Var r0 = ad::constant(Tensor({1, 4, 4}));
    Var s0 = ad::constant(Tensor({1, 4, 4}));
    auto [u1, u2] = uncertainty_loss_v({{r0, s0}, {r0, s0}});
    CHECK(u1->value[0] == Catch::Approx(2.0 * std::log(kLossEps)).margin(1e-9));
    CHECK(u2->value[0] == 0.0);

    Rng rng(4);
    Tensor sig = Tensor::random_uniform({1, 4, 4}, rng, 0.0, 0.5);
    Tensor sig2 = sig;
    for (auto& v : sig2.data) v *= 2.0;
    auto [u1a, u2a] = uncertainty_loss_v({{r0, ad::constant(sig)}});
    auto [u1b, u2b] = uncertainty_loss_v({{r0, ad::constant(sig2)}});
    CHECK(u2b->value[0] == Catch::Approx(2.0 * u2a->value[0]).margin(1e-12));

    Tensor bad({1, 2, 2}, {0.1, -0.1, 0.1, 0.1});
    CHECK_THROWS_AS(uncertainty_loss_v({{r0, ad::constant(Tensor({1, 2, 2}))}}),
                    std::invalid_argument);  // shape mismatch
    Var r_small = ad::constant(Tensor({1, 2, 2}));
    CHECK_THROWS_AS(uncertainty_loss_v({{r_small, ad::constant(bad)}}),
                    std::invalid_argument);  // negative sigma
}

TEST_CASE("uncertainty reconstruction term is minimized near the residual level") {
    const double r = 0.35;
    Var rmap = ad::constant(Tensor({1, 4, 4}, r));
    double best_sigma = -1.0, best_val = 1e300;
    for (double s = 1e-3; s < 1.0; s += 1e-3) {
        auto [u1, u2] = uncertainty_loss_v({{rmap, ad::constant(Tensor({1, 4, 4}, s))}});
        if (u1->value[0] < best_val) {
            best_val = u1->value[0];
            best_sigma = s;
        }
    }
    CHECK(best_sigma == Catch::Approx(r).margin(2e-3));
}

TEST_CASE("similarity loss endpoints and oracle agreement") {
    Rng rng(5);
    Tensor img = Tensor::random_uniform({16, 16}, rng);
    CHECK(similarity_loss(Image(img), Image(img)) == Catch::Approx(0.0).margin(1e-6));

    Tensor negated = img;
    for (auto& v : negated.data) v = -v;
    CHECK(similarity_loss_v(ad::constant(img), ad::constant(negated))->value[0] ==
          Catch::Approx(2.0).margin(1e-6));

    Tensor other = Tensor::random_uniform({16, 16}, rng);
    Tensor ncc = oracle::windowed_zncc_direct(Tensor({1, 16, 16}, img.data),
                                              Tensor({1, 16, 16}, other.data), 9);
    double ref = 1.0 - ncc.mean();
    double got = similarity_loss(Image(img), Image(other));
    CHECK(got == Catch::Approx(ref).margin(1e-9));
    CHECK(got >= 0.0);
    CHECK(got <= 2.0);
}

TEST_CASE("smoothness loss closed forms") {
    CHECK(smoothness_loss(DeformationField(6, 6)) == 0.0);

    DeformationField ramp(6, 6);
    for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t x = 0; x < 6; ++x) ramp.dy(y, x) = static_cast<double>(y);
    CHECK(smoothness_loss(ramp) == Catch::Approx(0.5).margin(1e-12));

    Rng rng(6);
    DeformationField f(6, 6);
    for (auto& v : f.displacement.data) v = rng.uniform(-1, 1);
    DeformationField f2(6, 6);
    for (std::size_t i = 0; i < f.displacement.numel(); ++i)
        f2.displacement[i] = 2.0 * f.displacement[i];
    CHECK(smoothness_loss(f2) == Catch::Approx(4.0 * smoothness_loss(f)).epsilon(1e-12));
}

TEST_CASE("total loss is additive and vanishes for perfect registration") {
    Rng rng(7);
    Tensor img = Tensor::random_uniform({8, 8}, rng, 0.1, 0.9);
    Var registered = ad::constant(Tensor({1, 8, 8}, img.data));
    std::vector<Var> sigmas = {ad::constant(Tensor({1, 4, 4}, 1e-12)),
                               ad::constant(Tensor({1, 8, 8}, 1e-12))};
    RegLossGraph g = total_reg_loss_v(registered, img, img, sigmas,
                                      ad::constant(Tensor({2, 8, 8})));
    RegLossBreakdown b = g.values();
    CHECK(b.freq == Catch::Approx(0.0).margin(1e-12));
    CHECK(b.sim == Catch::Approx(0.0).margin(1e-6));
    CHECK(b.smooth == 0.0);
    CHECK(b.total ==
          Catch::Approx(b.freq + b.u1 + b.u2 + b.sim + b.smooth).margin(1e-12));
}

TEST_CASE("registration pipeline plus losses pass the end-to-end gradient check") {
    RegConfig cfg;
    cfg.mc_samples = 2;
    cfg.gru_steps = 1;
    ParamStore store;
    Rng init_rng(8);
    MirModel model(store, cfg, init_rng);

    Rng data_rng(9);
    Tensor vis = Tensor::random_uniform({16, 16}, data_rng, 0.1, 0.9);
    Tensor gt = Tensor::random_uniform({16, 16}, data_rng, 0.1, 0.9);
    Tensor ir = Tensor::random_uniform({16, 16}, data_rng, 0.1, 0.9);
    const Tensor pseudo = modality_bridge(Image(vis)).pixels;

    const double err = ad::finite_diff_check(
        [&](const Var& x) {
            Rng rng(777);  // identical dropout masks on every evaluation
            RegistrationGraph g = register_graph(x, vis, model, rng);
            std::vector<Var> sigmas;
            for (const auto& rec : g.per_scale) sigmas.push_back(rec.sigma);
            return total_reg_loss_v(g.registered, gt, pseudo, sigmas, g.final_field).total;
        },
        ir, 1e-6);
    CHECK(err < 1e-3);
}
