#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "sfrf/field.hpp"
#include "sfrf/gradcheck.hpp"

using namespace sfrf;
using ad::Var;

namespace {

DeformationField constant_field(std::size_t h, std::size_t w, double dy, double dx) {
    DeformationField f(h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            f.dy(y, x) = dy;
            f.dx(y, x) = dx;
        }
    return f;
}

DeformationField smooth_random_field(std::uint64_t seed, std::size_t h, std::size_t w,
                                     double scale) {
    Rng rng(seed);
    DeformationField f(h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double fy = static_cast<double>(y) / h, fx = static_cast<double>(x) / w;
            f.dy(y, x) = scale * std::sin(6.28 * fx + rng.uniform01() * 0.01);
            f.dx(y, x) = scale * std::cos(6.28 * fy + rng.uniform01() * 0.01);
        }
    return f;
}

}  // namespace

TEST_CASE("zero field is the identity warp") {
    Rng rng(1);
    Tensor src = Tensor::random_uniform({2, 6, 7}, rng);
    Tensor out = warp_bilinear(src, DeformationField(6, 7));
    CHECK(out.data == src.data);
}

TEST_CASE("half-pixel shift on a horizontal ramp averages neighbours") {
    const std::size_t h = 4, w = 8;
    Tensor src({1, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            src.at3(0, y, x) = static_cast<double>(x) / w;
    Tensor out = warp_bilinear(src, constant_field(h, w, 0.0, 0.5));
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x + 1 < w; ++x)
            CHECK(out.at3(0, y, x) ==
                  Catch::Approx((x + 0.5) / w).margin(1e-12));
        // last column clamps to the border sample
        CHECK(out.at3(0, y, w - 1) == Catch::Approx((w - 1.0) / w).margin(1e-12));
    }
}

TEST_CASE("far out-of-range field clamps to the border column") {
    Rng rng(2);
    const std::size_t h = 5, w = 6;
    Tensor src = Tensor::random_uniform({1, h, w}, rng);
    Tensor out = warp_bilinear(src, constant_field(h, w, 0.0, w + 10.0));
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            CHECK(out.at3(0, y, x) == src.at3(0, y, w - 1));
}

TEST_CASE("integer in-range fields gather exact source pixels") {
    Rng rng(3);
    const std::size_t h = 8, w = 8;
    Tensor src = Tensor::random_uniform({2, h, w}, rng);
    DeformationField f(h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            f.dy(y, x) = static_cast<double>(rng.uniform_index(h)) - static_cast<double>(y);
            f.dx(y, x) = static_cast<double>(rng.uniform_index(w)) - static_cast<double>(x);
        }
    Tensor out = warp_bilinear(src, f);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t sy = static_cast<std::size_t>(y + f.dy(y, x));
                const std::size_t sx = static_cast<std::size_t>(x + f.dx(y, x));
                CHECK(out.at3(c, y, x) == src.at3(c, sy, sx));
            }
}

TEST_CASE("warp matches the per-pixel bilinear oracle") {
    Rng rng(4);
    const std::size_t h = 7, w = 9;
    Tensor src = Tensor::random_uniform({2, h, w}, rng);
    DeformationField f(h, w);
    for (std::size_t i = 0; i < f.displacement.numel(); ++i)
        f.displacement[i] = rng.uniform(-2.5, 2.5);
    Tensor out = warp_bilinear(src, f);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                CHECK(out.at3(c, y, x) ==
                      Catch::Approx(oracle::sample_bilinear_direct(src, c, y + f.dy(y, x),
                                                                   x + f.dx(y, x)))
                          .margin(1e-12));
}

TEST_CASE("warp rejects mismatched extents") {
    CHECK_THROWS_AS(warp_bilinear(Tensor({1, 4, 4}), DeformationField(5, 4)),
                    std::invalid_argument);
}

TEST_CASE("field upsampling rescales both grid and units") {
    DeformationField f = constant_field(4, 4, 1.0, 0.0);
    CHECK(upsample_field(f, 1).displacement.data == f.displacement.data);

    DeformationField up = upsample_field(f, 2);
    REQUIRE(up.height() == 8);
    REQUIRE(up.width() == 8);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) {
            CHECK(up.dy(y, x) == Catch::Approx(2.0).margin(1e-12));
            CHECK(up.dx(y, x) == Catch::Approx(0.0).margin(1e-12));
        }
}

TEST_CASE("field upsampling matches the resize oracle") {
    DeformationField f(6, 5);
    for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t x = 0; x < 5; ++x) {
            f.dy(y, x) = 0.3 * static_cast<double>(y) - 0.1 * static_cast<double>(x);
            f.dx(y, x) = 0.2 * static_cast<double>(x);
        }
    DeformationField up = upsample_field(f, 2);
    Tensor ref = oracle::resize_bilinear_direct(f.displacement, 12, 10);
    for (std::size_t i = 0; i < ref.numel(); ++i)
        CHECK(up.displacement[i] == Catch::Approx(2.0 * ref[i]).margin(1e-12));
}

TEST_CASE("zero field is the identity element of composition") {
    DeformationField f = smooth_random_field(5, 8, 8, 1.5);
    DeformationField zero(8, 8);
    CHECK(compose_fields(zero, f).displacement.data == f.displacement.data);
    Tensor right = compose_fields(f, zero).displacement;
    for (std::size_t i = 0; i < right.numel(); ++i)
        CHECK(right[i] == Catch::Approx(f.displacement[i]).margin(1e-12));
}

TEST_CASE("constant translations compose additively away from borders") {
    DeformationField a = constant_field(12, 12, 1.0, 0.5);
    DeformationField b = constant_field(12, 12, -0.5, 1.0);
    DeformationField c = compose_fields(a, b);
    for (std::size_t y = 3; y < 9; ++y)
        for (std::size_t x = 3; x < 9; ++x) {
            CHECK(c.dy(y, x) == Catch::Approx(0.5).margin(1e-9));
            CHECK(c.dx(y, x) == Catch::Approx(1.5).margin(1e-9));
        }
}

TEST_CASE("composition matches a per-pixel oracle") {
    DeformationField outer = smooth_random_field(6, 8, 8, 1.2);
    DeformationField inner = smooth_random_field(7, 8, 8, 0.8);
    DeformationField c = compose_fields(outer, inner);
    for (std::size_t ch = 0; ch < 2; ++ch)
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 8; ++x) {
                const double ref = inner.displacement.at3(ch, y, x) +
                                   oracle::sample_bilinear_direct(
                                       outer.displacement, ch, y + inner.dy(y, x),
                                       x + inner.dx(y, x));
                CHECK(c.displacement.at3(ch, y, x) == Catch::Approx(ref).margin(1e-12));
            }
    CHECK_THROWS_AS(compose_fields(outer, DeformationField(4, 4)), std::invalid_argument);
}

TEST_CASE("composition is associative within interpolation error") {
    // Long-wavelength fields keep the interpolation curvature error well
    // below the 1e-3 budget.
    auto gentle = [](double phase, std::size_t h, std::size_t w) {
        DeformationField f(h, w);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                f.dy(y, x) = 0.3 * std::sin(0.1 * static_cast<double>(x) + phase);
                f.dx(y, x) = 0.3 * std::cos(0.1 * static_cast<double>(y) - phase);
            }
        return f;
    };
    DeformationField a = gentle(0.3, 16, 16);
    DeformationField b = gentle(1.1, 16, 16);
    DeformationField c = gentle(2.0, 16, 16);
    Tensor left = compose_fields(compose_fields(a, b), c).displacement;
    Tensor right = compose_fields(a, compose_fields(b, c)).displacement;
    for (std::size_t ch = 0; ch < 2; ++ch)
        for (std::size_t y = 3; y < 13; ++y)
            for (std::size_t x = 3; x < 13; ++x)
                CHECK(left.at3(ch, y, x) ==
                      Catch::Approx(right.at3(ch, y, x)).margin(1e-3));
}

TEST_CASE("integration basics") {
    DeformationField zero(10, 10);
    CHECK(vecint(zero, 4).displacement.max_abs() == 0.0);

    DeformationField v = smooth_random_field(20, 10, 10, 2.0);
    CHECK(vecint(v, 0).displacement.data == v.displacement.data);

    DeformationField t = constant_field(16, 16, 3.0, 0.0);
    DeformationField out = vecint(t, 4);
    for (std::size_t y = 5; y < 11; ++y)
        for (std::size_t x = 5; x < 11; ++x) {
            CHECK(out.dy(y, x) == Catch::Approx(3.0).margin(1e-9));
            CHECK(out.dx(y, x) == Catch::Approx(0.0).margin(1e-9));
        }
}

TEST_CASE("integration step count convergence") {
    // Constant velocities integrate exactly at any step count (interior).
    DeformationField t = constant_field(24, 24, 4.0, -3.0);
    Tensor t4 = vecint(t, 4).displacement, t6 = vecint(t, 6).displacement;
    for (std::size_t ch = 0; ch < 2; ++ch)
        for (std::size_t y = 6; y < 18; ++y)
            for (std::size_t x = 6; x < 18; ++x)
                CHECK(std::abs(t4.at3(ch, y, x) - t6.at3(ch, y, x)) < 1e-6);

    // For varying fields the recurrence is a first-order integrator: the
    // n -> n+1 difference halves each step. Assert the geometric decay
    // and a calibrated absolute level for a gentle sinusoidal velocity.
    const std::size_t h = 24, w = 24;
    DeformationField v(h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            v.dy(y, x) = std::sin(0.02 * static_cast<double>(x));
            v.dx(y, x) = std::cos(0.02 * static_cast<double>(y));
        }
    auto interior_diff = [&](std::size_t na, std::size_t nb) {
        Tensor a = vecint(v, na).displacement, b = vecint(v, nb).displacement;
        double d = 0.0;
        for (std::size_t ch = 0; ch < 2; ++ch)
            for (std::size_t y = 5; y < 19; ++y)
                for (std::size_t x = 5; x < 19; ++x)
                    d = std::max(d, std::abs(a.at3(ch, y, x) - b.at3(ch, y, x)));
        return d;
    };
    const double d45 = interior_diff(4, 5), d56 = interior_diff(5, 6);
    CHECK(d45 < 5e-4);
    CHECK(d56 < 0.6 * d45);
}

TEST_CASE("global correlation of identical constant directions is one") {
    Tensor fa({2, 3, 3});
    for (std::size_t i = 0; i < 9; ++i) {
        fa.at3(0, i / 3, i % 3) = 0.6;
        fa.at3(1, i / 3, i % 3) = -0.8;
    }
    CorrelationMap m = correlation_map(fa, fa);
    for (double v : m.values.data) CHECK(v == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("globally orthogonal fields correlate to zero") {
    Tensor fa({2, 3, 3}), fb({2, 3, 3});
    for (std::size_t i = 0; i < 9; ++i) {
        fa.at3(0, i / 3, i % 3) = 1.0;  // (1, 0) everywhere
        fb.at3(1, i / 3, i % 3) = 2.0;  // (0, 2) everywhere
    }
    CorrelationMap m = correlation_map(fa, fb);
    for (double v : m.values.data) CHECK(v == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("global correlation matches the brute-force oracle") {
    Rng rng(30);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor fa = Tensor::random_uniform({2, 4, 4}, rng, -1, 1);
        Tensor fb = Tensor::random_uniform({2, 4, 4}, rng, -1, 1);
        Tensor ref = oracle::correlation_map_direct(fa, fb);
        CorrelationMap m = correlation_map(fa, fb);
        for (std::size_t i = 0; i < ref.numel(); ++i)
            CHECK(m.values[i] == Catch::Approx(ref[i]).margin(1e-12));
    }
    CHECK_THROWS_AS(correlation_map(Tensor({2, 4, 4}), Tensor({2, 5, 4})),
                    std::invalid_argument);
}

TEST_CASE("windowed correlation of a field with itself approaches one") {
    DeformationField f(8, 8);
    Rng rng(31);
    for (auto& v : f.displacement.data) v = rng.uniform(-2, 2);
    CorrelationMap m = field_correlation(f, f, 3);
    for (double v : m.values.data) {
        CHECK(v >= 1.0 - 1e-6);
        CHECK(v <= 1.0 + 1e-9);
    }
}

TEST_CASE("windowed correlation of a field with its negation approaches minus one") {
    DeformationField f(8, 8), g(8, 8);
    Rng rng(32);
    for (std::size_t i = 0; i < f.displacement.numel(); ++i) {
        f.displacement[i] = rng.uniform(-2, 2);
        g.displacement[i] = -f.displacement[i];
    }
    CorrelationMap m = field_correlation(f, g, 3);
    for (double v : m.values.data) {
        CHECK(v <= -1.0 + 1e-6);
        CHECK(v >= -1.0 - 1e-9);
    }
}

TEST_CASE("windowed correlation matches the direct oracle") {
    Rng rng(33);
    DeformationField fa(8, 8), fb(8, 8);
    for (std::size_t i = 0; i < fa.displacement.numel(); ++i) {
        fa.displacement[i] = rng.uniform(-3, 3);
        fb.displacement[i] = rng.uniform(-3, 3);
    }
    Tensor ref = oracle::windowed_zncc_direct(fa.displacement, fb.displacement, 3);
    CorrelationMap m = field_correlation(fa, fb, 3);
    for (std::size_t i = 0; i < ref.numel(); ++i)
        CHECK(m.values[i] == Catch::Approx(ref[i]).margin(1e-9));

    for (double v : m.values.data) {
        CHECK(v >= -1.0 - 1e-9);
        CHECK(v <= 1.0 + 1e-9);
    }
    CHECK_THROWS_AS(field_correlation(fa, fb, 4), std::invalid_argument);
}

TEST_CASE("geometric kernels are differentiable") {
    Rng rng(40);
    const Tensor src = Tensor::random_uniform({1, 5, 5}, rng);
    const Tensor fld = Tensor::random_uniform({2, 5, 5}, rng, 0.1, 0.4);

    // warp w.r.t. the source image
    double err = ad::finite_diff_check(
        [&](const Var& x) {
            return ad::mean_all(ad::mul(warp_bilinear_v(x, ad::constant(fld)),
                                        warp_bilinear_v(x, ad::constant(fld))));
        },
        src, 1e-6);
    CHECK(err < 1e-4);

    // warp w.r.t. the field
    err = ad::finite_diff_check(
        [&](const Var& x) {
            Var w = warp_bilinear_v(ad::constant(src), x);
            return ad::mean_all(ad::mul(w, w));
        },
        fld, 1e-6);
    CHECK(err < 1e-4);

    // upsample, compose, integrate
    err = ad::finite_diff_check(
        [&](const Var& x) {
            Var u = upsample_field_v(x, 2);
            return ad::mean_all(ad::mul(u, u));
        },
        fld, 1e-6);
    CHECK(err < 1e-4);

    const Tensor inner = Tensor::random_uniform({2, 5, 5}, rng, -0.4, -0.1);
    err = ad::finite_diff_check(
        [&](const Var& x) {
            Var c = compose_fields_v(x, ad::constant(inner));
            return ad::mean_all(ad::mul(c, c));
        },
        fld, 1e-6);
    CHECK(err < 1e-4);

    err = ad::finite_diff_check(
        [&](const Var& x) {
            Var u = vecint_v(x, 2);
            return ad::mean_all(ad::mul(u, u));
        },
        fld, 1e-6);
    CHECK(err < 1e-4);

    // windowed correlation w.r.t. one argument
    const Tensor other = Tensor::random_uniform({2, 5, 5}, rng, -1, 1);
    err = ad::finite_diff_check(
        [&](const Var& x) {
            return ad::mean_all(windowed_zncc_v(x, ad::constant(other), 3));
        },
        Tensor::random_uniform({2, 5, 5}, rng, -1, 1), 1e-6);
    CHECK(err < 1e-4);
}

TEST_CASE("field container round trips and rejects malformed input") {
    Rng rng(50);
    DeformationField f(6, 9);
    for (auto& v : f.displacement.data) v = rng.uniform(-4, 4);
    const std::string path =
        (std::filesystem::temp_directory_path() / "sfrf_field_rt.sfrf").string();
    write_field(f, path);
    DeformationField back = read_field(path);
    CHECK(back.displacement.shape == f.displacement.shape);
    CHECK(back.displacement.data == f.displacement.data);  // bit-exact

    {
        std::ofstream out(path, std::ios::binary);
        out.write("JUNK", 4);
    }
    CHECK_THROWS_WITH(read_field(path), Catch::Matchers::ContainsSubstring("magic"));

    {
        std::ofstream out(path, std::ios::binary);
        out.write("SFRF", 4);
        const unsigned char hdr[12] = {2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0};
        out.write(reinterpret_cast<const char*>(hdr), 12);
        // payload missing entirely
    }
    CHECK_THROWS_WITH(read_field(path), Catch::Matchers::ContainsSubstring("truncated"));
    std::remove(path.c_str());
}
