#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sfrf/image.hpp"
#include "sfrf/synth.hpp"

using namespace sfrf;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

double psnr_central(const Tensor& a, const Tensor& b) {
    const std::size_t h = a.shape[0], w = a.shape[1];
    const std::size_t my = h / 10, mx = w / 10;  // central 80% crop
    double mse = 0.0;
    std::size_t n = 0;
    for (std::size_t y = my; y < h - my; ++y)
        for (std::size_t x = mx; x < w - mx; ++x) {
            const double d = a.at2(y, x) - b.at2(y, x);
            mse += d * d;
            ++n;
        }
    mse /= static_cast<double>(n);
    return 10.0 * std::log10(1.0 / std::max(mse, 1e-300));
}

}  // namespace

TEST_CASE("2x2 PGM decodes to scaled intensities") {
    const std::string path = tmp_path("sfrf_pgm_small.pgm");
    write_bytes(path, std::string("P5\n2 2\n255\n") +
                          std::string({'\0', char(128), char(255), char(64)}));
    Image img = read_pgm(path);
    REQUIRE(img.height() == 2);
    REQUIRE(img.width() == 2);
    CHECK(img.at(0, 0) == 0.0);
    CHECK(img.at(0, 1) == Catch::Approx(128.0 / 255.0));
    CHECK(img.at(1, 0) == 1.0);
    CHECK(img.at(1, 1) == Catch::Approx(64.0 / 255.0));
    std::remove(path.c_str());
}

TEST_CASE("write then read is identity; read then write is byte-identical") {
    Rng rng(99);
    Image img(Tensor::random_uniform({13, 9}, rng));
    const std::string p1 = tmp_path("sfrf_pgm_rt1.pgm");
    const std::string p2 = tmp_path("sfrf_pgm_rt2.pgm");
    write_pgm(img, p1);
    Image back = read_pgm(p1);
    REQUIRE(back.height() == 13);
    REQUIRE(back.width() == 9);
    for (std::size_t y = 0; y < 13; ++y)
        for (std::size_t x = 0; x < 9; ++x)
            CHECK(quantize8(back.at(y, x)) == quantize8(img.at(y, x)));

    write_pgm(back, p2);
    CHECK(read_bytes(p1) == read_bytes(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("malformed PGM inputs raise descriptive errors") {
    const std::string path = tmp_path("sfrf_pgm_bad.pgm");

    write_bytes(path, "P2\n2 2\n255\n0000");
    CHECK_THROWS_WITH(read_pgm(path), Catch::Matchers::ContainsSubstring("bad magic"));

    write_bytes(path, "P5\n2 2\n");
    CHECK_THROWS_WITH(read_pgm(path), Catch::Matchers::ContainsSubstring("maxval"));

    write_bytes(path, "P5\n2 2\n65535\n");
    CHECK_THROWS_WITH(read_pgm(path), Catch::Matchers::ContainsSubstring("must be 255"));

    write_bytes(path, std::string("P5\n2 2\n255\n") + std::string({'\0', char(1)}));
    CHECK_THROWS_WITH(read_pgm(path),
                      Catch::Matchers::ContainsSubstring("truncated payload"));

    CHECK_THROWS_AS(read_pgm(tmp_path("sfrf_no_such_file.pgm")), PgmError);
    std::remove(path.c_str());
}

TEST_CASE("scene generation is deterministic per seed") {
    Image v1, i1, m1, v2, i2, m2, v3, i3, m3;
    gen_scene(7, 48, 64, v1, i1, m1);
    gen_scene(7, 48, 64, v2, i2, m2);
    CHECK(v1.pixels.data == v2.pixels.data);
    CHECK(i1.pixels.data == i2.pixels.data);
    CHECK(m1.pixels.data == m2.pixels.data);

    gen_scene(8, 48, 64, v3, i3, m3);
    CHECK(v1.pixels.data != v3.pixels.data);
}

TEST_CASE("scene extents outside [32, 512] rejected") {
    Image v, i, m;
    CHECK_THROWS_AS(gen_scene(1, 16, 64, v, i, m), std::invalid_argument);
    CHECK_THROWS_AS(gen_scene(1, 64, 600, v, i, m), std::invalid_argument);
}

TEST_CASE("hot regions run markedly brighter than the infrared background") {
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
        Image v, ir, mask;
        gen_scene(seed, 64, 64, v, ir, mask);
        double hot = 0.0, bg = 0.0;
        std::size_t nh = 0, nb = 0;
        for (std::size_t i = 0; i < mask.pixels.numel(); ++i) {
            if (mask.pixels[i] > 0.5) {
                hot += ir.pixels[i];
                ++nh;
            } else {
                bg += ir.pixels[i];
                ++nb;
            }
        }
        REQUIRE(nh > 0);
        INFO("seed " << seed);
        CHECK(hot / nh - bg / nb >= 0.3);
    }
}

TEST_CASE("generated images stay in range at every stage") {
    Image v, ir, mask;
    gen_scene(21, 64, 48, v, ir, mask);
    CHECK(v.in_range());
    CHECK(ir.in_range());
    CHECK(mask.in_range());
    CHECK(modality_bridge(v).in_range());
    SyntheticPair pair = gen_pair(21, 64, 48, 5.0, 3.0);
    CHECK(pair.visible.in_range());
    CHECK(pair.infrared_gt.in_range());
    CHECK(pair.infrared_warped.in_range());
}

TEST_CASE("zero magnitudes give the zero deformation") {
    DeformationField f = gen_deformation(3, 40, 40, 0.0, 0.0);
    CHECK(f.displacement.max_abs() == 0.0);
}

TEST_CASE("negative deformation magnitudes rejected") {
    CHECK_THROWS_AS(gen_deformation(3, 40, 40, -1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(gen_deformation(3, 40, 40, 0.0, -1.0), std::invalid_argument);
}

TEST_CASE("pure elastic deformation respects its peak magnitude") {
    for (std::uint64_t seed : {10, 11, 12}) {
        DeformationField f = gen_deformation(seed, 64, 64, 0.0, 3.0);
        double peak = 0.0;
        for (std::size_t y = 0; y < 64; ++y)
            for (std::size_t x = 0; x < 64; ++x)
                peak = std::max(peak, std::hypot(f.dy(y, x), f.dx(y, x)));
        INFO("seed " << seed);
        CHECK(peak <= 3.0 + 1e-9);
        CHECK(peak > 1.0);  // the scaling targets the peak, so it should be attained
    }
}

TEST_CASE("pure translation gives a constant field") {
    DeformationField f = affine_field(32, 32, 0.0, 0.0, 2.0, 1.0);
    for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) {
            CHECK(f.dy(y, x) == Catch::Approx(0.0).margin(1e-12));
            CHECK(f.dx(y, x) == Catch::Approx(2.0).margin(1e-12));
        }
}

TEST_CASE("generated deformations are smooth") {
    for (std::uint64_t seed : {30, 31}) {
        DeformationField f = gen_deformation(seed, 64, 64, 5.0, 5.0);
        double max_grad = 0.0;
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t y = 0; y < 64; ++y)
                for (std::size_t x = 0; x < 64; ++x) {
                    if (y + 1 < 64)
                        max_grad = std::max(max_grad,
                                            std::abs(f.displacement.at3(c, y + 1, x) -
                                                     f.displacement.at3(c, y, x)));
                    if (x + 1 < 64)
                        max_grad = std::max(max_grad,
                                            std::abs(f.displacement.at3(c, y, x + 1) -
                                                     f.displacement.at3(c, y, x)));
                }
        INFO("seed " << seed);
        CHECK(max_grad <= 1.0);
    }
}

TEST_CASE("modality bridge degenerate and polarity cases") {
    Image flat(Tensor({16, 16}, 0.5));
    Image out = modality_bridge(flat);
    for (double v : out.pixels.data) CHECK(v == Catch::Approx(0.5).margin(1e-12));

    Image black(Tensor({16, 16}, 0.0));
    Image white = modality_bridge(black);
    for (double v : white.pixels.data) CHECK(v == Catch::Approx(1.0).margin(1e-12));

    Rng rng(17);
    Image tex(Tensor::random_uniform({24, 20}, rng));
    Image twice = modality_bridge(modality_bridge(tex));
    CHECK(twice.height() == 24);
    CHECK(twice.width() == 20);
    CHECK(twice.in_range());
}

TEST_CASE("warping the distorted infrared by the stored field recovers alignment") {
    for (std::uint64_t seed : {41, 42}) {
        SyntheticPair pair = gen_pair(seed, 64, 64, 3.0, 2.0);
        Tensor rec = warp_bilinear(
            Tensor({1, 64, 64}, pair.infrared_warped.pixels.data), pair.gt_field);
        Tensor rec2({64, 64}, std::move(rec.data));
        INFO("seed " << seed);
        CHECK(psnr_central(rec2, pair.infrared_gt.pixels) > 30.0);
    }
}

TEST_CASE("pair round trips through its on-disk form") {
    SyntheticPair pair = gen_pair(55, 48, 48, 4.0, 2.0);
    const std::string prefix = tmp_path("sfrf_pair_rt");
    write_pair(pair, prefix);
    SyntheticPair back = read_pair(prefix);
    CHECK(back.visible.height() == 48);
    for (std::size_t i = 0; i < pair.visible.pixels.numel(); ++i) {
        CHECK(quantize8(back.visible.pixels[i]) == quantize8(pair.visible.pixels[i]));
        CHECK(quantize8(back.infrared_warped.pixels[i]) ==
              quantize8(pair.infrared_warped.pixels[i]));
    }
    CHECK(back.gt_field.displacement.data == pair.gt_field.displacement.data);
    for (const char* suffix :
         {"_vis.pgm", "_ir_gt.pgm", "_ir_warp.pgm", "_field.sfrf", "_hot.pgm"})
        std::remove((prefix + suffix).c_str());
}
