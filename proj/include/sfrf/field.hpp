#pragma once

// Deformation fields and the geometric kernels built on them: bilinear
// warping, field upsampling, composition, scaling-and-squaring
// integration, and the two correlation operators.
//
// Convention: a field stores per-pixel (dy, dx) displacements added to
// the *target* coordinate to find the source sample (pull warping).
// Displacements are in pixels of the field's own resolution.

#include <cstdint>
#include <cstring>
#include <fstream>

#include "sfrf/ops.hpp"

namespace sfrf {

struct DeformationField {
    Tensor displacement;  // 2×H×W, dy plane then dx plane

    DeformationField() = default;
    explicit DeformationField(std::size_t h, std::size_t w)
        : displacement(Tensor({2, h, w})) {}
    explicit DeformationField(Tensor d) : displacement(std::move(d)) {
        if (displacement.rank() != 3 || displacement.shape[0] != 2)
            throw std::invalid_argument("DeformationField expects a 2×H×W tensor");
    }

    std::size_t height() const { return displacement.shape[1]; }
    std::size_t width() const { return displacement.shape[2]; }
    double& dy(std::size_t y, std::size_t x) { return displacement.at3(0, y, x); }
    double& dx(std::size_t y, std::size_t x) { return displacement.at3(1, y, x); }
    double dy(std::size_t y, std::size_t x) const { return displacement.at3(0, y, x); }
    double dx(std::size_t y, std::size_t x) const { return displacement.at3(1, y, x); }
};

struct CorrelationMap {
    Tensor values;  // H×W in [−1, 1]
};

// ---------------------------------------------------------------------------
// Differentiable (Var-level) kernels; the DeformationField overloads
// below wrap these with constants.

inline ad::Var warp_bilinear_v(const ad::Var& source, const ad::Var& field) {
    return ad::bilinear_sample(source, field);
}

inline ad::Var upsample_field_v(const ad::Var& field, std::size_t factor) {
    if (factor == 0) throw std::invalid_argument("upsample factor must be >= 1");
    if (factor == 1) return field;
    const std::size_t h = field->value.shape[1], w = field->value.shape[2];
    return ad::mul_scalar(ad::resize_bilinear(field, h * factor, w * factor),
                          static_cast<double>(factor));
}

// result(p) = inner(p) + outer(p + inner(p))
inline ad::Var compose_fields_v(const ad::Var& outer, const ad::Var& inner) {
    if (!outer->value.same_shape(inner->value))
        throw std::invalid_argument("compose_fields extent mismatch");
    return ad::add(inner, ad::bilinear_sample(outer, inner));
}

// n-step scaling and squaring; n = 0 returns the velocity unchanged.
inline ad::Var vecint_v(const ad::Var& velocity, std::size_t n) {
    if (n == 0) return velocity;
    ad::Var u = ad::mul_scalar(velocity, 1.0 / static_cast<double>(1ULL << n));
    for (std::size_t i = 0; i < n; ++i) u = compose_fields_v(u, u);
    return u;
}

// Windowed zero-mean normalized cross-correlation of two multi-channel
// maps (window covers all channels); edges replicate, denominator
// guarded by 1e-8.
inline ad::Var windowed_zncc_v(const ad::Var& fa, const ad::Var& fb, std::size_t window) {
    using namespace ad;
    if (!fa->value.same_shape(fb->value))
        throw std::invalid_argument("windowed correlation extent mismatch");
    if (window % 2 == 0) throw std::invalid_argument("correlation window must be odd");
    const std::size_t c = fa->value.shape[0];
    const double n = static_cast<double>(window * window * c);
    const std::size_t pad = (window - 1) / 2;

    Var ones = constant(Tensor({1, c, window, window}, 1.0));
    auto boxsum = [&](const Var& x) { return conv2d(x, ones, 1, pad); };

    Var sa = boxsum(fa), sb = boxsum(fb);
    Var sab = boxsum(mul(fa, fb));
    Var saa = boxsum(mul(fa, fa));
    Var sbb = boxsum(mul(fb, fb));
    Var ma = mul_scalar(sa, 1.0 / n), mb = mul_scalar(sb, 1.0 / n);
    Var num = sub(sab, mul_scalar(mul(ma, mb), n));
    Var va = sub(saa, mul_scalar(mul(ma, ma), n));
    Var vb = sub(sbb, mul_scalar(mul(mb, mb), n));
    // va, vb >= 0 up to rounding; abs plus the tiny shift keeps the sqrt
    // argument legal and its gradient finite on constant windows
    Var den = add_scalar(sqrt_eps(abs_(mul(va, vb)), 1e-16), 1e-8);
    Var out = div(num, den);  // 1×H×W
    return reshape(out, {fa->value.shape[1], fa->value.shape[2]});
}

inline ad::Var field_correlation_v(const ad::Var& fa, const ad::Var& fb,
                                   std::size_t window) {
    return windowed_zncc_v(fa, fb, window);
}

// ---------------------------------------------------------------------------
// Plain wrappers

inline Tensor warp_bilinear(const Tensor& source, const DeformationField& field) {
    return ad::bilinear_sample(ad::constant(source), ad::constant(field.displacement))->value;
}

inline DeformationField upsample_field(const DeformationField& field, std::size_t factor) {
    return DeformationField(
        upsample_field_v(ad::constant(field.displacement), factor)->value);
}

inline DeformationField compose_fields(const DeformationField& outer,
                                       const DeformationField& inner) {
    return DeformationField(compose_fields_v(ad::constant(outer.displacement),
                                             ad::constant(inner.displacement))
                                ->value);
}

inline DeformationField vecint(const DeformationField& velocity, std::size_t n) {
    return DeformationField(vecint_v(ad::constant(velocity.displacement), n)->value);
}

inline CorrelationMap correlation_map(const Tensor& fa, const Tensor& fb) {
    return CorrelationMap{ad::correlation_map(ad::constant(fa), ad::constant(fb))->value};
}

inline CorrelationMap field_correlation(const DeformationField& fa,
                                        const DeformationField& fb, std::size_t window) {
    return CorrelationMap{field_correlation_v(ad::constant(fa.displacement),
                                              ad::constant(fb.displacement), window)
                              ->value};
}

// ---------------------------------------------------------------------------
// .sfrf container: "SFRF" magic, little-endian u32 height/width/channels,
// then channels planes of height×width little-endian f64, row-major.

inline void write_sfrf(const Tensor& grid, const std::string& path) {
    if (grid.rank() != 3) throw std::invalid_argument("write_sfrf expects C×H×W");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write("SFRF", 4);
    auto put_u32 = [&](std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        out.write(reinterpret_cast<char*>(b), 4);
    };
    put_u32(static_cast<std::uint32_t>(grid.shape[1]));
    put_u32(static_cast<std::uint32_t>(grid.shape[2]));
    put_u32(static_cast<std::uint32_t>(grid.shape[0]));
    for (double v : grid.data) {
        std::uint64_t u;
        std::memcpy(&u, &v, 8);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
        out.write(reinterpret_cast<char*>(b), 8);
    }
    if (!out) throw std::runtime_error("short write to " + path);
}

inline Tensor read_sfrf(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SFRF", 4) != 0)
        throw std::runtime_error(path + ": bad SFRF magic");
    auto get_u32 = [&]() {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) |
               (static_cast<std::uint32_t>(b[3]) << 24);
    };
    const std::uint32_t h = get_u32(), w = get_u32(), c = get_u32();
    if (!in) throw std::runtime_error(path + ": truncated SFRF header");
    Tensor grid({c, h, w});
    for (auto& v : grid.data) {
        unsigned char b[8];
        in.read(reinterpret_cast<char*>(b), 8);
        if (!in) throw std::runtime_error(path + ": truncated SFRF payload");
        std::uint64_t u = 0;
        for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        std::memcpy(&v, &u, 8);
    }
    return grid;
}

inline void write_field(const DeformationField& f, const std::string& path) {
    write_sfrf(f.displacement, path);
}
inline DeformationField read_field(const std::string& path) {
    Tensor t = read_sfrf(path);
    if (t.shape[0] != 2) throw std::runtime_error(path + ": field must have 2 channels");
    return DeformationField(std::move(t));
}

}  // namespace sfrf
