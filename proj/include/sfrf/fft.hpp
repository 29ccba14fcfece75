#pragma once

// 2-D discrete Fourier transform. Power-of-two extents use iterative
// radix-2 Cooley-Tukey; everything else goes through Bluestein's chirp-z
// reformulation, so arbitrary image sizes are legal.

#include <complex>
#include <stdexcept>
#include <vector>

#include "sfrf/tensor.hpp"

namespace sfrf {

using cd = std::complex<double>;

struct ComplexGrid {
    Tensor real;  // H×W
    Tensor imag;  // H×W

    ComplexGrid() = default;
    ComplexGrid(Tensor re, Tensor im) : real(std::move(re)), imag(std::move(im)) {
        if (!real.same_shape(imag))
            throw std::invalid_argument("ComplexGrid real/imag shapes differ");
    }
    std::size_t height() const { return real.shape[0]; }
    std::size_t width() const { return real.shape[1]; }
};

namespace fft_detail {

constexpr double kPi = 3.141592653589793238462643383279502884;

inline bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

// In-place radix-2, n must be a power of two. inverse=true uses the +i
// kernel and does NOT normalize.
inline void fft_pow2(std::vector<cd>& a, bool inverse) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * kPi / static_cast<double>(len);
        const cd wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            cd w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const cd u = a[i + k];
                const cd v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// Bluestein: DFT of arbitrary length via one convolution of padded
// power-of-two length.
inline void fft_bluestein(std::vector<cd>& a, bool inverse) {
    const std::size_t n = a.size();
    std::size_t m = 1;
    while (m < 2 * n + 1) m <<= 1;
    std::vector<cd> chirp(n);
    for (std::size_t k = 0; k < n; ++k) {
        // angle = pi * k^2 / n, k^2 reduced mod 2n to keep the argument small
        const std::size_t k2 = (k * k) % (2 * n);
        const double ang = kPi * static_cast<double>(k2) / static_cast<double>(n);
        chirp[k] = cd(std::cos(ang), inverse ? std::sin(ang) : -std::sin(ang));
    }
    std::vector<cd> x(m, cd(0, 0)), y(m, cd(0, 0));
    for (std::size_t k = 0; k < n; ++k) x[k] = a[k] * chirp[k];
    y[0] = std::conj(chirp[0]);
    for (std::size_t k = 1; k < n; ++k) y[k] = y[m - k] = std::conj(chirp[k]);
    fft_pow2(x, false);
    fft_pow2(y, false);
    for (std::size_t k = 0; k < m; ++k) x[k] *= y[k];
    fft_pow2(x, true);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * inv_m * chirp[k];
}

inline void fft_1d(std::vector<cd>& a, bool inverse) {
    if (a.size() <= 1) return;
    if (is_pow2(a.size()))
        fft_pow2(a, inverse);
    else
        fft_bluestein(a, inverse);
}

// 2-D transform over rows then columns, in place on an H×W buffer.
inline void fft_2d(std::vector<cd>& grid, std::size_t h, std::size_t w, bool inverse) {
    std::vector<cd> line;
    line.resize(w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) line[x] = grid[y * w + x];
        fft_1d(line, inverse);
        for (std::size_t x = 0; x < w; ++x) grid[y * w + x] = line[x];
    }
    line.resize(h);
    for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t y = 0; y < h; ++y) line[y] = grid[y * w + x];
        fft_1d(line, inverse);
        for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = line[y];
    }
}

}  // namespace fft_detail

// Unnormalized forward DFT of a real H×W image.
inline ComplexGrid fft2(const Tensor& image) {
    if (image.rank() != 2 || image.numel() == 0)
        throw std::invalid_argument("fft2 expects a non-empty H×W tensor, got " +
                                    shape_str(image.shape));
    const std::size_t h = image.shape[0], w = image.shape[1];
    std::vector<cd> grid(h * w);
    for (std::size_t i = 0; i < h * w; ++i) grid[i] = cd(image[i], 0.0);
    fft_detail::fft_2d(grid, h, w, false);
    Tensor re({h, w}), im({h, w});
    for (std::size_t i = 0; i < h * w; ++i) {
        re[i] = grid[i].real();
        im[i] = grid[i].imag();
    }
    return ComplexGrid(std::move(re), std::move(im));
}

// Real part of the inverse DFT with 1/(HW) normalization. The imaginary
// residue is reported through *imag_residue when requested.
inline Tensor ifft2(const ComplexGrid& spectrum, double* imag_residue = nullptr) {
    const std::size_t h = spectrum.height(), w = spectrum.width();
    if (h == 0 || w == 0) throw std::invalid_argument("ifft2 on empty spectrum");
    std::vector<cd> grid(h * w);
    for (std::size_t i = 0; i < h * w; ++i) grid[i] = cd(spectrum.real[i], spectrum.imag[i]);
    fft_detail::fft_2d(grid, h, w, true);
    const double norm = 1.0 / static_cast<double>(h * w);
    Tensor out({h, w});
    double residue = 0.0;
    for (std::size_t i = 0; i < h * w; ++i) {
        out[i] = grid[i].real() * norm;
        residue = std::max(residue, std::abs(grid[i].imag() * norm));
    }
    if (imag_residue) *imag_residue = residue;
    return out;
}

}  // namespace sfrf
