#pragma once

// Structured differentiable ops: convolution (edge-replicated padding),
// bilinear sampling/resizing, average pooling, the FFT pair with the
// complex accessors, and the global correlation map.

#include "sfrf/autodiff.hpp"
#include "sfrf/fft.hpp"

namespace sfrf::ad {

namespace detail {

// Replicate-pad a C×H×W tensor by p on both spatial sides.
inline Tensor pad_replicate(const Tensor& x, std::size_t p) {
    const std::size_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
    Tensor out({c, h + 2 * p, w + 2 * p});
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h + 2 * p; ++y) {
            const std::size_t sy = std::min(h - 1, static_cast<std::size_t>(std::max<long>(
                                                       0, static_cast<long>(y) - static_cast<long>(p))));
            for (std::size_t x2 = 0; x2 < w + 2 * p; ++x2) {
                const std::size_t sx = std::min(
                    w - 1, static_cast<std::size_t>(
                               std::max<long>(0, static_cast<long>(x2) - static_cast<long>(p))));
                out.at3(ci, y, x2) = x.at3(ci, sy, sx);
            }
        }
    return out;
}

// Fold gradients of the padded tensor back onto the original extents.
inline void unpad_replicate_accum(const Tensor& gpad, std::size_t p, Tensor& gx) {
    const std::size_t c = gx.shape[0], h = gx.shape[1], w = gx.shape[2];
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h + 2 * p; ++y) {
            const std::size_t sy = std::min(h - 1, static_cast<std::size_t>(std::max<long>(
                                                       0, static_cast<long>(y) - static_cast<long>(p))));
            for (std::size_t x2 = 0; x2 < w + 2 * p; ++x2) {
                const std::size_t sx = std::min(
                    w - 1, static_cast<std::size_t>(
                               std::max<long>(0, static_cast<long>(x2) - static_cast<long>(p))));
                gx.at3(ci, sy, sx) += gpad.at3(ci, y, x2);
            }
        }
}

}  // namespace detail

// Cross-correlation conv. input: C_in×H×W, kernel: C_out×C_in×k×k,
// bias: C_out or null. Padding replicates edges.
inline Var conv2d(const Var& input, const Var& kernel, const Var& bias,
                  std::size_t stride, std::size_t pad) {
    const Tensor& x = input->value;
    const Tensor& k = kernel->value;
    if (x.rank() != 3 || k.rank() != 4)
        throw std::invalid_argument("conv2d expects C×H×W input and Co×Ci×k×k kernel");
    const std::size_t cin = x.shape[0], h = x.shape[1], w = x.shape[2];
    const std::size_t cout = k.shape[0], kk = k.shape[2];
    if (k.shape[1] != cin) throw std::invalid_argument("conv2d channel mismatch");
    if (k.shape[3] != kk || kk % 2 == 0)
        throw std::invalid_argument("conv2d kernel must be square with odd extent");
    if (stride == 0) throw std::invalid_argument("conv2d stride must be positive");
    if (h + 2 * pad < kk || w + 2 * pad < kk)
        throw std::invalid_argument("conv2d kernel larger than padded input");
    if (bias && bias->value.numel() != cout)
        throw std::invalid_argument("conv2d bias length mismatch");

    const std::size_t oh = (h + 2 * pad - kk) / stride + 1;
    const std::size_t ow = (w + 2 * pad - kk) / stride + 1;
    auto padded = std::make_shared<Tensor>(detail::pad_replicate(x, pad));
    const std::size_t pw = w + 2 * pad;

    Tensor out({cout, oh, ow});
    for (std::size_t co = 0; co < cout; ++co) {
        double* oplane = &out.data[co * oh * ow];
        if (bias) {
            const double b = bias->value[co];
            for (std::size_t i = 0; i < oh * ow; ++i) oplane[i] = b;
        }
        for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ky = 0; ky < kk; ++ky)
                for (std::size_t kx = 0; kx < kk; ++kx) {
                    const double wv = k[((co * cin + ci) * kk + ky) * kk + kx];
                    const double* pplane = &padded->data[ci * (h + 2 * pad) * pw];
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const double* prow = pplane + (oy * stride + ky) * pw + kx;
                        double* orow = oplane + oy * ow;
                        for (std::size_t ox = 0; ox < ow; ++ox)
                            orow[ox] += wv * prow[ox * stride];
                    }
                }
    }

    std::vector<Var> parents = {input, kernel};
    if (bias) parents.push_back(bias);
    auto ip = input, kp = kernel, bp = bias;
    return make_node(
        std::move(out), std::move(parents),
        [ip, kp, bp, padded, stride, pad, cin, cout, h, w, kk](Node& self) {
            const std::size_t oh2 = self.value.shape[1], ow2 = self.value.shape[2];
            const std::size_t pw = w + 2 * pad, ph = h + 2 * pad;
            Tensor gpad({cin, ph, pw});
            const bool need_gx = ip->requires_grad;
            for (std::size_t co = 0; co < cout; ++co) {
                const double* gplane = &self.grad.data[co * oh2 * ow2];
                if (bp && bp->requires_grad) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < oh2 * ow2; ++i) acc += gplane[i];
                    bp->grad[co] += acc;
                }
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t ky = 0; ky < kk; ++ky)
                        for (std::size_t kx = 0; kx < kk; ++kx) {
                            const std::size_t kidx =
                                ((co * cin + ci) * kk + ky) * kk + kx;
                            const double wv = kp->value[kidx];
                            const double* pplane = &padded->data[ci * ph * pw];
                            double* gpplane = &gpad.data[ci * ph * pw];
                            double gw = 0.0;
                            for (std::size_t oy = 0; oy < oh2; ++oy) {
                                const double* prow = pplane + (oy * stride + ky) * pw + kx;
                                double* gprow = gpplane + (oy * stride + ky) * pw + kx;
                                const double* grow = gplane + oy * ow2;
                                for (std::size_t ox = 0; ox < ow2; ++ox) {
                                    const double g = grow[ox];
                                    gw += g * prow[ox * stride];
                                    if (need_gx) gprow[ox * stride] += g * wv;
                                }
                            }
                            if (kp->requires_grad) kp->grad[kidx] += gw;
                        }
            }
            if (need_gx) detail::unpad_replicate_accum(gpad, pad, ip->grad);
        });
}

inline Var conv2d(const Var& input, const Var& kernel, std::size_t stride,
                  std::size_t pad) {
    return conv2d(input, kernel, nullptr, stride, pad);
}

// Pull-style bilinear warp: out(c,y,x) = source sampled at
// (y + dy(y,x), x + dx(y,x)), coordinates clamped to the border.
// field is 2×H×W with the dy plane first.
inline Var bilinear_sample(const Var& source, const Var& field) {
    const Tensor& s = source->value;
    const Tensor& f = field->value;
    if (s.rank() != 3 || f.rank() != 3 || f.shape[0] != 2)
        throw std::invalid_argument("bilinear_sample expects C×H×W source and 2×H×W field");
    if (s.shape[1] != f.shape[1] || s.shape[2] != f.shape[2])
        throw std::invalid_argument("bilinear_sample extent mismatch: source " +
                                    shape_str(s.shape) + " field " + shape_str(f.shape));
    const std::size_t c = s.shape[0], h = s.shape[1], w = s.shape[2];

    Tensor out({c, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double syr = static_cast<double>(y) + f.at3(0, y, x);
            const double sxr = static_cast<double>(x) + f.at3(1, y, x);
            const double sy = std::min(static_cast<double>(h - 1), std::max(0.0, syr));
            const double sx = std::min(static_cast<double>(w - 1), std::max(0.0, sxr));
            const std::size_t y0 = static_cast<std::size_t>(sy);
            const std::size_t x0 = static_cast<std::size_t>(sx);
            const std::size_t y1 = std::min(h - 1, y0 + 1);
            const std::size_t x1 = std::min(w - 1, x0 + 1);
            const double fy = sy - static_cast<double>(y0);
            const double fx = sx - static_cast<double>(x0);
            for (std::size_t ci = 0; ci < c; ++ci) {
                const double v00 = s.at3(ci, y0, x0), v01 = s.at3(ci, y0, x1);
                const double v10 = s.at3(ci, y1, x0), v11 = s.at3(ci, y1, x1);
                out.at3(ci, y, x) = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                    fy * ((1 - fx) * v10 + fx * v11);
            }
        }

    auto sp = source, fp = field;
    return make_node(std::move(out), {source, field}, [sp, fp, c, h, w](Node& self) {
        const Tensor& s2 = sp->value;
        const Tensor& f2 = fp->value;
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double syr = static_cast<double>(y) + f2.at3(0, y, x);
                const double sxr = static_cast<double>(x) + f2.at3(1, y, x);
                const bool cy = syr < 0.0 || syr > static_cast<double>(h - 1);
                const bool cx = sxr < 0.0 || sxr > static_cast<double>(w - 1);
                const double sy = std::min(static_cast<double>(h - 1), std::max(0.0, syr));
                const double sx = std::min(static_cast<double>(w - 1), std::max(0.0, sxr));
                const std::size_t y0 = static_cast<std::size_t>(sy);
                const std::size_t x0 = static_cast<std::size_t>(sx);
                const std::size_t y1 = std::min(h - 1, y0 + 1);
                const std::size_t x1 = std::min(w - 1, x0 + 1);
                const double fy = sy - static_cast<double>(y0);
                const double fx = sx - static_cast<double>(x0);
                double gdy = 0.0, gdx = 0.0;
                for (std::size_t ci = 0; ci < c; ++ci) {
                    const double g = self.grad.at3(ci, y, x);
                    if (g == 0.0) continue;
                    const double v00 = s2.at3(ci, y0, x0), v01 = s2.at3(ci, y0, x1);
                    const double v10 = s2.at3(ci, y1, x0), v11 = s2.at3(ci, y1, x1);
                    if (sp->requires_grad) {
                        sp->grad.at3(ci, y0, x0) += g * (1 - fy) * (1 - fx);
                        sp->grad.at3(ci, y0, x1) += g * (1 - fy) * fx;
                        sp->grad.at3(ci, y1, x0) += g * fy * (1 - fx);
                        sp->grad.at3(ci, y1, x1) += g * fy * fx;
                    }
                    if (!cy) gdy += g * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
                    if (!cx) gdx += g * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
                }
                if (fp->requires_grad) {
                    fp->grad.at3(0, y, x) += gdy;
                    fp->grad.at3(1, y, x) += gdx;
                }
            }
    });
}

// Align-corners bilinear resize of a C×H×W tensor.
inline Var resize_bilinear(const Var& x, std::size_t oh, std::size_t ow) {
    const Tensor& v = x->value;
    if (v.rank() != 3) throw std::invalid_argument("resize_bilinear expects C×H×W");
    const std::size_t c = v.shape[0], h = v.shape[1], w = v.shape[2];
    const double ry = oh > 1 ? static_cast<double>(h - 1) / static_cast<double>(oh - 1) : 0.0;
    const double rx = ow > 1 ? static_cast<double>(w - 1) / static_cast<double>(ow - 1) : 0.0;

    Tensor out({c, oh, ow});
    for (std::size_t y = 0; y < oh; ++y) {
        const double sy = static_cast<double>(y) * ry;
        const std::size_t y0 = std::min(h - 1, static_cast<std::size_t>(sy));
        const std::size_t y1 = std::min(h - 1, y0 + 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t xo = 0; xo < ow; ++xo) {
            const double sx = static_cast<double>(xo) * rx;
            const std::size_t x0 = std::min(w - 1, static_cast<std::size_t>(sx));
            const std::size_t x1 = std::min(w - 1, x0 + 1);
            const double fx = sx - static_cast<double>(x0);
            for (std::size_t ci = 0; ci < c; ++ci)
                out.at3(ci, y, xo) =
                    (1 - fy) * ((1 - fx) * v.at3(ci, y0, x0) + fx * v.at3(ci, y0, x1)) +
                    fy * ((1 - fx) * v.at3(ci, y1, x0) + fx * v.at3(ci, y1, x1));
        }
    }
    auto xp = x;
    return make_node(std::move(out), {x}, [xp, c, h, w, oh, ow, ry, rx](Node& self) {
        for (std::size_t y = 0; y < oh; ++y) {
            const double sy = static_cast<double>(y) * ry;
            const std::size_t y0 = std::min(h - 1, static_cast<std::size_t>(sy));
            const std::size_t y1 = std::min(h - 1, y0 + 1);
            const double fy = sy - static_cast<double>(y0);
            for (std::size_t xo = 0; xo < ow; ++xo) {
                const double sx = static_cast<double>(xo) * rx;
                const std::size_t x0 = std::min(w - 1, static_cast<std::size_t>(sx));
                const std::size_t x1 = std::min(w - 1, x0 + 1);
                const double fx = sx - static_cast<double>(x0);
                for (std::size_t ci = 0; ci < c; ++ci) {
                    const double g = self.grad.at3(ci, y, xo);
                    xp->grad.at3(ci, y0, x0) += g * (1 - fy) * (1 - fx);
                    xp->grad.at3(ci, y0, x1) += g * (1 - fy) * fx;
                    xp->grad.at3(ci, y1, x0) += g * fy * (1 - fx);
                    xp->grad.at3(ci, y1, x1) += g * fy * fx;
                }
            }
        }
    });
}

// 2×2 area downsampling; extents must be even.
inline Var avg_pool2(const Var& x) {
    const Tensor& v = x->value;
    if (v.rank() != 3) throw std::invalid_argument("avg_pool2 expects C×H×W");
    const std::size_t c = v.shape[0], h = v.shape[1], w = v.shape[2];
    if (h % 2 || w % 2) throw std::invalid_argument("avg_pool2 extents must be even");
    Tensor out({c, h / 2, w / 2});
    for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t y = 0; y < h / 2; ++y)
            for (std::size_t xo = 0; xo < w / 2; ++xo)
                out.at3(ci, y, xo) = 0.25 * (v.at3(ci, 2 * y, 2 * xo) +
                                             v.at3(ci, 2 * y, 2 * xo + 1) +
                                             v.at3(ci, 2 * y + 1, 2 * xo) +
                                             v.at3(ci, 2 * y + 1, 2 * xo + 1));
    auto xp = x;
    return make_node(std::move(out), {x}, [xp, c, h, w](Node& self) {
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t y = 0; y < h / 2; ++y)
                for (std::size_t xo = 0; xo < w / 2; ++xo) {
                    const double g = 0.25 * self.grad.at3(ci, y, xo);
                    xp->grad.at3(ci, 2 * y, 2 * xo) += g;
                    xp->grad.at3(ci, 2 * y, 2 * xo + 1) += g;
                    xp->grad.at3(ci, 2 * y + 1, 2 * xo) += g;
                    xp->grad.at3(ci, 2 * y + 1, 2 * xo + 1) += g;
                }
    });
}

// ---------------------------------------------------------------------------
// Fourier ops. Complex grids travel as 2×H×W tensors (real plane, imag
// plane).

inline Var fft2_op(const Var& image) {
    const Tensor& x = image->value;
    if (x.rank() != 2 || x.numel() == 0)
        throw std::invalid_argument("fft2 expects a non-empty H×W tensor");
    const std::size_t h = x.shape[0], w = x.shape[1];
    ComplexGrid g = fft2(x);
    Tensor out({2, h, w});
    std::copy(g.real.data.begin(), g.real.data.end(), out.data.begin());
    std::copy(g.imag.data.begin(), g.imag.data.end(), out.data.begin() + h * w);
    auto ip = image;
    return make_node(std::move(out), {image}, [ip, h, w](Node& self) {
        // adjoint: real part of the forward DFT of the conjugated grad
        std::vector<cd> buf(h * w);
        for (std::size_t i = 0; i < h * w; ++i)
            buf[i] = cd(self.grad[i], -self.grad[h * w + i]);
        fft_detail::fft_2d(buf, h, w, false);
        for (std::size_t i = 0; i < h * w; ++i) ip->grad[i] += buf[i].real();
    });
}

inline Var ifft2_op(const Var& spectrum) {
    const Tensor& s = spectrum->value;
    if (s.rank() != 3 || s.shape[0] != 2)
        throw std::invalid_argument("ifft2 expects a 2×H×W spectrum tensor");
    const std::size_t h = s.shape[1], w = s.shape[2];
    Tensor re({h, w}), im({h, w});
    std::copy(s.data.begin(), s.data.begin() + h * w, re.data.begin());
    std::copy(s.data.begin() + h * w, s.data.end(), im.data.begin());
    Tensor out = ifft2(ComplexGrid(std::move(re), std::move(im)));
    auto sp = spectrum;
    return make_node(std::move(out), {spectrum}, [sp, h, w](Node& self) {
        std::vector<cd> buf(h * w);
        for (std::size_t i = 0; i < h * w; ++i) buf[i] = cd(self.grad[i], 0.0);
        fft_detail::fft_2d(buf, h, w, true);
        const double norm = 1.0 / static_cast<double>(h * w);
        for (std::size_t i = 0; i < h * w; ++i) {
            sp->grad[i] += buf[i].real() * norm;
            sp->grad[h * w + i] += -buf[i].imag() * norm;
        }
    });
}

inline Var complex_abs(const Var& spectrum) {
    const Tensor& s = spectrum->value;
    if (s.rank() != 3 || s.shape[0] != 2)
        throw std::invalid_argument("complex_abs expects 2×H×W");
    const std::size_t n = s.numel() / 2;
    Tensor out({s.shape[1], s.shape[2]});
    for (std::size_t i = 0; i < n; ++i) out[i] = std::hypot(s[i], s[n + i]);
    auto sp = spectrum;
    return make_node(std::move(out), {spectrum}, [sp, n](Node& self) {
        for (std::size_t i = 0; i < n; ++i) {
            const double a = self.value[i];
            if (a == 0.0) continue;
            sp->grad[i] += self.grad[i] * sp->value[i] / a;
            sp->grad[n + i] += self.grad[i] * sp->value[n + i] / a;
        }
    });
}

inline Var complex_arg(const Var& spectrum) {
    const Tensor& s = spectrum->value;
    if (s.rank() != 3 || s.shape[0] != 2)
        throw std::invalid_argument("complex_arg expects 2×H×W");
    const std::size_t n = s.numel() / 2;
    Tensor out({s.shape[1], s.shape[2]});
    for (std::size_t i = 0; i < n; ++i) out[i] = std::atan2(s[n + i], s[i]);
    auto sp = spectrum;
    return make_node(std::move(out), {spectrum}, [sp, n](Node& self) {
        for (std::size_t i = 0; i < n; ++i) {
            const double re = sp->value[i], im = sp->value[n + i];
            const double m2 = re * re + im * im;
            if (m2 == 0.0) continue;
            sp->grad[i] += self.grad[i] * (-im / m2);
            sp->grad[n + i] += self.grad[i] * (re / m2);
        }
    });
}

inline Var complex_from_polar(const Var& amplitude, const Var& phase) {
    const Tensor& a = amplitude->value;
    const Tensor& p = phase->value;
    if (a.rank() != 2 || !a.same_shape(p))
        throw std::invalid_argument("complex_from_polar shape mismatch");
    const std::size_t n = a.numel();
    Tensor out({2, a.shape[0], a.shape[1]});
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = a[i] * std::cos(p[i]);
        out[n + i] = a[i] * std::sin(p[i]);
    }
    auto ap = amplitude, pp = phase;
    return make_node(std::move(out), {amplitude, phase}, [ap, pp, n](Node& self) {
        for (std::size_t i = 0; i < n; ++i) {
            const double c = std::cos(pp->value[i]), s = std::sin(pp->value[i]);
            const double gr = self.grad[i], gi = self.grad[n + i];
            ap->grad[i] += gr * c + gi * s;
            pp->grad[i] += ap->value[i] * (gi * c - gr * s);
        }
    });
}

// ---------------------------------------------------------------------------
// Global correlation map: out(y,x) = mean over all positions q of the
// cosine similarity between fa's channel vector at (y,x) and fb's at q.
// Equivalent to dot(unit(fa(y,x)), mean_q unit(fb(q))), which is what is
// computed. Zero vectors count as similarity 0.

inline Var correlation_map(const Var& fa, const Var& fb) {
    const Tensor& a = fa->value;
    const Tensor& b = fb->value;
    if (a.rank() != 3 || !a.same_shape(b))
        throw std::invalid_argument("correlation_map expects identical C×H×W shapes");
    const std::size_t c = a.shape[0], h = a.shape[1], w = a.shape[2];
    const std::size_t p = h * w;

    auto unit_of = [c, p](const Tensor& t, std::vector<double>& units,
                          std::vector<double>& norms) {
        units.assign(c * p, 0.0);
        norms.assign(p, 0.0);
        for (std::size_t q = 0; q < p; ++q) {
            double nn = 0.0;
            for (std::size_t ci = 0; ci < c; ++ci) {
                const double v = t[ci * p + q];
                nn += v * v;
            }
            nn = std::sqrt(nn);
            norms[q] = nn;
            if (nn > 0.0)
                for (std::size_t ci = 0; ci < c; ++ci)
                    units[ci * p + q] = t[ci * p + q] / nn;
        }
    };

    auto ua = std::make_shared<std::vector<double>>();
    auto ub = std::make_shared<std::vector<double>>();
    auto na = std::make_shared<std::vector<double>>();
    auto nb = std::make_shared<std::vector<double>>();
    unit_of(a, *ua, *na);
    unit_of(b, *ub, *nb);

    // m = mean of fb's unit vectors
    auto m = std::make_shared<std::vector<double>>(c, 0.0);
    for (std::size_t ci = 0; ci < c; ++ci) {
        double acc = 0.0;
        for (std::size_t q = 0; q < p; ++q) acc += (*ub)[ci * p + q];
        (*m)[ci] = acc / static_cast<double>(p);
    }

    Tensor out({h, w});
    for (std::size_t q = 0; q < p; ++q) {
        double acc = 0.0;
        for (std::size_t ci = 0; ci < c; ++ci) acc += (*ua)[ci * p + q] * (*m)[ci];
        out[q] = acc;
    }

    auto fap = fa, fbp = fb;
    return make_node(std::move(out), {fa, fb}, [fap, fbp, ua, ub, na, nb, m, c, p](Node& self) {
        // grads through fa: Jacobian of normalization applied to m
        if (fap->requires_grad) {
            for (std::size_t q = 0; q < p; ++q) {
                const double nn = (*na)[q];
                if (nn == 0.0) continue;
                const double g = self.grad[q];
                if (g == 0.0) continue;
                double dot = 0.0;
                for (std::size_t ci = 0; ci < c; ++ci)
                    dot += (*ua)[ci * p + q] * (*m)[ci];
                for (std::size_t ci = 0; ci < c; ++ci)
                    fap->grad[ci * p + q] +=
                        g * ((*m)[ci] - dot * (*ua)[ci * p + q]) / nn;
            }
        }
        if (fbp->requires_grad) {
            // S = (1/P) * sum_q grad(q) * ua(q)
            std::vector<double> s(c, 0.0);
            for (std::size_t q = 0; q < p; ++q) {
                const double g = self.grad[q];
                if (g == 0.0) continue;
                for (std::size_t ci = 0; ci < c; ++ci)
                    s[ci] += g * (*ua)[ci * p + q];
            }
            for (std::size_t ci = 0; ci < c; ++ci) s[ci] /= static_cast<double>(p);
            for (std::size_t q = 0; q < p; ++q) {
                const double nn = (*nb)[q];
                if (nn == 0.0) continue;
                double dot = 0.0;
                for (std::size_t ci = 0; ci < c; ++ci) dot += (*ub)[ci * p + q] * s[ci];
                for (std::size_t ci = 0; ci < c; ++ci)
                    fbp->grad[ci * p + q] += (s[ci] - dot * (*ub)[ci * p + q]) / nn;
            }
        }
    });
}

}  // namespace sfrf::ad
