#pragma once

// Central finite-difference check of reverse-mode gradients.

#include <functional>

#include "sfrf/autodiff.hpp"

namespace sfrf::ad {

// f builds a scalar graph from a leaf. Returns the max over coordinates
// of |analytic − central| / (|analytic| + |central| + 1e-12).
inline double finite_diff_check(const std::function<Var(const Var&)>& f, const Tensor& x,
                                double step) {
    if (step <= 0.0) throw std::invalid_argument("finite_diff_check step must be positive");
    Var leaf = param(x);
    Var root = f(leaf);
    if (root->value.numel() != 1)
        throw std::invalid_argument("finite_diff_check needs a scalar-valued function");
    if (!root->value.all_finite())
        throw std::runtime_error("finite_diff_check: function value is not finite");
    backward(root);
    const Tensor analytic = leaf->grad;

    double worst = 0.0;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double fp = f(constant(probe))->value[0];
        probe[i] = orig - step;
        const double fm = f(constant(probe))->value[0];
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_diff_check: perturbed value is not finite");
        const double central = (fp - fm) / (2.0 * step);
        const double err = std::abs(analytic[i] - central) /
                           (std::abs(analytic[i]) + std::abs(central) + 1e-12);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace sfrf::ad
