#pragma once

// Central finite-difference gradient checking.  The checker perturbs one
// input element at a time, so callers should keep probe tensors small.

#include <functional>
#include <string>
#include <vector>

#include "softpose/tensor.hpp"

namespace softpose {

/// Max over elements of |analytic - numeric| / max(1, |analytic|, |numeric|),
/// with numeric = (f(x + h e_i) - f(x - h e_i)) / 2h.  f must be a
/// deterministic scalar-valued function of x.
inline real finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                    real h = real(1e-6)) {
    detail::check(h > 0, "finite_difference_check: h must be positive");
    x.set_requires_grad(true);
    x.zero_grad();
    Tensor y = f(x);
    detail::check(y.size() == 1, "finite_difference_check: f must be scalar-valued");
    y.backward();
    const std::vector<real> analytic = x.grad();

    real worst = 0;
    real* xd = x.data();
    for (int64_t i = 0; i < x.size(); ++i) {
        const real keep = xd[i];
        xd[i] = keep + h;
        const real up = f(x).item();
        xd[i] = keep - h;
        const real dn = f(x).item();
        xd[i] = keep;
        const real numeric = (up - dn) / (2 * h);
        const real a = analytic[static_cast<size_t>(i)];
        const real rel =
            std::abs(a - numeric) / std::max({real(1), std::abs(a), std::abs(numeric)});
        if (rel > worst) worst = rel;
    }
    return worst;
}

/// One named entry of the gradient-check suite run by the CLI.
struct GradCheckCase {
    std::string name;
    real tolerance;
    std::function<real()> run; // returns max relative error
};

} // namespace softpose
