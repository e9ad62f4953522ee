#pragma once

// RMSProp parameter updates and the validation-plateau learning-rate
// schedule used by the training loop.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "softpose/layers.hpp"

namespace softpose {

// ---------------------------------------------------------------------------
// RMSProp:  v <- rho*v + (1-rho)*g^2,  p <- p - lr * g / (sqrt(v) + eps).
// ---------------------------------------------------------------------------

/// Running mean of squared gradients, one array per parameter in ParamList
/// order.  Starts at zero.
struct RmsPropState {
    std::vector<std::vector<real>> v;

    void init(const ParamList& params) {
        v.clear();
        v.reserve(params.size());
        for (const auto& nt : params)
            v.emplace_back(static_cast<size_t>(nt.tensor.size()), real(0));
    }
    bool matches(const ParamList& params) const {
        if (v.size() != params.size()) return false;
        for (size_t i = 0; i < v.size(); ++i)
            if (static_cast<int64_t>(v[i].size()) != params[i].tensor.size()) return false;
        return true;
    }
};

/// Array-level update rule shared by the optimizer and its tests.
inline void rmsprop_update(real* param, const real* grad, real* v, int64_t n, real lr, real rho,
                           real eps) {
    for (int64_t i = 0; i < n; ++i) {
        const real g = grad[i];
        v[i] = rho * v[i] + (1 - rho) * g * g;
        param[i] -= lr * g / (std::sqrt(v[i]) + eps);
    }
}

/// One optimizer step over every parameter.  Gradients must already be
/// accumulated by a backward pass; a non-finite gradient aborts the step
/// (no parameter is modified) with a diagnostic naming the parameter.
inline void rmsprop_step(ParamList& params, RmsPropState& state, real lr, real rho = real(0.9),
                         real eps = real(1e-8)) {
    detail::check(lr > 0 && rho > 0 && rho < 1 && eps >= 0, "rmsprop_step: invalid hyperparameters");
    if (state.v.empty()) state.init(params);
    detail::check(state.matches(params), "rmsprop_step: state does not match parameter list");

    for (const auto& nt : params)
        for (real g : nt.tensor.grad())
            if (!std::isfinite(g))
                throw NumericError("rmsprop_step: non-finite gradient in parameter '" + nt.name +
                                   "'");
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& t = params[i].tensor;
        rmsprop_update(t.data(), t.grad().data(), state.v[i].data(), t.size(), lr, rho, eps);
    }
}

// ---------------------------------------------------------------------------
// Plateau schedule: multiply lr by `factor` whenever the best validation
// score has not improved by at least `improvement` for `patience`
// consecutive epochs; never below `floor`.
// ---------------------------------------------------------------------------

struct PlateauConfig {
    real factor = real(0.4);
    int patience = 5;
    real improvement = real(1e-4);
    real floor = real(1e-7);

    void validate() const {
        detail::check(factor > 0 && factor < 1, "PlateauConfig: factor must be in (0, 1)");
        detail::check(patience >= 1, "PlateauConfig: patience must be >= 1");
        detail::check(improvement >= 0 && floor > 0, "PlateauConfig: invalid thresholds");
    }
};

class PlateauScheduler {
  public:
    PlateauScheduler(real initial_lr, PlateauConfig cfg = {}) : lr_(initial_lr), cfg_(cfg) {
        cfg_.validate();
        detail::check(initial_lr > 0, "PlateauScheduler: initial lr must be positive");
    }

    /// Feed one epoch's validation score; returns the learning rate to use
    /// from the next epoch on.
    real observe(real score) {
        if (!seen_any_ || score >= best_ + cfg_.improvement) {
            best_ = score;
            wait_ = 0;
            seen_any_ = true;
        } else if (++wait_ >= cfg_.patience) {
            lr_ = std::max(lr_ * cfg_.factor, cfg_.floor);
            wait_ = 0;
        }
        return lr_;
    }

    real lr() const { return lr_; }
    real best() const { return best_; }
    int wait() const { return wait_; }

    /// Restore persisted state (checkpoint resume).
    void restore(real lr, real best, int wait) {
        detail::check(lr > 0 && wait >= 0, "PlateauScheduler: invalid restored state");
        lr_ = lr;
        best_ = best;
        wait_ = wait;
        seen_any_ = true;
    }

  private:
    real lr_;
    PlateauConfig cfg_;
    real best_ = 0;
    int wait_ = 0;
    bool seen_any_ = false;
};

/// Pure replay form of the schedule: the learning rate after observing the
/// whole history of validation scores, starting from initial_lr.
inline real lr_schedule(const std::vector<real>& history, real initial_lr,
                        const PlateauConfig& cfg = {}) {
    detail::check(!history.empty(), "lr_schedule: history must be nonempty");
    PlateauScheduler sched(initial_lr, cfg);
    real lr = initial_lr;
    for (real s : history) lr = sched.observe(s);
    return lr;
}

} // namespace softpose
