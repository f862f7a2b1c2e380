#pragma once

// Numerical ODE integration: fixed-step Euler / RK4 and adaptive
// Dormand-Prince 5(4), plus adjoint-sensitivity gradients through the
// solution.

#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "gsnop/common.hpp"

namespace gsnop {

enum class OdeMethod { Euler, RK4, Dopri5 };

struct SolverConfig {
    OdeMethod method = OdeMethod::Dopri5;
    double rtol = 1e-5;
    double atol = 1e-7;
    std::size_t max_steps = 100000;
    double initial_step = 0.01;  // also the fixed step for Euler/RK4

    void validate() const {
        if (!(rtol > 0.0)) throw ConfigError("rtol must be > 0");
        if (!(atol > 0.0)) throw ConfigError("atol must be > 0");
        if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
        if (!(initial_step > 0.0)) throw ConfigError("initial_step must be > 0");
    }
};

struct IntegrationError : std::runtime_error {
    VecD last_state;
    double last_t;
    IntegrationError(const std::string& msg, VecD state, double t)
        : std::runtime_error("integration error: " + msg), last_state(std::move(state)), last_t(t) {}
};

/// Right-hand side of dz/dt = f(z, t) with a vector-Jacobian product for the
/// adjoint pass. Evaluation must be pure.
class OdeFunc {
   public:
    virtual ~OdeFunc() = default;
    virtual std::size_t dim() const = 0;
    virtual std::size_t param_count() const { return 0; }
    virtual VecD eval(const VecD& z, double t) const = 0;
    /// Accumulate a^T df/dz into grad_z and a^T df/dtheta into grad_params.
    virtual void vjp(const VecD& z, double t, const VecD& a, VecD& grad_z, VecD& grad_params) const {
        (void)z;
        (void)t;
        (void)a;
        (void)grad_z;
        (void)grad_params;
        throw UsageError("OdeFunc::vjp not implemented for this function");
    }
};

/// OdeFunc from a plain callable (no parameters, no vjp).
class LambdaOdeFunc : public OdeFunc {
   public:
    using Fn = std::function<VecD(const VecD&, double)>;
    LambdaOdeFunc(std::size_t dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}
    std::size_t dim() const override { return dim_; }
    VecD eval(const VecD& z, double t) const override { return fn_(z, t); }

   private:
    std::size_t dim_;
    Fn fn_;
};

namespace detail {

inline void axpy(VecD& y, double a, const VecD& x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

inline void check_state(const VecD& z, double t) {
    if (!all_finite(z)) throw IntegrationError("state diverged (NaN/Inf)", z, t);
}

// Dormand-Prince 5(4) tableau.
struct Dopri5Tab {
    static constexpr double c[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
    static constexpr double a[7][6] = {
        {0, 0, 0, 0, 0, 0},
        {1.0 / 5, 0, 0, 0, 0, 0},
        {3.0 / 40, 9.0 / 40, 0, 0, 0, 0},
        {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0},
        {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0},
        {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0},
        {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
    static constexpr double b5[7] = {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0};
    static constexpr double b4[7] = {5179.0 / 57600, 0,           7571.0 / 16695, 393.0 / 640,
                                     -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};
};

}  // namespace detail

/// One RK4 step from (z, t) with step h.
template <typename F>
VecD rk4_step(const F& f, const VecD& z, double t, double h) {
    VecD k1 = f(z, t);
    VecD z2 = z;
    detail::axpy(z2, h / 2, k1);
    VecD k2 = f(z2, t + h / 2);
    VecD z3 = z;
    detail::axpy(z3, h / 2, k2);
    VecD k3 = f(z3, t + h / 2);
    VecD z4 = z;
    detail::axpy(z4, h, k3);
    VecD k4 = f(z4, t + h);
    VecD out = z;
    for (std::size_t i = 0; i < z.size(); ++i)
        out[i] += h / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    return out;
}

/// Accepted steps of an integration as (t_start, h) pairs; replaying them
/// reproduces the solve arithmetic exactly.
using StepSequence = std::vector<std::pair<double, double>>;

namespace detail {

template <typename F>
VecD solve_fixed(const F& f, VecD z, double t0, double t1, const SolverConfig& cfg, bool rk4,
                 StepSequence* steps) {
    double span = t1 - t0;
    std::size_t n = static_cast<std::size_t>(std::ceil(span / cfg.initial_step));
    if (n == 0) n = 1;
    if (n > cfg.max_steps)
        throw IntegrationError("fixed-step count exceeds max_steps", z, t0);
    double h = span / static_cast<double>(n);
    double t = t0;
    for (std::size_t i = 0; i < n; ++i) {
        if (steps) steps->emplace_back(t, h);
        if (rk4) {
            z = rk4_step(f, z, t, h);
        } else {
            VecD k = f(z, t);
            axpy(z, h, k);
        }
        t = t0 + span * static_cast<double>(i + 1) / static_cast<double>(n);
        check_state(z, t);
    }
    return z;
}

template <typename F>
VecD solve_dopri5(const F& f, VecD z, double t0, double t1, const SolverConfig& cfg,
                  StepSequence* steps) {
    using Tab = Dopri5Tab;
    const std::size_t d = z.size();
    double t = t0;
    double h = std::min(cfg.initial_step, t1 - t0);
    double err_prev = 1.0;
    VecD k[7];
    k[0] = f(z, t);  // FSAL
    std::size_t nsteps = 0;
    while (t < t1) {
        if (++nsteps > cfg.max_steps) throw IntegrationError("max_steps exhausted", z, t);
        if (t + h > t1) h = t1 - t;
        for (int s = 1; s < 7; ++s) {
            VecD zs = z;
            for (int j = 0; j < s; ++j)
                if (Tab::a[s][j] != 0.0) axpy(zs, h * Tab::a[s][j], k[j]);
            k[s] = f(zs, t + Tab::c[s] * h);
        }
        VecD z5 = z;
        for (int s = 0; s < 7; ++s)
            if (Tab::b5[s] != 0.0) axpy(z5, h * Tab::b5[s], k[s]);
        // weighted RMS error of the embedded 4th-order difference
        double err = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double e = 0.0;
            for (int s = 0; s < 7; ++s) e += h * (Tab::b5[s] - Tab::b4[s]) * k[s][i];
            double sc = cfg.atol + cfg.rtol * std::max(std::abs(z[i]), std::abs(z5[i]));
            err += (e / sc) * (e / sc);
        }
        err = std::sqrt(err / static_cast<double>(d));
        if (!std::isfinite(err)) throw IntegrationError("state diverged (NaN/Inf)", z, t);
        if (err <= 1.0) {
            if (steps) steps->emplace_back(t, h);
            t += h;
            z = std::move(z5);
            check_state(z, t);
            k[0] = k[6];  // FSAL: k7 of accepted step is k1 of the next
            double fac = 0.9 * std::pow(std::max(err, 1e-10), -0.2) * std::pow(err_prev, 0.08);
            h *= std::clamp(fac, 0.2, 10.0);
            err_prev = std::max(err, 1e-10);
        } else {
            double fac = 0.9 * std::pow(err, -0.2);
            h *= std::clamp(fac, 0.2, 10.0);
        }
        if (h <= 0.0 || !std::isfinite(h)) throw IntegrationError("step size underflow", z, t);
    }
    return z;
}

template <typename F>
VecD solve_impl(const F& f, const VecD& z0, double t0, double t1, const SolverConfig& cfg,
                StepSequence* steps) {
    cfg.validate();
    if (t1 < t0) throw UsageError("ode_solve requires t1 >= t0");
    if (!all_finite(z0)) throw DomainError("ode_solve: non-finite initial state");
    if (t1 == t0) return z0;
    switch (cfg.method) {
        case OdeMethod::Euler: return solve_fixed(f, z0, t0, t1, cfg, /*rk4=*/false, steps);
        case OdeMethod::RK4: return solve_fixed(f, z0, t0, t1, cfg, /*rk4=*/true, steps);
        case OdeMethod::Dopri5: return solve_dopri5(f, z0, t0, t1, cfg, steps);
    }
    throw ConfigError("unknown solver method");
}

}  // namespace detail

inline VecD ode_solve(const OdeFunc& f, const VecD& z0, double t0, double t1,
                      const SolverConfig& cfg) {
    auto fn = [&f](const VecD& z, double t) { return f.eval(z, t); };
    return detail::solve_impl(fn, z0, t0, t1, cfg, nullptr);
}

/// Like ode_solve, also records the accepted (t, h) steps for replay.
inline VecD ode_solve_record(const OdeFunc& f, const VecD& z0, double t0, double t1,
                             const SolverConfig& cfg, StepSequence& steps) {
    auto fn = [&f](const VecD& z, double t) { return f.eval(z, t); };
    return detail::solve_impl(fn, z0, t0, t1, cfg, &steps);
}

struct AdjointResult {
    VecD grad_z0;
    VecD grad_params;
};

/// Adjoint-sensitivity gradients: given z(t1) from a forward solve and the
/// loss gradient at t1, integrate the augmented system (state, adjoint,
/// parameter adjoint) backward from t1 to t0.
inline AdjointResult ode_solve_adjoint(const OdeFunc& f, const VecD& z_t1, double t0, double t1,
                                       const SolverConfig& cfg, const VecD& loss_grad_at_t1) {
    const std::size_t d = f.dim();
    const std::size_t np = f.param_count();
    if (z_t1.size() != d || loss_grad_at_t1.size() != d)
        throw ShapeError("ode_solve_adjoint: dimension mismatch");
    if (t1 == t0) return {loss_grad_at_t1, VecD(np, 0.0)};

    // Reversed-time variable s in [0, t1 - t0]; y = [z, a, gtheta].
    // dz/ds = -f(z, t1 - s); da/ds = a^T df/dz; dgtheta/ds = a^T df/dtheta.
    auto aug = [&f, d, np, t1](const VecD& y, double s) {
        double t = t1 - s;
        VecD z(y.begin(), y.begin() + d);
        VecD a(y.begin() + d, y.begin() + 2 * d);
        VecD fz = f.eval(z, t);
        VecD gz(d, 0.0), gp(np, 0.0);
        f.vjp(z, t, a, gz, gp);
        VecD dy(2 * d + np);
        for (std::size_t i = 0; i < d; ++i) dy[i] = -fz[i];
        for (std::size_t i = 0; i < d; ++i) dy[d + i] = gz[i];
        for (std::size_t i = 0; i < np; ++i) dy[2 * d + i] = gp[i];
        return dy;
    };

    VecD y0(2 * d + np, 0.0);
    std::copy(z_t1.begin(), z_t1.end(), y0.begin());
    std::copy(loss_grad_at_t1.begin(), loss_grad_at_t1.end(), y0.begin() + d);
    VecD y1 = detail::solve_impl(aug, y0, 0.0, t1 - t0, cfg, nullptr);

    AdjointResult out;
    out.grad_z0.assign(y1.begin() + d, y1.begin() + 2 * d);
    out.grad_params.assign(y1.begin() + 2 * d, y1.end());
    return out;
}

}  // namespace gsnop
