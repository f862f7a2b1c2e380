#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gsnop/odeint.hpp"

using namespace gsnop;

namespace {

SolverConfig default_dopri5() {
    SolverConfig cfg;
    cfg.method = OdeMethod::Dopri5;
    cfg.rtol = 1e-5;
    cfg.atol = 1e-7;
    return cfg;
}

SolverConfig fixed(OdeMethod m, double step) {
    SolverConfig cfg;
    cfg.method = m;
    cfg.initial_step = step;
    return cfg;
}

const LambdaOdeFunc kExpGrowth{1, [](const VecD& z, double) { return VecD{z[0]}; }};
const LambdaOdeFunc kRotation{2, [](const VecD& z, double) { return VecD{-z[1], z[0]}; }};

/// dz/dt = a z with learnable scalar a, for the adjoint closed-form oracle.
class ScaledGrowth : public OdeFunc {
   public:
    explicit ScaledGrowth(double a) : a_(a) {}
    std::size_t dim() const override { return 1; }
    std::size_t param_count() const override { return 1; }
    VecD eval(const VecD& z, double) const override { return {a_ * z[0]}; }
    void vjp(const VecD& z, double, const VecD& a, VecD& gz, VecD& gp) const override {
        gz[0] += a[0] * a_;      // a^T df/dz
        gp[0] += a[0] * z[0];    // a^T df/da
    }

   private:
    double a_;
};

}  // namespace

TEST_CASE("exponential growth reaches e at default tolerances") {
    VecD z = ode_solve(kExpGrowth, {1.0}, 0.0, 1.0, default_dopri5());
    CHECK(std::abs(z[0] - std::exp(1.0)) < 1e-4);
}

TEST_CASE("zero-length interval returns the initial state exactly") {
    VecD z0{1.23, -4.56};
    CHECK(ode_solve(kRotation, z0, 2.0, 2.0, default_dopri5()) == z0);
}

TEST_CASE("rotation field reaches (0, 1) after a quarter turn") {
    VecD z = ode_solve(kRotation, {1.0, 0.0}, 0.0, std::acos(-1.0) / 2.0, default_dopri5());
    CHECK(std::abs(z[0] - 0.0) < 1e-4);
    CHECK(std::abs(z[1] - 1.0) < 1e-4);
}

TEST_CASE("DOPRI5 error stays within 10x the tolerance band on exp growth") {
    SolverConfig cfg = default_dopri5();
    VecD z = ode_solve(kExpGrowth, {1.0}, 0.0, 1.0, cfg);
    double z_true = std::exp(1.0);
    CHECK(std::abs(z[0] - z_true) <= 10.0 * (cfg.rtol * std::abs(z_true) + cfg.atol));
}

TEST_CASE("order of accuracy: step halving on dz/dt = z") {
    double z_true = std::exp(1.0);
    auto global_err = [&](OdeMethod m, double h) {
        return std::abs(ode_solve(kExpGrowth, {1.0}, 0.0, 1.0, fixed(m, h))[0] - z_true);
    };
    double rk4_ratio = global_err(OdeMethod::RK4, 0.1) / global_err(OdeMethod::RK4, 0.05);
    CHECK(rk4_ratio >= 12.0);
    CHECK(rk4_ratio <= 20.0);
    double euler_ratio = global_err(OdeMethod::Euler, 0.01) / global_err(OdeMethod::Euler, 0.005);
    CHECK(euler_ratio >= 1.8);
    CHECK(euler_ratio <= 2.2);
}

TEST_CASE("time reversibility on a smooth field") {
    SolverConfig cfg = default_dopri5();
    VecD z0{0.7, -0.3};
    VecD z1 = ode_solve(kRotation, z0, 0.0, 1.5, cfg);
    // reverse by integrating the negated field forward over the same span
    LambdaOdeFunc back{2, [](const VecD& z, double) { return VecD{z[1], -z[0]}; }};
    VecD z0_back = ode_solve(back, z1, 0.0, 1.5, cfg);
    for (int i = 0; i < 2; ++i) CHECK(std::abs(z0_back[i] - z0[i]) < 100.0 * cfg.rtol);
}

TEST_CASE("fixed-step recording replays to the identical endpoint") {
    StepSequence steps;
    SolverConfig cfg = fixed(OdeMethod::RK4, 0.13);
    VecD z1 = ode_solve_record(kExpGrowth, {1.0}, 0.0, 1.0, cfg, steps);
    CHECK(steps.size() == 8);  // ceil(1 / 0.13)
    auto f = [](const VecD& z, double t) {
        (void)t;
        return VecD{z[0]};
    };
    VecD z = {1.0};
    for (auto [t, h] : steps) z = rk4_step(f, z, t, h);
    CHECK(z == z1);
}

TEST_CASE("max_steps exhaustion raises IntegrationError with the last state") {
    SolverConfig cfg = fixed(OdeMethod::Euler, 1e-6);
    cfg.max_steps = 10;
    CHECK_THROWS_AS(ode_solve(kExpGrowth, {1.0}, 0.0, 1.0, cfg), IntegrationError);
}

TEST_CASE("divergent states are reported") {
    LambdaOdeFunc blowup{1, [](const VecD& z, double) { return VecD{z[0] * z[0] * 1e6}; }};
    SolverConfig cfg = fixed(OdeMethod::Euler, 0.1);
    CHECK_THROWS_AS(ode_solve(blowup, {1e30}, 0.0, 1.0, cfg), IntegrationError);
}

TEST_CASE("backward time order is rejected; bad configs are rejected") {
    CHECK_THROWS_AS(ode_solve(kExpGrowth, {1.0}, 1.0, 0.0, default_dopri5()), UsageError);
    SolverConfig bad = default_dopri5();
    bad.rtol = 0.0;
    CHECK_THROWS_AS(ode_solve(kExpGrowth, {1.0}, 0.0, 1.0, bad), ConfigError);
}

TEST_CASE("adjoint gradient of z(1) wrt scale parameter equals e") {
    // z(1) = e^a at z0 = 1; dL/da at a=1 is e. Seed gradient dL/dz(1) = 1.
    ScaledGrowth f(1.0);
    SolverConfig cfg = default_dopri5();
    VecD z1 = ode_solve(f, {1.0}, 0.0, 1.0, cfg);
    AdjointResult adj = ode_solve_adjoint(f, z1, 0.0, 1.0, cfg, {1.0});
    CHECK(std::abs(adj.grad_params[0] - std::exp(1.0)) < 1e-3);
    // dL/dz0 = dz(1)/dz0 = e^a
    CHECK(std::abs(adj.grad_z0[0] - std::exp(1.0)) < 1e-3);
}

TEST_CASE("zero loss gradient at t1 yields zero gradients everywhere") {
    ScaledGrowth f(0.8);
    SolverConfig cfg = default_dopri5();
    VecD z1 = ode_solve(f, {1.0}, 0.0, 1.0, cfg);
    AdjointResult adj = ode_solve_adjoint(f, z1, 0.0, 1.0, cfg, {0.0});
    CHECK(adj.grad_z0[0] == 0.0);
    CHECK(adj.grad_params[0] == 0.0);
}

TEST_CASE("adjoint zero-length interval passes the seed through") {
    ScaledGrowth f(1.0);
    AdjointResult adj = ode_solve_adjoint(f, {2.0}, 1.0, 1.0, default_dopri5(), {3.0});
    CHECK(adj.grad_z0 == VecD{3.0});
    CHECK(adj.grad_params == VecD{0.0});
}

TEST_CASE("split integration matches a single span for aligned fixed steps") {
    SolverConfig cfg = fixed(OdeMethod::RK4, 0.1);
    VecD direct = ode_solve(kRotation, {1.0, 0.0}, 0.0, 1.0, cfg);
    VecD mid = ode_solve(kRotation, {1.0, 0.0}, 0.0, 0.5, cfg);
    VecD split = ode_solve(kRotation, mid, 0.5, 1.0, cfg);
    for (int i = 0; i < 2; ++i)
        CHECK(std::abs(direct[i] - split[i]) <= 10.0 * (cfg.rtol + cfg.atol));
}
