#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "cosmoboltz/evolution.hpp"

using namespace cosmoboltz;

namespace {

struct Fixture {
    double gamma = -2.5;
    VelocityGrid grid{6, 4.5};
    CollisionOperatorSet ops{grid, gamma, AngularKernel{}, make_sphere_quadrature(6)};
    ScaleFactorTrajectory traj = solve_scale_factor(4.0, gamma, 4.0, 1e-3);

    NormConfig norms() const {
        NormConfig n;
        n.n_der = 1;
        n.m = 2;
        n.r = 1;
        n.gamma = gamma;
        return n;
    }
    Distribution data(double amplitude, std::uint64_t seed = 1) const {
        std::mt19937_64 rng(seed);
        Distribution f = project_out_invariants(random_bump_field(grid, rng));
        return amplitude / std::sqrt(norm_squared(f)) * f;
    }
};

EvolutionConfig config(EvolutionMode mode, double t_end = 2.0) {
    EvolutionConfig c;
    c.mode = mode;
    c.t_end = t_end;
    c.dt = 1.0;
    c.cfl_safety = 0.9;
    c.sample_every = 2;
    return c;
}

}  // namespace

TEST(Evolution, ZeroDataStaysExactlyZero) {
    Fixture fx;
    const Dynamics dyn(fx.ops);
    const auto rec = evolve(Distribution(fx.grid), dyn, fx.traj, config(EvolutionMode::Nonlinear), fx.norms());
    EXPECT_FALSE(rec.aborted);
    for (const auto& f : rec.distributions) EXPECT_EQ(f.max_abs(), 0.0);
    for (const auto& r : rec.reports) EXPECT_EQ(r.script_E, 0.0);
    EXPECT_DOUBLE_EQ(rec.times.back(), 2.0);
}

TEST(Evolution, ConservativeRunKeepsMomentsAndDissipates) {
    Fixture fx;
    const Dynamics dyn(fx.ops, nullptr, true);
    const auto f0 = fx.data(1e-4);
    const auto rec = evolve(f0, dyn, fx.traj, config(EvolutionMode::Nonlinear), fx.norms());
    ASSERT_FALSE(rec.aborted);
    const auto mon = monitor(rec, fx.norms());
    EXPECT_LT(mon.max_moment_drift, 1e-14);
    EXPECT_TRUE(mon.positive);
    EXPECT_TRUE(mon.y_r_nonincreasing);
    EXPECT_LT(rec.reports.back().y_r, rec.reports.front().y_r);
    EXPECT_EQ(mon.steps, rec.steps);
}

TEST(Evolution, RhsVanishesForInvariantsUnderProjection) {
    Fixture fx;
    const Dynamics dyn(fx.ops, nullptr, true);
    for (int w = 0; w < 5; ++w) {
        const auto rhs = dyn.rhs(invariant_field(fx.grid, w), 0.5, EvolutionMode::Linear, fx.traj);
        for (const auto& m : conserved_moments(rhs)) EXPECT_NEAR(m, 0.0, 1e-13);
    }
}

TEST(Evolution, NonlinearRunNeedsSmallData) {
    Fixture fx;
    const Dynamics dyn(fx.ops);
    auto cfg = config(EvolutionMode::Nonlinear);
    cfg.small_data_threshold = 1e-6;
    EXPECT_THROW(evolve(fx.data(1.0), dyn, fx.traj, cfg, fx.norms()), ContractError);
    // The same data is fine for the linear problem.
    EXPECT_NO_THROW(evolve(fx.data(1.0), dyn, fx.traj, config(EvolutionMode::Linear, 0.5), fx.norms()));
}

TEST(Evolution, DenseDynamicsUsesSymmetricMatrix) {
    Fixture fx;
    const auto km = assemble_K_matrix(fx.ops);
    const Dynamics dense(fx.ops, &km);
    const auto f = fx.data(1.0, 3);
    EXPECT_EQ(dense.apply_L(f).values, km.apply_L(f, fx.ops).values);
    const auto rec = evolve(f, dense, fx.traj, config(EvolutionMode::Linear), fx.norms());
    // Symmetric L with the projection off still dissipates the L2 norm.
    EXPECT_LT(norm_squared(rec.distributions.back()), norm_squared(f));
}

TEST(Evolution, RungeKuttaConvergesWithStepSize) {
    Fixture fx;
    const Dynamics dyn(fx.ops, nullptr, true);
    const auto f0 = fx.data(1e-4, 4);
    auto final_state = [&](double safety) {
        auto cfg = config(EvolutionMode::Nonlinear, 1.0);
        cfg.cfl_safety = safety;
        cfg.sample_every = 1000000;
        return evolve(f0, dyn, fx.traj, cfg, fx.norms()).distributions.back();
    };
    const auto ref = final_state(0.05);
    const double e1 = std::sqrt(norm_squared(final_state(0.8) - ref));
    const double e2 = std::sqrt(norm_squared(final_state(0.4) - ref));
    EXPECT_GT(e1, 0.0);
    // RK4 on a scale factor with continuous first derivative; at least third order.
    EXPECT_GT(e1 / e2, 8.0);
}

TEST(Evolution, StepsRespectCflAndCap) {
    Fixture fx;
    const Dynamics dyn(fx.ops);
    auto cfg = config(EvolutionMode::Linear);
    cfg.dt_max = 0.005;
    const auto rec = evolve(fx.data(1.0), dyn, fx.traj, cfg, fx.norms());
    EXPECT_LE(rec.largest_step, 0.005 * (1 + 1e-12));
    cfg.dt_max = 0.0;
    const auto free = evolve(fx.data(1.0), dyn, fx.traj, cfg, fx.norms());
    EXPECT_LE(free.largest_step, cfg.cfl_safety / (fx.traj.a_gamma(2.0) * fx.ops.nu_max()) * (1 + 1e-12));
    EXPECT_GT(free.cfl_limited_steps, 0u);
}

TEST(Evolution, GuardsItsContracts) {
    Fixture fx;
    const Dynamics dyn(fx.ops);
    auto cfg = config(EvolutionMode::Linear, 10.0);
    EXPECT_THROW(evolve(fx.data(1.0), dyn, fx.traj, cfg, fx.norms()), ContractError);
    cfg = config(EvolutionMode::Linear);
    cfg.cfl_safety = 1.5;
    EXPECT_THROW(evolve(fx.data(1.0), dyn, fx.traj, cfg, fx.norms()), ContractError);
    EXPECT_THROW(evolve(Distribution(VelocityGrid(5, 4.5)), dyn, fx.traj, config(EvolutionMode::Linear), fx.norms()),
                 ContractError);
    Distribution bad = fx.data(1.0);
    bad.values[3] = NAN;
    EXPECT_THROW(evolve(bad, dyn, fx.traj, config(EvolutionMode::Linear), fx.norms()), ContractError);
    EXPECT_THROW(evolution_mode_from_string("semilinear"), ContractError);
}

TEST(Monitor, SyntheticRecord) {
    const VelocityGrid g(4, 4.0);
    TrajectoryRecord rec;
    const std::vector<double> t{0.0, 1.0, 2.0};
    const std::vector<double> y{4.0, 3.0, 3.5};
    for (std::size_t i = 0; i < t.size(); ++i) {
        EnergyReport r;
        r.t = t[i];
        r.triple_norm = {1.0, y[i] - 1.0, 0.0};
        r.triple_norm_nu = {0.0, 1.0, 0.0};
        r.y_r = y[i];
        rec.times.push_back(t[i]);
        rec.a_gamma.push_back(0.5);
        rec.reports.push_back(r);
        rec.moments.push_back({1.0, 0.0, 0.0, 0.0, double(i) * 1e-3});
        rec.min_F.push_back(i == 2 ? -1.0 : 0.1);
    }
    NormConfig n;
    n.r = 1;
    const auto s = monitor(rec, n);
    // dy/dt + a_gamma |||f|||_nu^2: -1 + 0.5 -> 0, then 0.5 + 0.5 = 1.
    ASSERT_EQ(s.dissipation_residual.size(), 2u);
    EXPECT_DOUBLE_EQ(s.dissipation_residual[0], 0.0);
    EXPECT_DOUBLE_EQ(s.dissipation_residual[1], 1.0);
    EXPECT_DOUBLE_EQ(s.max_relative_dissipation_residual, 2.0);
    EXPECT_FALSE(s.y_r_nonincreasing);
    EXPECT_DOUBLE_EQ(s.max_moment_drift, 2e-3);
    EXPECT_FALSE(s.positive);
    EXPECT_DOUBLE_EQ(s.min_F, -1.0);
    EXPECT_THROW(monitor(TrajectoryRecord{}, n), ContractError);
}
