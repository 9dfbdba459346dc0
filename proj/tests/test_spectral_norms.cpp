#include <array>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "cosmoboltz/spectral_norms.hpp"

using namespace cosmoboltz;

namespace {

NormConfig config(int n_der = 2, int m = 3, double gamma = -2.5) {
    NormConfig c;
    c.n_der = n_der;
    c.m = m;
    c.r = 1;
    c.gamma = gamma;
    return c;
}

Distribution bump(const VelocityGrid& g, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return random_bump_field(g, rng);
}

// Straight from the definition, one derivative and one weight at a time.
double hand_triple_norm(const Distribution& f, double k, int depth, double gamma, std::span<const double> nu = {}) {
    double total = 0.0;
    for (const auto& b : multi_indices(depth)) {
        const Distribution d = partial_derivative(f, b);
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double w = std::pow(1.0 + norm(f.grid.velocity(i)), gamma * (b.order() - k));
            total += f.grid.quad_weight(i) * w * w * d[i] * d[i] * (nu.empty() ? 1.0 : nu[i]);
        }
    }
    return total;
}

}  // namespace

TEST(TripleNorm, MatchesDirectSum) {
    const VelocityGrid g(10, 4.5);
    const auto f = bump(g, 1);
    std::vector<double> nu(g.size());
    for (std::size_t i = 0; i < nu.size(); ++i) nu[i] = 1.0 / (1.0 + norm2(g.velocity(i)));
    for (int depth : {1, 2, 3})
        for (double k : {0.0, 1.0, 2.5}) {
            const auto cfg = config(depth);
            const double want = hand_triple_norm(f, k, depth, cfg.gamma);
            EXPECT_NEAR(triple_norm(f, k, cfg), want, 1e-12 * want);
            const double want_nu = hand_triple_norm(f, k, depth, cfg.gamma, nu);
            EXPECT_NEAR(triple_norm_nu(f, k, cfg, nu), want_nu, 1e-12 * want_nu);
        }
}

TEST(TripleNorm, ZeroAndQuadraticHomogeneity) {
    const VelocityGrid g(8, 4.0);
    const auto cfg = config();
    EXPECT_EQ(triple_norm(Distribution(g), 2.0, cfg), 0.0);
    const auto f = bump(g, 2);
    EXPECT_NEAR(triple_norm(-3.0 * f, 1.0, cfg), 9.0 * triple_norm(f, 1.0, cfg), 1e-12 * triple_norm(f, 1.0, cfg) * 9);
}

TEST(TripleNorm, IncreasesWithWeightIndex) {
    // gamma < 0, so raising k raises every weight w^(gamma (|beta| - k)).
    const VelocityGrid g(9, 4.5);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto f = bump(g, 10 + s);
        double prev = 0.0;
        for (int k = 0; k <= 4; ++k) {
            const double v = triple_norm(f, k, config(2, 4));
            EXPECT_GT(v, prev);
            prev = v;
        }
    }
}

TEST(TripleNorm, UnitFrequencyGivesPlainNorm) {
    const VelocityGrid g(8, 4.0);
    const auto f = bump(g, 3);
    const std::vector<double> ones(g.size(), 1.0);
    const auto cfg = config();
    EXPECT_DOUBLE_EQ(triple_norm_nu(f, 2.0, cfg, ones), triple_norm(f, 2.0, cfg));
}

TEST(TripleNorm, InterpolationInequalityHolds) {
    const VelocityGrid g(10, 4.5);
    std::mt19937_64 rng(4);
    const auto cfg = config(2, 4);
    for (int s = 0; s < 20; ++s) {
        const auto f = random_bump_field(g, rng);
        for (int r = 1; r <= 3; ++r)
            for (int k = 1; r + k <= cfg.m; ++k) {
                const auto c = interpolation_check(f, r, k, cfg);
                EXPECT_TRUE(c.holds) << c.lhs << " > " << c.rhs;
                EXPECT_GT(c.lhs, 0.0);
            }
    }
    EXPECT_THROW(interpolation_check(bump(g, 5), 2, 3, cfg), ContractError);
}

TEST(TripleNorm, RejectsBadArguments) {
    const VelocityGrid g(6, 4.0);
    const Distribution f(g, 1.0);
    EXPECT_THROW(triple_norm(f, -1.0, config()), ContractError);
    EXPECT_THROW(triple_norm(f, 1.0, config(2, 3, 0.5)), ContractError);
    EXPECT_THROW(triple_norm_nu(f, 1.0, config(), std::vector<double>(3, 1.0)), ContractError);
}

TEST(NormConfig, Validation) {
    EXPECT_NO_THROW(config().validate());
    EXPECT_THROW(config(0).validate(), ContractError);
    EXPECT_THROW(config(5).validate(), ContractError);
    EXPECT_THROW(config(2, 1).validate(), ContractError);
    auto c = config();
    c.r = 3;
    EXPECT_THROW(c.validate(), ContractError);
    EXPECT_THROW(config(2, 3, -3.0).validate(), ContractError);
}

TEST(EnergySeries, InstantaneousReportFields) {
    const VelocityGrid g(8, 4.0);
    const auto f = bump(g, 6);
    const std::vector<double> nu(g.size(), 2.0);
    const auto cfg = config();
    const auto rep = instantaneous_report(0.0, f, cfg, nu);
    ASSERT_EQ(rep.triple_norm.size(), 4u);
    EXPECT_DOUBLE_EQ(rep.y_r, rep.triple_norm[0] + rep.triple_norm[1]);
    for (int k = 0; k <= 3; ++k) {
        EXPECT_NEAR(rep.triple_norm_nu[k], 2.0 * rep.triple_norm[k], 1e-13 * rep.triple_norm_nu[k]);
        EXPECT_DOUBLE_EQ(rep.E[k], 0.5 * rep.triple_norm[k]);
    }
}

TEST(EnergySeries, FrozenFieldIntegratesScaleFactorWeight) {
    // For a field held fixed in time, E_k(t) = |||f|||_k^2 / 2 + |||f|||_{nu,k}^2 int_0^t a_gamma.
    // The series uses the trapezoid rule over the samples, so the error
    // drops fourfold when the sample spacing halves.
    const double gamma = -2.5;
    const auto traj = solve_scale_factor(4.0, gamma, 20.0, 0.005);
    const VelocityGrid g(7, 4.0);
    const auto f = bump(g, 7);
    std::vector<double> nu(g.size());
    for (std::size_t i = 0; i < nu.size(); ++i) nu[i] = 1.0 + norm(g.velocity(i));
    const auto cfg = config(1, 2, gamma);
    auto run = [&](int samples) {
        std::vector<double> times;
        std::vector<Distribution> fs;
        for (int s = 0; s <= samples; ++s) {
            times.push_back(20.0 * s / samples);
            fs.push_back(f);
        }
        return energy_series(times, fs, traj, cfg, nu);
    };
    std::array<double, 2> err{};
    for (int level = 0; level < 2; ++level) {
        const auto series = run(1000 << level);
        const auto& rep = series.back();
        for (int k = 0; k <= 2; ++k) {
            const double want = 0.5 * rep.triple_norm[k] + rep.triple_norm_nu[k] * traj.a_gamma_integral(rep.t);
            EXPECT_NEAR(rep.E[k], want, 1e-3 * want) << "k " << k;
            if (k == 0) err[level] = std::abs(rep.E[k] - want) / want;
        }
        EXPECT_NEAR(rep.script_E, rep.E[0] + rep.E[1] + rep.E[2], 1e-13 * rep.script_E);
        // script E only grows when f is frozen.
        for (std::size_t s = 1; s < series.size(); ++s) EXPECT_GT(series[s].script_E, series[s - 1].script_E);
    }
    EXPECT_NEAR(err[0] / err[1], 4.0, 0.5);
}

TEST(EnergySeries, RejectsUnorderedSamples) {
    const auto traj = solve_scale_factor(critical_expansion_rate(), -2.0, 5.0, 0.01);
    const VelocityGrid g(6, 4.0);
    const Distribution f(g, 1.0);
    const std::vector<Distribution> fs{f, f};
    const std::vector<double> nu(g.size(), 1.0);
    EXPECT_THROW(energy_series(std::vector<double>{1.0, 2.0}, fs, traj, config(), nu), ContractError);
    EXPECT_THROW(energy_series(std::vector<double>{0.0, 0.0}, fs, traj, config(), nu), ContractError);
    EXPECT_THROW(energy_series(std::vector<double>{0.0, 9.0}, fs, traj, config(), nu), ContractError);
}
