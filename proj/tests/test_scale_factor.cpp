#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "cosmoboltz/regime.hpp"
#include "cosmoboltz/scale_factor.hpp"

using namespace cosmoboltz;

namespace {

double closed_form_flat(double t) { return std::pow(std::sqrt(6.0 * pi) * t + 1.0, 2.0 / 3.0); }

}  // namespace

TEST(ScaleFactor, CriticalRateGivesZeroEnergy) {
    EXPECT_DOUBLE_EQ(critical_expansion_rate(), std::sqrt(8.0 * pi / 3.0));
    EXPECT_NEAR(energy_from_rate(critical_expansion_rate()), 0.0, 1e-15);
    EXPECT_NEAR(energy_from_rate(4.0), 8.0 - 4.0 * pi / 3.0, 1e-14);
}

TEST(ScaleFactor, RateEnergyRoundTrip) {
    for (double e : {0.0, 0.1, 1.0, 7.5, 100.0}) EXPECT_NEAR(energy_from_rate(rate_from_energy(e)), e, 1e-12 * (1 + e));
}

TEST(ScaleFactor, FlatSolutionMatchesClosedForm) {
    const auto tr = solve_scale_factor(critical_expansion_rate(), -2.0, 10.0, 1e-3);
    for (std::size_t i = 0; i < tr.size(); i += 97) {
        const double t = tr.time(i);
        EXPECT_NEAR(tr.a_sample(i) / closed_form_flat(t), 1.0, 1e-10) << "t = " << t;
    }
    // Between samples the Hermite interpolant keeps the accuracy.
    for (double t : {0.00037, 1.23456, 9.9999}) EXPECT_NEAR(tr.a(t) / closed_form_flat(t), 1.0, 1e-9);
}

TEST(ScaleFactor, FlatIntegralMatchesClosedForm) {
    for (double gamma : {-2.9, -2.5, -1.5, -0.5}) {
        const auto tr = solve_scale_factor(critical_expansion_rate(), gamma, 50.0, 1e-3);
        for (double t : {0.5, 5.0, 25.0, 50.0})
            EXPECT_NEAR(tr.a_gamma_integral(t) / flat_a_gamma_integral(t, gamma), 1.0, 1e-9)
                << "gamma " << gamma << " t " << t;
    }
}

TEST(ScaleFactor, EnergyIsConservedAndRateBracketHolds) {
    for (double adot0 : {critical_expansion_rate() + 1e-3, 3.5, 6.0, 20.0}) {
        const auto tr = solve_scale_factor(adot0, -2.5, 50.0, 1e-3);
        const double e = tr.energy();
        for (std::size_t i = 0; i < tr.size(); i += 53) {
            EXPECT_NEAR(energy_invariant(tr.state(i)), e, 1e-10 * (1 + e));
            const double r2 = tr.adot_sample(i) * tr.adot_sample(i);
            EXPECT_GE(r2, 2.0 * e * (1 - 1e-12));
            EXPECT_LE(r2, (2.0 * e + 8.0 * pi / 3.0) * (1 + 1e-12));
        }
    }
}

TEST(ScaleFactor, ScaleFactorIsIncreasing) {
    const auto tr = solve_scale_factor(5.0, -2.0, 20.0, 1e-2);
    for (std::size_t i = 1; i < tr.size(); ++i) EXPECT_GT(tr.a_sample(i), tr.a_sample(i - 1));
}

TEST(ScaleFactor, ContractViolations) {
    EXPECT_THROW(solve_scale_factor(1.0, -2.0, 1.0, 1e-3), ContractError);
    EXPECT_THROW(solve_scale_factor(4.0, 0.5, 1.0, 1e-3), ContractError);
    EXPECT_THROW(solve_scale_factor(4.0, -3.0, 1.0, 1e-3), ContractError);
    EXPECT_THROW(solve_scale_factor(4.0, -2.0, -1.0, 1e-3), ContractError);
    EXPECT_THROW(solve_scale_factor(4.0, -2.0, 1.0, 0.0), ContractError);
    const auto tr = solve_scale_factor(4.0, -2.0, 1.0, 1e-2);
    EXPECT_THROW(tr.a(2.0), ContractError);
}

TEST(Regime, ClassificationTable) {
    const double open = energy_from_rate(4.0);
    EXPECT_EQ(classify_regime(0.0, -1.5), Regime::I);
    EXPECT_EQ(classify_regime(0.0, -2.5), Regime::II);
    EXPECT_EQ(classify_regime(0.0, -1.6), Regime::II);
    EXPECT_EQ(classify_regime(open, -2.0), Regime::III);
    EXPECT_EQ(classify_regime(open, -2.5), Regime::IV);
    EXPECT_EQ(classify_regime(open, -1.75), Regime::Uncovered);
    EXPECT_EQ(classify_regime(0.0, -1.0), Regime::Uncovered);
    EXPECT_THROW(classify_regime(-1.0, -2.0), ContractError);
    EXPECT_THROW(classify_regime(1.0, 0.0), ContractError);
}

TEST(Regime, StringRoundTrip) {
    for (Regime r : {Regime::I, Regime::II, Regime::III, Regime::IV, Regime::Uncovered})
        EXPECT_EQ(regime_from_string(to_string(r)), r);
    EXPECT_THROW(regime_from_string("V"), ContractError);
}

// The closed-form bound is rigorous, so the integrated a_gamma must dominate
// it at every time for any expanding trajectory of the right regime.
TEST(IntegralBound, NumericalIntegralDominatesBound) {
    struct Case {
        Regime regime;
        double gamma, adot0;
    };
    const double crit = critical_expansion_rate();
    for (const Case& c : {Case{Regime::I, -1.5, crit}, Case{Regime::II, -2.2, crit}, Case{Regime::II, -2.9, crit},
                          Case{Regime::III, -2.0, 3.0}, Case{Regime::IV, -2.6, 10.0}}) {
        const auto tr = solve_scale_factor(c.adot0, c.gamma, 200.0, 1e-3);
        for (double t : {0.01, 0.3, 2.0, 17.0, 120.0, 200.0}) {
            const auto b = a_gamma_integral_bound(c.regime, t, tr.energy(), c.gamma);
            EXPECT_GE(tr.a_gamma_integral(t), b.bound) << to_string(c.regime) << " t " << t;
            EXPECT_GT(b.constant, 0.0);
        }
    }
}

TEST(IntegralBound, RejectsMismatchedRegime) {
    EXPECT_THROW(a_gamma_integral_bound(Regime::IV, 1.0, 0.0, -2.5), ContractError);
    EXPECT_THROW(a_gamma_integral_bound(Regime::Uncovered, 1.0, 1.0, -1.0), ContractError);
}
