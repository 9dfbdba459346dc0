#pragma once

// Newtonian expansion background: a'' = -(4 pi / 3) a^-2 with a(0) = 1, its
// conserved energy, and the collision dilution factor a_gamma = a^(-3-gamma).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <vector>

#include "cosmoboltz/common.hpp"
#include "cosmoboltz/regime.hpp"

namespace cosmoboltz {

struct ScaleFactorState {
    double t = 0.0;
    double a = 1.0;
    double adot = 0.0;
};

/// Expansion rate at a = 1 that gives E_a = 0.
inline double critical_expansion_rate() { return std::sqrt(8.0 * pi / 3.0); }

/// E_a = adot^2 / 2 - (4 pi / 3) / a.
inline double energy_invariant(const ScaleFactorState& s) {
    require(s.a > 0.0, "energy_invariant: scale factor must be positive");
    return 0.5 * s.adot * s.adot - (4.0 * pi / 3.0) / s.a;
}

inline double energy_from_rate(double adot0) { return energy_invariant({0.0, 1.0, adot0}); }

/// Expansion rate at a = 1 for a requested energy E_a >= 0.
inline double rate_from_energy(double energy) {
    require(energy >= 0.0, "rate_from_energy: E_a must be non-negative");
    return std::sqrt(2.0 * energy + 8.0 * pi / 3.0);
}

/// Exact solution for E_a = 0.
inline double flat_scale_factor(double t) {
    return std::pow(std::sqrt(6.0 * pi) * t + 1.0, 2.0 / 3.0);
}

/// Exact integral of a_gamma for E_a = 0: int_0^t (c s + 1)^q ds with
/// c = sqrt(6 pi), q = -(2/3)(3 + gamma).
inline double flat_a_gamma_integral(double t, double gamma) {
    const double c = std::sqrt(6.0 * pi);
    const double q = -(2.0 / 3.0) * (3.0 + gamma);
    if (std::abs(q + 1.0) < 1e-14) return std::log1p(c * t) / c;
    return (std::pow(c * t + 1.0, q + 1.0) - 1.0) / (c * (q + 1.0));
}

/// Sampled solution on a fixed RK4 grid. Immutable once built.
class ScaleFactorTrajectory {
public:
    ScaleFactorTrajectory() = default;

    double gamma() const { return gamma_; }
    double energy() const { return energy_; }
    double t_end() const { return t_.back(); }
    std::size_t size() const { return t_.size(); }

    ScaleFactorState state(std::size_t i) const { return {t_[i], a_[i], adot_[i]}; }
    double time(std::size_t i) const { return t_[i]; }
    double a_sample(std::size_t i) const { return a_[i]; }
    double adot_sample(std::size_t i) const { return adot_[i]; }
    double integral_sample(std::size_t i) const { return integral_[i]; }

    /// a(t), cubic Hermite between samples using the stored (a, adot).
    double a(double t) const {
        const auto [i, s, dt] = locate(t);
        return hermite(a_[i], a_[i + 1], adot_[i], adot_[i + 1], s, dt);
    }

    double adot(double t) const {
        const auto [i, s, dt] = locate(t);
        return hermite(adot_[i], adot_[i + 1], accel(a_[i]), accel(a_[i + 1]), s, dt);
    }

    /// a(t)^(-3 - gamma).
    double a_gamma(double t) const { return std::pow(a(t), -3.0 - gamma_); }

    /// int_0^t a_gamma(s) ds, Hermite-interpolated with the exact slope a_gamma.
    double a_gamma_integral(double t) const {
        const auto [i, s, dt] = locate(t);
        return hermite(integral_[i], integral_[i + 1], std::pow(a_[i], -3.0 - gamma_),
                       std::pow(a_[i + 1], -3.0 - gamma_), s, dt);
    }

    /// CSV columns: t, a, adot, a_gamma, a_gamma_integral. Every `stride`-th
    /// sample plus the last one.
    void write_csv(std::ostream& os, std::size_t stride = 1) const {
        os << "t,a,adot,a_gamma,a_gamma_integral\n";
        char buf[160];
        stride = std::max<std::size_t>(stride, 1);
        for (std::size_t i = 0; i < t_.size(); ++i) {
            if (i % stride != 0 && i + 1 != t_.size()) continue;
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", t_[i], a_[i], adot_[i],
                          std::pow(a_[i], -3.0 - gamma_), integral_[i]);
            os << buf;
        }
    }

    friend ScaleFactorTrajectory solve_scale_factor(double, double, double, double);

private:
    static double accel(double a) { return -(4.0 * pi / 3.0) / (a * a); }

    struct Where {
        std::size_t i;
        double s;
        double dt;
    };

    Where locate(double t) const {
        const double slack = 1e-12 * std::max(1.0, t_.back());
        require(t >= -slack && t <= t_.back() + slack, "scale factor queried outside [0, t_end]");
        t = std::clamp(t, 0.0, t_.back());
        auto it = std::upper_bound(t_.begin(), t_.end(), t);
        std::size_t i = (it == t_.begin()) ? 0 : static_cast<std::size_t>(it - t_.begin()) - 1;
        if (i + 1 >= t_.size()) i = t_.size() - 2;
        const double dt = t_[i + 1] - t_[i];
        return {i, (t - t_[i]) / dt, dt};
    }

    static double hermite(double y0, double y1, double d0, double d1, double s, double dt) {
        const double s2 = s * s, s3 = s2 * s;
        return (2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * dt * d0 + (-2 * s3 + 3 * s2) * y1 +
               (s3 - s2) * dt * d1;
    }

    double gamma_ = -2.0;
    double energy_ = 0.0;
    std::vector<double> t_, a_, adot_, integral_;
};

/// Classical RK4 with fixed step on (a, adot, int a_gamma). The quadrature
/// component rides along as an extra state so its error matches the ODE's.
inline ScaleFactorTrajectory solve_scale_factor(double adot0, double gamma, double t_end, double dt) {
    require(std::isfinite(adot0) && adot0 >= critical_expansion_rate() * (1.0 - 1e-12),
            "solve_scale_factor: adot(0) below (8 pi/3)^(1/2) gives E_a < 0 (recollapsing universe)");
    require_soft_gamma(gamma);
    require(dt > 0.0 && std::isfinite(dt), "solve_scale_factor: dt must be positive");
    require(t_end > 0.0 && std::isfinite(t_end), "solve_scale_factor: t_end must be positive");

    ScaleFactorTrajectory tr;
    tr.gamma_ = gamma;
    tr.energy_ = std::max(0.0, energy_from_rate(adot0));

    const double p = -3.0 - gamma;
    using Y = std::array<double, 3>;
    auto f = [p](const Y& y) -> Y {
        return {y[1], ScaleFactorTrajectory::accel(y[0]), std::pow(y[0], p)};
    };

    const auto steps = static_cast<std::size_t>(std::ceil(t_end / dt - 1e-9));
    tr.t_.reserve(steps + 1);
    tr.a_.reserve(steps + 1);
    tr.adot_.reserve(steps + 1);
    tr.integral_.reserve(steps + 1);

    Y y{1.0, adot0, 0.0};
    double t = 0.0;
    auto push = [&] {
        tr.t_.push_back(t);
        tr.a_.push_back(y[0]);
        tr.adot_.push_back(y[1]);
        tr.integral_.push_back(y[2]);
    };
    push();
    for (std::size_t n = 0; n < steps; ++n) {
        const double h = (n + 1 == steps) ? t_end - t : dt;
        if (h <= 0.0) break;
        const Y k1 = f(y);
        Y tmp;
        for (int c = 0; c < 3; ++c) tmp[c] = y[c] + 0.5 * h * k1[c];
        const Y k2 = f(tmp);
        for (int c = 0; c < 3; ++c) tmp[c] = y[c] + 0.5 * h * k2[c];
        const Y k3 = f(tmp);
        for (int c = 0; c < 3; ++c) tmp[c] = y[c] + h * k3[c];
        const Y k4 = f(tmp);
        for (int c = 0; c < 3; ++c) y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        t = (n + 1 == steps) ? t_end : t + h;
        if (!(y[0] > 0.0)) throw NumericalError("solve_scale_factor: scale factor left (0, inf)");
        push();
    }
    if (tr.t_.size() < 2) throw ContractError("solve_scale_factor: need at least one step");
    return tr;
}

/// Lower bound for int_0^t a_gamma in each covered regime.
///
/// `shape` is the constant-free profile: ln(1+t) for I and III,
/// (1+t)^(-1-2gamma/3) - 1 for II, (1+t)^(-2-gamma) - 1 for IV.
/// `constant` follows from the explicit expansion bounds a <= (6 pi)^(1/3) (1+t)^(2/3)
/// (E_a = 0) and a <= sqrt(2 E_a + 8 pi/3) (1+t) (E_a > 0), and `bound` =
/// constant * shape is then a rigorous lower bound (no fitting).
struct IntegralBound {
    double shape = 0.0;
    double constant = 0.0;
    double bound = 0.0;
};

inline IntegralBound a_gamma_integral_bound(Regime regime, double t, double energy, double gamma) {
    require(regime != Regime::Uncovered, "a_gamma_integral_bound: regime is UNCOVERED");
    require(classify_regime(energy, gamma) == regime,
            "a_gamma_integral_bound: regime tag does not match (E_a, gamma)");
    require(t >= 0.0, "a_gamma_integral_bound: t must be non-negative");

    const bool flat = (regime == Regime::I || regime == Regime::II);
    const double growth = flat ? 2.0 / 3.0 : 1.0;
    const double c_a = flat ? std::cbrt(6.0 * pi) : std::max(1.0, std::sqrt(2.0 * energy + 8.0 * pi / 3.0));
    const double q = -growth * (3.0 + gamma);  // a_gamma >= c_a^(-3-gamma) (1+t)^q
    const double lead = std::pow(c_a, -3.0 - gamma);

    IntegralBound b;
    switch (regime) {
        case Regime::I:
        case Regime::III:
            b.shape = std::log1p(t);
            b.constant = lead;
            break;
        case Regime::II:
        case Regime::IV:
            b.shape = std::pow(1.0 + t, q + 1.0) - 1.0;
            b.constant = lead / (q + 1.0);
            break;
        case Regime::Uncovered:
            break;
    }
    b.bound = b.constant * b.shape;
    return b;
}

}  // namespace cosmoboltz
