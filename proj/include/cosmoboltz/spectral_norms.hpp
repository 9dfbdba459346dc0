#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "cosmoboltz/common.hpp"
#include "cosmoboltz/scale_factor.hpp"
#include "cosmoboltz/velocity_space.hpp"

namespace cosmoboltz {

/// Indices of the weighted norm hierarchy. n_der is the derivative depth,
/// m the largest weight index, r the decay index.
struct NormConfig {
    int n_der = 2;
    int m = 3;
    int r = 1;
    double gamma = -2.0;

    void validate() const {
        require(n_der >= 1 && n_der <= 4, "N_der must lie in 1..4");
        require(m >= 2, "m must be at least 2");
        require(r >= 1 && r < m, "decay index r must satisfy 0 < r < m");
        require_soft_gamma(gamma);
    }
};

/// All derivatives d^beta f with |beta| <= depth, in multi_indices() order,
/// computed once so every weight index k reuses them.
class DerivativeSet {
public:
    DerivativeSet(const Distribution& f, int depth) : grid_(f.grid), betas_(multi_indices(depth)) {
        derivs_.reserve(betas_.size());
        for (const auto& b : betas_) derivs_.push_back(b.order() == 0 ? f : partial_derivative(f, b));
        log_base_.resize(f.size());
        for (std::size_t i = 0; i < f.size(); ++i) log_base_[i] = std::log1p(norm(grid_.velocity(i)));
    }

    /// sum_beta || w^(|beta| - k) d^beta f ||^2, nu-weighted when nu is given.
    /// k may be fractional.
    double norm_sq(double k, double gamma, std::span<const double> nu = {}) const {
        require(nu.empty() || nu.size() == grid_.size(), "norm: nu has wrong length");
        double total = 0.0;
        std::vector<double> terms(grid_.size());
        for (std::size_t b = 0; b < betas_.size(); ++b) {
            const double expo = 2.0 * gamma * (betas_[b].order() - k);
            const auto& d = derivs_[b].values;
            for (std::size_t i = 0; i < d.size(); ++i) {
                double t = grid_.quad_weight(i) * d[i] * d[i];
                if (expo != 0.0) t *= std::exp(expo * log_base_[i]);
                if (!nu.empty()) t *= nu[i];
                terms[i] = t;
            }
            total += pairwise_sum(terms);
        }
        return total;
    }

private:
    VelocityGrid grid_;
    std::vector<MultiIndex> betas_;
    std::vector<Distribution> derivs_;
    std::vector<double> log_base_;
};

/// |||f|||_k^2 = sum_{|beta| <= N} || w^(|beta| - k) d^beta f ||^2.
inline double triple_norm(const Distribution& f, double k, const NormConfig& cfg) {
    require(k >= 0.0, "triple_norm: k must be non-negative");
    require_soft_gamma(cfg.gamma);
    return DerivativeSet(f, cfg.n_der).norm_sq(k, cfg.gamma);
}

/// The same sum in the nu-weighted inner product.
inline double triple_norm_nu(const Distribution& f, double k, const NormConfig& cfg, std::span<const double> nu) {
    require(k >= 0.0, "triple_norm_nu: k must be non-negative");
    require(nu.size() == f.size(), "triple_norm_nu: nu has wrong length");
    require_soft_gamma(cfg.gamma);
    return DerivativeSet(f, cfg.n_der).norm_sq(k, cfg.gamma, nu);
}

struct EnergyReport {
    double t = 0.0;
    std::vector<double> triple_norm;     // |||f|||_k^2, k = 0..m
    std::vector<double> triple_norm_nu;  // |||f|||_{nu,k}^2
    std::vector<double> E;               // E_k
    double script_E = 0.0;               // sum_k E_k
    double y_r = 0.0;                    // sum_{k <= r} |||f|||_k^2
};

/// Norms of one sample; the time-integral part of E_k is filled by
/// energy_series.
inline EnergyReport instantaneous_report(double t, const Distribution& f, const NormConfig& cfg,
                                         std::span<const double> nu) {
    cfg.validate();
    const DerivativeSet ds(f, cfg.n_der);
    EnergyReport rep;
    rep.t = t;
    for (int k = 0; k <= cfg.m; ++k) {
        rep.triple_norm.push_back(ds.norm_sq(k, cfg.gamma));
        rep.triple_norm_nu.push_back(ds.norm_sq(k, cfg.gamma, nu));
    }
    for (int k = 0; k <= cfg.r; ++k) rep.y_r += rep.triple_norm[k];
    rep.E.assign(cfg.m + 1, 0.0);
    for (int k = 0; k <= cfg.m; ++k) rep.E[k] = 0.5 * rep.triple_norm[k];
    rep.script_E = 0.0;
    for (double e : rep.E) rep.script_E += e;
    return rep;
}

/// Adds int_0^t a_gamma |||f|||_{nu,k}^2 ds (trapezoid over the samples) to
/// each E_k and refreshes the script-E totals. Reports must be in time order
/// starting at t = 0.
inline void accumulate_energy(std::vector<EnergyReport>& reports, const ScaleFactorTrajectory& traj) {
    if (reports.empty()) return;
    require(reports.front().t == 0.0, "energy series must start at t = 0");
    const std::size_t nk = reports.front().triple_norm.size();
    std::vector<double> integral(nk, 0.0);
    for (std::size_t s = 0; s < reports.size(); ++s) {
        auto& rep = reports[s];
        require(rep.triple_norm.size() == nk && rep.triple_norm_nu.size() == nk, "energy series: ragged reports");
        if (s > 0) {
            const auto& prev = reports[s - 1];
            require(rep.t > prev.t, "energy series: sample times must increase");
            const double dt = rep.t - prev.t;
            const double a0 = traj.a_gamma(prev.t), a1 = traj.a_gamma(rep.t);
            for (std::size_t k = 0; k < nk; ++k)
                integral[k] += 0.5 * dt * (a0 * prev.triple_norm_nu[k] + a1 * rep.triple_norm_nu[k]);
        }
        rep.script_E = 0.0;
        for (std::size_t k = 0; k < nk; ++k) {
            rep.E[k] = 0.5 * rep.triple_norm[k] + integral[k];
            rep.script_E += rep.E[k];
        }
    }
}

/// Energy reports for time-ordered samples (t_i, f_i) with t_0 = 0.
inline std::vector<EnergyReport> energy_series(std::span<const double> times, std::span<const Distribution> fs,
                                               const ScaleFactorTrajectory& traj, const NormConfig& cfg,
                                               std::span<const double> nu) {
    require(times.size() == fs.size(), "energy_series: times and samples are misaligned");
    std::vector<EnergyReport> out;
    out.reserve(fs.size());
    for (std::size_t s = 0; s < fs.size(); ++s) {
        require(times[s] >= 0.0 && times[s] <= traj.t_end(), "energy_series: sample time outside trajectory");
        out.push_back(instantaneous_report(times[s], fs[s], cfg, nu));
    }
    accumulate_energy(out, traj);
    return out;
}

struct InterpolationCheck {
    double lhs = 0.0;
    double rhs = 0.0;
    bool holds = true;
};

/// |||f|||_r^2 <= (|||f|||_{r-1}^2)^(k/(k+1)) (|||f|||_{r+k}^2)^(1/(k+1)).
inline InterpolationCheck interpolation_check(const Distribution& f, int r, int k, const NormConfig& cfg) {
    require(r >= 1 && k >= 1 && r + k <= cfg.m, "interpolation_check: need r >= 1, k >= 1, r + k <= m");
    const DerivativeSet ds(f, cfg.n_der);
    InterpolationCheck c;
    c.lhs = ds.norm_sq(r, cfg.gamma);
    const double lo = ds.norm_sq(r - 1, cfg.gamma), hi = ds.norm_sq(r + k, cfg.gamma);
    c.rhs = std::pow(lo, double(k) / (k + 1)) * std::pow(hi, 1.0 / (k + 1));
    c.holds = c.lhs <= c.rhs * (1.0 + 1e-12);
    return c;
}

}  // namespace cosmoboltz
