#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cosmoboltz/collision_ops.hpp"
#include "cosmoboltz/common.hpp"
#include "cosmoboltz/scale_factor.hpp"
#include "cosmoboltz/spectral_norms.hpp"
#include "cosmoboltz/velocity_space.hpp"

namespace cosmoboltz {

enum class EvolutionMode { Linear, Nonlinear };

inline std::string to_string(EvolutionMode m) { return m == EvolutionMode::Linear ? "linear" : "nonlinear"; }

inline EvolutionMode evolution_mode_from_string(const std::string& s) {
    if (s == "linear") return EvolutionMode::Linear;
    if (s == "nonlinear") return EvolutionMode::Nonlinear;
    throw ContractError("mode must be 'linear' or 'nonlinear', got '" + s + "'");
}

struct EvolutionConfig {
    EvolutionMode mode = EvolutionMode::Linear;
    double dt = 1e-3;           // first step; later steps follow the CFL bound
    double t_end = 10.0;
    double cfl_safety = 0.9;    // dt_eff <= cfl_safety / (a_gamma(t) nu_max)
    int sample_every = 10;
    double dt_max = 0.0;        // extra cap on the step; 0 disables it
    double small_data_threshold = 1e-2;  // script-E_m(0) ceiling for nonlinear runs
    double blowup_factor = 1e6;

    void validate() const {
        require(dt > 0.0 && std::isfinite(dt), "dt must be positive");
        require(t_end > 0.0 && std::isfinite(t_end), "t_end must be positive");
        require(cfl_safety > 0.0 && cfl_safety <= 1.0, "cfl_safety must lie in (0, 1]");
        require(sample_every >= 1, "sample_every must be at least 1");
        require(dt_max >= 0.0, "dt_max must be non-negative");
        require(small_data_threshold > 0.0, "small-data threshold must be positive");
        require(blowup_factor > 1.0, "blow-up factor must exceed 1");
    }
};

/// Linear operator plus Gamma for one grid. L comes from the dense
/// symmetrized matrix when one is supplied, otherwise matrix-free.
///
/// With `conservative` set the right-hand side is projected onto the
/// trapezoid-orthogonal complement of the collision invariants, so the five
/// moments stay fixed to round-off. The discrete L is only approximately
/// blind to the invariants; without the projection its near-null modes
/// pick up the moment error and dominate the late-time decay.
class Dynamics {
public:
    Dynamics(const CollisionOperatorSet& ops, const KMatrix* kmat = nullptr, bool conservative = false)
        : ops_(ops), kmat_(kmat), conservative_(conservative) {}

    bool conservative() const { return conservative_; }

    const CollisionOperatorSet& ops() const { return ops_; }

    Distribution apply_L(const Distribution& f) const {
        return kmat_ ? kmat_->apply_L(f, ops_) : cosmoboltz::apply_L(f, ops_);
    }

    /// a_gamma(t) (-L f + [nonlinear] Gamma(f, f)).
    Distribution rhs(const Distribution& f, double t, EvolutionMode mode, const ScaleFactorTrajectory& traj) const {
        if (!(f.grid == ops_.grid())) throw ContractError("rhs: distribution grid differs from operator grid");
        Distribution out = apply_L(f);
        out *= -1.0;
        if (mode == EvolutionMode::Nonlinear && f.max_abs() > 0.0) out += apply_Gamma(f, f, ops_);
        out *= traj.a_gamma(t);
        return conservative_ ? project_out_invariants(out) : out;
    }

private:
    const CollisionOperatorSet& ops_;
    const KMatrix* kmat_;
    bool conservative_;
};

/// <f, sqrt(mu) phi> for phi = 1, v1, v2, v3, |v|^2.
inline std::array<double, 5> conserved_moments(const Distribution& f) {
    std::array<double, 5> m{};
    for (int w = 0; w < 5; ++w) m[w] = inner_product(f, invariant_field(f.grid, w));
    return m;
}

/// min over nodes of mu + sqrt(mu) f.
inline double min_total_density(const Distribution& f) {
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double s = sqrt_maxwellian(f.grid.velocity(i));
        lo = std::min(lo, s * s + s * f.values[i]);
    }
    return lo;
}

struct TrajectoryRecord {
    std::vector<double> times;
    std::vector<double> a_gamma;
    std::vector<Distribution> distributions;
    std::vector<EnergyReport> reports;
    std::vector<std::array<double, 5>> moments;
    std::vector<double> min_F;
    std::size_t steps = 0;
    std::size_t cfl_limited_steps = 0;  // steps shortened by the CFL bound rather than the growth cap
    double smallest_step = 0.0;
    double largest_step = 0.0;
    bool aborted = false;
    std::string abort_reason;
};

namespace detail {

inline Distribution rk4_step(const Dynamics& dyn, const Distribution& f, double t, double h, EvolutionMode mode,
                             const ScaleFactorTrajectory& traj) {
    const Distribution k1 = dyn.rhs(f, t, mode, traj);
    Distribution tmp = f;
    tmp.axpy(0.5 * h, k1);
    const Distribution k2 = dyn.rhs(tmp, t + 0.5 * h, mode, traj);
    tmp = f;
    tmp.axpy(0.5 * h, k2);
    const Distribution k3 = dyn.rhs(tmp, t + 0.5 * h, mode, traj);
    tmp = f;
    tmp.axpy(h, k3);
    const Distribution k4 = dyn.rhs(tmp, t + h, mode, traj);
    Distribution out = f;
    out.axpy(h / 6.0, k1);
    out.axpy(h / 3.0, k2);
    out.axpy(h / 3.0, k3);
    out.axpy(h / 6.0, k4);
    return out;
}

}  // namespace detail

/// Explicit RK4 for df/dt = a_gamma (-L f + Gamma(f, f)). The step is the
/// smallest of the CFL bound, twice the previous step, dt_max and the
/// remaining time. A run whose L2 norm or y_r exceeds blowup_factor times
/// its initial value stops with `aborted` set.
inline TrajectoryRecord evolve(const Distribution& f0, const Dynamics& dyn, const ScaleFactorTrajectory& traj,
                               const EvolutionConfig& cfg, const NormConfig& norms) {
    cfg.validate();
    norms.validate();
    require(f0.finite(), "evolve: initial data must be finite");
    require(f0.grid == dyn.ops().grid(), "evolve: initial data lives on a different grid");
    require(traj.t_end() >= cfg.t_end * (1.0 - 1e-12), "evolve: scale-factor trajectory ends before t_end");
    require(std::abs(traj.gamma() - dyn.ops().gamma()) < 1e-15, "evolve: trajectory and operators disagree on gamma");

    const auto& nu = dyn.ops().nu();
    TrajectoryRecord rec;
    auto sample = [&](double t, const Distribution& f) {
        rec.times.push_back(t);
        rec.a_gamma.push_back(traj.a_gamma(t));
        rec.distributions.push_back(f);
        rec.reports.push_back(instantaneous_report(t, f, norms, nu));
        rec.moments.push_back(conserved_moments(f));
        rec.min_F.push_back(min_total_density(f));
    };

    Distribution f = f0;
    double t = 0.0;
    sample(t, f);
    if (cfg.mode == EvolutionMode::Nonlinear)
        require(rec.reports[0].script_E <= cfg.small_data_threshold,
                "evolve: nonlinear run needs small data, script-E_m(0) = " + std::to_string(rec.reports[0].script_E) +
                    " exceeds the threshold " + std::to_string(cfg.small_data_threshold));

    const double l2_0 = norm_squared(f0), y0 = rec.reports[0].y_r;
    double prev = cfg.dt;
    bool first = true;
    while (t < cfg.t_end) {
        const double cfl = cfg.cfl_safety / (traj.a_gamma(t) * dyn.ops().nu_max());
        double h = first ? std::min(cfg.dt, cfl) : std::min(cfl, 2.0 * prev);
        if (h == cfl && (first || cfl < 2.0 * prev)) ++rec.cfl_limited_steps;
        if (cfg.dt_max > 0.0) h = std::min(h, cfg.dt_max);
        const bool last = t + h >= cfg.t_end * (1.0 - 1e-14);
        if (last) h = cfg.t_end - t;
        f = detail::rk4_step(dyn, f, t, h, cfg.mode, traj);
        t = last ? cfg.t_end : t + h;
        if (!last) prev = h;
        first = false;
        ++rec.steps;
        rec.smallest_step = rec.steps == 1 ? h : std::min(rec.smallest_step, h);
        rec.largest_step = std::max(rec.largest_step, h);

        const double l2 = norm_squared(f);
        if (!f.finite() || (l2_0 > 0.0 && l2 > cfg.blowup_factor * l2_0) || (l2_0 == 0.0 && l2 > 0.0)) {
            rec.aborted = true;
            rec.abort_reason = "blow-up: L2 norm grew past the guard at t = " + std::to_string(t);
            sample(t, f);
            break;
        }
        if (rec.steps % static_cast<std::size_t>(cfg.sample_every) == 0 || last) {
            sample(t, f);
            if (y0 > 0.0 && rec.reports.back().y_r > cfg.blowup_factor * y0) {
                rec.aborted = true;
                rec.abort_reason = "blow-up: y_r grew past the guard at t = " + std::to_string(t);
                break;
            }
        }
    }
    accumulate_energy(rec.reports, traj);
    return rec;
}

struct MonitorSummary {
    std::array<double, 5> moment_drift{};  // max_t |<f(t) - f(0), sqrt(mu) phi>|
    double max_moment_drift = 0.0;
    double min_F = 0.0;
    double positivity_tolerance = 0.0;     // 1e-8 max mu
    bool positive = true;
    std::size_t steps = 0;
    std::size_t cfl_limited_steps = 0;
    /// max over sample pairs of max(0, dy_r/dt + a_gamma |||f|||_{nu,r}^2),
    /// the second term averaged over the pair by the trapezoid rule.
    double max_dissipation_residual = 0.0;
    /// Same residual divided by that averaged dissipation term.
    double max_relative_dissipation_residual = 0.0;
    std::vector<double> dissipation_residual;
    bool y_r_nonincreasing = true;
    bool aborted = false;
};

inline MonitorSummary monitor(const TrajectoryRecord& rec, const NormConfig& norms) {
    require(!rec.times.empty(), "monitor: empty record");
    MonitorSummary s;
    s.steps = rec.steps;
    s.cfl_limited_steps = rec.cfl_limited_steps;
    s.aborted = rec.aborted;
    s.positivity_tolerance = 1e-8 * std::pow(pi, -1.5);
    s.min_F = *std::min_element(rec.min_F.begin(), rec.min_F.end());
    s.positive = s.min_F >= -s.positivity_tolerance;
    for (const auto& m : rec.moments)
        for (int w = 0; w < 5; ++w) s.moment_drift[w] = std::max(s.moment_drift[w], std::abs(m[w] - rec.moments[0][w]));
    s.max_moment_drift = *std::max_element(s.moment_drift.begin(), s.moment_drift.end());
    const int r = norms.r;
    for (std::size_t i = 1; i < rec.times.size(); ++i) {
        const auto &p = rec.reports[i - 1], &q = rec.reports[i];
        const double dt = q.t - p.t;
        const double diss = 0.5 * (rec.a_gamma[i - 1] * p.triple_norm_nu[r] + rec.a_gamma[i] * q.triple_norm_nu[r]);
        const double res = std::max(0.0, (q.y_r - p.y_r) / dt + diss);
        s.dissipation_residual.push_back(res);
        s.max_dissipation_residual = std::max(s.max_dissipation_residual, res);
        if (diss > 0.0) s.max_relative_dissipation_residual = std::max(s.max_relative_dissipation_residual, res / diss);
        if (q.y_r > p.y_r) s.y_r_nonincreasing = false;
    }
    return s;
}

}  // namespace cosmoboltz
