#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <omp.h>

#include <nlohmann/json.hpp>

#include "cosmoboltz/collision_ops.hpp"
#include "cosmoboltz/config.hpp"
#include "cosmoboltz/decay_analysis.hpp"
#include "cosmoboltz/evolution.hpp"
#include "cosmoboltz/operator_probes.hpp"
#include "cosmoboltz/regime.hpp"
#include "cosmoboltz/scale_factor.hpp"
#include "cosmoboltz/spectral_norms.hpp"
#include "cosmoboltz/sphere_quadrature.hpp"
#include "cosmoboltz/velocity_space.hpp"

namespace cosmoboltz {

inline constexpr int report_schema_version = 1;

enum ExitCode : int { exit_pass = 0, exit_config_error = 1, exit_verdict_fail = 2, exit_numerical_abort = 3 };

using Json = nlohmann::ordered_json;

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary);
    os << text;
    if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
}

inline std::string csv_row(std::initializer_list<double> xs) {
    std::string line;
    char buf[40];
    bool first = true;
    for (double x : xs) {
        std::snprintf(buf, sizeof buf, "%.17g", x);
        if (!first) line += ',';
        line += buf;
        first = false;
    }
    return line;
}

inline std::string csv_row(const std::vector<double>& xs) {
    std::string line;
    char buf[40];
    for (std::size_t i = 0; i < xs.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", xs[i]);
        if (i) line += ',';
        line += buf;
    }
    return line;
}

inline Json config_json(const RunConfig& c) {
    Json j;
    for (const auto& [sec, kv] : to_sections(c)) {
        Json s;
        for (const auto& [k, v] : kv) s[k] = v;
        j[sec] = std::move(s);
    }
    return j;
}

class Stopwatch {
public:
    void mark(const std::string& phase) {
        const auto now = std::chrono::steady_clock::now();
        phases_.emplace_back(phase, std::chrono::duration<double>(now - last_).count());
        last_ = now;
    }
    Json json() const {
        Json j;
        double total = 0.0;
        for (const auto& [p, s] : phases_) {
            j[p + "_seconds"] = s;
            total += s;
        }
        j["total_seconds"] = total;
        return j;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
    std::vector<std::pair<std::string, double>> phases_;
};

}  // namespace detail

/// Initial perturbation f0 on the grid of `g`.
///   zero                 f0 = 0
///   invariant_free_bump  Gaussian exp(-|v - center|^2 / (2 width^2)) with the
///                        five collision invariants projected out, scaled to
///                        L2 norm `amplitude`
///   moment_seeded        the same bump plus sqrt(mu) phi_which, both normalized,
///                        times amplitude / sqrt(2)
///   random_bump          random_bump_field(seed), projected, scaled to `amplitude`
///   file                 read_binary(path); must match the grid
inline Distribution make_initial_data(const InitialData& in, const VelocityGrid& g, std::uint64_t seed) {
    auto normalized = [](Distribution f) {
        const double n2 = norm_squared(f);
        if (!(n2 > 0.0)) throw ContractError("initial data: the projected profile vanishes on this grid");
        f *= 1.0 / std::sqrt(n2);
        return f;
    };
    auto bump = [&] {
        return Distribution::from_function(g, [&](const Vec3& v) {
            double d2 = 0.0;
            for (int a = 0; a < 3; ++a) d2 += (v[a] - in.center[a]) * (v[a] - in.center[a]);
            return std::exp(-0.5 * d2 / (in.width * in.width));
        });
    };
    if (in.kind == "zero") return Distribution(g);
    if (in.kind == "invariant_free_bump") {
        Distribution f = normalized(project_out_invariants(bump()));
        f *= in.amplitude;
        return f;
    }
    if (in.kind == "moment_seeded") {
        Distribution f = normalized(project_out_invariants(bump()));
        f += normalized(invariant_field(g, in.which));
        f *= in.amplitude / std::sqrt(2.0);
        return f;
    }
    if (in.kind == "random_bump") {
        std::mt19937_64 rng(seed);
        Distribution f = normalized(project_out_invariants(random_bump_field(g, rng)));
        f *= in.amplitude;
        return f;
    }
    std::ifstream is(in.path, std::ios::binary);
    if (!is) throw ContractError("initial data: cannot open '" + in.path + "'");
    Distribution f = read_binary(is);
    require(f.grid == g, "initial data: file grid differs from the configured grid");
    require(f.finite(), "initial data: file contains non-finite values");
    return f;
}

inline CollisionOperatorSet make_operators(const RunConfig& c) {
    OperatorOptions o;
    o.eps_reg = c.eps_reg;
    o.linear_taps = c.linear_taps;
    o.gamma_taps = c.gamma_taps;
    o.matrix_budget_bytes = static_cast<std::size_t>(c.matrix_budget_mib * 1024.0 * 1024.0);
    return CollisionOperatorSet(VelocityGrid(c.n_per_axis, c.v_max), c.gamma, AngularKernel{c.kernel, 1.0},
                                make_sphere_quadrature(c.sphere_nodes), o);
}

inline bool use_dense(const RunConfig& c) {
    const double nn = std::pow(double(c.n_per_axis), 3.0);
    const bool fits = nn * nn * sizeof(double) <= c.matrix_budget_mib * 1024.0 * 1024.0;
    switch (c.operator_mode) {
        case OperatorMode::Dense:
            require(fits, "grid.operator = dense but the matrix exceeds grid.matrix_budget_mib");
            return true;
        case OperatorMode::MatrixFree: return false;
        case OperatorMode::Auto: break;
    }
    return fits;
}

struct RunOutcome {
    int exit_code = exit_pass;
    std::string message;
    Json report;  // empty when the run failed before analysis
};

/// Column order of timeseries.csv.
inline std::vector<std::string> timeseries_columns(const RunConfig& c) {
    std::vector<std::string> cols{"t", "a", "a_gamma"};
    for (int r = 1; r < c.m; ++r) cols.push_back("y_" + std::to_string(r));
    cols.push_back("script_E_m");
    cols.push_back("dissipation_r");
    for (const char* n : {"drift_1", "drift_v1", "drift_v2", "drift_v3", "drift_v_sq"}) cols.push_back(n);
    cols.push_back("min_F");
    return cols;
}

inline std::string timeseries_csv(const RunConfig& c, const TrajectoryRecord& rec,
                                  const ScaleFactorTrajectory& traj) {
    std::string out;
    const auto cols = timeseries_columns(c);
    for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
    out += '\n';
    for (std::size_t s = 0; s < rec.times.size(); ++s) {
        const auto& rep = rec.reports[s];
        std::vector<double> row{rep.t, traj.a(rep.t), rec.a_gamma[s]};
        double y = rep.triple_norm[0];
        for (int r = 1; r < c.m; ++r) {
            y += rep.triple_norm[r];
            row.push_back(y);
        }
        row.push_back(rep.script_E);
        row.push_back(rec.a_gamma[s] * rep.triple_norm_nu[c.r]);
        for (int w = 0; w < 5; ++w) row.push_back(rec.moments[s][w] - rec.moments[0][w]);
        row.push_back(rec.min_F[s]);
        out += detail::csv_row(row) + '\n';
    }
    return out;
}

inline Json monitor_json(const MonitorSummary& m) {
    Json j;
    j["moment_drift"] = m.moment_drift;
    j["max_moment_drift"] = m.max_moment_drift;
    j["min_F"] = m.min_F;
    j["positivity_tolerance"] = m.positivity_tolerance;
    j["positive"] = m.positive;
    j["steps"] = m.steps;
    j["cfl_limited_steps"] = m.cfl_limited_steps;
    j["max_dissipation_residual"] = m.max_dissipation_residual;
    j["max_relative_dissipation_residual"] = m.max_relative_dissipation_residual;
    j["y_r_nonincreasing"] = m.y_r_nonincreasing;
    j["aborted"] = m.aborted;
    return j;
}

inline Json verdict_json(const DecayVerdict& v) {
    Json j;
    j["regime"] = std::string(to_string(v.regime));
    j["r"] = v.r;
    j["k"] = v.k;
    j["exponent_predicted"] = v.has_verdict ? Json(v.exponent_predicted) : Json(nullptr);
    j["exponent_fitted"] = v.exponent_fitted;
    j["envelope_ratio_max"] = v.envelope_ratio_max;
    j["pass"] = v.has_verdict ? Json(v.pass) : Json(nullptr);
    j["ratio_nonincreasing"] = v.ratio_nonincreasing;
    j["slope_ok"] = v.slope_ok;
    j["fit_window"] = {{"first", v.fit.first}, {"count", v.fit.count}};
    j["power_fit"] = {{"slope", v.fit.power.slope}, {"intercept", v.fit.power.intercept},
                      {"rms_residual", v.fit.power.rms_residual}};
    j["log_fit"] = {{"slope", v.fit.log.slope}, {"intercept", v.fit.log.intercept},
                    {"rms_residual", v.fit.log.rms_residual}};
    return j;
}

/// Tolerances the run used, echoed so a report can be re-checked offline.
inline Json tolerance_json(const RunConfig& c, const CollisionOperatorSet& ops) {
    Json j;
    j["eps_reg"] = ops.eps();
    j["regime_tolerance"] = regime_tolerance;
    j["interpolation_relative_slack"] = 1e-12;
    j["ratio_monotonicity_slack"] = 1e-12;
    j["slope_slack"] = c.slope_slack;
    j["dissipation_tolerance"] = c.dissipation_tolerance;
    j["small_data_threshold"] = c.small_data_threshold;
    j["blowup_factor"] = c.blowup_factor;
    j["quadrature_tolerance"] = 1e-14;
    return j;
}

/// Scale factor, operators, initial data, evolution, analysis, then
/// timeseries.csv, report.json, timings.json, scale_factor.csv and final.bin
/// under `out_dir`. Never throws; errors map onto the exit-code contract.
inline RunOutcome run_experiment(const RunConfig& cfg, const std::filesystem::path& out_dir) {
    RunOutcome res;
    try {
        cfg.validate();
        std::filesystem::create_directories(out_dir);
        detail::Stopwatch clock;

        const double energy = cfg.energy();
        const Regime regime = classify_regime(energy, cfg.gamma);
        const auto traj = solve_scale_factor(cfg.adot0, cfg.gamma, cfg.t_end, cfg.scale_dt);
        clock.mark("scale_factor");

        const auto ops = make_operators(cfg);
        std::optional<KMatrix> kmat;
        if (use_dense(cfg)) kmat = assemble_K_matrix(ops);
        clock.mark("operators");

        const Distribution f0 = make_initial_data(cfg.initial, ops.grid(), cfg.seed);
        const Dynamics dyn(ops, kmat ? &*kmat : nullptr, cfg.conservative);
        const NormConfig norms = cfg.norm_config();
        const TrajectoryRecord rec = evolve(f0, dyn, traj, cfg.evolution_config(), norms);
        clock.mark("evolution");

        const MonitorSummary mon = monitor(rec, norms);
        std::vector<double> y;
        for (const auto& rep : rec.reports) y.push_back(rep.y_r);

        Json& rep = res.report;
        rep["schema_version"] = report_schema_version;
        rep["config"] = detail::config_json(cfg);
        rep["energy"] = energy;
        rep["regime"] = std::string(to_string(regime));
        rep["operator"] = {{"storage", kmat ? "dense" : "matrix_free"},
                           {"nu_max", ops.nu_max()},
                           {"eps_reg", ops.eps()},
                           {"asymmetry", kmat ? Json(kmat->asymmetry) : Json(nullptr)}};
        rep["tolerances"] = tolerance_json(cfg, ops);
        rep["monitor"] = monitor_json(mon);
        rep["samples"] = rec.times.size();

        bool pass = true;
        std::string why;
        if (rec.aborted) {
            res.exit_code = exit_numerical_abort;
            why = rec.abort_reason;
        } else {
            VerdictOptions vo{cfg.tail_fraction, cfg.t_min, cfg.slope_slack};
            const DecayVerdict v = verdict(rec.times, y, regime, cfg.gamma, cfg.r, cfg.k, cfg.m, vo);
            rep["verdict"] = verdict_json(v);
            if (v.has_verdict && !v.pass) {
                pass = false;
                why = "decay verdict failed";
            }
            if (cfg.require_dissipation) {
                const bool ok = mon.max_relative_dissipation_residual <= cfg.dissipation_tolerance &&
                                mon.y_r_nonincreasing;
                rep["dissipation_pass"] = ok;
                if (!ok) {
                    pass = false;
                    why += why.empty() ? "dissipation inequality failed" : "; dissipation inequality failed";
                }
            }
            res.exit_code = pass ? exit_pass : exit_verdict_fail;
        }
        rep["exit_code"] = res.exit_code;
        res.message = res.exit_code == exit_pass ? "pass" : why;
        rep["message"] = res.message;
        clock.mark("analysis");

        detail::write_text(out_dir / "timeseries.csv", timeseries_csv(cfg, rec, traj));
        detail::write_text(out_dir / "report.json", rep.dump(2) + "\n");
        {
            std::ostringstream os;
            traj.write_csv(os, std::max<std::size_t>(1, traj.size() / 2000));
            detail::write_text(out_dir / "scale_factor.csv", os.str());
        }
        {
            std::ofstream os(out_dir / "final.bin", std::ios::binary);
            write_binary(os, rec.distributions.back());
        }
        clock.mark("output");
        Json timings = clock.json();
        timings["omp_max_threads"] = omp_get_max_threads();
        detail::write_text(out_dir / "timings.json", timings.dump(2) + "\n");
    } catch (const ContractError& e) {
        res.exit_code = exit_config_error;
        res.message = e.what();
    } catch (const NumericalError& e) {
        res.exit_code = exit_numerical_abort;
        res.message = e.what();
    } catch (const std::exception& e) {
        res.exit_code = exit_config_error;
        res.message = e.what();
    }
    return res;
}

/// One point of a sweep's Cartesian product.
struct SweepPoint {
    double gamma, adot0;
    int k, n_per_axis;
};

inline constexpr std::size_t max_sweep_points = 256;

inline std::vector<SweepPoint> plan_sweep(const RunConfig& c) {
    require(!c.sweep_gamma.empty() || !c.sweep_adot0.empty() || !c.sweep_k.empty() || !c.sweep_n.empty(),
            "sweep: the [sweep] section lists no parameters");
    const auto g = c.sweep_gamma.empty() ? std::vector<double>{c.gamma} : c.sweep_gamma;
    const auto a = c.sweep_adot0.empty() ? std::vector<double>{c.adot0} : c.sweep_adot0;
    const auto k = c.sweep_k.empty() ? std::vector<int>{c.k} : c.sweep_k;
    const auto n = c.sweep_n.empty() ? std::vector<int>{c.n_per_axis} : c.sweep_n;
    require(g.size() * a.size() * k.size() * n.size() <= max_sweep_points, "sweep: more than 256 combinations");
    std::vector<SweepPoint> pts;
    for (double gg : g)
        for (double aa : a)
            for (int kk : k)
                for (int nn : n) pts.push_back({gg, aa, kk, nn});
    return pts;
}

inline RunConfig sweep_child(const RunConfig& c, const SweepPoint& p, std::size_t index) {
    RunConfig child = c;
    child.sweep_gamma.clear();
    child.sweep_adot0.clear();
    child.sweep_k.clear();
    child.sweep_n.clear();
    child.gamma = p.gamma;
    child.adot0 = p.adot0;
    child.k = p.k;
    child.n_per_axis = p.n_per_axis;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%03zu", c.name.c_str(), index);
    child.name = buf;
    return child;
}

/// Runs the product of the [sweep] lists on `workers` threads, one OpenMP
/// thread per child, and writes summary.json and exponents.csv. Returns the
/// worst child exit code.
inline RunOutcome run_sweep(const RunConfig& cfg, const std::filesystem::path& out_dir, int workers) {
    RunOutcome res;
    std::vector<SweepPoint> pts;
    try {
        cfg.validate();
        pts = plan_sweep(cfg);
        std::filesystem::create_directories(out_dir);
    } catch (const std::exception& e) {
        res.exit_code = exit_config_error;
        res.message = e.what();
        return res;
    }
    std::vector<RunConfig> children;
    for (std::size_t i = 0; i < pts.size(); ++i) children.push_back(sweep_child(cfg, pts[i], i));
    std::vector<RunOutcome> outcomes(pts.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        omp_set_num_threads(1);
        for (std::size_t i = next++; i < pts.size(); i = next++)
            outcomes[i] = run_experiment(children[i], out_dir / children[i].name);
    };
    std::vector<std::thread> pool;
    const int nw = std::clamp(workers, 1, static_cast<int>(pts.size()));
    for (int w = 0; w < nw; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();

    Json summary;
    summary["schema_version"] = report_schema_version;
    summary["config"] = detail::config_json(cfg);
    Json runs = Json::array();
    std::string csv = "name,gamma,adot0,energy,k,n_per_axis,regime,exponent_predicted,exponent_fitted,pass,exit_code\n";
    int worst = exit_pass;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto& c = children[i];
        const auto& o = outcomes[i];
        worst = std::max(worst, o.exit_code);
        Json r;
        r["name"] = c.name;
        r["gamma"] = c.gamma;
        r["adot0"] = c.adot0;
        r["energy"] = c.energy();
        r["k"] = c.k;
        r["n_per_axis"] = c.n_per_axis;
        Regime reg = Regime::Uncovered;
        bool classified = true;
        try {
            reg = classify_regime(c.energy(), c.gamma);
        } catch (const ContractError&) {
            classified = false;
        }
        r["regime"] = classified ? Json(std::string(to_string(reg))) : Json(nullptr);
        const bool has_v = o.report.contains("verdict");
        const Json v = has_v ? o.report["verdict"] : Json();
        r["exponent_predicted"] = has_v ? v["exponent_predicted"] : Json(nullptr);
        r["exponent_fitted"] = has_v ? v["exponent_fitted"] : Json(nullptr);
        r["pass"] = has_v ? v["pass"] : Json(nullptr);
        r["aborted"] = o.exit_code == exit_numerical_abort;
        r["exit_code"] = o.exit_code;
        r["message"] = o.message;
        runs.push_back(r);

        auto num = [](const Json& x) -> std::string {
            if (x.is_null()) return "";
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", x.get<double>());
            return buf;
        };
        csv += c.name + "," + detail::csv_row({c.gamma, c.adot0, c.energy()}) + "," + std::to_string(c.k) + "," +
               std::to_string(c.n_per_axis) + "," + (classified ? std::string(to_string(reg)) : "") + "," +
               num(r["exponent_predicted"]) + "," + num(r["exponent_fitted"]) + "," +
               (r["pass"].is_null() ? "" : (r["pass"].get<bool>() ? "true" : "false")) + "," +
               std::to_string(o.exit_code) + "\n";
    }
    summary["runs"] = runs;
    summary["exit_code"] = worst;
    res.exit_code = worst;
    res.report = summary;
    res.message = worst == exit_pass ? "pass" : "at least one run failed";
    try {
        detail::write_text(out_dir / "summary.json", summary.dump(2) + "\n");
        detail::write_text(out_dir / "exponents.csv", csv);
    } catch (const std::exception& e) {
        res.exit_code = std::max(res.exit_code, int(exit_config_error));
        res.message = e.what();
    }
    return res;
}

/// Operator-bound probes on the configured grid; writes probe.json.
inline RunOutcome run_probe(const RunConfig& cfg, const std::filesystem::path& out_dir) {
    RunOutcome res;
    try {
        cfg.validate();
        std::filesystem::create_directories(out_dir);
        const auto ops = make_operators(cfg);
        std::optional<KMatrix> kmat;
        if (use_dense(cfg)) kmat = assemble_K_matrix(ops);
        ProbeConfig pc;
        pc.samples = cfg.probe_samples;
        pc.theta = cfg.probe_theta;
        pc.k = cfg.probe_k;
        pc.n_der = cfg.probe_n_der;
        pc.seed = cfg.seed;
        const ProbeReport pr = probe_operator_bounds(ops, pc, kmat ? &*kmat : nullptr);
        Json& j = res.report;
        j["schema_version"] = report_schema_version;
        j["config"] = detail::config_json(cfg);
        j["probe"] = pr.to_json();
        detail::write_text(out_dir / "probe.json", j.dump(2) + "\n");
        res.message = "probe complete";
    } catch (const ContractError& e) {
        res.exit_code = exit_config_error;
        res.message = e.what();
    } catch (const NumericalError& e) {
        res.exit_code = exit_numerical_abort;
        res.message = e.what();
    } catch (const std::exception& e) {
        res.exit_code = exit_config_error;
        res.message = e.what();
    }
    return res;
}

/// Directories searched for NAME.ini: $COSMOBOLTZ_PRESET_DIR, the build-time
/// preset directory, then ./presets.
inline std::filesystem::path find_preset(const std::string& name) {
    require(!name.empty() && name.find('/') == std::string::npos && name.find("..") == std::string::npos,
            "preset name must be a plain identifier");
    std::vector<std::filesystem::path> dirs;
    if (const char* env = std::getenv("COSMOBOLTZ_PRESET_DIR")) dirs.emplace_back(env);
#ifdef COSMOBOLTZ_PRESET_DIR
    dirs.emplace_back(COSMOBOLTZ_PRESET_DIR);
#endif
    dirs.emplace_back("presets");
    for (const auto& d : dirs) {
        const auto p = d / (name + ".ini");
        if (std::filesystem::exists(p)) return p;
    }
    throw ContractError("unknown preset '" + name + "'");
}

}  // namespace cosmoboltz
