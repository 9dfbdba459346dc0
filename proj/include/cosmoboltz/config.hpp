#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "cosmoboltz/common.hpp"
#include "cosmoboltz/evolution.hpp"
#include "cosmoboltz/scale_factor.hpp"
#include "cosmoboltz/sphere_quadrature.hpp"
#include "cosmoboltz/velocity_space.hpp"

namespace cosmoboltz {

enum class OperatorMode { Auto, Dense, MatrixFree };

inline std::string to_string(OperatorMode m) {
    switch (m) {
        case OperatorMode::Dense: return "dense";
        case OperatorMode::MatrixFree: return "matrix_free";
        case OperatorMode::Auto: break;
    }
    return "auto";
}

struct InitialData {
    std::string kind = "invariant_free_bump";  // zero | invariant_free_bump | moment_seeded | random_bump | file
    double amplitude = 1e-3;
    double width = 1.0;
    Vec3 center{0.0, 0.0, 0.0};
    int which = 1;  // collision invariant for moment_seeded: 0 = 1, 1..3 = v_i, 4 = |v|^2
    std::string path;
};

/// Full description of one experiment. Parsed from and written to a flat
/// INI file; see presets/ for annotated examples.
struct RunConfig {
    std::string name = "run";
    // [physics]
    double gamma = -2.5;
    double adot0 = 4.0;
    KernelKind kernel = KernelKind::AbsCos;
    // [grid]
    int n_per_axis = 12;
    double v_max = 4.5;
    int sphere_nodes = 12;
    std::optional<double> eps_reg;
    int linear_taps = default_stencil_taps;
    int gamma_taps = default_stencil_taps;
    OperatorMode operator_mode = OperatorMode::Auto;
    double matrix_budget_mib = 2048.0;
    // [norms]
    int n_der = 2, m = 3, r = 1, k = 1;
    // [evolution]
    EvolutionMode mode = EvolutionMode::Linear;
    double dt = 1e-3;
    double t_end = 100.0;
    double cfl_safety = 0.9;
    int sample_every = 10;
    double dt_max = 0.0;
    double small_data_threshold = 1e-2;
    double blowup_factor = 1e6;
    bool conservative = true;
    double scale_dt = 1e-3;
    // [analysis]
    double tail_fraction = 0.5;
    double t_min = 10.0;
    double slope_slack = 0.4;
    bool require_dissipation = false;
    double dissipation_tolerance = 1e-2;
    // [initial]
    InitialData initial;
    // [run]
    std::uint64_t seed = 1;
    std::string output_dir = "out";
    // [probe]
    int probe_samples = 4;
    std::vector<double> probe_theta{-1.0, 0.0, 1.0};
    std::vector<int> probe_k{1, 2};
    int probe_n_der = 1;
    // [sweep]; empty lists keep the scalar value
    std::vector<double> sweep_gamma, sweep_adot0;
    std::vector<int> sweep_k, sweep_n;

    double energy() const { return std::max(0.0, energy_from_rate(adot0)); }

    NormConfig norm_config() const { return {n_der, m, r, gamma}; }

    EvolutionConfig evolution_config() const {
        EvolutionConfig e;
        e.mode = mode;
        e.dt = dt;
        e.t_end = t_end;
        e.cfl_safety = cfl_safety;
        e.sample_every = sample_every;
        e.dt_max = dt_max;
        e.small_data_threshold = small_data_threshold;
        e.blowup_factor = blowup_factor;
        return e;
    }

    /// Re-checks every range contract of the downstream modules.
    void validate() const {
        require(!name.empty(), "name must not be empty");
        require_soft_gamma(gamma);
        require(std::isfinite(adot0) && adot0 >= critical_expansion_rate() * (1.0 - 1e-12),
                "adot0 must be at least (8 pi/3)^(1/2) so that E_a >= 0");
        require(n_per_axis >= 6 && n_per_axis <= 64, "n_per_axis must lie in 6..64");
        require(v_max > 0.0 && std::isfinite(v_max), "v_max must be positive");
        make_sphere_quadrature(sphere_nodes);
        if (eps_reg) require(*eps_reg > 0.0, "eps_reg must be positive");
        require_stencil_taps(linear_taps);
        require_stencil_taps(gamma_taps);
        require(matrix_budget_mib > 0.0, "matrix_budget_mib must be positive");
        norm_config().validate();
        require(k >= 1 && r + k <= m, "decay order k must satisfy k >= 1 and r + k <= m");
        evolution_config().validate();
        require(scale_dt > 0.0 && scale_dt <= t_end, "scale_dt must lie in (0, t_end]");
        require(tail_fraction > 0.0 && tail_fraction <= 1.0, "tail_fraction must lie in (0, 1]");
        require(t_min >= 0.0, "t_min must be non-negative");
        require(slope_slack >= 0.0 && slope_slack < 1.0, "slope_slack must lie in [0, 1)");
        require(dissipation_tolerance >= 0.0, "dissipation_tolerance must be non-negative");
        const auto& in = initial;
        require(in.kind == "zero" || in.kind == "invariant_free_bump" || in.kind == "moment_seeded" ||
                    in.kind == "random_bump" || in.kind == "file",
                "initial.kind must be zero, invariant_free_bump, moment_seeded, random_bump or file");
        require(std::isfinite(in.amplitude), "initial.amplitude must be finite");
        require(in.width > 0.0, "initial.width must be positive");
        require(in.which >= 0 && in.which <= 4, "initial.which must lie in 0..4");
        if (in.kind == "file") require(!in.path.empty(), "initial.path is required for kind = file");
        require(probe_samples >= 1, "probe.samples must be at least 1");
        require(probe_n_der >= 0 && probe_n_der <= 4, "probe.n_der must lie in 0..4");
        for (int kk : probe_k) require(kk >= 0, "probe.k values must be non-negative");
        for (double g : sweep_gamma) require_soft_gamma(g);
        for (double a : sweep_adot0)
            require(a >= critical_expansion_rate() * (1.0 - 1e-12), "sweep adot0 values must give E_a >= 0");
        for (int kk : sweep_k) require(kk >= 1 && r + kk <= m, "sweep k values must satisfy r + k <= m");
        for (int n : sweep_n) require(n >= 6 && n <= 64, "sweep n_per_axis values must lie in 6..64");
    }
};

namespace detail {

inline std::string fmt_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline double parse_double(const std::string& key, const std::string& s) {
    double x = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(*b))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(e[-1]))) --e;
    if (b < e && *b == '+') ++b;
    auto [p, ec] = std::from_chars(b, e, x);
    if (ec != std::errc() || p != e) throw ContractError("config: '" + key + "' is not a number: '" + s + "'");
    return x;
}

inline long long parse_int(const std::string& key, const std::string& s) {
    const double x = parse_double(key, s);
    if (x != std::floor(x) || std::abs(x) > 9e15) throw ContractError("config: '" + key + "' must be an integer");
    return static_cast<long long>(x);
}

/// Full 64-bit range, so seeds never pass through a double.
inline std::uint64_t parse_u64(const std::string& key, const std::string& s) {
    std::uint64_t x = 0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(*b))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(e[-1]))) --e;
    auto [p, ec] = std::from_chars(b, e, x);
    if (ec != std::errc() || p != e || b == e)
        throw ContractError("config: '" + key + "' must be an unsigned 64-bit integer");
    return x;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ContractError("config: '" + key + "' must be true or false");
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur += c;
        }
    }
    if (!cur.empty() || !out.empty()) out.push_back(cur);
    for (const auto& x : out)
        if (x.empty()) throw ContractError("config: empty entry in list '" + s + "'");
    return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ", ";
        if constexpr (std::is_floating_point_v<T>)
            s += fmt_double(v[i]);
        else
            s += std::to_string(v[i]);
    }
    return s;
}

}  // namespace detail

/// Section -> key -> value, in a fixed order. The single source of truth
/// for serialization, so writing and reading use the same keys.
inline std::map<std::string, std::map<std::string, std::string>> to_sections(const RunConfig& c) {
    using detail::fmt_double;
    std::map<std::string, std::map<std::string, std::string>> s;
    s["run"]["name"] = c.name;
    s["run"]["seed"] = std::to_string(c.seed);
    s["run"]["output_dir"] = c.output_dir;
    s["physics"]["gamma"] = fmt_double(c.gamma);
    s["physics"]["adot0"] = fmt_double(c.adot0);
    s["physics"]["kernel"] = to_string(c.kernel);
    s["grid"]["n_per_axis"] = std::to_string(c.n_per_axis);
    s["grid"]["v_max"] = fmt_double(c.v_max);
    s["grid"]["sphere_nodes"] = std::to_string(c.sphere_nodes);
    s["grid"]["eps_reg"] = c.eps_reg ? fmt_double(*c.eps_reg) : "auto";
    s["grid"]["linear_taps"] = std::to_string(c.linear_taps);
    s["grid"]["gamma_taps"] = std::to_string(c.gamma_taps);
    s["grid"]["operator"] = to_string(c.operator_mode);
    s["grid"]["matrix_budget_mib"] = fmt_double(c.matrix_budget_mib);
    s["norms"]["n_der"] = std::to_string(c.n_der);
    s["norms"]["m"] = std::to_string(c.m);
    s["norms"]["r"] = std::to_string(c.r);
    s["norms"]["k"] = std::to_string(c.k);
    s["evolution"]["mode"] = to_string(c.mode);
    s["evolution"]["dt"] = fmt_double(c.dt);
    s["evolution"]["t_end"] = fmt_double(c.t_end);
    s["evolution"]["cfl_safety"] = fmt_double(c.cfl_safety);
    s["evolution"]["sample_every"] = std::to_string(c.sample_every);
    s["evolution"]["dt_max"] = fmt_double(c.dt_max);
    s["evolution"]["small_data_threshold"] = fmt_double(c.small_data_threshold);
    s["evolution"]["blowup_factor"] = fmt_double(c.blowup_factor);
    s["evolution"]["conservative"] = c.conservative ? "true" : "false";
    s["evolution"]["scale_dt"] = fmt_double(c.scale_dt);
    s["analysis"]["tail_fraction"] = fmt_double(c.tail_fraction);
    s["analysis"]["t_min"] = fmt_double(c.t_min);
    s["analysis"]["slope_slack"] = fmt_double(c.slope_slack);
    s["analysis"]["require_dissipation"] = c.require_dissipation ? "true" : "false";
    s["analysis"]["dissipation_tolerance"] = fmt_double(c.dissipation_tolerance);
    s["initial"]["kind"] = c.initial.kind;
    s["initial"]["amplitude"] = fmt_double(c.initial.amplitude);
    s["initial"]["width"] = fmt_double(c.initial.width);
    s["initial"]["center"] = detail::join(std::vector<double>(c.initial.center.begin(), c.initial.center.end()));
    s["initial"]["which"] = std::to_string(c.initial.which);
    s["initial"]["path"] = c.initial.path;
    s["probe"]["samples"] = std::to_string(c.probe_samples);
    s["probe"]["theta"] = detail::join(c.probe_theta);
    s["probe"]["k"] = detail::join(c.probe_k);
    s["probe"]["n_der"] = std::to_string(c.probe_n_der);
    if (!c.sweep_gamma.empty()) s["sweep"]["gamma"] = detail::join(c.sweep_gamma);
    if (!c.sweep_adot0.empty()) s["sweep"]["adot0"] = detail::join(c.sweep_adot0);
    if (!c.sweep_k.empty()) s["sweep"]["k"] = detail::join(c.sweep_k);
    if (!c.sweep_n.empty()) s["sweep"]["n_per_axis"] = detail::join(c.sweep_n);
    return s;
}

inline std::string to_ini(const RunConfig& c) {
    std::ostringstream os;
    os << "schema_version = 1\n";
    for (const auto& [sec, kv] : to_sections(c)) {
        os << "\n[" << sec << "]\n";
        for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
    }
    return os.str();
}

inline constexpr int config_schema_version = 1;

/// Parses INI text. Unknown sections or keys are errors; missing keys keep
/// their defaults. `physics.energy` may replace `physics.adot0`.
inline RunConfig parse_config(std::istream& is) {
    boost::property_tree::ptree pt;
    try {
        boost::property_tree::read_ini(is, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ContractError(std::string("config: ") + e.what());
    }
    RunConfig c;
    const auto known = to_sections(c);
    bool have_adot0 = false, have_energy = false;
    double energy = 0.0;
    for (const auto& [sec, node] : pt) {
        if (sec == "schema_version") {
            const auto v = detail::parse_int(sec, node.data());
            if (v != config_schema_version)
                throw ContractError("config: unsupported schema_version " + std::to_string(v));
            continue;
        }
        const bool is_sweep = sec == "sweep";
        if (!is_sweep && !known.count(sec)) {
            if (node.empty()) throw ContractError("config: unknown top-level key '" + sec + "'");
            throw ContractError("config: unknown section [" + sec + "]");
        }
        for (const auto& [key, vnode] : node) {
            const std::string v = vnode.data();
            const std::string full = sec + "." + key;
            auto num = [&] { return detail::parse_double(full, v); };
            auto integer = [&] { return detail::parse_int(full, v); };
            if (is_sweep) {
                const auto items = detail::split_list(v);
                if (items.empty()) throw ContractError("config: sweep list '" + full + "' is empty");
                if (key == "gamma")
                    for (const auto& x : items) c.sweep_gamma.push_back(detail::parse_double(full, x));
                else if (key == "adot0")
                    for (const auto& x : items) c.sweep_adot0.push_back(detail::parse_double(full, x));
                else if (key == "k")
                    for (const auto& x : items) c.sweep_k.push_back(static_cast<int>(detail::parse_int(full, x)));
                else if (key == "n_per_axis")
                    for (const auto& x : items) c.sweep_n.push_back(static_cast<int>(detail::parse_int(full, x)));
                else
                    throw ContractError("config: unknown key '" + full + "'");
                continue;
            }
            if (full == "physics.energy") {
                have_energy = true;
                energy = num();
                continue;
            }
            if (!known.at(sec).count(key)) throw ContractError("config: unknown key '" + full + "'");
            if (full == "run.name") c.name = v;
            else if (full == "run.seed") c.seed = detail::parse_u64(full, v);
            else if (full == "run.output_dir") c.output_dir = v;
            else if (full == "physics.gamma") c.gamma = num();
            else if (full == "physics.adot0") { c.adot0 = num(); have_adot0 = true; }
            else if (full == "physics.kernel") c.kernel = kernel_kind_from_string(v);
            else if (full == "grid.n_per_axis") c.n_per_axis = static_cast<int>(integer());
            else if (full == "grid.v_max") c.v_max = num();
            else if (full == "grid.sphere_nodes") c.sphere_nodes = static_cast<int>(integer());
            else if (full == "grid.eps_reg") c.eps_reg = v == "auto" ? std::nullopt : std::optional<double>(num());
            else if (full == "grid.linear_taps") c.linear_taps = static_cast<int>(integer());
            else if (full == "grid.gamma_taps") c.gamma_taps = static_cast<int>(integer());
            else if (full == "grid.operator") {
                if (v == "auto") c.operator_mode = OperatorMode::Auto;
                else if (v == "dense") c.operator_mode = OperatorMode::Dense;
                else if (v == "matrix_free") c.operator_mode = OperatorMode::MatrixFree;
                else throw ContractError("config: grid.operator must be auto, dense or matrix_free");
            }
            else if (full == "grid.matrix_budget_mib") c.matrix_budget_mib = num();
            else if (full == "norms.n_der") c.n_der = static_cast<int>(integer());
            else if (full == "norms.m") c.m = static_cast<int>(integer());
            else if (full == "norms.r") c.r = static_cast<int>(integer());
            else if (full == "norms.k") c.k = static_cast<int>(integer());
            else if (full == "evolution.mode") c.mode = evolution_mode_from_string(v);
            else if (full == "evolution.dt") c.dt = num();
            else if (full == "evolution.t_end") c.t_end = num();
            else if (full == "evolution.cfl_safety") c.cfl_safety = num();
            else if (full == "evolution.sample_every") c.sample_every = static_cast<int>(integer());
            else if (full == "evolution.dt_max") c.dt_max = num();
            else if (full == "evolution.small_data_threshold") c.small_data_threshold = num();
            else if (full == "evolution.blowup_factor") c.blowup_factor = num();
            else if (full == "evolution.conservative") c.conservative = detail::parse_bool(full, v);
            else if (full == "evolution.scale_dt") c.scale_dt = num();
            else if (full == "analysis.tail_fraction") c.tail_fraction = num();
            else if (full == "analysis.t_min") c.t_min = num();
            else if (full == "analysis.slope_slack") c.slope_slack = num();
            else if (full == "analysis.require_dissipation") c.require_dissipation = detail::parse_bool(full, v);
            else if (full == "analysis.dissipation_tolerance") c.dissipation_tolerance = num();
            else if (full == "initial.kind") c.initial.kind = v;
            else if (full == "initial.amplitude") c.initial.amplitude = num();
            else if (full == "initial.width") c.initial.width = num();
            else if (full == "initial.center") {
                const auto items = detail::split_list(v);
                require(items.size() == 3, "config: initial.center needs three comma-separated numbers");
                for (int a = 0; a < 3; ++a) c.initial.center[a] = detail::parse_double(full, items[a]);
            }
            else if (full == "initial.which") c.initial.which = static_cast<int>(integer());
            else if (full == "initial.path") c.initial.path = v;
            else if (full == "probe.samples") c.probe_samples = static_cast<int>(integer());
            else if (full == "probe.n_der") c.probe_n_der = static_cast<int>(integer());
            else if (full == "probe.theta") {
                c.probe_theta.clear();
                for (const auto& x : detail::split_list(v)) c.probe_theta.push_back(detail::parse_double(full, x));
            }
            else if (full == "probe.k") {
                c.probe_k.clear();
                for (const auto& x : detail::split_list(v))
                    c.probe_k.push_back(static_cast<int>(detail::parse_int(full, x)));
            }
        }
    }
    if (have_energy) {
        require(!have_adot0, "config: give physics.adot0 or physics.energy, not both");
        require(energy >= 0.0, "config: physics.energy must be non-negative");
        c.adot0 = rate_from_energy(energy);
    }
    c.validate();
    return c;
}

inline RunConfig parse_config_string(const std::string& text) {
    std::istringstream is(text);
    return parse_config(is);
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ContractError("config: cannot open '" + path + "'");
    return parse_config(is);
}

inline bool operator==(const InitialData& a, const InitialData& b) {
    return a.kind == b.kind && a.amplitude == b.amplitude && a.width == b.width && a.center == b.center &&
           a.which == b.which && a.path == b.path;
}

inline bool operator==(const RunConfig& a, const RunConfig& b) { return to_sections(a) == to_sections(b); }

}  // namespace cosmoboltz
