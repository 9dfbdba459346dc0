#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cosmoboltz/collision_ops.hpp"
#include "cosmoboltz/velocity_space.hpp"

namespace cosmoboltz {

struct ProbeConfig {
    int samples = 4;
    std::vector<double> theta{-1.0, 0.0, 1.0};
    std::vector<int> k{1, 2};
    int n_der = 1;  // derivative depth in the Gamma_- probe
    std::uint64_t seed = 1;
};

/// Largest observed ratio LHS / RHS per inequality and parameter; each is
/// an empirical lower estimate of the best constant.
struct ProbeReport {
    int n_per_axis = 0;
    int sphere_nodes = 0;
    double gamma = 0.0;
    int samples = 0;
    std::vector<std::pair<double, double>> k_bound;      // theta -> max |<w^2th K g1, g2>| / (|w^th g1|_nu |w^th g2|_nu)
    std::vector<std::pair<int, double>> weighted_gap;    // k -> max (|w^-k g|_nu^2 / 2 - <w^-2k L g, g>) / |g|_nu^2
    std::vector<std::pair<double, double>> loss_bound;   // theta -> max over beta of the Gamma_- ratio

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["n_per_axis"] = n_per_axis;
        j["sphere_nodes"] = sphere_nodes;
        j["gamma"] = gamma;
        j["samples"] = samples;
        auto& a = j["k_bound"] = nlohmann::ordered_json::array();
        for (auto [t, c] : k_bound) a.push_back({{"theta", t}, {"ratio_max", c}});
        auto& b = j["weighted_coercivity_constant"] = nlohmann::ordered_json::array();
        for (auto [k, c] : weighted_gap) b.push_back({{"k", k}, {"C_k", c}});
        auto& c = j["loss_bound"] = nlohmann::ordered_json::array();
        for (auto [t, r] : loss_bound) c.push_back({{"theta", t}, {"ratio_max", r}});
        return j;
    }
};

namespace detail {

inline double weighted_nu_norm(const Distribution& f, double theta, double gamma, std::span<const double> nu) {
    return std::sqrt(std::max(0.0, inner_product(f, f, theta, gamma, nu)));
}

}  // namespace detail

/// Probes the operator bounds on random smooth compactly supported fields:
///   |<w^2th K g1, g2>| <= C |w^th g1|_nu |w^th g2|_nu,
///   <w^-2k L g, g> >= |w^-k g|_nu^2 / 2 - C_k |g|_nu^2,
///   |<w^2th d^b Gamma_-(g1, g2), d^b g3>| <= C (sum |w^th d g1|_nu)(sum |w^th d g2|_nu) |w^th d^b g3|_nu.
/// K comes from `kmat` when given, otherwise matrix-free.
inline ProbeReport probe_operator_bounds(const CollisionOperatorSet& ops, const ProbeConfig& cfg,
                                         const KMatrix* kmat = nullptr) {
    require(cfg.samples >= 1, "probe: samples must be at least 1");
    require(cfg.n_der >= 0 && cfg.n_der <= 4, "probe: derivative depth must lie in 0..4");
    for (int k : cfg.k) require(k >= 0, "probe: k must be non-negative");
    const VelocityGrid& g = ops.grid();
    const double gamma = ops.gamma();
    const auto& nu = ops.nu();

    std::mt19937_64 rng(cfg.seed);
    std::vector<Distribution> gs;
    for (int s = 0; s < cfg.samples; ++s) gs.push_back(random_bump_field(g, rng));

    std::vector<Distribution> kg;
    if (kmat) {
        for (const auto& f : gs) kg.push_back(kmat->apply_K(f));
    } else {
        auto k1 = apply_K1(gs, ops);
        kg = apply_K2(gs, ops);
        for (std::size_t s = 0; s < gs.size(); ++s) kg[s] -= k1[s];
    }

    ProbeReport rep;
    rep.n_per_axis = g.n();
    rep.sphere_nodes = static_cast<int>(ops.quadrature().size());
    rep.gamma = gamma;
    rep.samples = cfg.samples;
    const std::size_t ns = gs.size();

    for (double th : cfg.theta) {
        double worst = 0.0;
        for (std::size_t a = 0; a < ns; ++a)
            for (std::size_t b = a; b < std::min(ns, a + 2); ++b) {
                const double lhs = std::abs(inner_product(kg[a], gs[b], th, gamma));
                const double rhs = detail::weighted_nu_norm(gs[a], th, gamma, nu) *
                                   detail::weighted_nu_norm(gs[b], th, gamma, nu);
                if (rhs > 0.0) worst = std::max(worst, lhs / rhs);
            }
        rep.k_bound.emplace_back(th, worst);
    }

    for (int k : cfg.k) {
        double worst = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < ns; ++a) {
            Distribution lg = hadamard(Distribution(g, nu), gs[a]) - kg[a];
            const double lhs = inner_product(lg, gs[a], -double(k), gamma);
            const double half = 0.5 * inner_product(gs[a], gs[a], -double(k), gamma, nu);
            const double base = nu_norm_squared(gs[a], nu);
            if (base > 0.0) worst = std::max(worst, (half - lhs) / base);
        }
        rep.weighted_gap.emplace_back(k, worst);
    }

    const auto betas = multi_indices(cfg.n_der);
    std::vector<std::vector<Distribution>> d(ns);
    for (std::size_t a = 0; a < ns; ++a)
        for (const auto& b : betas) d[a].push_back(partial_derivative(gs[a], b));
    std::vector<Distribution> first, second;
    for (std::size_t a = 0; a < ns; ++a) {
        first.push_back(gs[a]);
        second.push_back(gs[(a + 1) % ns]);
    }
    const auto loss = gamma_loss(first, second, ops);
    for (double th : cfg.theta) {
        double worst = 0.0;
        for (std::size_t a = 0; a < ns; ++a) {
            const std::size_t b = (a + 1) % ns, c = (a + 2) % ns;
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t q = 0; q < betas.size(); ++q) {
                s1 += detail::weighted_nu_norm(d[a][q], th, gamma, nu);
                s2 += detail::weighted_nu_norm(d[b][q], th, gamma, nu);
            }
            for (std::size_t q = 0; q < betas.size(); ++q) {
                const Distribution dl = partial_derivative(loss[a], betas[q]);
                const double lhs = std::abs(inner_product(dl, d[c][q], th, gamma));
                const double rhs = s1 * s2 * detail::weighted_nu_norm(d[c][q], th, gamma, nu);
                if (rhs > 0.0) worst = std::max(worst, lhs / rhs);
            }
        }
        rep.loss_bound.emplace_back(th, worst);
    }
    return rep;
}

}  // namespace cosmoboltz
