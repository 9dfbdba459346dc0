#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "cosmoboltz/common.hpp"
#include "cosmoboltz/velocity_space.hpp"

namespace cosmoboltz {

/// Nodes on the unit sphere with positive weights summing to 4 pi. Every rule
/// built here is centrally symmetric and stored so that node j + size()/2 is
/// the antipode of node j.
struct SphereQuadrature {
    std::vector<Vec3> nodes;
    std::vector<double> weights;
    int degree = 0;
    std::string name;

    std::size_t size() const { return nodes.size(); }
    std::size_t half() const { return nodes.size() / 2; }
};

enum class KernelKind { AbsCos, Constant };

/// B(cos theta) with theta the angle between u - v and omega.
struct AngularKernel {
    KernelKind kind = KernelKind::AbsCos;
    double c_b = 1.0;

    double operator()(double cos_theta) const {
        return kind == KernelKind::AbsCos ? c_b * std::abs(cos_theta) : c_b;
    }
    /// b0 = integral of B over the sphere.
    double b0() const { return kind == KernelKind::AbsCos ? 2.0 * pi * c_b : 4.0 * pi * c_b; }
};

inline std::string to_string(KernelKind k) { return k == KernelKind::AbsCos ? "abs_cos" : "constant"; }

inline KernelKind kernel_kind_from_string(const std::string& s) {
    if (s == "abs_cos") return KernelKind::AbsCos;
    if (s == "constant") return KernelKind::Constant;
    throw ContractError("unknown kernel kind '" + s + "' (expected abs_cos or constant)");
}

namespace detail {

class OrbitBuilder {
public:
    // (+-1, 0, 0) and permutations.
    void a1(double w) {
        for (int ax = 0; ax < 3; ++ax) {
            Vec3 p{0, 0, 0};
            p[ax] = 1.0;
            add_pair(p, w);
        }
    }
    // (0, +-1/sqrt2, +-1/sqrt2) and permutations.
    void a2(double w) {
        const double s = 1.0 / std::sqrt(2.0);
        for (int zero = 0; zero < 3; ++zero) {
            const int a = (zero + 1) % 3, b = (zero + 2) % 3;
            for (double sb : {1.0, -1.0}) {
                Vec3 p{0, 0, 0};
                p[a] = s;
                p[b] = sb * s;
                add_pair(p, w);
            }
        }
    }
    // (+-1/sqrt3)^3.
    void a3(double w) {
        const double s = 1.0 / std::sqrt(3.0);
        for (double sy : {1.0, -1.0})
            for (double sz : {1.0, -1.0}) add_pair({s, sy * s, sz * s}, w);
    }
    // (l, l, m) with m = sqrt(1 - 2 l^2), all permutations and signs.
    void bk(double l, double w) {
        const double m = std::sqrt(1.0 - 2.0 * l * l);
        for (int odd = 0; odd < 3; ++odd) {
            const int a = (odd + 1) % 3, b = (odd + 2) % 3;
            for (double sa : {1.0, -1.0})
                for (double sb : {1.0, -1.0}) {
                    Vec3 p{};
                    p[odd] = m;
                    p[a] = sa * l;
                    p[b] = sb * l;
                    add_pair(p, w);
                }
        }
    }
    // (p, q, 0) with q = sqrt(1 - p^2), all permutations and signs.
    void ck(double p, double w) {
        const double q = std::sqrt(1.0 - p * p);
        for (int zero = 0; zero < 3; ++zero) {
            const int a = (zero + 1) % 3, b = (zero + 2) % 3;
            for (auto [x, y] : {std::pair{p, q}, std::pair{q, p}})
                for (double sy : {1.0, -1.0}) {
                    Vec3 v{};
                    v[a] = x;
                    v[b] = sy * y;
                    add_pair(v, w);
                }
        }
    }

    void add_pair(const Vec3& p, double w) {
        front_.push_back(p);
        wf_.push_back(w);
    }

    SphereQuadrature finish(int degree, std::string name) const {
        SphereQuadrature q;
        q.degree = degree;
        q.name = std::move(name);
        for (std::size_t i = 0; i < front_.size(); ++i) {
            q.nodes.push_back(front_[i]);
            q.weights.push_back(4.0 * pi * wf_[i]);
        }
        for (std::size_t i = 0; i < front_.size(); ++i) {
            q.nodes.push_back({-front_[i][0], -front_[i][1], -front_[i][2]});
            q.weights.push_back(4.0 * pi * wf_[i]);
        }
        return q;
    }

private:
    std::vector<Vec3> front_;
    std::vector<double> wf_;
};

}  // namespace detail

inline SphereQuadrature lebedev_rule(int points) {
    detail::OrbitBuilder b;
    switch (points) {
        case 6:
            b.a1(1.0 / 6.0);
            return b.finish(3, "lebedev6");
        case 14:
            b.a1(1.0 / 15.0);
            b.a3(0.075);
            return b.finish(5, "lebedev14");
        case 26:
            b.a1(0.04761904761904762);
            b.a2(0.0380952380952381);
            b.a3(0.03214285714285714);
            return b.finish(7, "lebedev26");
        case 38:
            b.a1(0.009523809523809524);
            b.a3(0.03214285714285714);
            b.ck(0.4597008433809831, 0.02857142857142857);
            return b.finish(9, "lebedev38");
        case 50:
            b.a1(0.1269841269841270e-1);
            b.a2(0.2257495590828924e-1);
            b.a3(0.2109375000000000e-1);
            b.bk(0.3015113445777636, 0.2017333553791887e-1);
            return b.finish(11, "lebedev50");
        case 110:
            b.a1(0.3828270494937162e-2);
            b.a3(0.9793737512487512e-2);
            b.bk(0.1851156353447362, 0.8211737283191111e-2);
            b.bk(0.6904210483822922, 0.9942814891178103e-2);
            b.bk(0.3956894730559419, 0.9595471336070963e-2);
            b.ck(0.4783690288121502, 0.9694996361663028e-2);
            return b.finish(17, "lebedev110");
        default:
            throw ContractError("no Lebedev rule with " + std::to_string(points) + " points");
    }
}

/// Vertices of the regular icosahedron, equal weights; exact to degree 5.
inline SphereQuadrature icosahedron_rule() {
    const double phi = 0.5 * (1.0 + std::sqrt(5.0));
    const double s = 1.0 / std::sqrt(1.0 + phi * phi);
    detail::OrbitBuilder b;
    for (double sb : {1.0, -1.0}) {
        b.add_pair({0.0, s, sb * phi * s}, 1.0 / 12.0);
        b.add_pair({s, sb * phi * s, 0.0}, 1.0 / 12.0);
        b.add_pair({sb * phi * s, 0.0, s}, 1.0 / 12.0);
    }
    return b.finish(5, "icosahedron12");
}

/// Gauss-Legendre in cos(polar) on [0, 1] times uniform azimuth, mirrored
/// through the origin: 2 * n_polar * n_azimuth nodes.
inline SphereQuadrature product_rule(int n_polar, int n_azimuth) {
    require(n_polar >= 1 && n_azimuth >= 3, "product_rule: need n_polar >= 1 and n_azimuth >= 3");
    // Gauss-Legendre on [-1, 1] by Newton on P_n.
    std::vector<double> x(n_polar), wx(n_polar);
    for (int i = 0; i < n_polar; ++i) {
        double z = std::cos(pi * (i + 0.75) / (n_polar + 0.5));
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 1; j <= n_polar; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p2) / j;
            }
            const double dp = n_polar * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) {
                wx[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                break;
            }
            wx[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        }
        x[i] = z;
    }
    detail::OrbitBuilder b;
    for (int i = 0; i < n_polar; ++i) {
        const double c = 0.5 * (x[i] + 1.0);  // mapped to [0, 1]
        const double sn = std::sqrt(std::max(0.0, 1.0 - c * c));
        for (int k = 0; k < n_azimuth; ++k) {
            const double ph = 2.0 * pi * (k + 0.5 * (i % 2)) / n_azimuth;
            // half of [0,1] Gauss weight (0.5 * wx) spread over azimuth, on 4 pi total after mirroring
            b.add_pair({sn * std::cos(ph), sn * std::sin(ph), c}, 0.5 * wx[i] * 0.5 / n_azimuth);
        }
    }
    return b.finish(std::min(2 * n_polar - 1, n_azimuth - 1),
                    "product" + std::to_string(n_polar) + "x" + std::to_string(n_azimuth));
}

/// Rule with the requested node count: Lebedev for 6, 14, 26, 38, 50, 110 and
/// the icosahedron for 12.
inline SphereQuadrature make_sphere_quadrature(int points) {
    if (points == 12) return icosahedron_rule();
    if (points == 6 || points == 14 || points == 26 || points == 38 || points == 50 || points == 110)
        return lebedev_rule(points);
    throw ContractError("unsupported sphere node count " + std::to_string(points) +
                        " (supported: 6, 12, 14, 26, 38, 50, 110)");
}

}  // namespace cosmoboltz
