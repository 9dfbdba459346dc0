#pragma once

// Cartesian velocity lattice on [-v_max, v_max]^3, grid functions, the
// Maxwellian background, weights, finite-difference derivatives, trilinear
// interpolation and trapezoid inner products.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cosmoboltz/common.hpp"

namespace cosmoboltz {

using Vec3 = std::array<double, 3>;

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm2(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(norm2(a)); }

class VelocityGrid {
public:
    VelocityGrid() = default;
    VelocityGrid(int n_per_axis, double v_max) : n_(n_per_axis), v_max_(v_max) {
        require(n_per_axis >= 2, "VelocityGrid: need at least 2 points per axis");
        require(v_max > 0.0 && std::isfinite(v_max), "VelocityGrid: v_max must be positive");
        h_ = 2.0 * v_max / (n_per_axis - 1);
    }

    int n() const { return n_; }
    double v_max() const { return v_max_; }
    double h() const { return h_; }
    std::size_t size() const { return static_cast<std::size_t>(n_) * n_ * n_; }

    double coord(int i) const { return -v_max_ + i * h_; }
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * n_ + j) * n_ + k;
    }
    std::array<int, 3> ijk(std::size_t idx) const {
        const int k = static_cast<int>(idx % n_);
        const int j = static_cast<int>((idx / n_) % n_);
        const int i = static_cast<int>(idx / (static_cast<std::size_t>(n_) * n_));
        return {i, j, k};
    }
    Vec3 velocity(std::size_t idx) const {
        const auto [i, j, k] = ijk(idx);
        return {coord(i), coord(j), coord(k)};
    }

    /// Tensor-product trapezoid weight of node idx.
    double quad_weight(std::size_t idx) const {
        const auto c = ijk(idx);
        double w = h_ * h_ * h_;
        for (int a : c)
            if (a == 0 || a == n_ - 1) w *= 0.5;
        return w;
    }
    std::vector<double> quad_weights() const {
        std::vector<double> w(size());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = quad_weight(i);
        return w;
    }

    /// Index of the node closest to the origin (the origin itself for odd n).
    std::size_t center_index() const {
        const int c = n_ / 2;
        return index(c, c, c);
    }

    friend bool operator==(const VelocityGrid& a, const VelocityGrid& b) {
        return a.n_ == b.n_ && a.v_max_ == b.v_max_;
    }

private:
    int n_ = 0;
    double v_max_ = 0.0;
    double h_ = 0.0;
};

/// Perturbation f on the grid (F = mu + sqrt(mu) f).
struct Distribution {
    VelocityGrid grid;
    std::vector<double> values;

    Distribution() = default;
    explicit Distribution(const VelocityGrid& g, double fill = 0.0) : grid(g), values(g.size(), fill) {}
    Distribution(const VelocityGrid& g, std::vector<double> v) : grid(g), values(std::move(v)) {
        require(values.size() == grid.size(), "Distribution: value count does not match grid");
    }

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    bool finite() const {
        return std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); });
    }
    double max_abs() const {
        double m = 0.0;
        for (double x : values) m = std::max(m, std::abs(x));
        return m;
    }

    Distribution& operator+=(const Distribution& o) {
        check_same(o);
        for (std::size_t i = 0; i < size(); ++i) values[i] += o.values[i];
        return *this;
    }
    Distribution& operator-=(const Distribution& o) {
        check_same(o);
        for (std::size_t i = 0; i < size(); ++i) values[i] -= o.values[i];
        return *this;
    }
    Distribution& operator*=(double s) {
        for (double& x : values) x *= s;
        return *this;
    }
    /// this += s * o
    Distribution& axpy(double s, const Distribution& o) {
        check_same(o);
        for (std::size_t i = 0; i < size(); ++i) values[i] += s * o.values[i];
        return *this;
    }
    void check_same(const Distribution& o) const {
        if (!(grid == o.grid)) throw ContractError("distributions live on different grids");
    }

    template <class F>
    static Distribution from_function(const VelocityGrid& g, F&& fn) {
        Distribution d(g);
        for (std::size_t i = 0; i < g.size(); ++i) d.values[i] = fn(g.velocity(i));
        return d;
    }
};

inline Distribution operator+(Distribution a, const Distribution& b) { return a += b; }
inline Distribution operator-(Distribution a, const Distribution& b) { return a -= b; }
inline Distribution operator*(double s, Distribution a) { return a *= s; }

/// Nodewise product.
inline Distribution hadamard(const Distribution& a, const Distribution& b) {
    a.check_same(b);
    Distribution r(a.grid);
    for (std::size_t i = 0; i < a.size(); ++i) r.values[i] = a.values[i] * b.values[i];
    return r;
}

/// mu = pi^(-3/2) exp(-|v|^2) and its square root on the nodes.
struct MaxwellianBackground {
    Distribution mu;
    Distribution sqrt_mu;

    explicit MaxwellianBackground(const VelocityGrid& g)
        : mu(Distribution::from_function(
              g, [](const Vec3& v) { return std::pow(pi, -1.5) * std::exp(-norm2(v)); })),
          sqrt_mu(Distribution::from_function(
              g, [](const Vec3& v) { return std::pow(pi, -0.75) * std::exp(-0.5 * norm2(v)); })) {}
};

inline double sqrt_maxwellian(const Vec3& v) { return std::pow(pi, -0.75) * std::exp(-0.5 * norm2(v)); }

/// The five collision invariants 1, v1, v2, v3, |v|^2.
inline double collision_invariant(int which, const Vec3& v) {
    switch (which) {
        case 0: return 1.0;
        case 1: return v[0];
        case 2: return v[1];
        case 3: return v[2];
        case 4: return norm2(v);
        default: throw ContractError("collision invariant index must be in 0..4");
    }
}

/// sqrt(mu) * phi_which on the grid.
inline Distribution invariant_field(const VelocityGrid& g, int which) {
    return Distribution::from_function(
        g, [which](const Vec3& v) { return sqrt_maxwellian(v) * collision_invariant(which, v); });
}

struct MultiIndex {
    std::array<int, 3> beta{0, 0, 0};
    int order() const { return beta[0] + beta[1] + beta[2]; }
    friend bool operator==(const MultiIndex&, const MultiIndex&) = default;
};

/// All multi-indices with |beta| <= max_order, ordered by |beta| then lexicographically.
inline std::vector<MultiIndex> multi_indices(int max_order) {
    require(max_order >= 0, "multi_indices: order must be non-negative");
    std::vector<MultiIndex> out;
    for (int s = 0; s <= max_order; ++s)
        for (int a = s; a >= 0; --a)
            for (int b = s - a; b >= 0; --b) out.push_back({{a, b, s - a - b}});
    return out;
}

/// w(v)^theta = (1 + |v|)^(gamma * theta); exponents on w multiply gamma.
inline double weight(const Vec3& v, double theta, double gamma) {
    require_soft_gamma(gamma);
    return std::pow(1.0 + norm(v), gamma * theta);
}

inline Distribution weight_field(const VelocityGrid& g, double theta, double gamma) {
    require_soft_gamma(gamma);
    return Distribution::from_function(g, [&](const Vec3& v) { return std::pow(1.0 + norm(v), gamma * theta); });
}

namespace detail {

/// Fornberg's recursion: weights for the m-th derivative at x0 from nodes x.
inline std::vector<double> fornberg_weights(double x0, std::span<const double> x, int m) {
    const int n = static_cast<int>(x.size());
    std::vector<std::vector<double>> c(n, std::vector<double>(m + 1, 0.0));
    double c1 = 1.0, c4 = x[0] - x0;
    c[0][0] = 1.0;
    for (int i = 1; i < n; ++i) {
        const int mn = std::min(i, m);
        double c2 = 1.0;
        const double c5 = c4;
        c4 = x[i] - x0;
        for (int j = 0; j < i; ++j) {
            const double c3 = x[i] - x[j];
            c2 *= c3;
            if (j == i - 1) {
                for (int k = mn; k >= 1; --k) c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for (int k = mn; k >= 1; --k) c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) w[i] = c[i][m];
    return w;
}

/// 1D derivative operator of order m on n unit-spaced points: fourth-order
/// central stencils in the interior, shifted one-sided stencils of at least
/// fourth order near the ends.
struct Stencil1D {
    int order = 0;
    std::vector<int> start;
    std::vector<std::vector<double>> weights;  // unit spacing
};

inline Stencil1D build_stencil(int n, int m) {
    const int central = m + 3 + (m % 2);
    const int shifted = m + 4;
    require(n >= shifted, "partial_derivative: derivative stencil (" + std::to_string(shifted) +
                              " points) exceeds grid of " + std::to_string(n) + " points per axis");
    Stencil1D s;
    s.order = m;
    s.start.resize(n);
    s.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        const int half = central / 2;
        int first, width;
        if (i - half >= 0 && i + half <= n - 1) {
            first = i - half;
            width = central;
        } else {
            width = shifted;
            first = std::clamp(i - width / 2, 0, n - width);
        }
        std::vector<double> x(width);
        for (int p = 0; p < width; ++p) x[p] = first + p;
        s.start[i] = first;
        s.weights[i] = fornberg_weights(static_cast<double>(i), x, m);
    }
    return s;
}

inline const Stencil1D& cached_stencil(int n, int m) {
    static std::mutex mtx;
    static std::map<std::pair<int, int>, Stencil1D> cache;
    std::lock_guard lock(mtx);
    auto key = std::make_pair(n, m);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, build_stencil(n, m)).first;
    return it->second;
}

inline void apply_axis(const std::vector<double>& in, std::vector<double>& out, const VelocityGrid& g,
                       int axis, int m) {
    const int n = g.n();
    const Stencil1D& st = cached_stencil(n, m);
    const double scale = std::pow(g.h(), -m);
    std::array<std::size_t, 3> stride{static_cast<std::size_t>(n) * n, static_cast<std::size_t>(n), 1};
    const std::size_t sa = stride[axis];
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
        const auto c = g.ijk(idx);
        const int pos = c[axis];
        const std::size_t base = idx - pos * sa;
        const auto& w = st.weights[pos];
        double acc = 0.0;
        for (std::size_t p = 0; p < w.size(); ++p) acc += w[p] * in[base + (st.start[pos] + p) * sa];
        out[idx] = acc * scale;
    }
}

}  // namespace detail

/// d^beta f by composing 1D fourth-order finite differences per axis.
inline Distribution partial_derivative(const Distribution& f, const MultiIndex& beta) {
    for (int b : beta.beta) require(b >= 0 && b <= 4, "partial_derivative: per-axis order must be 0..4");
    std::vector<double> cur = f.values, tmp(f.size());
    for (int axis = 0; axis < 3; ++axis) {
        if (beta.beta[axis] == 0) continue;
        detail::apply_axis(cur, tmp, f.grid, axis, beta.beta[axis]);
        cur.swap(tmp);
    }
    return Distribution(f.grid, std::move(cur));
}

/// Trilinear interpolation of f extended by zero-valued ghost nodes; points
/// more than one spacing outside [-v_max, v_max]^3 evaluate to 0.
inline double interpolate(const Distribution& f, const Vec3& v) {
    const VelocityGrid& g = f.grid;
    const int n = g.n();
    std::array<int, 3> base{};
    std::array<double, 3> frac{};
    for (int a = 0; a < 3; ++a) {
        const double s = (v[a] + g.v_max()) / g.h();
        if (!(s > -1.0 && s < n)) return 0.0;
        const double fl = std::floor(s);
        base[a] = static_cast<int>(fl);
        frac[a] = s - fl;
    }
    auto at = [&](int i, int j, int k) -> double {
        if (i < 0 || j < 0 || k < 0 || i >= n || j >= n || k >= n) return 0.0;
        return f.values[g.index(i, j, k)];
    };
    double acc = 0.0;
    for (int di = 0; di < 2; ++di)
        for (int dj = 0; dj < 2; ++dj)
            for (int dk = 0; dk < 2; ++dk) {
                const double w = (di ? frac[0] : 1.0 - frac[0]) * (dj ? frac[1] : 1.0 - frac[1]) *
                                 (dk ? frac[2] : 1.0 - frac[2]);
                if (w != 0.0) acc += w * at(base[0] + di, base[1] + dj, base[2] + dk);
            }
    return acc;
}

/// Supported points per axis of the tensor Lagrange interpolation
/// stencil, and the default. Odd counts centre the stencil on the nearest
/// node.
inline constexpr int min_stencil_taps = 3;
inline constexpr int max_stencil_taps = 5;
inline constexpr int default_stencil_taps = 5;

/// Tie-break shift for choosing the first node of a stencil; keeps the
/// choice stable when a point sits on a switching position up to round-off.
inline constexpr double stencil_tie_shift = 1e-9;

inline void require_stencil_taps(int taps) {
    require(taps >= min_stencil_taps && taps <= max_stencil_taps, "interpolation taps must be 3, 4 or 5");
}

/// First node and Lagrange weights of a `taps`-point stencil for index
/// position s: nodes first .. first + taps - 1 sit as centrally around s as
/// the parity allows.
struct StencilPoint {
    int first = 0;
    std::array<double, max_stencil_taps> w{};
};

inline StencilPoint lagrange_stencil(double s, int taps) {
    StencilPoint p;
    p.first = static_cast<int>(std::floor(s - 0.5 * (taps - 2) + stencil_tie_shift));
    for (int c = 0; c < taps; ++c) {
        double w = 1.0;
        for (int d = 0; d < taps; ++d)
            if (d != c) w *= (s - (p.first + d)) / double(c - d);
        p.w[c] = w;
    }
    return p;
}

/// Tensor Lagrange interpolation on the taps^3 surrounding nodes. With
/// lam > 0 it interpolates f * exp(lam |v|^2 / 2) and removes the factor at
/// x; lam = 1 reproduces sqrt(mu) times any polynomial of degree < taps per
/// axis exactly. Nodes outside the grid count as 0.
inline double interpolate_lagrange(const Distribution& f, const Vec3& x, int taps = default_stencil_taps,
                                  double lam = 0.0) {
    require_stencil_taps(taps);
    const VelocityGrid& g = f.grid;
    const int n = g.n();
    std::array<int, 3> first{};
    std::array<std::array<double, max_stencil_taps>, 3> w{};
    for (int a = 0; a < 3; ++a) {
        const StencilPoint p = lagrange_stencil((x[a] + g.v_max()) / g.h(), taps);
        first[a] = p.first;
        for (int c = 0; c < taps; ++c) {
            const double xc = g.coord(p.first + c);
            w[a][c] = lam == 0.0 ? p.w[c] : p.w[c] * std::exp(-0.5 * lam * (x[a] * x[a] - xc * xc));
        }
    }
    double acc = 0.0;
    for (int c0 = 0; c0 < taps; ++c0) {
        const int i = first[0] + c0;
        if (i < 0 || i >= n) continue;
        for (int c1 = 0; c1 < taps; ++c1) {
            const int j = first[1] + c1;
            if (j < 0 || j >= n) continue;
            for (int c2 = 0; c2 < taps; ++c2) {
                const int k = first[2] + c2;
                if (k < 0 || k >= n) continue;
                acc += w[0][c0] * w[1][c1] * w[2][c2] * f.values[g.index(i, j, k)];
            }
        }
    }
    return acc;
}

/// Trapezoid quadrature of w^(2 theta) (nu) f g over the box.
inline double inner_product(const Distribution& f, const Distribution& g, double weight_exponent = 0.0,
                            double gamma = -2.0, std::optional<std::span<const double>> nu = std::nullopt) {
    f.check_same(g);
    if (nu) require(nu->size() == f.size(), "inner_product: nu has wrong length");
    const VelocityGrid& grid = f.grid;
    std::vector<double> terms(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        double t = grid.quad_weight(i) * f.values[i] * g.values[i];
        if (weight_exponent != 0.0) t *= std::pow(1.0 + norm(grid.velocity(i)), 2.0 * gamma * weight_exponent);
        if (nu) t *= (*nu)[i];
        terms[i] = t;
    }
    return pairwise_sum(terms);
}

inline double norm_squared(const Distribution& f) { return inner_product(f, f); }

inline double nu_norm_squared(const Distribution& f, std::span<const double> nu) {
    return inner_product(f, f, 0.0, -2.0, nu);
}

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit engine.
/// mt19937_64 output is fixed by the standard, so fields drawn this way are
/// identical on every platform.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Smooth compactly supported test field: a C-infinity bump
/// exp(1 - 1 / (1 - |v - c|^2 / R^2)) times a random affine factor, with
/// |c| + R kept inside the box. Unit peak scale.
inline Distribution random_bump_field(const VelocityGrid& g, std::mt19937_64& rng) {
    const double reach = 0.95 * g.v_max();
    const double radius = uniform(rng, 0.35, 0.7) * reach;
    const double off = uniform(rng, 0.0, 1.0) * (reach - radius);
    Vec3 dir{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
    const double dn = std::max(norm(dir), 1e-12);
    const Vec3 c{off * dir[0] / dn, off * dir[1] / dn, off * dir[2] / dn};
    const double a0 = uniform(rng, 0.5, 1.5);
    const Vec3 slope{uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5)};
    return Distribution::from_function(g, [&](const Vec3& v) {
        const Vec3 d{v[0] - c[0], v[1] - c[1], v[2] - c[2]};
        const double q = norm2(d) / (radius * radius);
        if (q >= 1.0) return 0.0;
        return (a0 + dot(slope, d)) * std::exp(1.0 - 1.0 / (1.0 - q));
    });
}

/// Removes the trapezoid-orthogonal projection onto span{sqrt(mu) phi}
/// for the five collision invariants phi.
inline Distribution project_out_invariants(const Distribution& f) {
    std::array<Distribution, 5> basis{invariant_field(f.grid, 0), invariant_field(f.grid, 1),
                                      invariant_field(f.grid, 2), invariant_field(f.grid, 3),
                                      invariant_field(f.grid, 4)};
    Eigen::Matrix<double, 5, 5> gram;
    Eigen::Matrix<double, 5, 1> rhs;
    for (int a = 0; a < 5; ++a) {
        rhs[a] = inner_product(f, basis[a]);
        for (int b = 0; b < 5; ++b) gram(a, b) = inner_product(basis[a], basis[b]);
    }
    const Eigen::Matrix<double, 5, 1> c = gram.ldlt().solve(rhs);
    Distribution out = f;
    for (int a = 0; a < 5; ++a) out.axpy(-c[a], basis[a]);
    return out;
}

// Binary layout: uint64 n_per_axis, float64 v_max, then n^3 float64 values in
// row-major (i, j, k) order, all little-endian.
inline void write_binary(std::ostream& os, const Distribution& f) {
    const std::uint64_t n = static_cast<std::uint64_t>(f.grid.n());
    const double vmax = f.grid.v_max();
    os.write(reinterpret_cast<const char*>(&n), sizeof n);
    os.write(reinterpret_cast<const char*>(&vmax), sizeof vmax);
    os.write(reinterpret_cast<const char*>(f.values.data()),
             static_cast<std::streamsize>(f.values.size() * sizeof(double)));
    if (!os) throw std::runtime_error("write_binary: stream failure");
}

inline Distribution read_binary(std::istream& is) {
    std::uint64_t n = 0;
    double vmax = 0.0;
    is.read(reinterpret_cast<char*>(&n), sizeof n);
    is.read(reinterpret_cast<char*>(&vmax), sizeof vmax);
    if (!is || n < 2 || n > 4096) throw ContractError("read_binary: malformed distribution header");
    Distribution f(VelocityGrid(static_cast<int>(n), vmax));
    is.read(reinterpret_cast<char*>(f.values.data()), static_cast<std::streamsize>(f.values.size() * sizeof(double)));
    if (!is) throw ContractError("read_binary: truncated distribution payload");
    return f;
}

/// CSV columns: i, j, k, v1, v2, v3, f.
inline void write_csv(std::ostream& os, const Distribution& f) {
    os << "i,j,k,v1,v2,v3,f\n";
    char buf[200];
    for (std::size_t idx = 0; idx < f.size(); ++idx) {
        const auto [i, j, k] = f.grid.ijk(idx);
        const Vec3 v = f.grid.velocity(idx);
        std::snprintf(buf, sizeof buf, "%d,%d,%d,%.17g,%.17g,%.17g,%.17g\n", i, j, k, v[0], v[1], v[2], f.values[idx]);
        os << buf;
    }
}

}  // namespace cosmoboltz
