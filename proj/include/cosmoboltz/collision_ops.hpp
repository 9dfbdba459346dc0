#pragma once

// Collision frequency, the linear pieces K1, K2, L = nu - K2 + K1 and the
// bilinear term Gamma for soft potentials |u - v|^gamma with an angular
// cutoff kernel, discretized on the velocity lattice times a sphere rule.
//
// All lattice sums share one traversal: for every lattice offset z = u - v
// and every antipodal pair of sphere nodes, the post-collision velocities are
// u' = v + z - d and v' = v + d with d = (z . omega) omega fixed, so the
// trilinear stencils and their weights are constant over the whole sweep in v.
// Fields are zero padded so that the inner loop has no branches.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cosmoboltz/common.hpp"
#include "cosmoboltz/sphere_quadrature.hpp"
#include "cosmoboltz/velocity_space.hpp"

namespace cosmoboltz {

struct PostCollision {
    Vec3 u_prime;
    Vec3 v_prime;
};

/// v' = v + ((u - v) . omega) omega, u' = u - ((u - v) . omega) omega.
inline PostCollision post_collide(const Vec3& u, const Vec3& v, const Vec3& omega) {
    const double s = (u[0] - v[0]) * omega[0] + (u[1] - v[1]) * omega[1] + (u[2] - v[2]) * omega[2];
    PostCollision pc;
    for (int a = 0; a < 3; ++a) {
        pc.v_prime[a] = v[a] + s * omega[a];
        pc.u_prime[a] = u[a] - s * omega[a];
    }
    return pc;
}

/// b0 * int |u - v|^gamma exp(-|u|^2) du as a function of s = |v|, reduced to
/// (b0 pi / s) int_0^inf r^(gamma+1) (exp(-(r-s)^2) - exp(-(r+s)^2)) dr.
inline double radial_collision_frequency(double s, double gamma, double b0) {
    require_soft_gamma(gamma);
    require(s >= 0.0, "radial_collision_frequency: |v| must be non-negative");
    if (s < 1e-8) return b0 * 2.0 * pi * std::tgamma(0.5 * (3.0 + gamma));
    auto integrand = [&](double r) {
        if (r <= 0.0) return 0.0;
        return std::pow(r, gamma + 1.0) * std::exp(-(r - s) * (r - s)) * -std::expm1(-4.0 * r * s);
    };
    // On [0, s] substitute r = t^kappa, kappa = 1/(3 + gamma): the integrand
    // behaves like r^(gamma + 2) at 0 and becomes smooth in t.
    const double kappa = 1.0 / (3.0 + gamma);
    auto inner_integrand = [&](double t) {
        const double r = std::pow(t, kappa);
        const double x = 4.0 * r * s;
        const double phi = x > 1e-12 ? -std::expm1(-x) / x : 1.0 - 0.5 * x;  // (1 - e^-x) / x
        return kappa * 4.0 * s * std::exp(-(r - s) * (r - s)) * phi;
    };
    boost::math::quadrature::tanh_sinh<double> ts;
    boost::math::quadrature::exp_sinh<double> es;
    const double inner = ts.integrate(inner_integrand, 0.0, std::pow(s, 3.0 + gamma), 1e-14);
    const double outer = es.integrate(integrand, s, std::numeric_limits<double>::infinity(), 1e-14);
    return b0 * pi / s * (inner + outer);
}

/// Exact nu at every node (no regularization).
inline std::vector<double> collision_frequency(const VelocityGrid& grid, double gamma, const AngularKernel& kernel) {
    require_soft_gamma(gamma);
    std::vector<double> nu(grid.size());
    std::map<long long, double> cache;  // keyed by (2i - n + 1)^2 + ... which fixes |v|
    const int n = grid.n();
    for (std::size_t idx = 0; idx < grid.size(); ++idx) {
        const auto c = grid.ijk(idx);
        long long key = 0;
        for (int a : c) key += static_cast<long long>(2 * a - n + 1) * (2 * a - n + 1);
        auto it = cache.find(key);
        if (it == cache.end())
            it = cache.emplace(key, radial_collision_frequency(norm(grid.velocity(idx)), gamma, kernel.b0())).first;
        nu[idx] = it->second;
    }
    return nu;
}

struct OperatorOptions {
    /// Regularization length; unset means calibrated so the discrete and
    /// exact nu agree at the node nearest the origin.
    std::optional<double> eps_reg;
    /// Refuse dense K assembly above this many bytes.
    std::size_t matrix_budget_bytes = std::size_t(2) << 30;
    /// Points per axis of the interpolation stencil for f(u') and f(v') in
    /// K2 and the dense K.
    int linear_taps = default_stencil_taps;
    /// Same for the gain term of Gamma.
    int gamma_taps = default_stencil_taps;
    /// Exponent lam of a Gaussian weighting in the interpolation: the stencil
    /// interpolates f * exp(lam |v|^2 / 2) and undoes the factor at the
    /// target. lam = 1 reproduces sqrt(mu) times low-degree polynomials
    /// exactly, so the null space of L holds to round-off, but it amplifies
    /// rough data near the box edge by up to exp(h |v|) per axis and the
    /// discrete L then has large negative eigenvalues. lam = 0 is plain
    /// Lagrange interpolation.
    double maxwellian_weight = 0.0;
};

namespace detail {

/// Copy of a lattice field with each k row extended by `pad` zeros in front
/// and pad + tail zeros behind; rows outside the lattice in i or j are not
/// stored and read as zero by the callers.
struct PaddedLayout {
    int n = 0, pad = 0, tail = 24;
    std::ptrdiff_t row() const { return static_cast<std::ptrdiff_t>(n) + 2 * pad + tail; }
    std::size_t size() const { return static_cast<std::size_t>(n) * n * row(); }
    std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>((static_cast<std::ptrdiff_t>(i) * n + j) * row() + (k + pad));
    }
};

inline std::pair<int, int> thread_slab(int n) {
#ifdef _OPENMP
    const int nt = omp_get_num_threads(), t = omp_get_thread_num();
#else
    const int nt = 1, t = 0;
#endif
    return {static_cast<int>(static_cast<long long>(n) * t / nt),
            static_cast<int>(static_cast<long long>(n) * (t + 1) / nt)};
}

/// Separable (optionally Gaussian-weighted) Lagrange stencil for the point v + d, where
/// d is fixed and v runs over lattice nodes. Along axis a the weight of node
/// x + first_a + c is table[a][c][x].
struct MovingStencil {
    std::array<int, 3> first{};
    std::array<std::array<std::vector<double>, max_stencil_taps>, 3> table;
};

}  // namespace detail

/// Precomputed data for one (grid, gamma, kernel, sphere rule) combination.
///
/// `nu()` is the quadrature-consistent collision frequency
/// b0 * sum_u q_u |u - v|_eps^gamma exp(-|u|^2), the value for which the
/// discrete K1 reproduces nu sqrt(mu) exactly; it is used inside L and the
/// nu-weighted norms. `nu_exact()` is the radial reduction without
/// regularization.
class CollisionOperatorSet {
public:
    using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    CollisionOperatorSet(const VelocityGrid& grid, double gamma, AngularKernel kernel, SphereQuadrature quad,
                         OperatorOptions opts = {})
        : grid_(grid), gamma_(gamma), kernel_(kernel), quad_(std::move(quad)), opts_(opts) {
        require_soft_gamma(gamma);
        require(quad_.size() >= 2 && quad_.size() % 2 == 0, "sphere rule must be centrally symmetric");
        require_stencil_taps(opts_.linear_taps);
        require_stencil_taps(opts_.gamma_taps);
        const int n = grid_.n();
        layout_.n = n;
        layout_.pad = static_cast<int>(std::ceil((std::sqrt(6.0) - 1.0) * (n - 1) / 2.0)) + 3;

        e_half_.resize(grid_.size());
        qe_.resize(grid_.size());
        for (std::size_t i = 0; i < grid_.size(); ++i) {
            e_half_[i] = std::exp(-0.5 * norm2(grid_.velocity(i)));
            qe_[i] = grid_.quad_weight(i) * e_half_[i];
        }
        qe_rows_.assign(row_size(), 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                std::memcpy(qe_rows_.data() + row_index(i, j), qe_.data() + grid_.index(i, j, 0), n * sizeof(double));
        nu_exact_ = collision_frequency(grid_, gamma_, kernel_);
        eps_ = opts_.eps_reg ? *opts_.eps_reg : calibrate_eps();
        require(eps_ > 0.0, "eps_reg must be positive");
        build_kernel_table();
        nu_ = convolve_e(e_half_);
        for (double& x : nu_) x *= kernel_.b0();
        for (double x : nu_)
            if (!(x > 0.0) || !std::isfinite(x)) throw NumericalError("non-positive collision frequency");
        nu_max_ = *std::max_element(nu_.begin(), nu_.end());
    }

    const VelocityGrid& grid() const { return grid_; }
    double gamma() const { return gamma_; }
    double eps() const { return eps_; }
    const OperatorOptions& options() const { return opts_; }
    const AngularKernel& kernel() const { return kernel_; }
    const SphereQuadrature& quadrature() const { return quad_; }
    const std::vector<double>& nu() const { return nu_; }
    const std::vector<double>& nu_exact() const { return nu_exact_; }
    double nu_max() const { return nu_max_; }
    /// exp(-|v|^2/2) at every node.
    const std::vector<double>& gaussian_half() const { return e_half_; }

    /// |u - v|_eps^gamma for a lattice offset z (in grid units).
    double regularized_kernel(int z0, int z1, int z2) const {
        const double r2 = grid_.h() * grid_.h() * (double(z0) * z0 + double(z1) * z1 + double(z2) * z2);
        return std::pow(r2 + eps_ * eps_, 0.5 * gamma_);
    }

    /// Angular weights w_j B(z_hat . omega_j) rescaled so they sum to b0 for
    /// this offset direction; for z = 0 the plain weights times b0 / 4 pi.
    std::vector<double> angular_weights(const Vec3& z) const {
        std::vector<double> w(quad_.size());
        const double zn = norm(z);
        double sum = 0.0;
        for (std::size_t j = 0; j < quad_.size(); ++j) {
            const double ct = zn > 0.0 ? dot(z, quad_.nodes[j]) / zn : 0.0;
            w[j] = zn > 0.0 ? quad_.weights[j] * kernel_(ct) : quad_.weights[j];
            sum += w[j];
        }
        if (!(sum > 0.0)) throw NumericalError("angular kernel vanishes on every sphere node");
        for (double& x : w) x *= kernel_.b0() / sum;
        return w;
    }

    // ---- matrix-free sums over fields; every span element is one field ----

    /// sum_u q_u |u - v|_eps^gamma e(u) f(u) for each field.
    std::vector<std::vector<double>> convolve(std::span<const std::vector<double>*> fields) const {
        const int n = grid_.n();
        std::vector<std::vector<double>> out(fields.size(), std::vector<double>(grid_.size(), 0.0));
        std::vector<std::vector<double>> qf(fields.size(), std::vector<double>(grid_.size()));
        for (std::size_t b = 0; b < fields.size(); ++b)
            for (std::size_t i = 0; i < grid_.size(); ++i) qf[b][i] = qe_[i] * (*fields[b])[i];
#pragma omp parallel
        {
            const auto [s_lo, s_hi] = detail::thread_slab(n);
            for (int z0 = -(n - 1); z0 <= n - 1; ++z0)
                for (int z1 = -(n - 1); z1 <= n - 1; ++z1)
                    for (int z2 = -(n - 1); z2 <= n - 1; ++z2) {
                        const double kz = kernel_table_[table_index(z0, z1, z2)];
                        const int lo0 = std::max({0, -z0, s_lo}), hi0 = std::min(n - 1 - z0, s_hi - 1);
                        const int lo1 = std::max(0, -z1), hi1 = std::min(n - 1, n - 1 - z1);
                        const int lo2 = std::max(0, -z2), hi2 = std::min(n - 1, n - 1 - z2);
                        const std::ptrdiff_t zoff = (static_cast<std::ptrdiff_t>(z0) * n + z1) * n + z2;
                        for (std::size_t b = 0; b < fields.size(); ++b) {
                            const double* q = qf[b].data();
                            double* o = out[b].data();
                            for (int i = lo0; i <= hi0; ++i)
                                for (int j = lo1; j <= hi1; ++j) {
                                    const std::size_t base = grid_.index(i, j, 0);
                                    for (int k = lo2; k <= hi2; ++k) o[base + k] += kz * q[base + k + zoff];
                                }
                        }
                    }
        }
        return out;
    }

    std::vector<double> convolve_e(const std::vector<double>& f) const {
        const std::vector<double>* p = &f;
        return std::move(convolve(std::span<const std::vector<double>*>(&p, 1))[0]);
    }

    /// K2 applied to each field.
    std::vector<std::vector<double>> k2_sum(std::span<const std::vector<double>*> fields) const {
        const std::size_t nb = fields.size();
        const std::vector<double> padded = pad(fields);
        std::vector<std::vector<double>> rows(nb, std::vector<double>(row_size(), 0.0));
        sweep(true, [&](const SweepStep& st, BoxScratch& sc) {
            for (std::size_t b = 0; b < nb; ++b) {
                const double* f = padded.data() + b * layout_.size();
                interpolate_box(st.u, st, f, sc, sc.pu);
                interpolate_box(st.v, st, f, sc, sc.pv);
                for_each_box_row(st, rows[b], [&](double* o, const double* qe, std::size_t r) {
                    const double* pu = sc.pu.data() + r;
                    const double* pv = sc.pv.data() + r;
#pragma omp simd
                    for (int k = 0; k < st.kx; ++k) o[k] += st.c * qe[k] * (pu[k] + pv[k]);
                });
            }
        });
        return unpad_rows(rows);
    }

    /// Gain part of Gamma for each pair (f_b, g_b).
    std::vector<std::vector<double>> gain_sum(std::span<const std::vector<double>*> f,
                                              std::span<const std::vector<double>*> g) const {
        require(f.size() == g.size(), "gain_sum: field count mismatch");
        const std::size_t nb = f.size();
        const std::vector<double> pf = pad(f), pg = pad(g);
        std::vector<std::vector<double>> rows(nb, std::vector<double>(row_size(), 0.0));
        sweep(false, [&](const SweepStep& st, BoxScratch& sc) {
            for (std::size_t b = 0; b < nb; ++b) {
                interpolate_box(st.u, st, pf.data() + b * layout_.size(), sc, sc.pu);
                interpolate_box(st.v, st, pg.data() + b * layout_.size(), sc, sc.pv);
                for_each_box_row(st, rows[b], [&](double* o, const double* qe, std::size_t r) {
                    const double* pu = sc.pu.data() + r;
                    const double* pv = sc.pv.data() + r;
#pragma omp simd
                    for (int k = 0; k < st.kx; ++k) o[k] += st.c * qe[k] * pu[k] * pv[k];
                });
            }
        });
        return unpad_rows(rows);
    }

    /// Dense K = K2 - K1 under the same quadrature, row-major, before symmetrization.
    RowMatrix k_matrix_raw() const {
        const std::size_t nn = grid_.size();
        const double bytes = double(nn) * double(nn) * sizeof(double);
        if (bytes > double(opts_.matrix_budget_bytes))
            throw ContractError("assemble_K_matrix: dense matrix needs " + std::to_string(bytes / (1 << 20)) +
                                " MiB, above the configured budget");
        RowMatrix m = RowMatrix::Zero(static_cast<Eigen::Index>(nn), static_cast<Eigen::Index>(nn));
        const int n = grid_.n();
        sweep(true, [&](const SweepStep& st, BoxScratch&) {
            for (int i = st.lo[0]; i <= st.hi[0]; ++i)
                for (int j = st.lo[1]; j <= st.hi[1]; ++j) {
                    const std::size_t vbase = grid_.index(i, j, 0);
                    const std::size_t ubase = grid_.index(i + st.z[0], j + st.z[1], 0) + st.z[2];
                    for (const auto* ms : {&st.u, &st.v})
                        for (int c0 = 0; c0 < st.taps; ++c0) {
                            const int si = i + ms->first[0] + c0;
                            if (si < 0 || si >= n) continue;
                            for (int c1 = 0; c1 < st.taps; ++c1) {
                                const int sj = j + ms->first[1] + c1;
                                if (sj < 0 || sj >= n) continue;
                                const double cc = st.c * ms->table[0][c0][i] * ms->table[1][c1][j];
                                const long long cbase = static_cast<long long>(grid_.index(si, sj, 0)) + ms->first[2];
                                for (int k = st.lo[2]; k <= st.hi2; ++k) {
                                    const double q = cc * qe_[ubase + k];
                                    double* row = m.data() + (vbase + k) * nn;
                                    for (int c2 = 0; c2 < st.taps; ++c2) {
                                        const int sk = k + ms->first[2] + c2;
                                        if (sk >= 0 && sk < n) row[cbase + k + c2] += q * ms->table[2][c2][k];
                                    }
                                }
                            }
                        }
                }
        });

        // minus K1: b0 e(v) q_u k(u - v) e(u)
        const double b0 = kernel_.b0();
#pragma omp parallel for schedule(static)
        for (long long r = 0; r < static_cast<long long>(nn); ++r) {
            const auto vi = grid_.ijk(static_cast<std::size_t>(r));
            double* row = m.data() + r * nn;
            for (std::size_t c = 0; c < nn; ++c) {
                const auto ui = grid_.ijk(c);
                row[c] -= b0 * e_half_[r] * qe_[c] *
                          kernel_table_[table_index(ui[0] - vi[0], ui[1] - vi[1], ui[2] - vi[2])];
            }
        }
        return m;
    }

private:
    // One (z, sphere pair) term restricted to the box of v with v + z on the
    // lattice. The k range is widened to kx = 8 * nblk entries; the extra
    // entries hit zero quadrature weight.
    struct SweepStep {
        double c = 0.0;  // regularized kernel * angular weight (pair doubled)
        std::array<int, 3> z{};
        std::array<int, 3> lo{}, hi{};  // hi[2] is the widened end
        int hi2 = 0;                    // exact end of the k range
        int kx = 0;
        int taps = 3;  // stencil points per axis
        detail::MovingStencil u, v;  // stencils of u' = v + z - d and v' = v + d
    };

    struct BoxScratch {
        std::vector<double> a, b, pu, pv;
    };

    // Rows of length n + 8 so that every k loop runs over whole blocks of 8;
    // the tail of each row stays zero in qe_rows_ and is dropped on output.
    std::size_t row_stride() const { return static_cast<std::size_t>(grid_.n()) + 8; }
    std::size_t row_size() const { return static_cast<std::size_t>(grid_.n()) * grid_.n() * row_stride(); }
    std::size_t row_index(int i, int j) const { return (static_cast<std::size_t>(i) * grid_.n() + j) * row_stride(); }

    std::vector<std::vector<double>> unpad_rows(std::vector<std::vector<double>>& rows) const {
        const int n = grid_.n();
        std::vector<std::vector<double>> out(rows.size(), std::vector<double>(grid_.size()));
        for (std::size_t b = 0; b < rows.size(); ++b)
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    std::memcpy(out[b].data() + grid_.index(i, j, 0), rows[b].data() + row_index(i, j),
                                n * sizeof(double));
        return out;
    }

    /// Interpolated values of the padded field `f` at the stencil's target
    /// for every v in the step's box, laid out as [i][j][k] with k stride kx.
    /// The 3 x 3 x 3 weights factor over the axes, so the sum runs as three
    /// passes of 3 taps: along k, then j, then i.
    void interpolate_box(const detail::MovingStencil& ms, const SweepStep& st, const double* f, BoxScratch& sc,
                         std::vector<double>& out) const {
        switch (st.taps) {
            case 3: return interpolate_box_kx<3>(ms, st, f, sc, out);
            case 4: return interpolate_box_kx<4>(ms, st, f, sc, out);
            default: return interpolate_box_kx<5>(ms, st, f, sc, out);
        }
    }

    // fixed row lengths let the compiler unroll the short k loops
    template <int T>
    void interpolate_box_kx(const detail::MovingStencil& ms, const SweepStep& st, const double* f, BoxScratch& sc,
                            std::vector<double>& out) const {
        switch (st.kx) {
            case 8: return interpolate_box_impl<T, 8>(ms, st, f, sc, out);
            case 16: return interpolate_box_impl<T, 16>(ms, st, f, sc, out);
            case 24: return interpolate_box_impl<T, 24>(ms, st, f, sc, out);
            case 32: return interpolate_box_impl<T, 32>(ms, st, f, sc, out);
            default: return interpolate_box_impl<T, 0>(ms, st, f, sc, out);
        }
    }

    template <int T, int KX>
    void interpolate_box_impl(const detail::MovingStencil& ms, const SweepStep& st, const double* f, BoxScratch& sc,
                              std::vector<double>& out) const {
        const int n = grid_.n();
        const int ni = st.hi[0] - st.lo[0] + 1, nj = st.hi[1] - st.lo[1] + 1;
        const int kx = KX > 0 ? KX : st.kx;
        const int nje = nj + T - 1;
        std::array<const double*, T> tk;
        for (int c = 0; c < T; ++c) tk[c] = ms.table[2][c].data() + st.lo[2];
        for (int ii = 0; ii < ni + T - 1; ++ii)
            for (int jj = 0; jj < nje; ++jj) {
                double* dst = sc.a.data() + (static_cast<std::size_t>(ii) * nje + jj) * kx;
                const int si = st.lo[0] + ms.first[0] + ii, sj = st.lo[1] + ms.first[1] + jj;
                if (si < 0 || si >= n || sj < 0 || sj >= n) {
                    std::fill(dst, dst + kx, 0.0);
                    continue;
                }
                const double* src = f + layout_.index(si, sj, st.lo[2] + ms.first[2]);
#pragma omp simd
                for (int k = 0; k < kx; ++k) {
                    double acc = tk[0][k] * src[k];
                    for (int c = 1; c < T; ++c) acc += tk[c][k] * src[k + c];
                    dst[k] = acc;
                }
            }
        for (int ii = 0; ii < ni + T - 1; ++ii)
            for (int jj = 0; jj < nj; ++jj) {
                const int j = st.lo[1] + jj;
                std::array<double, T> w;
                for (int c = 0; c < T; ++c) w[c] = ms.table[1][c][j];
                const double* src = sc.a.data() + (static_cast<std::size_t>(ii) * nje + jj) * kx;
                double* dst = sc.b.data() + (static_cast<std::size_t>(ii) * nj + jj) * kx;
#pragma omp simd
                for (int k = 0; k < kx; ++k) {
                    double acc = w[0] * src[k];
                    for (int c = 1; c < T; ++c) acc += w[c] * src[k + c * kx];
                    dst[k] = acc;
                }
            }
        const std::size_t plane = static_cast<std::size_t>(nj) * kx;
        for (int ii = 0; ii < ni; ++ii) {
            const int i = st.lo[0] + ii;
            std::array<double, T> w;
            for (int c = 0; c < T; ++c) w[c] = ms.table[0][c][i];
            const double* src = sc.b.data() + ii * plane;
            double* dst = out.data() + ii * plane;
#pragma omp simd
            for (std::size_t q = 0; q < plane; ++q) {
                double acc = w[0] * src[q];
                for (int c = 1; c < T; ++c) acc += w[c] * src[q + c * plane];
                dst[q] = acc;
            }
        }
    }

    /// Calls fn(output row, quadrature row at v + z, box offset) for each
    /// (i, j) of the step's box; both row pointers start at k = lo[2].
    template <class Fn>
    void for_each_box_row(const SweepStep& st, std::vector<double>& rows, Fn&& fn) const {
        const int nj = st.hi[1] - st.lo[1] + 1;
        for (int i = st.lo[0]; i <= st.hi[0]; ++i)
            for (int j = st.lo[1]; j <= st.hi[1]; ++j) {
                const std::size_t r = (static_cast<std::size_t>(i - st.lo[0]) * nj + (j - st.lo[1])) * st.kx;
                fn(rows.data() + row_index(i, j) + st.lo[2],
                   qe_rows_.data() + row_index(i + st.z[0], j + st.z[1]) + st.z[2] + st.lo[2], r);
            }
    }

    std::size_t table_index(int z0, int z1, int z2) const {
        const int m = 2 * grid_.n() - 1, o = grid_.n() - 1;
        return (static_cast<std::size_t>(z0 + o) * m + (z1 + o)) * m + (z2 + o);
    }

    void build_kernel_table() {
        const int n = grid_.n(), m = 2 * n - 1;
        kernel_table_.resize(static_cast<std::size_t>(m) * m * m);
        for (int z0 = -(n - 1); z0 <= n - 1; ++z0)
            for (int z1 = -(n - 1); z1 <= n - 1; ++z1)
                for (int z2 = -(n - 1); z2 <= n - 1; ++z2)
                    kernel_table_[table_index(z0, z1, z2)] = regularized_kernel(z0, z1, z2);
    }

    double discrete_nu_at(std::size_t node, double eps) const {
        const auto vi = grid_.ijk(node);
        std::vector<double> terms(grid_.size());
        for (std::size_t u = 0; u < grid_.size(); ++u) {
            const auto ui = grid_.ijk(u);
            double r2 = 0.0;
            for (int a = 0; a < 3; ++a) r2 += double(ui[a] - vi[a]) * (ui[a] - vi[a]);
            r2 *= grid_.h() * grid_.h();
            terms[u] = qe_[u] * e_half_[u] * std::pow(r2 + eps * eps, 0.5 * gamma_);
        }
        return kernel_.b0() * pairwise_sum(terms);
    }

    double calibrate_eps() const {
        const std::size_t c = grid_.center_index();
        const double target = nu_exact_[c];
        double lo = 1e-3 * grid_.h(), hi = 2.0 * grid_.h();
        if (discrete_nu_at(c, lo) < target || discrete_nu_at(c, hi) > target)
            throw NumericalError("eps calibration failed to bracket the exact collision frequency");
        for (int it = 0; it < 80; ++it) {
            const double mid = 0.5 * (lo + hi);
            (discrete_nu_at(c, mid) > target ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    }

    std::vector<double> pad(std::span<const std::vector<double>*> fields) const {
        std::vector<double> out(fields.size() * layout_.size(), 0.0);
        const int n = grid_.n();
        for (std::size_t b = 0; b < fields.size(); ++b) {
            require(fields[b]->size() == grid_.size(), "field length does not match grid");
            double* dst = out.data() + b * layout_.size();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    std::memcpy(dst + layout_.index(i, j, 0), fields[b]->data() + grid_.index(i, j, 0),
                                n * sizeof(double));
        }
        return out;
    }

    /// Fills the per-axis weight tables of a moving stencil for the point
    /// v + d over lattice indices [lo[a], hi[a]]; with `other` set each table
    /// also carries exp(-x^2/2) evaluated at the partner point v + other.
    void fill_stencil(detail::MovingStencil& ms, const std::array<double, 3>& d, const std::array<double, 3>* other,
                      const std::array<int, 3>& lo, const std::array<int, 3>& hi, int taps) const {
        const double h = grid_.h();
        std::array<std::array<double, max_stencil_taps>, 3> l{};
        for (int a = 0; a < 3; ++a) {
            const StencilPoint p = lagrange_stencil(d[a], taps);
            ms.first[a] = p.first;
            l[a] = p.w;
        }
        // The log of each table entry is quadratic in x, so the entries follow
        // a second-order geometric recurrence. Neighbouring taps c differ by
        // exp(c h (y + shift_0) + c^2 h^2 / 2), which leaves 3 exps per axis.
        const double lam = opts_.maxwellian_weight;
        const double growth_partner = std::exp(-h * h), tap_ratio = std::exp(lam * h * h);
        std::array<double, max_stencil_taps> tap_start;
        for (int c = 0; c < taps; ++c) tap_start[c] = std::exp(0.5 * lam * c * c * h * h);
        for (int a = 0; a < 3; ++a) {
            const double alpha = h * d[a];
            const double beta = other ? h * (*other)[a] : 0.0;
            const double qa = other ? -0.5 : 0.0;
            const double shift0 = h * ms.first[a];
            // qa (y + beta)^2 - lam ((y + alpha)^2 - (y + shift0)^2) / 2 at y = coord(x)
            auto expo = [&](double y) {
                return qa * (y + beta) * (y + beta) -
                       0.5 * lam * ((y + alpha) * (y + alpha) - (y + shift0) * (y + shift0));
            };
            const double y0 = grid_.coord(lo[a]);
            const double e0 = expo(y0);
            const double val0 = std::exp(e0), ratio0 = std::exp(expo(y0 + h) - e0);
            const double step = std::exp(lam * h * (y0 + shift0));
            const double growth = other ? growth_partner : 1.0;
            double tap_val = 1.0, tap_rat = 1.0;
            for (int c = 0; c < taps; ++c) {
                double val = l[a][c] * val0 * tap_val * tap_start[c];
                double ratio = ratio0 * tap_rat;
                double* t = ms.table[a][c].data();
                for (int x = lo[a]; x <= hi[a]; ++x) {
                    t[x] = val;
                    val *= ratio;
                    ratio *= growth;
                }
                tap_val *= step;
                tap_rat *= tap_ratio;
            }
        }
    }

    /// Visits every (z, antipodal sphere pair) and hands the step, with its
    /// box of v, to `body`. Threads own disjoint ranges
    /// of i and each node sees contributions in the same order for any
    /// thread count.
    template <class Body>
    void sweep(bool with_partner_gaussians, Body&& body) const {
        const int n = grid_.n();
        const std::size_t half = quad_.half();
        bool escaped_any = false;
#pragma omp parallel reduction(|| : escaped_any)
        {
            const auto [s_lo, s_hi] = detail::thread_slab(n);
            bool escaped = false;
            SweepStep st;
            st.taps = with_partner_gaussians ? opts_.linear_taps : opts_.gamma_taps;
            for (auto* ms : {&st.u, &st.v})
                for (auto& axis : ms->table)
                    for (auto& t : axis) t.assign(n + 8, 0.0);
            BoxScratch sc;
            const std::size_t cap = static_cast<std::size_t>(n + max_stencil_taps) * (n + max_stencil_taps) * (n + 8);
            for (auto* v : {&sc.a, &sc.b, &sc.pu, &sc.pv}) v->assign(cap, 0.0);
            for (int z0 = -(n - 1); z0 <= n - 1; ++z0) {
                const int lo0 = std::max({0, -z0, s_lo}), hi0 = std::min(n - 1 - z0, s_hi - 1);
                if (lo0 > hi0) continue;
                for (int z1 = -(n - 1); z1 <= n - 1; ++z1)
                    for (int z2 = -(n - 1); z2 <= n - 1; ++z2) {
                        const int lo2 = std::max(0, -z2), hi2 = std::min(n - 1, n - 1 - z2);
                        const int nblk = (hi2 - lo2 + 8) / 8;
                        const std::array<int, 3> lo{lo0, std::max(0, -z1), lo2};
                        const std::array<int, 3> hi{hi0, std::min(n - 1, n - 1 - z1), lo2 + 8 * nblk - 1};
                        // Stencil tables are filled by recurrence from the lower corner, so
                        // axis 0 starts at the slab-independent bound to keep rounding
                        // identical for every thread count.
                        std::array<int, 3> fill_lo = lo, fill_hi = hi;
                        fill_lo[0] = std::max(0, -z0);
                        fill_hi[0] = std::min(n - 1, n - 1 - z0);
                        const Vec3 z{double(z0), double(z1), double(z2)};
                        const std::vector<double> aw = angular_weights(z);
                        const double kz = kernel_table_[table_index(z0, z1, z2)];
                        st.z = {z0, z1, z2};
                        st.lo = lo;
                        st.hi = hi;
                        st.hi2 = hi2;
                        st.kx = 8 * nblk;
                        for (std::size_t jw = 0; jw < half; ++jw) {
                            const Vec3& om = quad_.nodes[jw];
                            const double s = dot(z, om);
                            const std::array<double, 3> dv{s * om[0], s * om[1], s * om[2]};
                            const std::array<double, 3> du{z[0] - dv[0], z[1] - dv[1], z[2] - dv[2]};
                            st.c = kz * 2.0 * aw[jw];
                            if (st.c == 0.0) continue;
                            fill_stencil(st.u, du, with_partner_gaussians ? &dv : nullptr, fill_lo, fill_hi, st.taps);
                            fill_stencil(st.v, dv, with_partner_gaussians ? &du : nullptr, fill_lo, fill_hi, st.taps);
                            for (const auto* ms : {&st.u, &st.v}) {
                                if (lo2 + ms->first[2] < -layout_.pad ||
                                    lo2 + ms->first[2] + 8 * nblk + st.taps - 2 > n - 1 + layout_.pad + layout_.tail)
                                    escaped = true;
                            }
                            if (escaped) continue;
                            body(st, sc);
                        }
                    }
            }
            escaped_any = escaped_any || escaped;
        }
        if (escaped_any) throw NumericalError("post-collision velocity escaped the padded lattice");
    }

    VelocityGrid grid_;
    double gamma_;
    AngularKernel kernel_;
    SphereQuadrature quad_;
    OperatorOptions opts_;
    detail::PaddedLayout layout_;
    double eps_ = 0.0;
    double nu_max_ = 0.0;
    std::vector<double> e_half_, qe_, qe_rows_, nu_, nu_exact_, kernel_table_;
};

namespace detail {

inline std::vector<const std::vector<double>*> value_ptrs(std::span<const Distribution> fs,
                                                          const CollisionOperatorSet& ops) {
    std::vector<const std::vector<double>*> p;
    for (const auto& f : fs) {
        if (!(f.grid == ops.grid())) throw ContractError("distribution grid differs from operator grid");
        p.push_back(&f.values);
    }
    return p;
}

}  // namespace detail

/// K1 f = e(v) b0 sum_u q_u |u - v|_eps^gamma e(u) f(u), batched.
inline std::vector<Distribution> apply_K1(std::span<const Distribution> fs, const CollisionOperatorSet& ops) {
    auto ptrs = detail::value_ptrs(fs, ops);
    auto sums = ops.convolve(ptrs);
    std::vector<Distribution> out;
    const double b0 = ops.kernel().b0();
    for (auto& s : sums) {
        for (std::size_t i = 0; i < s.size(); ++i) s[i] *= b0 * ops.gaussian_half()[i];
        out.emplace_back(ops.grid(), std::move(s));
    }
    return out;
}

inline Distribution apply_K1(const Distribution& f, const CollisionOperatorSet& ops) {
    return std::move(apply_K1(std::span<const Distribution>(&f, 1), ops)[0]);
}

inline std::vector<Distribution> apply_K2(std::span<const Distribution> fs, const CollisionOperatorSet& ops) {
    auto ptrs = detail::value_ptrs(fs, ops);
    auto sums = ops.k2_sum(ptrs);
    std::vector<Distribution> out;
    for (auto& s : sums) out.emplace_back(ops.grid(), std::move(s));
    return out;
}

inline Distribution apply_K2(const Distribution& f, const CollisionOperatorSet& ops) {
    return std::move(apply_K2(std::span<const Distribution>(&f, 1), ops)[0]);
}

/// L f = nu f - K2 f + K1 f evaluated matrix-free (no symmetrization).
inline std::vector<Distribution> apply_L(std::span<const Distribution> fs, const CollisionOperatorSet& ops) {
    auto k1 = apply_K1(fs, ops);
    auto k2 = apply_K2(fs, ops);
    std::vector<Distribution> out;
    for (std::size_t b = 0; b < fs.size(); ++b) {
        Distribution r(ops.grid());
        for (std::size_t i = 0; i < r.size(); ++i)
            r.values[i] = ops.nu()[i] * fs[b].values[i] - k2[b].values[i] + k1[b].values[i];
        out.push_back(std::move(r));
    }
    return out;
}

inline Distribution apply_L(const Distribution& f, const CollisionOperatorSet& ops) {
    return std::move(apply_L(std::span<const Distribution>(&f, 1), ops)[0]);
}

/// Dense K = K2 - K1 symmetrized in the trapezoid inner product:
/// M = (K + W^-1 K^T W) / 2. `asymmetry` is |WK - (WK)^T|_F / |WK|_F before
/// symmetrization.
struct KMatrix {
    CollisionOperatorSet::RowMatrix m;
    double asymmetry = 0.0;

    /// nu f - M f: the symmetric discrete L.
    Distribution apply_L(const Distribution& f, const CollisionOperatorSet& ops) const {
        Eigen::Map<const Eigen::VectorXd> x(f.values.data(), static_cast<Eigen::Index>(f.size()));
        Eigen::VectorXd y = m * x;
        Distribution r(f.grid);
        for (std::size_t i = 0; i < r.size(); ++i) r.values[i] = ops.nu()[i] * f.values[i] - y[Eigen::Index(i)];
        return r;
    }
    Distribution apply_K(const Distribution& f) const {
        Eigen::Map<const Eigen::VectorXd> x(f.values.data(), static_cast<Eigen::Index>(f.size()));
        Eigen::VectorXd y = m * x;
        return Distribution(f.grid, std::vector<double>(y.data(), y.data() + y.size()));
    }
};

inline KMatrix assemble_K_matrix(const CollisionOperatorSet& ops) {
    KMatrix km;
    km.m = ops.k_matrix_raw();
    const auto w = ops.grid().quad_weights();
    const auto nn = static_cast<Eigen::Index>(w.size());
    double num = 0.0, den = 0.0;
    for (Eigen::Index r = 0; r < nn; ++r)
        for (Eigen::Index c = r + 1; c < nn; ++c) {
            const double a = w[r] * km.m(r, c), b = w[c] * km.m(c, r);
            num += 2.0 * (a - b) * (a - b);
            den += a * a + b * b;
            const double s = 0.5 * (a + b);
            km.m(r, c) = s / w[r];
            km.m(c, r) = s / w[c];
        }
    for (Eigen::Index r = 0; r < nn; ++r) den += std::pow(w[r] * km.m(r, r), 2);
    km.asymmetry = den > 0.0 ? std::sqrt(num / den) : 0.0;
    return km;
}

/// Binary layout: uint64 rows, uint64 cols, then rows * cols float64 in row-major order.
inline void write_matrix_binary(std::ostream& os, const CollisionOperatorSet::RowMatrix& m) {
    const std::uint64_t r = static_cast<std::uint64_t>(m.rows()), c = static_cast<std::uint64_t>(m.cols());
    os.write(reinterpret_cast<const char*>(&r), sizeof r);
    os.write(reinterpret_cast<const char*>(&c), sizeof c);
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(r * c * sizeof(double)));
    if (!os) throw std::runtime_error("write_matrix_binary: stream failure");
}

inline std::vector<Distribution> gamma_gain(std::span<const Distribution> f, std::span<const Distribution> g,
                                            const CollisionOperatorSet& ops) {
    auto pf = detail::value_ptrs(f, ops), pg = detail::value_ptrs(g, ops);
    auto sums = ops.gain_sum(pf, pg);
    std::vector<Distribution> out;
    for (auto& s : sums) out.emplace_back(ops.grid(), std::move(s));
    return out;
}

inline Distribution gamma_gain(const Distribution& f, const Distribution& g, const CollisionOperatorSet& ops) {
    return std::move(gamma_gain(std::span<const Distribution>(&f, 1), std::span<const Distribution>(&g, 1), ops)[0]);
}

/// loss(f, g)(v) = g(v) b0 sum_u q_u |u - v|_eps^gamma e(u) f(u).
inline std::vector<Distribution> gamma_loss(std::span<const Distribution> f, std::span<const Distribution> g,
                                            const CollisionOperatorSet& ops) {
    require(f.size() == g.size(), "gamma_loss: field count mismatch");
    auto pf = detail::value_ptrs(f, ops);
    detail::value_ptrs(g, ops);
    auto sums = ops.convolve(pf);
    std::vector<Distribution> out;
    const double b0 = ops.kernel().b0();
    for (std::size_t b = 0; b < f.size(); ++b) {
        for (std::size_t i = 0; i < sums[b].size(); ++i) sums[b][i] *= b0 * g[b].values[i];
        out.emplace_back(ops.grid(), std::move(sums[b]));
    }
    return out;
}

inline Distribution gamma_loss(const Distribution& f, const Distribution& g, const CollisionOperatorSet& ops) {
    return std::move(gamma_loss(std::span<const Distribution>(&f, 1), std::span<const Distribution>(&g, 1), ops)[0]);
}

inline std::vector<Distribution> apply_Gamma(std::span<const Distribution> f, std::span<const Distribution> g,
                                             const CollisionOperatorSet& ops) {
    auto gain = gamma_gain(f, g, ops);
    auto loss = gamma_loss(f, g, ops);
    for (std::size_t b = 0; b < gain.size(); ++b) gain[b] -= loss[b];
    return gain;
}

inline Distribution apply_Gamma(const Distribution& f, const Distribution& g, const CollisionOperatorSet& ops) {
    return std::move(apply_Gamma(std::span<const Distribution>(&f, 1), std::span<const Distribution>(&g, 1), ops)[0]);
}

}  // namespace cosmoboltz
