#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <omp.h>

#include "cosmoboltz/collision_ops.hpp"

using namespace cosmoboltz;

namespace {

std::vector<Distribution> random_fields(const VelocityGrid& g, int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Distribution> out;
    for (int i = 0; i < count; ++i) out.push_back(random_bump_field(g, rng));
    return out;
}

double max_rel_diff(const Distribution& a, const Distribution& b) {
    return (a - b).max_abs() / std::max(a.max_abs(), b.max_abs());
}

}  // namespace

TEST(PostCollide, ConservesMomentumAndEnergy) {
    std::mt19937_64 rng(12);
    for (int s = 0; s < 200; ++s) {
        const Vec3 u{uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, -5, 5)};
        const Vec3 v{uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, -5, 5)};
        Vec3 om{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
        const double n = norm(om);
        for (double& x : om) x /= n;
        const auto pc = post_collide(u, v, om);
        for (int a = 0; a < 3; ++a) EXPECT_NEAR(pc.u_prime[a] + pc.v_prime[a], u[a] + v[a], 1e-13);
        EXPECT_NEAR(norm2(pc.u_prime) + norm2(pc.v_prime), norm2(u) + norm2(v), 1e-12);
    }
}

TEST(SphereQuadrature, WeightsNodesAndAntipodes) {
    for (int n : {6, 12, 14, 26, 38, 50, 110}) {
        const auto q = make_sphere_quadrature(n);
        ASSERT_EQ(q.size(), static_cast<std::size_t>(n));
        double s = 0.0, sz2 = 0.0;
        for (std::size_t j = 0; j < q.size(); ++j) {
            EXPECT_NEAR(norm(q.nodes[j]), 1.0, 1e-14);
            EXPECT_GT(q.weights[j], 0.0);
            s += q.weights[j];
            sz2 += q.weights[j] * q.nodes[j][2] * q.nodes[j][2];
        }
        EXPECT_NEAR(s, 4.0 * pi, 1e-12) << n;
        EXPECT_NEAR(sz2, 4.0 * pi / 3.0, 1e-12) << n;
        for (std::size_t j = 0; j < q.half(); ++j)
            for (int a = 0; a < 3; ++a) EXPECT_NEAR(q.nodes[j][a], -q.nodes[j + q.half()][a], 1e-15);
    }
    EXPECT_THROW(make_sphere_quadrature(7), ContractError);
}

TEST(SphereQuadrature, AbsCosKernelNormalization) {
    // int_{S^2} |cos theta| d omega = 2 pi. The integrand has a kink, so the
    // rules converge slowly; the operator renormalizes per z anyway.
    double prev = INFINITY;
    for (int n : {26, 50, 110}) {
        const auto q = make_sphere_quadrature(n);
        double s = 0.0;
        for (std::size_t j = 0; j < q.size(); ++j) s += q.weights[j] * std::abs(q.nodes[j][2]);
        const double err = std::abs(s / AngularKernel{}.b0() - 1.0);
        EXPECT_LT(err, prev) << n;
        prev = err;
    }
    EXPECT_LT(prev, 1e-2);
    EXPECT_DOUBLE_EQ((AngularKernel{KernelKind::Constant, 1.0}.b0()), 4.0 * pi);
    EXPECT_EQ(kernel_kind_from_string(to_string(KernelKind::AbsCos)), KernelKind::AbsCos);
    EXPECT_THROW(kernel_kind_from_string("hard"), ContractError);
}

TEST(CollisionFrequency, ClosedFormsAndLimits) {
    const double b0 = AngularKernel{}.b0();
    EXPECT_NEAR(radial_collision_frequency(1e-6, -2.0, b0), 4.0 * std::pow(pi, 2.5), 1e-8);
    EXPECT_NEAR(radial_collision_frequency(1e-6, -1.0, b0), 4.0 * pi * pi, 1e-8);
    // Large |v|: nu ~ b0 pi^(3/2) |v|^gamma.
    for (double gamma : {-2.5, -1.0}) {
        const double s = 30.0;
        EXPECT_NEAR(radial_collision_frequency(s, gamma, b0) / (b0 * std::pow(pi, 1.5) * std::pow(s, gamma)), 1.0, 2e-2);
    }
}

TEST(CollisionFrequency, DecreasesWithSpeed) {
    for (double gamma : {-2.9, -2.5, -2.0, -1.5, -0.5}) {
        double prev = INFINITY;
        for (double s : {0.0, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0}) {
            const double nu = radial_collision_frequency(s, gamma, 2.0 * pi);
            EXPECT_LT(nu, prev) << "gamma " << gamma << " s " << s;
            prev = nu;
        }
    }
}

class OperatorTest : public ::testing::Test {
protected:
    VelocityGrid g{7, 4.5};
    CollisionOperatorSet ops{g, -2.5, AngularKernel{}, make_sphere_quadrature(14)};
};

TEST_F(OperatorTest, DiscreteFrequencyTracksExact) {
    ASSERT_EQ(ops.nu().size(), g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        EXPECT_GT(ops.nu()[i], 0.0);
        EXPECT_NEAR(ops.nu()[i] / ops.nu_exact()[i], 1.0, 0.25);
    }
    EXPECT_GT(ops.eps(), 0.0);
    EXPECT_DOUBLE_EQ(ops.nu_max(), *std::max_element(ops.nu().begin(), ops.nu().end()));
}

TEST_F(OperatorTest, DenseMatrixMatchesMatrixFree) {
    const auto raw = ops.k_matrix_raw();
    for (const auto& f : random_fields(g, 3, 2)) {
        Eigen::Map<const Eigen::VectorXd> x(f.values.data(), static_cast<Eigen::Index>(f.size()));
        const Eigen::VectorXd y = raw * x;
        const Distribution dense(g, std::vector<double>(y.data(), y.data() + y.size()));
        EXPECT_LT(max_rel_diff(dense, apply_K2(f, ops) - apply_K1(f, ops)), 1e-12);
    }
}

TEST_F(OperatorTest, DenseMatrixIsTheWeightedSymmetrization) {
    const auto raw = ops.k_matrix_raw();
    const auto km = assemble_K_matrix(ops);
    EXPECT_GT(km.asymmetry, 0.0);
    EXPECT_LT(km.asymmetry, 1.0);
    const auto w = g.quad_weights();
    for (Eigen::Index r = 0; r < raw.rows(); r += 17)
        for (Eigen::Index c = 0; c < raw.cols(); c += 13) {
            const double expect = 0.5 * (raw(r, c) + w[c] * raw(c, r) / w[r]);
            EXPECT_NEAR(km.m(r, c), expect, 1e-13 * (std::abs(raw(r, c)) + std::abs(raw(c, r)) + 1e-300));
            EXPECT_NEAR(w[r] * km.m(r, c), w[c] * km.m(c, r), 1e-13 * std::abs(w[r] * km.m(r, c)) + 1e-300);
        }
}

TEST_F(OperatorTest, MatrixBudgetIsEnforced) {
    OperatorOptions o;
    o.matrix_budget_bytes = 1024;
    const CollisionOperatorSet small(g, -2.5, AngularKernel{}, make_sphere_quadrature(6), o);
    EXPECT_THROW(assemble_K_matrix(small), ContractError);
}

TEST_F(OperatorTest, GammaIsBilinearAndSplitsIntoGainAndLoss) {
    const auto fs = random_fields(g, 3, 5);
    const auto& f = fs[0];
    const auto& h = fs[1];
    const auto& k = fs[2];
    const auto lhs = apply_Gamma(f + k, h, ops);
    const auto rhs = apply_Gamma(f, h, ops) + apply_Gamma(k, h, ops);
    EXPECT_LT(max_rel_diff(lhs, rhs), 1e-12);
    const auto scaled = apply_Gamma(f, 3.0 * h, ops);
    EXPECT_LT(max_rel_diff(scaled, 3.0 * apply_Gamma(f, h, ops)), 1e-13);
    EXPECT_LT(max_rel_diff(apply_Gamma(f, h, ops), gamma_gain(f, h, ops) - gamma_loss(f, h, ops)), 1e-13);
    EXPECT_EQ(apply_Gamma(Distribution(g), h, ops).max_abs(), 0.0);
}

TEST_F(OperatorTest, BatchEqualsSingle) {
    const auto fs = random_fields(g, 3, 6);
    const auto batch = apply_Gamma(std::span<const Distribution>(fs), std::span<const Distribution>(fs), ops);
    for (std::size_t i = 0; i < fs.size(); ++i) EXPECT_EQ(batch[i].values, apply_Gamma(fs[i], fs[i], ops).values);
    const auto lb = apply_L(std::span<const Distribution>(fs), ops);
    for (std::size_t i = 0; i < fs.size(); ++i) EXPECT_EQ(lb[i].values, apply_L(fs[i], ops).values);
}

TEST_F(OperatorTest, ResultsIndependentOfThreadCount) {
    const auto fs = random_fields(g, 2, 7);
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const auto one = apply_Gamma(fs[0], fs[1], ops);
    const auto l1 = apply_L(fs[0], ops);
    omp_set_num_threads(3);
    const auto three = apply_Gamma(fs[0], fs[1], ops);
    const auto l3 = apply_L(fs[0], ops);
    omp_set_num_threads(saved);
    EXPECT_EQ(one.values, three.values);
    EXPECT_EQ(l1.values, l3.values);
}

TEST_F(OperatorTest, LinearOperatorIsNearlyBlindToInvariants) {
    // Coarse grid, so only a loose check; refinement is covered by the
    // acceptance suite.
    std::vector<Distribution> inv;
    for (int w = 0; w < 5; ++w) inv.push_back(invariant_field(g, w));
    const auto l = apply_L(std::span<const Distribution>(inv), ops);
    for (int w = 0; w < 5; ++w) EXPECT_LT(std::sqrt(norm_squared(l[w]) / nu_norm_squared(inv[w], ops.nu())), 0.5);
}

TEST_F(OperatorTest, RejectsForeignGrid) {
    const Distribution other(VelocityGrid(6, 4.5), 1.0);
    EXPECT_THROW(apply_L(other, ops), ContractError);
    EXPECT_THROW(apply_Gamma(other, other, ops), ContractError);
}

TEST(OperatorContracts, RejectsHardPotentials) {
    EXPECT_THROW(CollisionOperatorSet(VelocityGrid(6, 4.5), 0.5, AngularKernel{}, make_sphere_quadrature(6)),
                 ContractError);
    OperatorOptions o;
    o.linear_taps = 7;
    EXPECT_THROW(CollisionOperatorSet(VelocityGrid(6, 4.5), -2.0, AngularKernel{}, make_sphere_quadrature(6), o),
                 ContractError);
}
