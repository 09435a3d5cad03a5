#include <gtest/gtest.h>

#include "gpad/residual.hpp"
#include "sigma_t_oracle.hpp"
#include "test_util.hpp"

using namespace gpad;
using gpad::testing::random_matrix;
using gpad::testing::random_spd;
using gpad::testing::rel_err;

namespace {

GpModel empty_model(long n_x) { return GpModel(RegressionData{Matrix(0, n_x), Matrix(0, n_x)}, {1, 1, 0}); }

}  // namespace

TEST(Residuals, ZeroOnTrainingTrajectory) {
    std::mt19937_64 rng(1);
    const Matrix states = random_matrix(8, 2, rng, -2, 2);
    const Trajectory t(states, 0.3);
    const Dataset d({t}, NoiseSpec::isotropic(2, 0, 0));
    const GpModel m(build_regression_data(d), {1, 1, 0});
    EXPECT_LT(residuals(m, t).norm(), 1e-8);
}

TEST(Residuals, ShapeAndPriorModel) {
    std::mt19937_64 rng(2);
    const Trajectory t(random_matrix(6, 3, rng), 0.1);
    const Vector eps = residuals(empty_model(3), t);
    ASSERT_EQ(eps.size(), 15);
    for (long k = 0; k < 5; ++k) {
        EXPECT_EQ(Vector(eps.segment(k * 3, 3)), Vector(t.state(k + 1) - t.state(k)));
    }
}

TEST(Residuals, DimensionMismatch) {
    EXPECT_THROW(residuals(empty_model(2), Trajectory(Matrix::Zero(3, 3), 0.1)), DimensionMismatch);
}

TEST(SigmaT, NoObservationNoiseIsBlockDiagonalPlusGp) {
    std::mt19937_64 rng(3);
    const Matrix xs = random_matrix(10, 2, rng, -2, 2);
    const GpModel m(RegressionData{xs, random_matrix(10, 2, rng)}, {1, 0.8, 0.01});
    const Trajectory q(random_matrix(5, 2, rng, -2, 2), 0.3);
    Matrix sw(2, 2);
    sw << 0.02, 0.005, 0.005, 0.03;
    const NoiseSpec noise(sw, Matrix::Zero(2, 2));
    const auto parts = sigma_t_parts(m, q, noise);
    for (long k = 0; k < 4; ++k) {
        for (long l = 0; l < 4; ++l) {
            Matrix want = m.posterior_cov(q.state(k), q.state(l)) * Matrix::Identity(2, 2);
            if (k == l) want += sw;
            EXPECT_LT((parts.total().block(2 * k, 2 * l, 2, 2) - want).cwiseAbs().maxCoeff(), 1e-14);
        }
    }
}

TEST(SigmaT, PriorModelMatchesIncrementCovariance) {
    Matrix sv(2, 2), sw(2, 2);
    sv << 0.01, 0.002, 0.002, 0.02;
    sw << 0.03, 0, 0, 0.04;
    const Trajectory q(Matrix::Random(5, 2), 0.3);
    const auto parts = sigma_t_parts(empty_model(2), q, NoiseSpec(sw, sv));
    for (long k = 0; k < 4; ++k) {
        EXPECT_LT((parts.noise.block(2 * k, 2 * k, 2, 2) - (2 * sv + sw)).norm(), 1e-15);
        if (k + 1 < 4) {
            EXPECT_LT((parts.noise.block(2 * k, 2 * k + 2, 2, 2) + sv).norm(), 1e-15);
            EXPECT_LT((parts.noise.block(2 * k + 2, 2 * k, 2, 2) + sv).norm(), 1e-15);
        }
        for (long l = k + 2; l < 4; ++l) EXPECT_EQ(parts.noise.block(2 * k, 2 * l, 2, 2).norm(), 0.0);
    }
}

TEST(SigmaT, SymmetricAndFactorable) {
    std::mt19937_64 rng(5);
    const GpModel m(RegressionData{random_matrix(20, 2, rng, -2, 2), random_matrix(20, 2, rng)}, {1, 0.7, 0.01});
    const Trajectory q(random_matrix(12, 2, rng, -2, 2), 0.3);
    const Matrix s = assemble_sigma_t(m, q, NoiseSpec::isotropic(2, 1e-3, 1e-3));
    EXPECT_EQ((s - s.transpose()).norm(), 0.0);
    EXPECT_EQ(Eigen::LLT<Matrix>(s).info(), Eigen::Success);
}

TEST(SigmaT, IndefiniteRejected) {
    EXPECT_THROW(finalize_sigma_t(-Matrix::Identity(4, 4)), DegenerateCovariance);
    Matrix s = Matrix::Identity(2, 2);
    s(0, 1) = 1e-3;
    const auto a = finalize_sigma_t(s);
    EXPECT_EQ(a.sigma_t(0, 1), a.sigma_t(1, 0));
}

TEST(SigmaT, MonteCarloOracle) {
    const auto r = gpad::testing::sigma_t_monte_carlo(5, 100000, 77);
    EXPECT_LT(r.frobenius_rel, 0.05);
}

TEST(Whiten, IdentityAndScaled) {
    const Vector e = Eigen::Vector4d(1, -2, 0.5, 3);
    EXPECT_EQ(whiten(e, Matrix::Identity(4, 4)).vec, e);
    EXPECT_DOUBLE_EQ(whiten(e, Matrix::Identity(4, 4)).mahalanobis_sq, e.squaredNorm());
    EXPECT_NEAR(whiten(e, 4 * Matrix::Identity(4, 4)).mahalanobis_sq, e.squaredNorm() / 4, 1e-14);
}

TEST(Whiten, DenseInverseOracle) {
    std::mt19937_64 rng(8);
    const Matrix s = random_spd(8, rng);
    const Vector e = random_matrix(8, 1, rng);
    const double want = e.dot(s.inverse() * e);
    EXPECT_LT(rel_err(whiten(e, s).mahalanobis_sq, want), 1e-10);
    EXPECT_LT(rel_err(whiten_symmetric(e, s).mahalanobis_sq, want), 1e-10);
}

TEST(Whiten, Errors) {
    Matrix s = Matrix::Identity(3, 3);
    s(2, 2) = -1;
    EXPECT_THROW(whiten(Vector::Ones(3), s), DegenerateCovariance);
    EXPECT_THROW(whiten_symmetric(Vector::Ones(3), s), DegenerateCovariance);
    EXPECT_THROW(whiten(Vector::Ones(2), Matrix::Identity(3, 3)), DimensionMismatch);
}

TEST(ResidualReport, Consistent) {
    std::mt19937_64 rng(9);
    const GpModel m(RegressionData{random_matrix(15, 2, rng, -2, 2), random_matrix(15, 2, rng)}, {1, 0.9, 0.01});
    const Trajectory q(random_matrix(7, 2, rng, -2, 2), 0.3);
    const auto r = residual_report(m, q, NoiseSpec::isotropic(2, 1e-3, 1e-3));
    EXPECT_EQ(r.dof, 12);
    EXPECT_EQ(r.jacobians.size(), 6u);
    EXPECT_LT(rel_err(r.mahalanobis_sq, r.eps.dot(r.sigma_t.inverse() * r.eps)), 1e-10);
    EXPECT_NEAR(r.gp_var(2), m.posterior_cov(q.state(2), q.state(2)), 1e-14);
}
