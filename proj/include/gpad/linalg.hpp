#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>

#include "gpad/core_types.hpp"

namespace gpad {

/// Lower Cholesky factor plus the diagonal jitter that was needed to obtain it.
struct JitteredCholesky {
    Matrix lower;
    double jitter = 0.0;
};

namespace detail {

inline std::optional<Matrix> try_cholesky(const Matrix& a) {
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) return std::nullopt;
    Matrix l = llt.matrixL();
    if (!l.allFinite() || (l.diagonal().array() <= 0.0).any()) return std::nullopt;
    return l;
}

}  // namespace detail

/// Condition number estimate from the symmetric eigenvalues; +inf when singular or indefinite.
inline double condition_estimate(const Matrix& a) {
    if (a.size() == 0) return 1.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
    return hi / lo;
}

/// Factorizes a symmetric matrix, retrying with eps·mean(diag) added to the
/// diagonal for eps = eps_lo, 10·eps_lo, ..., eps_hi. Returns nullopt if every
/// attempt fails.
inline std::optional<JitteredCholesky> cholesky_with_jitter(const Matrix& a, double eps_lo, double eps_hi) {
    if (a.rows() == 0) return JitteredCholesky{Matrix(0, 0), 0.0};
    if (auto l = detail::try_cholesky(a)) return JitteredCholesky{std::move(*l), 0.0};
    double mean_diag = a.diagonal().mean();
    if (!(mean_diag > 0.0)) mean_diag = 1.0;
    for (double eps = eps_lo; eps <= eps_hi * (1.0 + 1e-9); eps *= 10.0) {
        const double jitter = eps * mean_diag;
        Matrix shifted = a;
        shifted.diagonal().array() += jitter;
        if (auto l = detail::try_cholesky(shifted)) return JitteredCholesky{std::move(*l), jitter};
    }
    return std::nullopt;
}

/// A factor S with S·Sᵀ = cov for a symmetric PSD cov. Uses Cholesky when
/// possible, otherwise an eigendecomposition with negative eigenvalues clipped.
inline Matrix psd_factor(const Matrix& cov) {
    if (auto l = detail::try_cholesky(cov)) return *l;
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal();
}

}  // namespace gpad
