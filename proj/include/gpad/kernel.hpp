#pragma once

#include <cmath>
#include <string>

#include "gpad/core_types.hpp"

namespace gpad {

/// Hyperparameters of the isotropic squared-exponential kernel
///
///   k(x, x') = sigma_f² exp(-|x - x'|² / (2 length_scale²)) + [same index] sigma_n_sq
///
/// The noise term is a Kronecker delta on training-sample index. It only ever
/// lands on the diagonal of the training Gram matrix and never in a cross
/// covariance, even when a query point coincides with a training input.
struct KernelHyperparams {
    double sigma_f = 1.0;
    double length_scale = 1.0;
    double sigma_n_sq = 0.0;

    void validate() const {
        if (!(sigma_f > 0.0) || !std::isfinite(sigma_f)) {
            throw DomainError("kernel: sigma_f must be positive, got " + std::to_string(sigma_f));
        }
        if (!(length_scale > 0.0) || !std::isfinite(length_scale)) {
            throw DomainError("kernel: length_scale must be positive, got " + std::to_string(length_scale));
        }
        if (!(sigma_n_sq >= 0.0) || !std::isfinite(sigma_n_sq)) {
            throw DomainError("kernel: sigma_n_sq must be non-negative, got " + std::to_string(sigma_n_sq));
        }
    }

    bool operator==(const KernelHyperparams&) const = default;
};

namespace detail {

inline double se_smooth(double sq_dist, const KernelHyperparams& h) {
    return h.sigma_f * h.sigma_f * std::exp(-sq_dist / (2.0 * h.length_scale * h.length_scale));
}

}  // namespace detail

template <typename A, typename B>
double se_kernel(const Eigen::MatrixBase<A>& x1, const Eigen::MatrixBase<B>& x2, const KernelHyperparams& h,
                 bool same_index) {
    require_same_dim(x1.size(), x2.size(), "se_kernel");
    const double k = detail::se_smooth((x1 - x2).squaredNorm(), h);
    return same_index ? k + h.sigma_n_sq : k;
}

/// Entry (i, j) is k(a_i, b_j). With add_noise_diag the two inputs must be the
/// same point set and sigma_n_sq is added on the diagonal.
inline Matrix kernel_matrix(const Matrix& a, const Matrix& b, const KernelHyperparams& h, bool add_noise_diag) {
    require_same_dim(a.cols(), b.cols(), "kernel_matrix");
    if (add_noise_diag && !(&a == &b || (a.rows() == b.rows() && a == b))) {
        throw UsageError("kernel_matrix: noise diagonal requested for a cross-covariance block");
    }
    Matrix k(a.rows(), b.rows());
    const double inv_two_l2 = 1.0 / (2.0 * h.length_scale * h.length_scale);
    const double sf2 = h.sigma_f * h.sigma_f;
    for (long j = 0; j < b.rows(); ++j) {
        for (long i = 0; i < a.rows(); ++i) {
            k(i, j) = sf2 * std::exp(-(a.row(i) - b.row(j)).squaredNorm() * inv_two_l2);
        }
    }
    if (add_noise_diag) k.diagonal().array() += h.sigma_n_sq;
    return k;
}

/// Row vector k(x, X) for a single query point.
inline Eigen::RowVectorXd kernel_row(const Vector& x, const Matrix& points, const KernelHyperparams& h) {
    require_same_dim(x.size(), points.cols(), "kernel_row");
    Eigen::RowVectorXd k(points.rows());
    for (long i = 0; i < points.rows(); ++i) {
        k(i) = detail::se_smooth((points.row(i).transpose() - x).squaredNorm(), h);
    }
    return k;
}

/// Gradient of k(x, xi) with respect to x. The noise term contributes nothing.
template <typename A, typename B>
Vector kernel_gradient_x(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& xi, const KernelHyperparams& h) {
    require_same_dim(x.size(), xi.size(), "kernel_gradient_x");
    const Vector diff = x - xi;
    return -(detail::se_smooth(diff.squaredNorm(), h) / (h.length_scale * h.length_scale)) * diff;
}

}  // namespace gpad
