#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gpad/core_types.hpp"
#include "gpad/kernel.hpp"
#include "gpad/linalg.hpp"
#include "gpad/optimize.hpp"

namespace gpad {

/// Relative jitter range tried when the training Gram matrix is not numerically PD.
inline constexpr double kGramJitterMin = 1e-10;
inline constexpr double kGramJitterMax = 1e-6;

namespace detail {

inline JitteredCholesky factor_gram(const Matrix& gram) {
    auto chol = cholesky_with_jitter(gram, kGramJitterMin, kGramJitterMax);
    if (!chol) {
        const double cond = condition_estimate(gram);
        throw IllConditionedKernel("gp: kernel matrix not positive definite after maximum jitter (condition estimate " +
                                       std::to_string(cond) + ")",
                                   cond);
    }
    return std::move(*chol);
}

}  // namespace detail

/// Trained GP regressor over state increments. One scalar kernel is shared by
/// all output columns, so alpha = K⁻¹ Y is an M x n_x matrix. Immutable after
/// construction; all queries are const and thread safe.
class GpModel {
public:
    GpModel(const RegressionData& reg, const KernelHyperparams& hyper)
        : x_train_(reg.inputs), y_train_(reg.targets), hyper_(hyper) {
        hyper_.validate();
        require_same_dim(x_train_.rows(), y_train_.rows(), "gp fit: target rows");
        require_same_dim(x_train_.cols(), y_train_.cols(), "gp fit: target columns");
        if (x_train_.cols() < 1) throw DimensionMismatch("gp fit: state dimension must be at least 1");
        auto chol = detail::factor_gram(kernel_matrix(x_train_, x_train_, hyper_, true));
        chol_ = std::move(chol.lower);
        jitter_ = chol.jitter;
        alpha_ = chol_.transpose().triangularView<Eigen::Upper>().solve(
            chol_.triangularView<Eigen::Lower>().solve(y_train_));
    }

    long dim() const noexcept { return x_train_.cols(); }
    long size() const noexcept { return x_train_.rows(); }
    const Matrix& x_train() const noexcept { return x_train_; }
    const Matrix& y_train() const noexcept { return y_train_; }
    const KernelHyperparams& hyper() const noexcept { return hyper_; }
    const Matrix& chol() const noexcept { return chol_; }
    const Matrix& alpha() const noexcept { return alpha_; }
    double jitter() const noexcept { return jitter_; }

    /// Predicted increment k(x, X) alpha.
    Vector predict_mean(const Vector& x) const {
        require_same_dim(x.size(), dim(), "predict_mean");
        if (size() == 0) return Vector::Zero(dim());
        return (kernel_row(x, x_train_, hyper_) * alpha_).transpose();
    }

    /// Posterior covariance of the latent function between x1 and x2.
    double posterior_cov(const Vector& x1, const Vector& x2) const {
        require_same_dim(x1.size(), dim(), "posterior_cov");
        require_same_dim(x2.size(), dim(), "posterior_cov");
        const double prior = se_kernel(x1, x2, hyper_, false);
        if (size() == 0) return prior;
        const Vector v1 = solve_lower(kernel_row(x1, x_train_, hyper_).transpose());
        const Vector v2 = solve_lower(kernel_row(x2, x_train_, hyper_).transpose());
        const double c = prior - v1.dot(v2);
        return (x1 == x2) ? std::max(c, 0.0) : c;
    }

    /// Posterior covariance among all rows of `points` (P x n_x). Symmetric,
    /// with the diagonal clamped at zero.
    Matrix posterior_cov_matrix(const Matrix& points) const {
        require_same_dim(points.cols(), dim(), "posterior_cov_matrix");
        Matrix cov = kernel_matrix(points, points, hyper_, false);
        if (size() > 0) {
            const Matrix v = solve_lower(kernel_matrix(x_train_, points, hyper_, false));
            cov.noalias() -= v.transpose() * v;
        }
        cov = 0.5 * (cov + cov.transpose()).eval();
        cov.diagonal() = cov.diagonal().cwiseMax(0.0);
        return cov;
    }

    /// J(r, c) = d mean_r / d x_c.
    Matrix jacobian(const Vector& x) const {
        require_same_dim(x.size(), dim(), "jacobian");
        const long n = dim();
        if (size() == 0) return Matrix::Zero(n, n);
        Matrix grads(size(), n);
        for (long i = 0; i < size(); ++i) {
            grads.row(i) = kernel_gradient_x(x, x_train_.row(i).transpose(), hyper_).transpose();
        }
        return alpha_.transpose() * grads;
    }

private:
    template <typename Rhs>
    Matrix solve_lower(const Rhs& rhs) const {
        return chol_.triangularView<Eigen::Lower>().solve(rhs);
    }

    Matrix x_train_;
    Matrix y_train_;
    KernelHyperparams hyper_;
    Matrix chol_;
    Matrix alpha_;
    double jitter_ = 0.0;
};

inline GpModel fit(const RegressionData& reg, const KernelHyperparams& hyper) { return GpModel(reg, hyper); }

inline Vector predict_mean(const GpModel& m, const Vector& x) { return m.predict_mean(x); }
inline double posterior_cov(const GpModel& m, const Vector& x1, const Vector& x2) { return m.posterior_cov(x1, x2); }
inline Matrix jacobian(const GpModel& m, const Vector& x) { return m.jacobian(x); }

/// Sum over output columns of the Gaussian log evidence of that column, with
/// K = K(X, X) + sigma_n_sq I (plus jitter if the factorization needs it).
inline double log_marginal_likelihood(const RegressionData& reg, const KernelHyperparams& hyper) {
    hyper.validate();
    require_same_dim(reg.inputs.rows(), reg.targets.rows(), "log_marginal_likelihood");
    const long m = reg.rows();
    if (m == 0) return 0.0;
    const auto chol = detail::factor_gram(kernel_matrix(reg.inputs, reg.inputs, hyper, true));
    const Matrix z = chol.lower.triangularView<Eigen::Lower>().solve(reg.targets);
    const double log_det = 2.0 * chol.lower.diagonal().array().log().sum();
    const double n_out = static_cast<double>(reg.targets.cols());
    return -0.5 * z.squaredNorm() - 0.5 * n_out * log_det -
           0.5 * n_out * static_cast<double>(m) * std::log(2.0 * std::numbers::pi);
}

struct OptimizerOptions {
    int n_starts = 8;
    int max_iterations = 200;
    double tolerance = 1e-6;
    std::uint64_t seed = 0;
};

namespace detail {

inline double median_pairwise_distance(const Matrix& x) {
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(x.rows() * (x.rows() - 1) / 2));
    for (long i = 0; i < x.rows(); ++i) {
        for (long j = i + 1; j < x.rows(); ++j) d.push_back((x.row(i) - x.row(j)).norm());
    }
    if (d.empty()) return 1.0;
    auto mid = d.begin() + static_cast<long>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    return *mid > 0.0 ? *mid : 1.0;
}

inline double target_std(const Matrix& y) {
    if (y.size() < 2) return 1.0;
    const double mean = y.mean();
    const double var = (y.array() - mean).square().sum() / static_cast<double>(y.size());
    return var > 0.0 ? std::sqrt(var) : 1.0;
}

}  // namespace detail

/// Maximizes the log marginal likelihood over (log sigma_f, log length_scale)
/// with sigma_n_sq held fixed. Start 0 is the data-scaled center
/// (target std, median pairwise input distance); the remaining starts are drawn
/// log-uniformly over [0.1, 10] times those scales from `opts.seed`.
inline KernelHyperparams optimize_hyperparams(const RegressionData& reg, double sigma_n_sq,
                                              const OptimizerOptions& opts = {}) {
    if (!(sigma_n_sq >= 0.0)) throw DomainError("optimize_hyperparams: sigma_n_sq must be non-negative");
    if (opts.n_starts < 1) throw DomainError("optimize_hyperparams: need at least one start");

    const double l0 = detail::median_pairwise_distance(reg.inputs);
    const double sf0 = detail::target_std(reg.targets);

    auto objective = [&](const Vector& p) {
        const KernelHyperparams h{std::exp(p(0)), std::exp(p(1)), sigma_n_sq};
        if (!std::isfinite(h.sigma_f) || !std::isfinite(h.length_scale) || !(h.sigma_f > 0.0) ||
            !(h.length_scale > 0.0)) {
            return std::numeric_limits<double>::infinity();
        }
        try {
            const double v = log_marginal_likelihood(reg, h);
            return std::isfinite(v) ? -v : std::numeric_limits<double>::infinity();
        } catch (const IllConditionedKernel&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> unit(std::log(0.1), std::log(10.0));

    bool found = false;
    double best_val = std::numeric_limits<double>::infinity();
    KernelHyperparams best{sf0, l0, sigma_n_sq};
    for (int s = 0; s < opts.n_starts; ++s) {
        Vector start(2);
        if (s == 0) {
            start << std::log(sf0), std::log(l0);
        } else {
            const double a = unit(rng);
            const double b = unit(rng);
            start << std::log(sf0) + a, std::log(l0) + b;
        }
        if (!std::isfinite(objective(start))) continue;
        const auto res = nelder_mead(objective, start, 0.5, opts.max_iterations, opts.tolerance);
        if (!std::isfinite(res.value)) continue;
        const KernelHyperparams cand{std::exp(res.argmin(0)), std::exp(res.argmin(1)), sigma_n_sq};
        const bool better =
            !found || res.value < best_val ||
            (res.value == best_val &&
             (cand.length_scale < best.length_scale ||
              (cand.length_scale == best.length_scale && cand.sigma_f < best.sigma_f)));
        if (better) {
            found = true;
            best_val = res.value;
            best = cand;
        }
    }
    if (!found) throw OptimizationFailed("optimize_hyperparams: every start failed to factorize the kernel matrix");
    return best;
}

/// Scalar GP noise level from a process noise covariance: the mean of its diagonal.
inline double sigma_n_sq_from(const NoiseSpec& noise) { return noise.sigma_w().diagonal().mean(); }

}  // namespace gpad
