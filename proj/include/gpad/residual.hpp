#pragma once

#include <vector>

#include "gpad/core_types.hpp"
#include "gpad/gp.hpp"
#include "gpad/linalg.hpp"

namespace gpad {

inline constexpr double kSigmaTJitterMin = 1e-12;
inline constexpr double kSigmaTJitterMax = 1e-8;

/// eps_k = (x̂_{k+1} - x̂_k) - mean(x̂_k), stacked in step order.
inline Vector residuals(const GpModel& m, const Trajectory& q) {
    require_same_dim(q.dim(), m.dim(), "residuals");
    const long n_x = q.dim();
    const long steps = q.transitions();
    Vector eps(steps * n_x);
    for (long k = 0; k < steps; ++k) {
        const Vector xk = q.state(k);
        eps.segment(k * n_x, n_x) = (q.state(k + 1) - xk) - m.predict_mean(xk);
    }
    return eps;
}

/// The two additive parts of the residual covariance before symmetrization.
struct SigmaTParts {
    Matrix noise;  // block tridiagonal, driven by process and observation noise
    Matrix gp;     // GP posterior covariance between steps, times I
    std::vector<Matrix> jacobians;

    Matrix total() const { return noise + gp; }
};

/// Noise part, block (k, l) with A_k = J_k + I:
///   (k, k)   : A_k Σv A_kᵀ + Σv + Σw
///   (k, k+1) : -Σv A_{k+1}ᵀ
///   (k+1, k) : -A_{k+1} Σv
/// and zero for |k - l| >= 2. GP part, block (k, l): cov(x̂_k, x̂_l) I.
///
/// The shared term between neighbouring steps is v_{k+1}: it enters eps_k as
/// +v_{k+1} and eps_{k+1} as -(J_{k+1} + I) v_{k+1}.
inline SigmaTParts sigma_t_parts(const GpModel& m, const Trajectory& q, const NoiseSpec& noise) {
    require_same_dim(q.dim(), m.dim(), "assemble_sigma_t");
    require_same_dim(noise.dim(), m.dim(), "assemble_sigma_t: noise");
    const long n_x = q.dim();
    const long steps = q.transitions();
    const long n = steps * n_x;
    const Matrix& sv = noise.sigma_v();
    const Matrix& sw = noise.sigma_w();
    const Matrix eye = Matrix::Identity(n_x, n_x);

    SigmaTParts parts{Matrix::Zero(n, n), Matrix::Zero(n, n), {}};
    parts.jacobians.reserve(static_cast<std::size_t>(steps));
    for (long k = 0; k < steps; ++k) parts.jacobians.push_back(m.jacobian(q.state(k)));

    for (long k = 0; k < steps; ++k) {
        const Matrix a = parts.jacobians[static_cast<std::size_t>(k)] + eye;
        parts.noise.block(k * n_x, k * n_x, n_x, n_x) = a * sv * a.transpose() + sv + sw;
        if (k + 1 < steps) {
            const Matrix a_next = parts.jacobians[static_cast<std::size_t>(k + 1)] + eye;
            parts.noise.block(k * n_x, (k + 1) * n_x, n_x, n_x) = -sv * a_next.transpose();
            parts.noise.block((k + 1) * n_x, k * n_x, n_x, n_x) = -a_next * sv;
        }
    }

    const Matrix gp_scalar = m.posterior_cov_matrix(q.states().topRows(steps));
    for (long k = 0; k < steps; ++k) {
        for (long l = 0; l < steps; ++l) {
            parts.gp.block(k * n_x, l * n_x, n_x, n_x).diagonal().setConstant(gp_scalar(k, l));
        }
    }
    return parts;
}

/// Symmetrized sum of the parts, jittered (1e-12 .. 1e-8 of the mean
/// diagonal) until it admits a Cholesky factorization.
struct AssembledCovariance {
    Matrix sigma_t;
    Matrix chol;
    double jitter = 0.0;
};

inline AssembledCovariance finalize_sigma_t(const Matrix& raw) {
    Matrix s = 0.5 * (raw + raw.transpose());
    auto chol = cholesky_with_jitter(s, kSigmaTJitterMin, kSigmaTJitterMax);
    if (!chol) {
        throw DegenerateCovariance("assemble_sigma_t: residual covariance not positive definite after maximum jitter");
    }
    s.diagonal().array() += chol->jitter;
    return AssembledCovariance{std::move(s), std::move(chol->lower), chol->jitter};
}

inline Matrix assemble_sigma_t(const GpModel& m, const Trajectory& q, const NoiseSpec& noise) {
    return finalize_sigma_t(sigma_t_parts(m, q, noise).total()).sigma_t;
}

struct Whitened {
    Vector vec;
    double mahalanobis_sq = 0.0;
};

/// Cholesky whitening: vec = L⁻¹ eps with sigma_t = L Lᵀ.
inline Whitened whiten(const Vector& eps, const Matrix& sigma_t) {
    require_same_dim(eps.size(), sigma_t.rows(), "whiten");
    require_same_dim(sigma_t.rows(), sigma_t.cols(), "whiten: covariance");
    Eigen::LLT<Matrix> llt(sigma_t);
    if (llt.info() != Eigen::Success) {
        throw DegenerateCovariance("whiten: covariance is not positive definite");
    }
    Vector w = llt.matrixL().solve(eps);
    const double norm = w.squaredNorm();
    return Whitened{std::move(w), norm};
}

/// Symmetric whitening with sigma_t^{-1/2} from an eigendecomposition.
inline Whitened whiten_symmetric(const Vector& eps, const Matrix& sigma_t) {
    require_same_dim(eps.size(), sigma_t.rows(), "whiten_symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(sigma_t);
    if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0.0)) {
        throw DegenerateCovariance("whiten_symmetric: covariance is not positive definite");
    }
    const Matrix inv_sqrt =
        es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    Vector w = inv_sqrt * eps;
    const double norm = w.squaredNorm();
    return Whitened{std::move(w), norm};
}

/// Stacked residual of a trajectory against a GP, with its null covariance.
struct ResidualReport {
    Vector eps;
    Matrix sigma_t;
    Vector whitened;
    double mahalanobis_sq = 0.0;
    long dof = 0;
    std::vector<Matrix> jacobians;
    Vector noise_var;  // per step: mean diagonal entry of the noise-driven block
    Vector gp_var;     // per step: GP posterior variance at x̂_k
    double jitter = 0.0;
};

inline ResidualReport residual_report(const GpModel& m, const Trajectory& q, const NoiseSpec& noise) {
    const long n_x = q.dim();
    const long steps = q.transitions();
    ResidualReport r;
    r.eps = residuals(m, q);
    auto parts = sigma_t_parts(m, q, noise);
    auto assembled = finalize_sigma_t(parts.total());
    r.noise_var.resize(steps);
    r.gp_var.resize(steps);
    for (long k = 0; k < steps; ++k) {
        r.noise_var(k) = parts.noise.block(k * n_x, k * n_x, n_x, n_x).diagonal().mean();
        r.gp_var(k) = parts.gp(k * n_x, k * n_x);
    }
    Vector w = assembled.chol.triangularView<Eigen::Lower>().solve(r.eps);
    r.mahalanobis_sq = w.squaredNorm();
    r.whitened = std::move(w);
    r.sigma_t = std::move(assembled.sigma_t);
    r.jitter = assembled.jitter;
    r.dof = r.eps.size();
    r.jacobians = std::move(parts.jacobians);
    return r;
}

}  // namespace gpad
