#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "gpad/error.hpp"

namespace gpad {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Observed states sampled at a constant interval. Row k of states() is x̂_k.
class Trajectory {
public:
    Trajectory(Matrix states, double dt) : states_(std::move(states)), dt_(dt) {
        if (states_.cols() < 1) {
            throw InvalidDataset("trajectory: state dimension must be at least 1");
        }
        if (states_.rows() < 2) {
            throw InvalidDataset("trajectory: need at least 2 states (one transition), got " +
                                 std::to_string(states_.rows()));
        }
        if (!(dt_ > 0.0) || !std::isfinite(dt_)) {
            throw InvalidDataset("trajectory: sampling interval must be positive and finite");
        }
        if (!states_.allFinite()) {
            throw InvalidDataset("trajectory: non-finite observation");
        }
    }

    Trajectory(const std::vector<Vector>& states, double dt) : Trajectory(stack(states), dt) {}

    long size() const noexcept { return states_.rows(); }
    long transitions() const noexcept { return states_.rows() - 1; }
    long dim() const noexcept { return states_.cols(); }
    double dt() const noexcept { return dt_; }

    const Matrix& states() const noexcept { return states_; }
    Vector state(long k) const { return states_.row(k).transpose(); }

    /// First n_states observations.
    Trajectory head(long n_states) const {
        if (n_states < 2 || n_states > size()) {
            throw DomainError("trajectory: cannot take " + std::to_string(n_states) +
                              " states from a trajectory of " + std::to_string(size()));
        }
        return Trajectory(Matrix(states_.topRows(n_states)), dt_);
    }

private:
    static Matrix stack(const std::vector<Vector>& states) {
        if (states.empty()) return Matrix(0, 0);
        Matrix out(static_cast<long>(states.size()), states.front().size());
        for (std::size_t k = 0; k < states.size(); ++k) {
            if (states[k].size() != out.cols()) {
                throw InvalidDataset("trajectory: observation " + std::to_string(k) +
                                     " has dimension " + std::to_string(states[k].size()) +
                                     ", expected " + std::to_string(out.cols()));
            }
            out.row(static_cast<long>(k)) = states[k].transpose();
        }
        return out;
    }

    Matrix states_;
    double dt_;
};

namespace detail {

inline void check_psd(const Matrix& m, const char* name) {
    if (m.rows() != m.cols()) {
        throw InvalidDataset(std::string(name) + " must be square");
    }
    if (!m.allFinite()) {
        throw InvalidDataset(std::string(name) + " has non-finite entries");
    }
    const double scale = m.cwiseAbs().maxCoeff();
    if (scale == 0.0) return;
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw InvalidDataset(std::string(name) + " is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-12 * m.norm()) {
        throw InvalidDataset(std::string(name) + " is not positive semidefinite");
    }
}

}  // namespace detail

/// Process (sigma_w) and observation (sigma_v) noise covariances.
class NoiseSpec {
public:
    NoiseSpec(Matrix sigma_w, Matrix sigma_v) : sigma_w_(std::move(sigma_w)), sigma_v_(std::move(sigma_v)) {
        detail::check_psd(sigma_w_, "sigma_w");
        detail::check_psd(sigma_v_, "sigma_v");
        require_same_dim(sigma_w_.rows(), sigma_v_.rows(), "noise spec");
    }

    /// s_w·I and s_v·I.
    static NoiseSpec isotropic(long n_x, double s_w, double s_v) {
        return NoiseSpec(s_w * Matrix::Identity(n_x, n_x), s_v * Matrix::Identity(n_x, n_x));
    }

    long dim() const noexcept { return sigma_w_.rows(); }
    const Matrix& sigma_w() const noexcept { return sigma_w_; }
    const Matrix& sigma_v() const noexcept { return sigma_v_; }

private:
    Matrix sigma_w_;
    Matrix sigma_v_;
};

class Dataset {
public:
    Dataset(std::vector<Trajectory> trajectories, NoiseSpec noise)
        : trajectories_(std::move(trajectories)), noise_(std::move(noise)) {
        if (trajectories_.empty()) {
            throw InvalidDataset("dataset: no trajectories");
        }
        const auto& first = trajectories_.front();
        for (std::size_t i = 0; i < trajectories_.size(); ++i) {
            const auto& t = trajectories_[i];
            if (t.dim() != first.dim()) {
                throw InvalidDataset("dataset: trajectory " + std::to_string(i) + " has dimension " +
                                     std::to_string(t.dim()) + ", expected " + std::to_string(first.dim()));
            }
            if (t.dt() != first.dt()) {
                throw InvalidDataset("dataset: trajectory " + std::to_string(i) +
                                     " has a different sampling interval");
            }
        }
        if (noise_.dim() != first.dim()) {
            throw InvalidDataset("dataset: noise spec dimension does not match the state dimension");
        }
    }

    const std::vector<Trajectory>& trajectories() const noexcept { return trajectories_; }
    const NoiseSpec& noise() const noexcept { return noise_; }
    long dim() const noexcept { return trajectories_.front().dim(); }
    double dt() const noexcept { return trajectories_.front().dt(); }

    long transition_count() const noexcept {
        long m = 0;
        for (const auto& t : trajectories_) m += t.transitions();
        return m;
    }

private:
    std::vector<Trajectory> trajectories_;
    NoiseSpec noise_;
};

/// GP training pairs: inputs are observed states, targets the observed increments.
struct RegressionData {
    Matrix inputs;   // M x n_x
    Matrix targets;  // M x n_x

    long rows() const noexcept { return inputs.rows(); }
    long dim() const noexcept { return inputs.cols(); }
};

inline RegressionData build_regression_data(const Dataset& d) {
    const long m = d.transition_count();
    const long n_x = d.dim();
    RegressionData reg{Matrix(m, n_x), Matrix(m, n_x)};
    long row = 0;
    for (const auto& t : d.trajectories()) {
        if (t.size() < 2) {
            throw InvalidDataset("dataset: trajectory shorter than 2 states");
        }
        const long n = t.transitions();
        reg.inputs.middleRows(row, n) = t.states().topRows(n);
        reg.targets.middleRows(row, n) = t.states().bottomRows(n) - t.states().topRows(n);
        row += n;
    }
    return reg;
}

}  // namespace gpad
