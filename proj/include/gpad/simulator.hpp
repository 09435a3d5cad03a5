#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gpad/core_types.hpp"
#include "gpad/linalg.hpp"

namespace gpad {

using Drift = std::function<Vector(const Vector&)>;
using Rng = std::mt19937_64;

inline constexpr int kDefaultSubsteps = 10;
inline constexpr double kBenchmarkDt = 0.3;

/// Continuous dynamics sampled every dt with discrete additive noise.
struct SystemSpec {
    Drift drift;
    double dt = kBenchmarkDt;
    NoiseSpec noise;
    std::string name;
    int substeps = kDefaultSubsteps;

    long dim() const noexcept { return noise.dim(); }
};

/// RK4 integration of dx/dt = f(x) over dt in `substeps` equal steps.
inline Vector flow_map(const Drift& f, const Vector& x, double dt, int substeps = kDefaultSubsteps) {
    if (substeps < 1) throw DomainError("flow_map: substeps must be at least 1");
    const double h = dt / substeps;
    Vector s = x;
    auto eval = [&](const Vector& at) {
        Vector d = f(at);
        if (d.size() != at.size()) {
            throw DimensionMismatch("flow_map: drift returned dimension " + std::to_string(d.size()) + " for state of " +
                                    std::to_string(at.size()));
        }
        if (!d.allFinite()) {
            std::ostringstream os;
            os << "flow_map: non-finite drift at state [" << at.transpose() << "]";
            throw NumericalBlowup(os.str());
        }
        return d;
    };
    for (int i = 0; i < substeps; ++i) {
        const Vector k1 = eval(s);
        const Vector k2 = eval(s + 0.5 * h * k1);
        const Vector k3 = eval(s + 0.5 * h * k2);
        const Vector k4 = eval(s + h * k3);
        s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!s.allFinite()) {
        std::ostringstream os;
        os << "flow_map: integration diverged from state [" << x.transpose() << "]";
        throw NumericalBlowup(os.str());
    }
    return s;
}

/// Zero-mean Gaussian sampler for a fixed PSD covariance.
class GaussianSampler {
public:
    explicit GaussianSampler(const Matrix& cov) : factor_(psd_factor(cov)) {}

    Vector operator()(Rng& rng) const {
        std::normal_distribution<double> n01;
        Vector z(factor_.cols());
        for (long i = 0; i < z.size(); ++i) z(i) = n01(rng);
        return factor_ * z;
    }

private:
    Matrix factor_;
};

/// Observed trajectory together with the hidden true states that produced it.
struct SimulatedTrajectory {
    Trajectory observed;
    Matrix true_states;
};

/// x_{k+1} = flow(x_k) + w_k, x̂_k = x_k + v_k. Per step the draw order is
/// v_k then w_k.
inline SimulatedTrajectory simulate_trajectory(const SystemSpec& spec, const Vector& x0, long n_states, Rng& rng) {
    if (n_states < 2) throw DomainError("simulate_trajectory: need at least 2 states");
    require_same_dim(x0.size(), spec.dim(), "simulate_trajectory: initial state");
    const GaussianSampler w(spec.noise.sigma_w());
    const GaussianSampler v(spec.noise.sigma_v());
    const long n_x = x0.size();
    Matrix truth(n_states, n_x);
    Matrix obs(n_states, n_x);
    Vector x = x0;
    for (long k = 0; k < n_states; ++k) {
        truth.row(k) = x.transpose();
        obs.row(k) = (x + v(rng)).transpose();
        if (k + 1 < n_states) x = flow_map(spec.drift, x, spec.dt, spec.substeps) + w(rng);
    }
    return SimulatedTrajectory{Trajectory(std::move(obs), spec.dt), std::move(truth)};
}

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
};

inline Vector sample_initial_condition(const std::vector<Interval>& box, Rng& rng) {
    if (box.empty()) throw DomainError("sample_initial_condition: empty box");
    Vector x(static_cast<long>(box.size()));
    for (std::size_t i = 0; i < box.size(); ++i) {
        const auto [lo, hi] = box[i];
        if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) {
            throw DomainError("sample_initial_condition: invalid bounds in dimension " + std::to_string(i));
        }
        if (lo == hi) {
            x(static_cast<long>(i)) = lo;
            continue;
        }
        std::uniform_real_distribution<double> u(lo, hi);
        x(static_cast<long>(i)) = u(rng);
    }
    return x;
}

enum class Benchmark { pendulum_nominal, pendulum_anomalous, vdp_nominal, vdp_anomalous };

inline constexpr std::array<std::string_view, 4> kBenchmarkNames = {"pendulum_nominal", "pendulum_anomalous",
                                                                    "vdp_nominal", "vdp_anomalous"};

inline std::string_view to_string(Benchmark b) { return kBenchmarkNames[static_cast<std::size_t>(b)]; }

inline Benchmark parse_benchmark(std::string_view name) {
    for (std::size_t i = 0; i < kBenchmarkNames.size(); ++i) {
        if (kBenchmarkNames[i] == name) return static_cast<Benchmark>(i);
    }
    std::string valid;
    for (auto n : kBenchmarkNames) valid += (valid.empty() ? "" : ", ") + std::string(n);
    throw DomainError("unknown system '" + std::string(name) + "'; valid names: " + valid);
}

/// Damped pendulum with an optional phase shift in the gravity term.
inline Drift pendulum_drift(double phase, double damping = 0.1) {
    return [phase, damping](const Vector& x) {
        Vector d(2);
        d << x(1), -std::sin(x(0) + phase) - damping * x(1);
        return d;
    };
}

inline Drift van_der_pol_drift(double mu) {
    return [mu](const Vector& x) {
        Vector d(2);
        d << x(1), mu * (1.0 - x(0) * x(0)) * x(1) - x(0);
        return d;
    };
}

inline SystemSpec benchmark_system(Benchmark which, const NoiseSpec& noise) {
    require_same_dim(noise.dim(), 2, "benchmark_system: noise");
    switch (which) {
        case Benchmark::pendulum_nominal:
            return SystemSpec{pendulum_drift(0.0), kBenchmarkDt, noise, "pendulum_nominal"};
        case Benchmark::pendulum_anomalous:
            return SystemSpec{pendulum_drift(0.3), kBenchmarkDt, noise, "pendulum_anomalous"};
        case Benchmark::vdp_nominal:
            return SystemSpec{van_der_pol_drift(0.4), kBenchmarkDt, noise, "vdp_nominal"};
        case Benchmark::vdp_anomalous:
            return SystemSpec{van_der_pol_drift(0.55), kBenchmarkDt, noise, "vdp_anomalous"};
    }
    throw DomainError("benchmark_system: unknown benchmark");
}

/// Deterministic per-trial seed from a master seed, a stream tag and an index.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(master) ^ stream) ^ index);
}

}  // namespace gpad
