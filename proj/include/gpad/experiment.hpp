#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gpad/core_types.hpp"
#include "gpad/detector.hpp"
#include "gpad/gp.hpp"
#include "gpad/simulator.hpp"

namespace gpad {

enum class Averaging { geometric, arithmetic };

/// Combines hyperparameters from independent trainings. Geometric averaging
/// takes the mean of log sigma_f and log length_scale; sigma_n_sq is taken
/// from the first element.
inline KernelHyperparams average_hyperparams(const std::vector<KernelHyperparams>& hs,
                                             Averaging mode = Averaging::geometric) {
    if (hs.empty()) throw DomainError("average_hyperparams: empty input");
    const double n = static_cast<double>(hs.size());
    KernelHyperparams out{0.0, 0.0, hs.front().sigma_n_sq};
    if (mode == Averaging::geometric) {
        double lf = 0.0, ll = 0.0;
        for (const auto& h : hs) {
            lf += std::log(h.sigma_f);
            ll += std::log(h.length_scale);
        }
        out.sigma_f = std::exp(lf / n);
        out.length_scale = std::exp(ll / n);
    } else {
        for (const auto& h : hs) {
            out.sigma_f += h.sigma_f;
            out.length_scale += h.length_scale;
        }
        out.sigma_f /= n;
        out.length_scale /= n;
    }
    return out;
}

struct RocPoint {
    double p_thr = 0.0;
    double detection_rate = 0.0;
};

/// Fraction of p-values strictly below each threshold.
inline std::vector<RocPoint> detection_curve(const std::vector<double>& p_values, const std::vector<double>& thresholds) {
    if (p_values.empty()) throw DomainError("detection_curve: no p-values");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (!(thresholds[i] >= 0.0 && thresholds[i] <= 1.0)) {
            throw DomainError("detection_curve: threshold outside [0, 1]");
        }
        if (i > 0 && thresholds[i] < thresholds[i - 1]) {
            throw DomainError("detection_curve: thresholds must be sorted ascending");
        }
    }
    std::vector<double> sorted = p_values;
    std::sort(sorted.begin(), sorted.end());
    const double total = static_cast<double>(sorted.size());
    std::vector<RocPoint> out;
    out.reserve(thresholds.size());
    for (double t : thresholds) {
        const auto below = std::lower_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
        out.push_back({t, static_cast<double>(below) / total});
    }
    return out;
}

inline std::vector<double> uniform_threshold_grid(int intervals = 100) {
    std::vector<double> g;
    for (int i = 0; i <= intervals; ++i) g.push_back(static_cast<double>(i) / intervals);
    return g;
}

struct ExperimentConfig {
    SystemSpec nominal_system;  // generates the training datasets; its noise is the dataset noise
    SystemSpec query_system;    // generates the scored trajectories; its noise is the query noise
    long n_datasets = 50;
    long n_hyperopt_gps = 10;
    long n_query_trajectories = 100;
    long dataset_trajectories = 10;
    long dataset_length = 14;
    std::vector<Interval> dataset_box{{-2.0, 2.0}, {-2.0, 2.0}};
    Vector query_x0{};
    std::vector<long> steps_to_analyze{10, 20};
    std::vector<double> thresholds = uniform_threshold_grid();
    std::uint64_t master_seed = 1;
    Averaging averaging = Averaging::geometric;
    OptimizerOptions optimizer{};
    unsigned threads = 0;  // 0 = hardware concurrency
    double max_exclusion_fraction = 0.01;

    void validate() const {
        if (n_datasets < 1 || n_hyperopt_gps < 1 || n_query_trajectories < 1 || dataset_trajectories < 1) {
            throw DomainError("experiment: all counts must be at least 1");
        }
        if (n_hyperopt_gps > n_datasets) throw DomainError("experiment: more hyperopt GPs than datasets");
        if (dataset_length < 2) throw DomainError("experiment: dataset trajectories need at least 2 states");
        if (steps_to_analyze.empty()) throw DomainError("experiment: no step counts to analyze");
        for (long s : steps_to_analyze) {
            if (s < 1) throw DomainError("experiment: step counts must be at least 1");
        }
        require_same_dim(nominal_system.dim(), query_system.dim(), "experiment: system dimensions");
        require_same_dim(query_x0.size(), query_system.dim(), "experiment: query initial state");
        require_same_dim(static_cast<long>(dataset_box.size()), nominal_system.dim(), "experiment: dataset box");
    }

    long query_length() const { return *std::max_element(steps_to_analyze.begin(), steps_to_analyze.end()) + 1; }
};

/// Per-step averages behind the residual covariance and the dynamics mismatch.
struct DiagnosticRow {
    long step = 0;
    double sigma_noise_sq = 0.0;
    double sigma_gp_sq = 0.0;
    double eps_f_sq = 0.0;
};

struct StepResult {
    long steps = 0;
    Matrix p_values;  // GP x trajectory; NaN where the score was excluded
    std::vector<RocPoint> roc;
    long n_scores = 0;
    std::vector<DiagnosticRow> diagnostics;

    std::vector<double> pooled() const {
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(p_values.size()));
        for (long i = 0; i < p_values.rows(); ++i) {
            for (long j = 0; j < p_values.cols(); ++j) {
                if (!std::isnan(p_values(i, j))) out.push_back(p_values(i, j));
            }
        }
        return out;
    }

    double rate_at(double p_thr) const {
        const auto p = pooled();
        return detection_curve(p, {p_thr}).front().detection_rate;
    }
};

struct ExperimentReport {
    std::vector<StepResult> per_steps;
    std::vector<KernelHyperparams> optimized_hyperparams;
    KernelHyperparams averaged_hyperparams;
    long attempted_scores = 0;
    long excluded_scores = 0;
    long failed_fits = 0;

    const StepResult& at_steps(long s) const {
        for (const auto& r : per_steps) {
            if (r.steps == s) return r;
        }
        throw DomainError("experiment report: no results for " + std::to_string(s) + " steps");
    }
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index must write
/// only to its own output slot; the first exception is rethrown.
template <typename Fn>
void parallel_for(long n, unsigned threads, Fn&& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<long>(threads, std::max(1L, n)));
    if (threads <= 1) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<long> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (long i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

namespace seed_stream {
inline constexpr std::uint64_t dataset = 1;
inline constexpr std::uint64_t query = 2;
inline constexpr std::uint64_t hyperopt = 3;
}  // namespace seed_stream

inline Dataset generate_dataset(const SystemSpec& sys, long n_traj, long length, const std::vector<Interval>& box,
                                Rng& rng) {
    std::vector<Trajectory> trajs;
    trajs.reserve(static_cast<std::size_t>(n_traj));
    for (long i = 0; i < n_traj; ++i) {
        const Vector x0 = sample_initial_condition(box, rng);
        trajs.push_back(simulate_trajectory(sys, x0, length, rng).observed);
    }
    return Dataset(std::move(trajs), sys.noise);
}

/// Monte Carlo detection experiment:
///  1. n_datasets training sets from the nominal system,
///  2. hyperparameters optimized on the first n_hyperopt_gps of them,
///  3. the remaining GPs fitted with the averaged hyperparameters,
///  4. n_query_trajectories from the query system,
///  5. every (GP, trajectory, step count) triple scored.
/// Failed fits or scores are excluded and counted; more than
/// max_exclusion_fraction of the attempted scores fails the run.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const long n_gp = cfg.n_datasets;
    const long n_q = cfg.n_query_trajectories;

    std::vector<std::optional<RegressionData>> data(static_cast<std::size_t>(n_gp));
    parallel_for(n_gp, cfg.threads, [&](long i) {
        Rng rng(derive_seed(cfg.master_seed, seed_stream::dataset, static_cast<std::uint64_t>(i)));
        try {
            data[static_cast<std::size_t>(i)] = build_regression_data(
                generate_dataset(cfg.nominal_system, cfg.dataset_trajectories, cfg.dataset_length, cfg.dataset_box, rng));
        } catch (const NumericalBlowup&) {
        }
    });

    const double sigma_n_sq = sigma_n_sq_from(cfg.nominal_system.noise);
    std::vector<std::optional<KernelHyperparams>> optimized(static_cast<std::size_t>(cfg.n_hyperopt_gps));
    parallel_for(cfg.n_hyperopt_gps, cfg.threads, [&](long i) {
        const auto& d = data[static_cast<std::size_t>(i)];
        if (!d) return;
        OptimizerOptions opts = cfg.optimizer;
        opts.seed = derive_seed(cfg.master_seed, seed_stream::hyperopt, static_cast<std::uint64_t>(i));
        try {
            optimized[static_cast<std::size_t>(i)] = optimize_hyperparams(*d, sigma_n_sq, opts);
        } catch (const OptimizationFailed&) {
        }
    });

    ExperimentReport report;
    for (const auto& h : optimized) {
        if (h) report.optimized_hyperparams.push_back(*h);
    }
    if (report.optimized_hyperparams.empty()) {
        throw ExperimentFailed("experiment: hyperparameter optimization failed on every dataset");
    }
    report.averaged_hyperparams = average_hyperparams(report.optimized_hyperparams, cfg.averaging);

    std::vector<std::optional<GpModel>> models(static_cast<std::size_t>(n_gp));
    parallel_for(n_gp, cfg.threads, [&](long i) {
        const auto idx = static_cast<std::size_t>(i);
        if (!data[idx]) return;
        std::optional<KernelHyperparams> h;
        if (i < cfg.n_hyperopt_gps) {
            h = optimized[idx];
        } else {
            h = report.averaged_hyperparams;
        }
        if (!h) return;
        try {
            models[idx].emplace(*data[idx], *h);
        } catch (const IllConditionedKernel&) {
        }
    });

    const long q_len = cfg.query_length();
    std::vector<std::optional<SimulatedTrajectory>> queries(static_cast<std::size_t>(n_q));
    parallel_for(n_q, cfg.threads, [&](long j) {
        Rng rng(derive_seed(cfg.master_seed, seed_stream::query, static_cast<std::uint64_t>(j)));
        try {
            queries[static_cast<std::size_t>(j)] = simulate_trajectory(cfg.query_system, cfg.query_x0, q_len, rng);
        } catch (const NumericalBlowup&) {
        }
    });

    const std::size_t n_settings = cfg.steps_to_analyze.size();
    report.per_steps.resize(n_settings);
    for (std::size_t s = 0; s < n_settings; ++s) {
        auto& r = report.per_steps[s];
        r.steps = cfg.steps_to_analyze[s];
        r.p_values = Matrix::Constant(n_gp, n_q, std::numeric_limits<double>::quiet_NaN());
    }

    // Per-GP accumulators for the diagnostic traces, merged in index order.
    struct DiagAccum {
        std::vector<Vector> noise, gp;
        std::vector<long> count;
    };
    std::vector<DiagAccum> accum(static_cast<std::size_t>(n_gp));

    parallel_for(n_gp, cfg.threads, [&](long i) {
        auto& acc = accum[static_cast<std::size_t>(i)];
        for (std::size_t s = 0; s < n_settings; ++s) {
            const long steps = cfg.steps_to_analyze[s];
            acc.noise.push_back(Vector::Zero(steps));
            acc.gp.push_back(Vector::Zero(steps));
            acc.count.push_back(0);
        }
        const auto& model = models[static_cast<std::size_t>(i)];
        if (!model) return;
        for (long j = 0; j < n_q; ++j) {
            const auto& q = queries[static_cast<std::size_t>(j)];
            if (!q) continue;
            for (std::size_t s = 0; s < n_settings; ++s) {
                try {
                    const auto res = score_trajectory(*model, q->observed, cfg.query_system.noise, 0.5,
                                                      cfg.steps_to_analyze[s]);
                    report.per_steps[s].p_values(i, j) = res.p_value;
                    acc.noise[s] += res.report.noise_var;
                    acc.gp[s] += res.report.gp_var;
                    ++acc.count[s];
                } catch (const Error&) {
                }
            }
        }
    });

    // Dynamics mismatch along the true query states.
    std::vector<Vector> eps_f(n_settings);
    long n_valid_q = 0;
    for (std::size_t s = 0; s < n_settings; ++s) eps_f[s] = Vector::Zero(cfg.steps_to_analyze[s]);
    for (const auto& q : queries) {
        if (!q) continue;
        ++n_valid_q;
        for (std::size_t s = 0; s < n_settings; ++s) {
            for (long k = 0; k < cfg.steps_to_analyze[s]; ++k) {
                const Vector x = q->true_states.row(k).transpose();
                const Vector diff = flow_map(cfg.query_system.drift, x, cfg.query_system.dt, cfg.query_system.substeps) -
                                    flow_map(cfg.nominal_system.drift, x, cfg.nominal_system.dt,
                                             cfg.nominal_system.substeps);
                eps_f[s](k) += diff.squaredNorm();
            }
        }
    }

    report.attempted_scores = n_gp * n_q * static_cast<long>(n_settings);
    for (const auto& m : models) {
        if (!m) ++report.failed_fits;
    }
    for (std::size_t s = 0; s < n_settings; ++s) {
        auto& r = report.per_steps[s];
        const long steps = r.steps;
        const auto pooled = r.pooled();
        r.n_scores = static_cast<long>(pooled.size());
        report.excluded_scores += n_gp * n_q - r.n_scores;
        if (!pooled.empty()) r.roc = detection_curve(pooled, cfg.thresholds);

        Vector noise = Vector::Zero(steps), gp = Vector::Zero(steps);
        long count = 0;
        for (const auto& acc : accum) {
            noise += acc.noise[s];
            gp += acc.gp[s];
            count += acc.count[s];
        }
        for (long k = 0; k < steps; ++k) {
            DiagnosticRow row;
            row.step = k + 1;
            row.sigma_noise_sq = count > 0 ? noise(k) / static_cast<double>(count) : 0.0;
            row.sigma_gp_sq = count > 0 ? gp(k) / static_cast<double>(count) : 0.0;
            row.eps_f_sq = n_valid_q > 0 ? eps_f[s](k) / static_cast<double>(n_valid_q) : 0.0;
            r.diagnostics.push_back(row);
        }
    }

    const double excluded_fraction =
        static_cast<double>(report.excluded_scores) / static_cast<double>(std::max(1L, report.attempted_scores));
    if (excluded_fraction > cfg.max_exclusion_fraction) {
        throw ExperimentFailed("experiment: " + std::to_string(report.excluded_scores) + " of " +
                               std::to_string(report.attempted_scores) + " scores excluded (limit " +
                               std::to_string(cfg.max_exclusion_fraction * 100.0) + "%)");
    }
    return report;
}

/// Protocol settings of the two benchmark studies.
enum class BenchmarkStudy { pendulum, vdp };

struct Scale {
    long n_datasets;
    long n_hyperopt_gps;
    long n_query_trajectories;
};

inline constexpr Scale kDeskScale{50, 10, 100};
inline constexpr Scale kPaperScale{500, 20, 800};

/// Fully resolved configuration for a benchmark study. `query_anomalous`
/// selects the anomalous query dynamics; otherwise queries come from the
/// nominal system (null calibration).
inline ExperimentConfig benchmark_config(BenchmarkStudy study, Scale scale, std::uint64_t seed,
                                         bool query_anomalous = true) {
    const bool pend = study == BenchmarkStudy::pendulum;
    const double q_noise = pend ? 4e-4 : 1e-3;
    const NoiseSpec d_noise = NoiseSpec::isotropic(2, 1e-2, 0.0);
    const NoiseSpec qn = NoiseSpec::isotropic(2, q_noise, q_noise);
    const Benchmark nominal = pend ? Benchmark::pendulum_nominal : Benchmark::vdp_nominal;
    const Benchmark anomalous = pend ? Benchmark::pendulum_anomalous : Benchmark::vdp_anomalous;

    ExperimentConfig cfg{.nominal_system = benchmark_system(nominal, d_noise),
                         .query_system = benchmark_system(query_anomalous ? anomalous : nominal, qn)};
    cfg.n_datasets = scale.n_datasets;
    cfg.n_hyperopt_gps = scale.n_hyperopt_gps;
    cfg.n_query_trajectories = scale.n_query_trajectories;
    cfg.dataset_trajectories = pend ? 10 : 30;
    cfg.dataset_length = pend ? 14 : 8;
    cfg.query_x0 = Vector(2);
    cfg.query_x0 << 0.7, 0.4;
    cfg.master_seed = seed;
    return cfg;
}

}  // namespace gpad
