// Train a GP on nominal pendulum data, then score one nominal and one
// phase-shifted trajectory from the same initial state.
#include <cstdio>

#include "gpad/detector.hpp"
#include "gpad/experiment.hpp"
#include "gpad/gp.hpp"
#include "gpad/simulator.hpp"

int main() {
    using namespace gpad;

    const NoiseSpec train_noise = NoiseSpec::isotropic(2, 1e-2, 0.0);
    const NoiseSpec query_noise = NoiseSpec::isotropic(2, 4e-4, 4e-4);
    const SystemSpec nominal = benchmark_system(Benchmark::pendulum_nominal, train_noise);

    Rng rng(derive_seed(42, seed_stream::dataset, 0));
    const Dataset data = generate_dataset(nominal, 10, 14, {{-2.0, 2.0}, {-2.0, 2.0}}, rng);
    const RegressionData reg = build_regression_data(data);
    const KernelHyperparams hyper = optimize_hyperparams(reg, sigma_n_sq_from(train_noise));
    const GpModel model(reg, hyper);
    std::printf("sigma_f=%.4g length_scale=%.4g lml=%.6g\n", hyper.sigma_f, hyper.length_scale,
                log_marginal_likelihood(reg, hyper));

    Vector x0(2);
    x0 << 0.7, 0.4;
    for (Benchmark b : {Benchmark::pendulum_nominal, Benchmark::pendulum_anomalous}) {
        Rng qrng(derive_seed(42, seed_stream::query, 0));
        const auto sim = simulate_trajectory(benchmark_system(b, query_noise), x0, 11, qrng);
        const DetectionResult r = score_trajectory(model, sim.observed, query_noise, kDefaultPThreshold);
        std::printf("%-20s p=%.4g  %s\n", std::string(to_string(b)).c_str(), r.p_value,
                    std::string(to_string(r.verdict)).c_str());
    }
    return 0;
}
