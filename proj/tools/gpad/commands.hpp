#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace gpad::cli {

/// Exit statuses shared by every command.
enum ExitCode : int { kOk = 0, kError = 1, kAnomalous = 2 };

/// Environment variable naming the default output directory.
inline constexpr const char* kOutputDirEnv = "GPAD_OUTPUT_DIR";

struct SimulateOptions {
    std::string system;
    long n = 10;
    long length = 14;
    std::string sigma_w = "0";
    std::string sigma_v = "0";
    std::uint64_t seed = 0;
    std::optional<std::vector<double>> x0;
    std::vector<double> box{-2.0, 2.0};
    int substeps = 10;
    std::string out;
};

struct TrainOptions {
    std::vector<std::string> data;  // trajectory-set manifests or directories holding one
    std::string out = "model.json";
    std::optional<std::string> hyper;  // "sf=<v>,l=<v>" skips optimization
    std::optional<std::string> sigma_w;
    std::uint64_t seed = 0;
    int starts = 8;
    int iterations = 200;
    double tolerance = 1e-6;
};

struct ScoreOptions {
    std::string model;
    std::string trajectory;
    std::optional<std::string> config;  // sidecar with dt and noise
    std::optional<std::string> sigma_w;
    std::optional<std::string> sigma_v;
    std::optional<double> dt;
    double p_thr = 0.05;
    std::optional<long> steps;
    std::optional<std::string> out;
    std::optional<std::string> report;
};

struct ExperimentOptions {
    std::optional<std::string> benchmark;  // pendulum | vdp
    std::optional<std::string> config;     // custom configuration file
    std::uint64_t seed = 1;
    bool paper_scale = false;
    bool null_query = false;
    std::optional<long> datasets;
    std::optional<long> hyperopt;
    std::optional<long> trajectories;
    std::string average = "geometric";
    unsigned threads = 0;
    bool save_p_values = false;
    bool dry_run = false;  // print the resolved configuration and stop
    std::string out;
};

int cmd_simulate(const SimulateOptions& opts, std::ostream& out);
int cmd_train(const TrainOptions& opts, std::ostream& out);
int cmd_score(const ScoreOptions& opts, std::ostream& out);
int cmd_experiment(const ExperimentOptions& opts, std::ostream& out);

/// Full command-line entry point. Errors are reported on `err` and map to kError.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace gpad::cli
