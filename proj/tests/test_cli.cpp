#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "cli_harness.hpp"
#include "gpad/io.hpp"

using namespace gpad;
using gpad::testing::run_cli;
using gpad::testing::scratch_dir;
namespace fs = std::filesystem;

namespace {

long count_rows(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    long n = 0;
    while (std::getline(in, line)) ++n;
    return n - 1;
}

fs::path simulate_and_train(const fs::path& dir) {
    auto r = run_cli({"simulate", "--system", "pendulum_nominal", "--n", "10", "--len", "14", "--sigma-w", "1e-2",
                      "--sigma-v", "0", "--seed", "7", "--out", (dir / "data").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    r = run_cli({"train", "--data", (dir / "data").string(), "--out", (dir / "model.json").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    return dir / "model.json";
}

}  // namespace

TEST(CliSimulate, WritesFilesAndManifest) {
    const auto dir = scratch_dir("sim");
    const auto r = run_cli({"simulate", "--system", "pendulum_nominal", "--n", "10", "--len", "14", "--sigma-w",
                            "1e-2", "--sigma-v", "0", "--seed", "7", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    for (int i = 0; i < 10; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "traj_%03d.csv", i);
        ASSERT_TRUE(fs::exists(dir / name));
        EXPECT_EQ(count_rows(dir / name), 14);
    }
    const auto m = io::Json::parse(io::read_file(dir / "manifest.json"));
    EXPECT_EQ(m.at("format_version"), 1);
    EXPECT_EQ(m.at("seeds").size(), 10u);
    EXPECT_EQ(m.at("config").at("system"), "pendulum_nominal");
    EXPECT_NE(r.out.find("\"config\""), std::string::npos);
}

TEST(CliSimulate, SameSeedSameBytes) {
    const auto a = scratch_dir("seed_a"), b = scratch_dir("seed_b");
    for (const auto& d : {a, b}) {
        ASSERT_EQ(run_cli({"simulate", "--system", "vdp_anomalous", "--n", "3", "--len", "9", "--sigma-w", "1e-3",
                           "--sigma-v", "1e-3", "--seed", "11", "--out", d.string()})
                      .code,
                  0);
    }
    for (const char* f : {"traj_000.csv", "traj_002.csv"}) EXPECT_EQ(io::read_file(a / f), io::read_file(b / f));
}

TEST(CliSimulate, UnknownSystemListsNames) {
    const auto r = run_cli({"simulate", "--system", "lorenz", "--out", scratch_dir("bad").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("pendulum_nominal"), std::string::npos);
    EXPECT_NE(r.err.find("vdp_nominal"), std::string::npos);
}

TEST(CliSimulate, OutputDirFromEnvironment) {
    const auto dir = scratch_dir("env");
    ::setenv(gpad::cli::kOutputDirEnv, dir.string().c_str(), 1);
    const auto r = run_cli({"simulate", "--system", "pendulum_nominal", "--n", "1", "--len", "3"});
    ::unsetenv(gpad::cli::kOutputDirEnv);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "manifest.json"));
}

TEST(CliTrain, HyperBypassIsEchoed) {
    const auto dir = scratch_dir("hyper");
    ASSERT_EQ(run_cli({"simulate", "--system", "pendulum_nominal", "--n", "3", "--len", "6", "--sigma-w", "1e-2",
                       "--out", dir.string()})
                  .code,
              0);
    const auto r = run_cli({"train", "--data", (dir / "manifest.json").string(), "--hyper", "sf=1.0,l=0.5", "--out",
                            (dir / "m.json").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = io::Json::parse(io::read_file(dir / "m.json"));
    EXPECT_EQ(j.at("hyper").at("sigma_f"), 1.0);
    EXPECT_EQ(j.at("hyper").at("length_scale"), 0.5);
    EXPECT_EQ(j.at("hyper").at("sigma_n_sq"), 0.01);
    EXPECT_EQ(j.at("config").at("hyper"), "sf=1.0,l=0.5");
    EXPECT_EQ(j.at("config").at("hyper_source"), "given");
    EXPECT_NE(r.out.find("\"lml\""), std::string::npos);
    EXPECT_EQ(run_cli({"train", "--data", dir.string(), "--hyper", "sf=1", "--out", (dir / "x.json").string()}).code,
              1);
}

TEST(CliTrain, MissingFileIsError) {
    const auto r = run_cli({"train", "--data", "/nonexistent/manifest.json"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("/nonexistent/manifest.json"), std::string::npos);
}

TEST(CliTrain, BadCsvNamesFileAndLine) {
    const auto dir = scratch_dir("badcsv");
    ASSERT_EQ(run_cli({"simulate", "--system", "pendulum_nominal", "--n", "2", "--len", "4", "--sigma-w", "1e-2",
                       "--out", dir.string()})
                  .code,
              0);
    io::write_file(dir / "traj_001.csv", "t,x1,x2\n0,1,2\n0.3,1,2,3\n");
    const auto r = run_cli({"train", "--data", dir.string(), "--out", (dir / "m.json").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("traj_001.csv:3"), std::string::npos);
}

// Noiseless training data scored against its own GP. In-sample residuals are
// shrunk by the fit, so the p-values sit near 1 but are never 0.
TEST(CliScore, SelfConsistency) {
    const auto dir = scratch_dir("self");
    ASSERT_EQ(run_cli({"simulate", "--system", "pendulum_nominal", "--n", "6", "--len", "14", "--out",
                       (dir / "d").string()})
                  .code,
              0);
    ASSERT_EQ(run_cli({"train", "--data", (dir / "d").string(), "--sigma-w", "1e-4", "--out",
                       (dir / "m.json").string()})
                  .code,
              0);
    for (int i = 0; i < 6; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "traj_%03d.csv", i);
        const auto r = run_cli({"score", "--model", (dir / "m.json").string(), "--traj", (dir / "d" / name).string(),
                                "--sigma-w", "1e-4", "--sigma-v", "1e-4"});
        ASSERT_NE(r.code, 1) << r.err;
        const auto j = io::Json::parse(r.out);
        const double p = j.at("result").at("p_value").get<double>();
        EXPECT_GT(p, 0.0);
        EXPECT_LE(p, 1.0);
    }
}

TEST(CliScore, ZeroResidualExitsNominal) {
    const auto dir = scratch_dir("zero");
    io::write_file(dir / "flat.csv", "t,x1,x2\n0,0,0\n0.3,0,0\n0.6,0,0\n");
    io::write_file(dir / "far.csv", "t,x1,x2\n0,5,5\n0.3,5,5\n0.6,5,5\n");
    Matrix x(2, 2), y(2, 2);
    x << 5, 5, 5.1, 5.1;
    y << 3, 3, 3, 3;
    io::save_model(dir / "m.json", GpModel(RegressionData{x, y}, {1, 0.1, 0.01}));
    // Far from the training inputs the GP predicts zero increment, so a constant
    // trajectory has zero residual.
    auto r = run_cli({"score", "--model", (dir / "m.json").string(), "--traj", (dir / "flat.csv").string(),
                      "--sigma-w", "1e-3", "--sigma-v", "1e-3"});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(io::Json::parse(r.out).at("result").at("p_value"), 1.0);
    r = run_cli({"score", "--model", (dir / "m.json").string(), "--traj", (dir / "far.csv").string(), "--sigma-w",
                 "1e-3", "--sigma-v", "1e-3"});
    EXPECT_EQ(r.code, 2) << r.err;
    EXPECT_EQ(io::Json::parse(r.out).at("result").at("verdict"), "anomalous");
}

TEST(CliScore, StepsOutOfBounds) {
    const auto dir = scratch_dir("steps");
    io::write_file(dir / "t.csv", "t,x1\n0,0\n0.3,0.1\n0.6,0.2\n");
    io::save_model(dir / "m.json", GpModel(RegressionData{Matrix(0, 1), Matrix(0, 1)}, {1, 1, 0}));
    const auto r = run_cli({"score", "--model", (dir / "m.json").string(), "--traj", (dir / "t.csv").string(),
                            "--sigma-w", "1e-2", "--sigma-v", "0", "--steps", "5"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("requested 5 steps"), std::string::npos);
}

TEST(CliScore, DimensionMismatchAndMissingNoise) {
    const auto dir = scratch_dir("dim");
    io::write_file(dir / "t.csv", "t,x1\n0,0\n0.3,0.1\n0.6,0.2\n");
    io::save_model(dir / "m.json", GpModel(RegressionData{Matrix(0, 2), Matrix(0, 2)}, {1, 1, 0}));
    auto r = run_cli({"score", "--model", (dir / "m.json").string(), "--traj", (dir / "t.csv").string(), "--sigma-w",
                      "1e-2", "--sigma-v", "0"});
    EXPECT_EQ(r.code, 1);
    r = run_cli({"score", "--model", (dir / "m.json").string(), "--traj", (dir / "t.csv").string()});
    EXPECT_EQ(r.code, 1);
}

TEST(CliScore, ConfigSidecarAndOutputs) {
    const auto dir = scratch_dir("sidecar");
    const auto model = simulate_and_train(dir);
    ASSERT_EQ(run_cli({"simulate", "--system", "pendulum_anomalous", "--n", "1", "--len", "21", "--sigma-w", "4e-4",
                       "--sigma-v", "4e-4", "--x0", "0.7,0.4", "--seed", "3", "--out", (dir / "q").string()})
                  .code,
              0);
    const auto r = run_cli({"score", "--model", model.string(), "--traj", (dir / "q" / "traj_000.csv").string(),
                            "--config", (dir / "q" / "manifest.json").string(), "--steps", "10", "--p-thr", "0.2",
                            "--out", (dir / "rec.json").string(), "--report", (dir / "rep.json").string()});
    ASSERT_NE(r.code, 1) << r.err;
    const auto rec = io::Json::parse(io::read_file(dir / "rec.json"));
    EXPECT_EQ(rec.at("result").at("dof"), 20);
    EXPECT_EQ(rec.at("result").at("steps_used"), 10);
    EXPECT_EQ(rec.at("config").at("p_thr"), 0.2);
    const auto rep = io::Json::parse(io::read_file(dir / "rep.json"));
    EXPECT_EQ(rep.at("sigma_t").at("rows"), 20);
}

TEST(CliExperiment, WritesReportFiles) {
    const auto dir = scratch_dir("exp");
    const auto r = run_cli({"experiment", "--benchmark", "pendulum", "--seed", "1", "--datasets", "6", "--hyperopt",
                            "2", "--trajectories", "10", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"roc_10.csv", "roc_20.csv", "diagnostics_10.csv", "diagnostics_20.csv", "summary.json"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    const std::string roc = io::read_file(dir / "roc_10.csv");
    EXPECT_EQ(roc.substr(0, roc.find('\n')), "p_thr,detection_rate,n_scores");
    EXPECT_EQ(count_rows(dir / "roc_10.csv"), 101);
    const std::string diag = io::read_file(dir / "diagnostics_20.csv");
    EXPECT_EQ(diag.substr(0, diag.find('\n')), "step,sigma_noise_sq,sigma_gp_sq,eps_f_sq");
    EXPECT_EQ(count_rows(dir / "diagnostics_20.csv"), 20);
    const auto s = io::Json::parse(io::read_file(dir / "summary.json"));
    EXPECT_EQ(s.at("format_version"), 1);
    EXPECT_EQ(s.at("config").at("n_datasets"), 6);
}

TEST(CliExperiment, PaperScaleCountsAndCustomConfig) {
    const auto dir = scratch_dir("custom");
    io::write_file(dir / "cfg.json", R"({"format_version": 1, "benchmark": "vdp", "n_datasets": 4,
        "n_hyperopt_gps": 2, "n_query_trajectories": 5, "steps_to_analyze": [5],
        "query_noise": {"sigma_w": 1e-3, "sigma_v": 1e-3}, "averaging": "arithmetic"})");
    auto r = run_cli({"experiment", "--config", (dir / "cfg.json").string(), "--paper-scale", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto s = io::Json::parse(io::read_file(dir / "summary.json"));
    EXPECT_EQ(s.at("config").at("n_datasets"), 4);
    EXPECT_EQ(s.at("config").at("nominal_system"), "vdp_nominal");
    EXPECT_EQ(s.at("config").at("averaging"), "arithmetic");
    EXPECT_TRUE(fs::exists(dir / "roc_5.csv"));

    r = run_cli({"experiment", "--benchmark", "vdp", "--paper-scale", "--dry-run"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto cfg = io::Json::parse(r.out).at("config");
    EXPECT_EQ(cfg.at("n_datasets"), 500);
    EXPECT_EQ(cfg.at("n_hyperopt_gps"), 20);
    EXPECT_EQ(cfg.at("n_query_trajectories"), 800);
    EXPECT_EQ(cfg.at("dataset_trajectories"), 30);

    io::write_file(dir / "v2.json", R"({"format_version": 2})");
    r = run_cli({"experiment", "--config", (dir / "v2.json").string(), "--out", dir.string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("format_version"), std::string::npos);
}

TEST(CliExperiment, RerunIsByteIdentical) {
    const auto a = scratch_dir("rerun_a"), b = scratch_dir("rerun_b");
    for (const auto& d : {a, b}) {
        ASSERT_EQ(run_cli({"experiment", "--benchmark", "vdp", "--seed", "5", "--datasets", "4", "--hyperopt", "2",
                           "--trajectories", "6", "--out", d.string()})
                      .code,
                  0);
    }
    for (const char* f : {"roc_10.csv", "roc_20.csv", "diagnostics_10.csv", "diagnostics_20.csv"}) {
        EXPECT_EQ(io::read_file(a / f), io::read_file(b / f)) << f;
    }
}

TEST(CliParse, UsageErrors) {
    EXPECT_EQ(run_cli({}).code, 1);
    EXPECT_EQ(run_cli({"frobnicate"}).code, 1);
    EXPECT_EQ(run_cli({"score", "--model", "m.json"}).code, 1);
    EXPECT_EQ(run_cli({"--help"}).code, 0);
}
