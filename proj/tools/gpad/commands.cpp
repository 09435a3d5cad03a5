#include "commands.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "gpad/core_types.hpp"
#include "gpad/detector.hpp"
#include "gpad/experiment.hpp"
#include "gpad/gp.hpp"
#include "gpad/io.hpp"
#include "gpad/simulator.hpp"

namespace gpad::cli {

namespace fs = std::filesystem;
using io::Json;

namespace {

std::string resolve_out_dir(const std::string& requested) {
    if (!requested.empty()) return requested;
    if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') return env;
    return ".";
}

Json hyper_to_json(const KernelHyperparams& h) {
    return Json{{"sigma_f", io::round9(h.sigma_f)},
                {"length_scale", io::round9(h.length_scale)},
                {"sigma_n_sq", io::round9(h.sigma_n_sq)}};
}

/// "sf=<v>,l=<v>" with either key order.
std::pair<double, double> parse_hyper(const std::string& text) {
    std::optional<double> sf, l;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw DomainError("--hyper: expected key=value, got '" + item + "'");
        const std::string key = item.substr(0, eq);
        double value = 0.0;
        try {
            value = std::stod(item.substr(eq + 1));
        } catch (const std::exception&) {
            throw DomainError("--hyper: bad number in '" + item + "'");
        }
        if (key == "sf" || key == "sigma_f") {
            sf = value;
        } else if (key == "l" || key == "length_scale") {
            l = value;
        } else {
            throw DomainError("--hyper: unknown key '" + key + "' (use sf and l)");
        }
    }
    if (!sf || !l) throw DomainError("--hyper: both sf and l are required");
    return {*sf, *l};
}

fs::path manifest_path(const std::string& p) {
    fs::path path(p);
    if (fs::is_directory(path)) path /= "manifest.json";
    return path;
}

Json covariance_json(const Json& j, long n_x) {
    if (j.is_number()) return io::matrix_to_json(j.get<double>() * Matrix::Identity(n_x, n_x));
    return j;
}

NoiseSpec noise_from_config(const Json& j, long n_x, const std::string& what) {
    return io::noise_from_json(
        Json{{"sigma_w", covariance_json(j.at("sigma_w"), n_x)}, {"sigma_v", covariance_json(j.at("sigma_v"), n_x)}},
        what);
}

Json experiment_config_to_json(const ExperimentConfig& cfg) {
    Json box = Json::array();
    for (const auto& iv : cfg.dataset_box) box.push_back({iv.lower, iv.upper});
    Json x0 = Json::array();
    for (long i = 0; i < cfg.query_x0.size(); ++i) x0.push_back(cfg.query_x0(i));
    return Json{{"format_version", io::kFormatVersion},
                {"nominal_system", cfg.nominal_system.name},
                {"query_system", cfg.query_system.name},
                {"dt", cfg.nominal_system.dt},
                {"substeps", cfg.nominal_system.substeps},
                {"dataset_noise", io::noise_to_json(cfg.nominal_system.noise)},
                {"query_noise", io::noise_to_json(cfg.query_system.noise)},
                {"n_datasets", cfg.n_datasets},
                {"n_hyperopt_gps", cfg.n_hyperopt_gps},
                {"n_query_trajectories", cfg.n_query_trajectories},
                {"dataset_trajectories", cfg.dataset_trajectories},
                {"dataset_length", cfg.dataset_length},
                {"dataset_box", box},
                {"query_x0", x0},
                {"query_length", cfg.query_length()},
                {"steps_to_analyze", cfg.steps_to_analyze},
                {"n_thresholds", cfg.thresholds.size()},
                {"seed", cfg.master_seed},
                {"averaging", cfg.averaging == Averaging::geometric ? "geometric" : "arithmetic"},
                {"optimizer",
                 {{"n_starts", cfg.optimizer.n_starts},
                  {"max_iterations", cfg.optimizer.max_iterations},
                  {"tolerance", cfg.optimizer.tolerance}}},
                {"max_exclusion_fraction", cfg.max_exclusion_fraction}};
}

/// Applies the fields present in a custom configuration document on top of cfg.
void apply_custom_config(ExperimentConfig& cfg, const Json& j, const std::string& source) {
    const long n_x = cfg.nominal_system.dim();
    if (j.contains("nominal_system")) {
        cfg.nominal_system = benchmark_system(parse_benchmark(j.at("nominal_system").get<std::string>()),
                                              cfg.nominal_system.noise);
    }
    if (j.contains("query_system")) {
        cfg.query_system =
            benchmark_system(parse_benchmark(j.at("query_system").get<std::string>()), cfg.query_system.noise);
    }
    if (j.contains("dataset_noise")) {
        cfg.nominal_system.noise = noise_from_config(j.at("dataset_noise"), n_x, source + ".dataset_noise");
    }
    if (j.contains("query_noise")) {
        cfg.query_system.noise = noise_from_config(j.at("query_noise"), n_x, source + ".query_noise");
    }
    auto get_long = [&](const char* key, long& field) {
        if (j.contains(key)) field = j.at(key).get<long>();
    };
    get_long("n_datasets", cfg.n_datasets);
    get_long("n_hyperopt_gps", cfg.n_hyperopt_gps);
    get_long("n_query_trajectories", cfg.n_query_trajectories);
    get_long("dataset_trajectories", cfg.dataset_trajectories);
    get_long("dataset_length", cfg.dataset_length);
    if (j.contains("dataset_box")) {
        cfg.dataset_box.clear();
        for (const auto& iv : j.at("dataset_box")) cfg.dataset_box.push_back({iv.at(0).get<double>(), iv.at(1).get<double>()});
    }
    if (j.contains("query_x0")) {
        const auto v = j.at("query_x0").get<std::vector<double>>();
        cfg.query_x0 = Eigen::Map<const Vector>(v.data(), static_cast<long>(v.size()));
    }
    if (j.contains("steps_to_analyze")) cfg.steps_to_analyze = j.at("steps_to_analyze").get<std::vector<long>>();
    if (j.contains("thresholds")) cfg.thresholds = j.at("thresholds").get<std::vector<double>>();
    if (j.contains("seed")) cfg.master_seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("averaging")) {
        const auto a = j.at("averaging").get<std::string>();
        if (a != "geometric" && a != "arithmetic") throw DomainError(source + ": averaging must be geometric or arithmetic");
        cfg.averaging = a == "geometric" ? Averaging::geometric : Averaging::arithmetic;
    }
}

std::string roc_csv(const StepResult& r) {
    std::string s = "p_thr,detection_rate,n_scores\n";
    for (const auto& p : r.roc) s += io::fmt9(p.p_thr) + "," + io::fmt9(p.detection_rate) + "," + std::to_string(r.n_scores) + "\n";
    return s;
}

std::string diagnostics_csv(const StepResult& r) {
    std::string s = "step,sigma_noise_sq,sigma_gp_sq,eps_f_sq\n";
    for (const auto& d : r.diagnostics) {
        s += std::to_string(d.step) + "," + io::fmt9(d.sigma_noise_sq) + "," + io::fmt9(d.sigma_gp_sq) + "," +
             io::fmt9(d.eps_f_sq) + "\n";
    }
    return s;
}

std::string p_values_csv(const StepResult& r) {
    std::string s = "gp,trajectory,p_value\n";
    for (long i = 0; i < r.p_values.rows(); ++i) {
        for (long j = 0; j < r.p_values.cols(); ++j) {
            if (std::isnan(r.p_values(i, j))) continue;
            s += std::to_string(i) + "," + std::to_string(j) + "," + io::fmt9(r.p_values(i, j)) + "\n";
        }
    }
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_simulate(const SimulateOptions& opts, std::ostream& out) {
    const Benchmark which = parse_benchmark(opts.system);
    constexpr long n_x = 2;
    if (opts.n < 1) throw DomainError("simulate: --n must be at least 1");
    if (opts.length < 2) throw DomainError("simulate: --len must be at least 2");
    if (opts.box.size() != 2) throw DomainError("simulate: --box takes exactly two values (lower, upper)");
    const NoiseSpec noise(io::parse_covariance_arg(opts.sigma_w, n_x), io::parse_covariance_arg(opts.sigma_v, n_x));
    SystemSpec sys = benchmark_system(which, noise);
    sys.substeps = opts.substeps;

    std::optional<Vector> fixed_x0;
    if (opts.x0) {
        if (static_cast<long>(opts.x0->size()) != n_x) throw DimensionMismatch("simulate: --x0 needs 2 values");
        fixed_x0 = Eigen::Map<const Vector>(opts.x0->data(), n_x);
    }
    const std::vector<Interval> box(n_x, Interval{opts.box[0], opts.box[1]});

    const fs::path dir = resolve_out_dir(opts.out);
    fs::create_directories(dir);

    Json files = Json::array();
    Json seeds = Json::array();
    for (long i = 0; i < opts.n; ++i) {
        const std::uint64_t seed = derive_seed(opts.seed, 0, static_cast<std::uint64_t>(i));
        Rng rng(seed);
        const Vector x0 = fixed_x0 ? *fixed_x0 : sample_initial_condition(box, rng);
        const auto sim = simulate_trajectory(sys, x0, opts.length, rng);
        char name[32];
        std::snprintf(name, sizeof name, "traj_%03ld.csv", i);
        io::write_file(dir / name, io::trajectory_to_csv(sim.observed));
        files.push_back(name);
        seeds.push_back(seed);
    }

    Json config{{"system", opts.system},
                {"n", opts.n},
                {"len", opts.length},
                {"sigma_w", opts.sigma_w},
                {"sigma_v", opts.sigma_v},
                {"seed", opts.seed},
                {"x0", opts.x0 ? Json(*opts.x0) : Json("uniform")},
                {"box", opts.box},
                {"substeps", opts.substeps},
                {"out", dir.string()}};
    Json manifest{{"format_version", io::kFormatVersion},
                  {"kind", "trajectory_set"},
                  {"dt", sys.dt},
                  {"noise", io::noise_to_json(noise)},
                  {"files", files},
                  {"seeds", seeds},
                  {"config", config}};
    io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");

    out << Json{{"command", "simulate"}, {"config", config}, {"written", files.size()}}.dump(2) << "\n";
    return kOk;
}

int cmd_train(const TrainOptions& opts, std::ostream& out) {
    if (opts.data.empty()) throw DomainError("train: no --data given");
    std::vector<Trajectory> trajs;
    std::optional<NoiseSpec> noise;
    std::optional<double> dt;
    for (const auto& d : opts.data) {
        const fs::path mpath = manifest_path(d);
        const auto side = io::read_sidecar(mpath);
        if (dt && *dt != side.dt) throw InvalidDataset("train: data sets have different sampling intervals");
        dt = side.dt;
        if (!noise) noise = side.noise;
        for (const auto& f : side.files) trajs.push_back(io::read_trajectory(mpath.parent_path() / f, side.dt));
    }
    if (opts.sigma_w) {
        const long n_x = trajs.empty() ? noise->dim() : trajs.front().dim();
        noise = NoiseSpec(io::parse_covariance_arg(*opts.sigma_w, n_x), noise->sigma_v());
    }
    const Dataset dataset(std::move(trajs), *noise);
    const RegressionData reg = build_regression_data(dataset);
    const double sigma_n_sq = sigma_n_sq_from(dataset.noise());

    KernelHyperparams hyper;
    std::string source;
    if (opts.hyper) {
        const auto [sf, l] = parse_hyper(*opts.hyper);
        hyper = KernelHyperparams{sf, l, sigma_n_sq};
        source = "given";
    } else {
        OptimizerOptions o;
        o.n_starts = opts.starts;
        o.max_iterations = opts.iterations;
        o.tolerance = opts.tolerance;
        o.seed = opts.seed;
        hyper = optimize_hyperparams(reg, sigma_n_sq, o);
        source = "optimized";
    }
    const GpModel model(reg, hyper);

    Json config{{"data", opts.data},
                {"out", opts.out},
                {"hyper", opts.hyper ? Json(*opts.hyper) : Json(nullptr)},
                {"hyper_source", source},
                {"sigma_w", opts.sigma_w ? Json(*opts.sigma_w) : Json("from data")},
                {"seed", opts.seed},
                {"starts", opts.starts},
                {"iterations", opts.iterations},
                {"tolerance", opts.tolerance}};
    io::save_model(opts.out, model, config);

    const double lml = log_marginal_likelihood(reg, hyper);
    out << Json{{"command", "train"},
                {"config", config},
                {"transitions", reg.rows()},
                {"hyper", hyper_to_json(hyper)},
                {"jitter", io::round9(model.jitter())},
                {"lml", io::round9(lml)}}
               .dump(2)
        << "\n";
    return kOk;
}

int cmd_score(const ScoreOptions& opts, std::ostream& out) {
    const GpModel model = io::load_model(opts.model);
    const long n_x = model.dim();

    std::optional<io::Sidecar> side;
    if (opts.config) side = io::read_sidecar(*opts.config);
    std::optional<double> dt = opts.dt;
    if (!dt && side) dt = side->dt;
    const Trajectory traj = io::read_trajectory(opts.trajectory, dt);
    require_same_dim(traj.dim(), n_x, "score: trajectory vs model");

    if (!side && (!opts.sigma_w || !opts.sigma_v)) {
        throw DomainError("score: give the query noise with --sigma-w and --sigma-v, or a --config sidecar");
    }
    const Matrix sw = opts.sigma_w ? io::parse_covariance_arg(*opts.sigma_w, n_x) : side->noise.sigma_w();
    const Matrix sv = opts.sigma_v ? io::parse_covariance_arg(*opts.sigma_v, n_x) : side->noise.sigma_v();
    const NoiseSpec noise(sw, sv);

    const DetectionResult res = score_trajectory(model, traj, noise, opts.p_thr, opts.steps);
    const Json record = io::detection_to_json(res);

    Json config{{"model", opts.model},
                {"trajectory", opts.trajectory},
                {"config", opts.config ? Json(*opts.config) : Json(nullptr)},
                {"dt", io::round9(traj.dt())},
                {"noise", io::noise_to_json(noise)},
                {"p_thr", io::round9(opts.p_thr)},
                {"steps", opts.steps ? Json(*opts.steps) : Json("all")}};
    if (opts.out) io::write_file(*opts.out, Json{{"config", config}, {"result", record}}.dump(2) + "\n");
    if (opts.report) io::write_file(*opts.report, io::residual_report_to_json(res.report).dump(2) + "\n");

    out << Json{{"command", "score"}, {"config", config}, {"result", record}}.dump(2) << "\n";
    return res.verdict == Verdict::anomalous ? kAnomalous : kOk;
}

int cmd_experiment(const ExperimentOptions& opts, std::ostream& out) {
    std::optional<Json> custom;
    std::string source;
    if (opts.config) {
        source = *opts.config;
        try {
            custom = Json::parse(io::read_file(*opts.config));
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(source + ": " + e.what());
        }
        io::check_version(*custom, source);
    }
    std::string bench = opts.benchmark.value_or("");
    if (bench.empty() && custom && custom->contains("benchmark")) bench = custom->at("benchmark").get<std::string>();
    if (bench.empty()) bench = "pendulum";
    if (bench != "pendulum" && bench != "vdp") {
        throw DomainError("experiment: unknown benchmark '" + bench + "'; valid names: pendulum, vdp");
    }
    const BenchmarkStudy study = bench == "pendulum" ? BenchmarkStudy::pendulum : BenchmarkStudy::vdp;

    ExperimentConfig cfg = benchmark_config(study, opts.paper_scale ? kPaperScale : kDeskScale, opts.seed,
                                            !opts.null_query);
    if (custom) {
        try {
            apply_custom_config(cfg, *custom, source);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(source + ": " + e.what());
        }
    }
    if (opts.datasets) cfg.n_datasets = *opts.datasets;
    if (opts.hyperopt) cfg.n_hyperopt_gps = *opts.hyperopt;
    if (opts.trajectories) cfg.n_query_trajectories = *opts.trajectories;
    if (opts.average != "geometric" && opts.average != "arithmetic") {
        throw DomainError("experiment: --average must be geometric or arithmetic");
    }
    if (!custom || !custom->contains("averaging")) {
        cfg.averaging = opts.average == "geometric" ? Averaging::geometric : Averaging::arithmetic;
    }
    cfg.threads = opts.threads;
    cfg.validate();

    const fs::path dir = resolve_out_dir(opts.out);
    Json config = experiment_config_to_json(cfg);
    config["benchmark"] = bench;
    config["paper_scale"] = opts.paper_scale;
    config["out"] = dir.string();
    if (opts.dry_run) {
        out << Json{{"command", "experiment"}, {"config", config}}.dump(2) << "\n";
        return kOk;
    }

    const ExperimentReport rep = run_experiment(cfg);
    fs::create_directories(dir);

    Json per_steps = Json::array();
    for (const auto& r : rep.per_steps) {
        const std::string tag = std::to_string(r.steps);
        io::write_file(dir / ("roc_" + tag + ".csv"), roc_csv(r));
        io::write_file(dir / ("diagnostics_" + tag + ".csv"), diagnostics_csv(r));
        if (opts.save_p_values) io::write_file(dir / ("p_values_" + tag + ".csv"), p_values_csv(r));
        Json rates = Json::object();
        for (double t : {0.05, 0.1, 0.2, 0.5}) rates[io::fmt9(t)] = io::round9(r.rate_at(t));
        per_steps.push_back({{"steps", r.steps}, {"n_scores", r.n_scores}, {"detection_rate", rates}});
    }
    Json optimized = Json::array();
    for (const auto& h : rep.optimized_hyperparams) optimized.push_back(hyper_to_json(h));

    const Json summary{{"format_version", io::kFormatVersion},
                       {"kind", "experiment_summary"},
                       {"config", config},
                       {"averaged_hyperparams", hyper_to_json(rep.averaged_hyperparams)},
                       {"optimized_hyperparams", optimized},
                       {"attempted_scores", rep.attempted_scores},
                       {"excluded_scores", rep.excluded_scores},
                       {"failed_fits", rep.failed_fits},
                       {"results", per_steps}};
    io::write_file(dir / "summary.json", summary.dump(2) + "\n");
    out << summary.dump(2) << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Gaussian-process anomaly detection for sampled dynamical systems"};
    app.require_subcommand(1);

    SimulateOptions sim;
    auto* s = app.add_subcommand("simulate", "simulate benchmark trajectories");
    std::string names;
    for (auto n : kBenchmarkNames) names += (names.empty() ? "" : ", ") + std::string(n);
    s->add_option("--system", sim.system, "one of: " + names)->required();
    s->add_option("--n", sim.n, "number of trajectories")->capture_default_str();
    s->add_option("--len", sim.length, "states per trajectory")->capture_default_str();
    s->add_option("--sigma-w", sim.sigma_w, "process noise: s (s*I) or matrix file")->capture_default_str();
    s->add_option("--sigma-v", sim.sigma_v, "observation noise: s (s*I) or matrix file")->capture_default_str();
    s->add_option("--seed", sim.seed)->capture_default_str();
    std::vector<double> x0;
    auto* x0_opt = s->add_option("--x0", x0, "fixed initial state (default: uniform in --box)")->delimiter(',');
    s->add_option("--box", sim.box, "initial-state interval per dimension")->delimiter(',')->capture_default_str();
    s->add_option("--substeps", sim.substeps, "RK4 substeps per sampling interval")->capture_default_str();
    s->add_option("--out", sim.out, std::string("output directory (default: $") + kOutputDirEnv + " or .)");

    TrainOptions train;
    auto* t = app.add_subcommand("train", "fit a GP model to simulated or recorded trajectories");
    t->add_option("--data", train.data, "trajectory-set manifest or its directory")->required();
    t->add_option("--out", train.out, "model file")->capture_default_str();
    std::string hyper;
    auto* hyper_opt = t->add_option("--hyper", hyper, "skip optimization: sf=<sigma_f>,l=<length_scale>");
    std::string train_sw;
    auto* train_sw_opt = t->add_option("--sigma-w", train_sw, "override the dataset process noise");
    t->add_option("--seed", train.seed, "multistart seed")->capture_default_str();
    t->add_option("--starts", train.starts)->capture_default_str();
    t->add_option("--iterations", train.iterations)->capture_default_str();
    t->add_option("--tolerance", train.tolerance)->capture_default_str();

    ScoreOptions score;
    auto* c = app.add_subcommand("score", "score a trajectory against a trained model");
    c->add_option("--model", score.model)->required();
    c->add_option("--traj", score.trajectory, "trajectory CSV")->required();
    std::string score_cfg, score_sw, score_sv, score_out, score_report;
    double score_dt = 0.0;
    long score_steps = 0;
    auto* cfg_opt = c->add_option("--config", score_cfg, "sidecar with dt and noise (e.g. a manifest)");
    auto* sw_opt = c->add_option("--sigma-w", score_sw, "query process noise: s or matrix file");
    auto* sv_opt = c->add_option("--sigma-v", score_sv, "query observation noise: s or matrix file");
    auto* dt_opt = c->add_option("--dt", score_dt, "sampling interval (default: sidecar or t column)");
    c->add_option("--p-thr", score.p_thr, "p-value threshold")->capture_default_str();
    auto* steps_opt = c->add_option("--steps", score_steps, "analyze only the first k transitions");
    auto* out_opt = c->add_option("--out", score_out, "write the detection record here");
    auto* rep_opt = c->add_option("--report", score_report, "write the full residual report here");

    ExperimentOptions exp;
    auto* e = app.add_subcommand("experiment", "Monte Carlo detection experiment on a benchmark");
    std::string bench;
    auto* bench_opt = e->add_option("--benchmark", bench, "pendulum | vdp");
    std::string exp_cfg;
    auto* exp_cfg_opt = e->add_option("--config", exp_cfg, "custom experiment configuration file");
    e->add_option("--seed", exp.seed)->capture_default_str();
    e->add_flag("--paper-scale", exp.paper_scale, "500 datasets, 20 hyperopt GPs, 800 trajectories");
    e->add_flag("--null", exp.null_query, "query trajectories from the nominal system");
    long datasets = 0, hyperopt = 0, trajectories = 0;
    auto* ds_opt = e->add_option("--datasets", datasets);
    auto* ho_opt = e->add_option("--hyperopt", hyperopt);
    auto* tr_opt = e->add_option("--trajectories", trajectories);
    e->add_option("--average", exp.average, "geometric | arithmetic")->capture_default_str();
    e->add_option("--threads", exp.threads, "worker threads (0 = all cores)")->capture_default_str();
    e->add_flag("--save-p-values", exp.save_p_values, "also write p_values_<steps>.csv");
    e->add_flag("--dry-run", exp.dry_run, "print the resolved configuration without running");
    e->add_option("--out", exp.out, std::string("output directory (default: $") + kOutputDirEnv + " or .)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& pe) {
        const int code = app.exit(pe, out, err);
        return code == 0 ? kOk : kError;
    }

    try {
        if (*s) {
            if (*x0_opt) sim.x0 = x0;
            return cmd_simulate(sim, out);
        }
        if (*t) {
            if (*hyper_opt) train.hyper = hyper;
            if (*train_sw_opt) train.sigma_w = train_sw;
            return cmd_train(train, out);
        }
        if (*c) {
            if (*cfg_opt) score.config = score_cfg;
            if (*sw_opt) score.sigma_w = score_sw;
            if (*sv_opt) score.sigma_v = score_sv;
            if (*dt_opt) score.dt = score_dt;
            if (*steps_opt) score.steps = score_steps;
            if (*out_opt) score.out = score_out;
            if (*rep_opt) score.report = score_report;
            return cmd_score(score, out);
        }
        if (*e) {
            if (*bench_opt) exp.benchmark = bench;
            if (*exp_cfg_opt) exp.config = exp_cfg;
            if (*ds_opt) exp.datasets = datasets;
            if (*ho_opt) exp.hyperopt = hyperopt;
            if (*tr_opt) exp.trajectories = trajectories;
            return cmd_experiment(exp, out);
        }
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kError;
    }
    return kError;
}

}  // namespace gpad::cli
