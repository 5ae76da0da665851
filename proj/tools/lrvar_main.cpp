// Command-line harness: simulation, estimation, change-point testing,
// quantile tables, and replicated power studies with CSV output.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "lrvar/calibration.hpp"
#include "lrvar/csv.hpp"
#include "lrvar/detection.hpp"
#include "lrvar/estimator.hpp"
#include "lrvar/scenario.hpp"
#include "lrvar/var_model.hpp"

namespace {

using namespace lrvar;

struct CommonOpts {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    int threads = static_cast<int>(std::thread::hardware_concurrency());
};

void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoFailure("cannot create output directory " + dir + ": " + ec.message());
}

ScenarioConfig load_scenario(const CommonOpts& opts) {
    ScenarioConfig sc = opts.config_path.empty()
                            ? ScenarioConfig{}
                            : scenario_from_config(KeyValueConfig::parse_file(opts.config_path));
    if (opts.seed) sc.master_seed = *opts.seed;
    return sc;
}

void write_sidecar(const std::string& path, double seconds, const std::string& detail) {
    std::ofstream f(path);
    f << "elapsed_seconds = " << seconds << "\n" << detail;
}

int cmd_simulate(const CommonOpts& opts) {
    ScenarioConfig sc = load_scenario(opts);
    sc.validate();
    ensure_out_dir(opts.out_dir);
    Rng rng(sc.master_seed);
    const TransitionMatrix base = random_low_rank_transition(sc.p, sc.rank, sc.gamma1, rng);
    const double jump = sc.jump_fro_grid.front();
    ChangeSpec spec = (jump == 0.0) ? ChangeSpec::null_model(base) : [&] {
        auto pair = make_change_pair(base, jump);
        return ChangeSpec(pair.first, pair.second, sc.tau);
    }();
    const NoiseModel noise = NoiseModel::identity(sc.p);
    const Trajectory traj = simulate(spec, noise, sc.horizon, rng);
    const std::string path = opts.out_dir + "/trajectory.csv";
    traj.save_csv(path);
    write_matrix_csv(spec.theta_before.entries(), opts.out_dir + "/theta_before.csv");
    write_matrix_csv(spec.theta_after.entries(), opts.out_dir + "/theta_after.csv");
    std::cout << "wrote " << path << " (p=" << sc.p << ", T=" << sc.horizon << ", jump=" << jump
              << ")\n";
    return 0;
}

int cmd_estimate(const CommonOpts& opts, const std::string& traj_path, int t0, int t1,
                 double lambda, bool diagnostics) {
    const Trajectory traj = Trajectory::load_csv(traj_path);
    if (t1 < 0) t1 = traj.horizon();
    ensure_out_dir(opts.out_dir);
    ScenarioConfig sc = load_scenario(opts);
    const SegmentProblem problem = segment_problem(traj, t0, t1, lambda);
    std::vector<IterationRecord> trace;
    EstimateResult result;
    if (problem.penalty_mode() == PenaltyMode::MatrixNorm)
        result = estimate_long(problem, sc.solver, nullptr, diagnostics ? &trace : nullptr);
    else
        result = estimate_short(problem);
    write_matrix_csv(result.theta_hat, opts.out_dir + "/theta_hat.csv");
    if (diagnostics) {
        std::ofstream f(opts.out_dir + "/diagnostics.csv");
        f << "iter,objective,kkt_residual\n";
        for (const auto& rec : trace)
            f << rec.iteration << ',' << format_double(rec.objective) << ','
              << format_double(rec.kkt_residual) << '\n';
    }
    std::cout << "objective " << result.objective_value << ", kkt " << result.kkt_residual
              << ", iterations " << result.iterations_used
              << (result.converged ? "" : " (not converged)") << "\n";
    return result.converged ? 0 : 2;
}

int cmd_test(const CommonOpts& opts, const std::string& traj_path) {
    const auto start = std::chrono::steady_clock::now();
    const Trajectory traj = Trajectory::load_csv(traj_path);
    ScenarioConfig sc = load_scenario(opts);
    sc.horizon = traj.horizon();
    sc.p = static_cast<int>(traj.dim());
    ensure_out_dir(opts.out_dir);
    const NoiseModel noise = NoiseModel::identity(sc.p);
    const CandidateGrid grid = sc.make_grid();
    const DetectResult det = detect(traj, noise, sc.gamma1, sc.gamma2, grid, sc.calibration(),
                                    sc.solver, sc.master_seed, opts.threads,
                                    sc.warm_start_quantiles);
    {
        std::ofstream f(opts.out_dir + "/decision.csv");
        f << "t,g_stat,q1,q2,reject\n";
        for (std::size_t j = 0; j < det.per_candidate.size(); ++j) {
            const auto& e = det.per_candidate[j];
            f << e.t << ',' << format_double(e.statistic) << ','
              << format_double(det.quantiles_first.quantiles[j]) << ','
              << format_double(det.quantiles_last.quantiles[j]) << ',' << (e.reject ? 1 : 0)
              << '\n';
        }
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_sidecar(opts.out_dir + "/test_meta.txt", seconds,
                  "c1 = " + std::to_string(det.c1) + "\nc2 = " + std::to_string(det.c2) + "\n");
    std::cout << (det.decision ? "change detected" : "no change detected") << " (c1=" << det.c1
              << ", c2=" << det.c2 << ")\n";
    return 0;
}

void write_quantile_csv(const std::string& path, const std::vector<const QuantileTable*>& tables,
                        double alpha) {
    std::ofstream f(path);
    f << "t,source,alpha,S,quantile\n";
    for (const QuantileTable* table : tables)
        for (std::size_t i = 0; i < table->ts.size(); ++i)
            f << table->ts[i] << ',' << to_string(table->source) << ',' << format_double(alpha)
              << ',' << table->sample_count << ',' << format_double(table->quantiles[i]) << '\n';
}

int cmd_quantile(const CommonOpts& opts, const std::string& traj_path) {
    const Trajectory traj = Trajectory::load_csv(traj_path);
    ScenarioConfig sc = load_scenario(opts);
    sc.horizon = traj.horizon();
    sc.p = static_cast<int>(traj.dim());
    ensure_out_dir(opts.out_dir);
    const NoiseModel noise = NoiseModel::identity(sc.p);
    const CandidateGrid grid = sc.make_grid();
    const int window = static_cast<int>(std::floor(sc.h * sc.horizon));

    const CrossValidationResult cv = cross_validate_constants(
        traj, sc.h, sc.delta, sc.constant_grid, sc.solver);
    const LambdaRule rule = LambdaRule::practical(cv.c1, cv.c2, sc.p, sc.horizon);
    const int n_boundary = window - 1;
    const EstimateResult head = estimate(
        segment_problem(traj, 1, window, cv.c1 * std::sqrt(static_cast<double>(sc.p) / n_boundary)),
        sc.solver);
    const EstimateResult tail = estimate(
        segment_problem(traj, sc.horizon - window + 1, sc.horizon,
                        cv.c2 * std::sqrt(static_cast<double>(sc.p) / n_boundary)),
        sc.solver);
    const TransitionMatrix theta1 = adjust_operator_norm(head.theta_hat, sc.gamma1);
    const TransitionMatrix theta2 = adjust_operator_norm(tail.theta_hat, sc.gamma2);
    const Matrix pool1 = traj.samples.topRows(window + 1).transpose();
    const Matrix pool2 = traj.samples.bottomRows(window + 1).transpose();
    const QuantileTable q1 = simulate_quantile_table(
        theta1.entries(), noise, pool1, sc.alpha, grid, sc.horizon, sc.quantile_samples, rule,
        sc.solver, derive_seed(sc.master_seed, 1), QuantileSource::FromFirstSegment, opts.threads);
    const QuantileTable q2 = simulate_quantile_table(
        theta2.entries(), noise, pool2, sc.alpha, grid, sc.horizon, sc.quantile_samples, rule,
        sc.solver, derive_seed(sc.master_seed, 2), QuantileSource::FromLastSegment, opts.threads);
    write_quantile_csv(opts.out_dir + "/quantile_table.csv", {&q1, &q2}, sc.alpha);
    std::cout << "wrote " << opts.out_dir << "/quantile_table.csv\n";
    return 0;
}

int run_power_rows(const std::vector<ScenarioConfig>& scenarios, const CommonOpts& opts,
                   const std::string& csv_name) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<PowerRow> rows;
    for (const auto& sc : scenarios) {
        const auto sub = run_scenario(sc, opts.threads);
        rows.insert(rows.end(), sub.begin(), sub.end());
        std::cout << sc.id << ": ";
        for (const auto& r : sub) std::cout << r.power << " ";
        std::cout << "\n";
    }
    ensure_out_dir(opts.out_dir);
    emit_power_csv(rows, opts.out_dir + "/" + csv_name);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_sidecar(opts.out_dir + "/" + csv_name + ".meta.txt", seconds,
                  "scenarios = " + std::to_string(scenarios.size()) + "\n");
    std::cout << "wrote " << opts.out_dir << "/" << csv_name << "\n";
    return 0;
}

int cmd_power(const CommonOpts& opts, const std::string& preset, int replicates_override,
              int samples_override) {
    std::vector<ScenarioConfig> scenarios;
    if (!preset.empty()) {
        for (auto& sc : preset_figures())
            if (sc.id.rfind(preset, 0) == 0) scenarios.push_back(sc);
        if (scenarios.empty()) throw ConfigInvalid("unknown preset '" + preset + "'");
    } else {
        scenarios.push_back(load_scenario(opts));
    }
    for (auto& sc : scenarios) {
        if (opts.seed) sc.master_seed = *opts.seed;
        if (replicates_override > 0) sc.replicates = replicates_override;
        if (samples_override > 0) sc.quantile_samples = samples_override;
        sc.validate();
    }
    return run_power_rows(scenarios, opts, preset.empty() ? "power.csv" : preset + ".csv");
}

int cmd_figures(const CommonOpts& opts, int replicates_override, int samples_override) {
    const std::vector<std::string> names = {"fig1", "fig2", "fig3", "fig4", "fig5"};
    for (const auto& name : names) {
        std::vector<ScenarioConfig> scenarios;
        for (auto& sc : preset_figures())
            if (sc.id.rfind(name, 0) == 0) scenarios.push_back(sc);
        for (auto& sc : scenarios) {
            if (opts.seed) sc.master_seed = *opts.seed;
            if (replicates_override > 0) sc.replicates = replicates_override;
            if (samples_override > 0) sc.quantile_samples = samples_override;
        }
        const int rc = run_power_rows(scenarios, opts, name + ".csv");
        if (rc != 0) return rc;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"low-rank VAR change-point detection harness"};
    app.require_subcommand(1);

    CommonOpts opts;
    app.add_option("--config", opts.config_path, "key = value configuration file");
    std::uint64_t seed_value = 0;
    bool seed_set = false;
    app.add_option("--seed", seed_value, "master seed override")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--out", opts.out_dir, "output directory");
    app.add_option("--threads", opts.threads, "worker threads");

    auto* sim = app.add_subcommand("simulate", "draw one trajectory and write it as CSV");

    auto* est = app.add_subcommand("estimate", "fit one segment and write the estimate");
    std::string traj_path;
    int t0 = 0, t1 = -1;
    double lambda = 0.1;
    bool diagnostics = false;
    est->add_option("--traj", traj_path, "trajectory CSV")->required();
    est->add_option("--t0", t0, "segment start (observation index)");
    est->add_option("--t1", t1, "segment end (observation index, default T)");
    est->add_option("--lambda", lambda, "regularization weight");
    est->add_flag("--diagnostics", diagnostics, "write per-iteration diagnostics CSV");

    auto* tst = app.add_subcommand("test", "run the detection pipeline on a trajectory file");
    std::string test_traj;
    tst->add_option("--traj", test_traj, "trajectory CSV")->required();

    auto* qnt = app.add_subcommand("quantile", "build Monte Carlo quantile tables");
    std::string qnt_traj;
    qnt->add_option("--traj", qnt_traj, "trajectory CSV")->required();

    auto* pow = app.add_subcommand("power", "replicated power study");
    std::string preset;
    int replicates_override = 0, samples_override = 0;
    pow->add_option("--preset", preset, "figure preset prefix (fig1..fig5)");
    pow->add_option("--replicates", replicates_override, "override replicate count");
    pow->add_option("--samples", samples_override, "override quantile sample count");

    auto* fig = app.add_subcommand("figures", "run all five figure presets");
    int fig_replicates = 0, fig_samples = 0;
    fig->add_option("--replicates", fig_replicates, "override replicate count");
    fig->add_option("--samples", fig_samples, "override quantile sample count");

    try {
        app.parse(argc, argv);
        if (seed_set) opts.seed = seed_value;
        if (opts.threads < 1) opts.threads = 1;
        if (sim->parsed()) return cmd_simulate(opts);
        if (est->parsed()) return cmd_estimate(opts, traj_path, t0, t1, lambda, diagnostics);
        if (tst->parsed()) return cmd_test(opts, test_traj);
        if (qnt->parsed()) return cmd_quantile(opts, qnt_traj);
        if (pow->parsed()) return cmd_power(opts, preset, replicates_override, samples_override);
        if (fig->parsed()) return cmd_figures(opts, fig_replicates, fig_samples);
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
