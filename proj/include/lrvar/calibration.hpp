#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lrvar/common.hpp"
#include "lrvar/detection.hpp"
#include "lrvar/estimator.hpp"
#include "lrvar/parallel.hpp"
#include "lrvar/rng.hpp"
#include "lrvar/var_model.hpp"

namespace lrvar {

struct CalibrationConfig {
    double h = 0.125;                  // boundary fraction; stationarity is assumed on [0,Th] and [T-Th,T]
    double delta = 0.8;                // share of the boundary window used for fitting
    std::vector<double> constant_grid; // candidate regularization constants, ascending
    int quantile_samples = 1500;
    double alpha = 0.05;

    void validate(int horizon, int p) const {
        if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigInvalid("alpha must lie in (0,1)");
        if (!(delta > 0.0 && delta < 1.0)) throw ConfigInvalid("delta must lie in (0,1)");
        if (!(h > static_cast<double>(p) / horizon && h < 0.5))
            throw ConfigInvalid("h must lie in (p/T, 1/2)");
        if (quantile_samples < 2) throw ConfigInvalid("quantile_samples must be >= 2");
        if (constant_grid.empty()) throw ConfigInvalid("constant grid is empty");
        if (static_cast<int>(std::floor(delta * h * horizon)) < 2)
            throw ConfigInvalid("fit split floor(delta*T*h) must be >= 2");
        if (static_cast<int>(std::floor((1.0 - delta) * h * horizon)) < 1)
            throw ConfigInvalid("validation split floor((1-delta)*T*h) must be >= 1");
    }
};

/// Twenty log-spaced constants on [1e-2, 10].
inline std::vector<double> default_constant_grid() {
    std::vector<double> grid;
    const int count = 20;
    for (int i = 0; i < count; ++i)
        grid.push_back(std::pow(10.0, -2.0 + 3.0 * i / (count - 1)));
    return grid;
}

struct CrossValidationResult {
    double c1 = 0.0;
    double c2 = 0.0;
    std::vector<double> losses1;  // validation loss per grid constant, head window
    std::vector<double> losses2;  // tail window
};

/// Tunes the two regularization constants on the boundary windows: fit on the
/// first floor(delta*T*h) observations, score one-step prediction on the rest
/// of the head window; mirrored for the tail. Ties pick the smaller constant.
inline CrossValidationResult cross_validate_constants(const Trajectory& traj, double h, double delta,
                                                      const std::vector<double>& grid,
                                                      const SolverConfig& solver_cfg) {
    const int horizon = traj.horizon();
    const int p = static_cast<int>(traj.dim());
    const int window = static_cast<int>(std::floor(h * horizon));
    const int fit_len = static_cast<int>(std::floor(delta * h * horizon));
    const int holdout = static_cast<int>(std::floor((1.0 - delta) * h * horizon));
    if (grid.empty()) throw ConfigInvalid("constant grid is empty");
    if (fit_len < 2 || window < p + 2) throw DegenerateSplit("boundary window too short for cross-validation");
    if (holdout < 1 || window - fit_len < 1) throw DegenerateSplit("validation window is empty");

    auto validation_loss = [&](const Matrix& theta, int from, int to) {
        // sum over transitions X_t -> X_{t+1} for t in [from, to)
        double loss = 0.0;
        for (int t = from; t < to; ++t) {
            const Vector next = traj.samples.row(t + 1).transpose();
            const Vector cur = traj.samples.row(t).transpose();
            loss += (next - theta * cur).squaredNorm();
        }
        return loss;
    };

    CrossValidationResult out;
    out.losses1.reserve(grid.size());
    out.losses2.reserve(grid.size());

    // head window: fit on X_1..X_{fit_len}, validate on t = fit_len..window-1
    for (double c : grid) {
        const int n_fit = fit_len - 1;
        const double lambda = c * std::sqrt(static_cast<double>(p) / n_fit);
        const SegmentProblem problem = segment_problem(traj, 1, fit_len, lambda);
        const EstimateResult fit = estimate(problem, solver_cfg);
        out.losses1.push_back(validation_loss(fit.theta_hat, fit_len, window));
    }
    // tail window: fit on X_{T-window}..X_{T-holdout}, validate on t = T-holdout..T-1
    const int tail_fit_end = horizon - holdout;
    for (double c : grid) {
        const int n_fit = tail_fit_end - (horizon - window);
        const double lambda = c * std::sqrt(static_cast<double>(p) / n_fit);
        const SegmentProblem problem = segment_problem(traj, horizon - window, tail_fit_end, lambda);
        const EstimateResult fit = estimate(problem, solver_cfg);
        out.losses2.push_back(validation_loss(fit.theta_hat, tail_fit_end, horizon));
    }

    const auto argmin = [](const std::vector<double>& losses) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < losses.size(); ++i)
            if (losses[i] < losses[best]) best = i;
        return best;
    };
    out.c1 = grid[argmin(out.losses1)];
    out.c2 = grid[argmin(out.losses2)];
    return out;
}

/// Conservative empirical quantile: 0-based order statistic ceil((1-alpha)*S)
/// of the ascending sample, clamped to the largest element.
inline double empirical_quantile(std::vector<double> sample, double alpha) {
    if (sample.empty()) throw ConfigInvalid("empirical quantile of an empty sample");
    std::sort(sample.begin(), sample.end());
    const auto idx = static_cast<std::size_t>(std::ceil((1.0 - alpha) * sample.size()));
    return sample[std::min(idx, sample.size() - 1)];
}

enum class QuantileSource { FromFirstSegment, FromLastSegment, Max };

inline std::string to_string(QuantileSource s) {
    switch (s) {
        case QuantileSource::FromFirstSegment: return "first";
        case QuantileSource::FromLastSegment: return "last";
        case QuantileSource::Max: return "max";
    }
    return "?";
}

struct QuantileTable {
    std::vector<int> ts;
    std::vector<double> quantiles;
    QuantileSource source = QuantileSource::FromFirstSegment;
    int sample_count = 0;
    Matrix samples;  // S x |ts|, the simulated statistics behind the quantiles

    double at(int t) const {
        for (std::size_t i = 0; i < ts.size(); ++i)
            if (ts[i] == t) return quantiles[i];
        throw ConfigInvalid("quantile table has no entry for t=" + std::to_string(t));
    }
};

/// Entrywise max of two tables over the same candidate set.
inline QuantileTable max_table(const QuantileTable& a, const QuantileTable& b) {
    if (a.ts != b.ts) throw ConfigInvalid("quantile tables cover different grids");
    QuantileTable out = a;
    out.source = QuantileSource::Max;
    out.samples.resize(0, 0);
    for (std::size_t i = 0; i < out.quantiles.size(); ++i)
        out.quantiles[i] = std::max(a.quantiles[i], b.quantiles[i]);
    return out;
}

/// Simulates S null trajectories (start resampled from `pool` columns, then T
/// steps under theta) and records the two-sided statistic at every grid point;
/// quantiles are read off per candidate. A replicate whose solver fails aborts
/// the build with the replicate index: dropping replicates would bias the
/// quantiles.
inline QuantileTable simulate_quantile_table(const Matrix& theta, const NoiseModel& noise,
                                             const Matrix& pool, double alpha,
                                             const CandidateGrid& grid, int horizon, int samples,
                                             const LambdaRule& rule, const SolverConfig& solver_cfg,
                                             std::uint64_t seed, QuantileSource source,
                                             int threads = 1, const Matrix* warm_start = nullptr) {
    if (samples < 2) throw ConfigInvalid("quantile simulation needs S >= 2");
    if (pool.cols() < 1) throw ConfigInvalid("resampling pool is empty");
    if (operator_norm(theta) >= 1.0)
        throw SpectralRadiusViolation("quantile simulation requires a stable matrix");

    QuantileTable table;
    table.ts = grid.points;
    table.source = source;
    table.sample_count = samples;
    table.samples.resize(samples, static_cast<Index>(grid.points.size()));

    const Index p = theta.rows();
    parallel_for(static_cast<std::size_t>(samples), threads, [&](std::size_t s) {
        Rng rng(derive_seed(seed, s));
        try {
            const Index start_col = rng.uniform_int(0, pool.cols() - 1);
            Trajectory sim;
            sim.samples.resize(horizon + 1, p);
            Vector x = pool.col(start_col);
            sim.samples.row(0) = x.transpose();
            for (int t = 0; t < horizon; ++t) {
                x = theta * x + noise.cholesky_factor() * rng.gaussian_vector(p);
                sim.samples.row(t + 1) = x.transpose();
            }
            for (std::size_t j = 0; j < grid.points.size(); ++j) {
                const int t = grid.points[j];
                const SegmentFits fits = fit_split(sim, t, rule.lambda1(t), rule.lambda2(t),
                                                   solver_cfg, warm_start, warm_start);
                table.samples(static_cast<Index>(s), static_cast<Index>(j)) =
                    g_statistic_from(fits, t, horizon);
            }
        } catch (const std::exception& e) {
            throw NumericError("quantile replicate " + std::to_string(s) + " failed: " + e.what());
        }
    });

    table.quantiles.resize(grid.points.size());
    for (std::size_t j = 0; j < grid.points.size(); ++j) {
        std::vector<double> col(table.samples.col(static_cast<Index>(j)).data(),
                                table.samples.col(static_cast<Index>(j)).data() + samples);
        table.quantiles[j] = empirical_quantile(std::move(col), alpha);
    }
    return table;
}

/// Single-candidate convenience wrapper.
inline double simulate_quantile(const Matrix& theta, const NoiseModel& noise, const Matrix& pool,
                                double alpha, int t, int horizon, int samples,
                                const LambdaRule& rule, const SolverConfig& solver_cfg,
                                std::uint64_t seed) {
    const CandidateGrid grid = single_point_grid(t, horizon);
    return simulate_quantile_table(theta, noise, pool, alpha, grid, horizon, samples, rule,
                                   solver_cfg, seed, QuantileSource::FromFirstSegment)
        .quantiles[0];
}

/// Rescales a matrix to the target operator norm.
inline TransitionMatrix adjust_operator_norm(const Matrix& theta_hat, double gamma_target) {
    if (!(gamma_target > 0.0 && gamma_target < 1.0))
        throw ConfigInvalid("gamma_target must lie in (0,1)");
    const double norm = operator_norm(theta_hat);
    if (norm <= 0.0) throw ZeroMatrix("cannot rescale the zero matrix");
    Matrix scaled = theta_hat * (gamma_target / norm);
    const Vector sv = detail::singular_values_of(scaled);
    int rank = 0;
    for (Index i = 0; i < sv.size(); ++i)
        if (sv(i) > 1e-8 * sv(0)) ++rank;
    return TransitionMatrix(std::move(scaled), rank, gamma_target);
}

struct DetectResult {
    bool decision = false;
    std::vector<TestEvaluation> per_candidate;
    double c1 = 0.0;
    double c2 = 0.0;
    QuantileTable quantiles_first;
    QuantileTable quantiles_last;
};

/// Full pipeline: cross-validate the penalty constants, estimate and rescale
/// boundary-window transition matrices, simulate the two quantile tables from
/// them, then test the two-sided statistic per candidate against the larger
/// quantile.
inline DetectResult detect(const Trajectory& traj, const NoiseModel& noise, double gamma1,
                           double gamma2, const CandidateGrid& grid, const CalibrationConfig& cfg,
                           const SolverConfig& solver_cfg, std::uint64_t seed, int threads = 1,
                           bool warm_start_quantiles = false) {
    const int horizon = traj.horizon();
    const int p = static_cast<int>(traj.dim());
    cfg.validate(horizon, p);
    grid.validate(horizon);
    const int window = static_cast<int>(std::floor(cfg.h * horizon));
    if (horizon < 2 * window + 2) throw ConfigInvalid("T must be at least 2*ceil(T*h)+2");
    for (int t : grid.points)
        if (t < window || t > horizon - window)
            throw ConfigInvalid("grid point outside the stationarity window [Th, T-Th]");

    DetectResult result;
    const CrossValidationResult cv =
        cross_validate_constants(traj, cfg.h, cfg.delta, cfg.constant_grid, solver_cfg);
    result.c1 = cv.c1;
    result.c2 = cv.c2;
    const LambdaRule rule = LambdaRule::practical(cv.c1, cv.c2, p, horizon);

    // boundary estimates on X_1..X_window and X_{T-window+1}..X_T, rescaled
    // to the prescribed operator norms
    const int n_boundary = window - 1;
    const SegmentProblem head_pen = segment_problem(
        traj, 1, window, cv.c1 * std::sqrt(static_cast<double>(p) / n_boundary));
    const EstimateResult head_fit = estimate(head_pen, solver_cfg);
    const SegmentProblem tail_pen = segment_problem(
        traj, horizon - window + 1, horizon, cv.c2 * std::sqrt(static_cast<double>(p) / n_boundary));
    const EstimateResult tail_fit = estimate(tail_pen, solver_cfg);
    const TransitionMatrix theta1 = adjust_operator_norm(head_fit.theta_hat, gamma1);
    const TransitionMatrix theta2 = adjust_operator_norm(tail_fit.theta_hat, gamma2);

    // resampling pools: X_0..X_{window} and X_{T-window}..X_T
    const Matrix pool1 = traj.samples.topRows(window + 1).transpose();
    const Matrix pool2 = traj.samples.bottomRows(window + 1).transpose();

    const Matrix* warm1 = warm_start_quantiles ? &theta1.entries() : nullptr;
    const Matrix* warm2 = warm_start_quantiles ? &theta2.entries() : nullptr;
    result.quantiles_first = simulate_quantile_table(
        theta1.entries(), noise, pool1, cfg.alpha, grid, horizon, cfg.quantile_samples, rule,
        solver_cfg, derive_seed(seed, 1), QuantileSource::FromFirstSegment, threads, warm1);
    result.quantiles_last = simulate_quantile_table(
        theta2.entries(), noise, pool2, cfg.alpha, grid, horizon, cfg.quantile_samples, rule,
        solver_cfg, derive_seed(seed, 2), QuantileSource::FromLastSegment, threads, warm2);

    result.per_candidate.reserve(grid.points.size());
    std::vector<double> g_values(grid.points.size());
    parallel_for(grid.points.size(), threads, [&](std::size_t j) {
        const int t = grid.points[j];
        g_values[j] = g_statistic(traj, t, rule.lambda1(t), rule.lambda2(t), solver_cfg);
    });
    for (std::size_t j = 0; j < grid.points.size(); ++j) {
        const int t = grid.points[j];
        const double q = std::max(result.quantiles_first.quantiles[j],
                                  result.quantiles_last.quantiles[j]);
        result.per_candidate.push_back(make_evaluation(t, g_values[j], q));
    }
    result.decision = decide(result.per_candidate);
    return result;
}

}  // namespace lrvar
