#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "lrvar/common.hpp"
#include "lrvar/estimator.hpp"
#include "lrvar/var_model.hpp"

namespace lrvar {

enum class GridKind { Full, Dyadic, Single, Custom };

/// Sorted candidate change-point locations within {1..T-1}.
struct CandidateGrid {
    std::vector<int> points;
    GridKind kind = GridKind::Custom;
    int window_lo = 1;
    int window_hi = 0;  // set when restricted

    void validate(int horizon) const {
        if (points.empty()) throw ConfigInvalid("candidate grid is empty");
        int prev = 0;
        for (int t : points) {
            if (t <= prev) throw ConfigInvalid("grid points must be strictly increasing");
            if (t < 1 || t > horizon - 1) throw ConfigInvalid("grid point outside {1..T-1}");
            prev = t;
        }
    }
};

/// {2^k} united with {T - 2^k} for k = 0..floor(log2(T/2)).
inline CandidateGrid dyadic_grid(int horizon) {
    if (horizon < 4) throw ConfigInvalid("dyadic grid needs T >= 4");
    std::set<int> pts;
    for (int k = 0;; ++k) {
        const std::int64_t step = std::int64_t{1} << k;
        if (2 * step > horizon) break;
        pts.insert(static_cast<int>(step));
        pts.insert(horizon - static_cast<int>(step));
    }
    CandidateGrid grid;
    grid.points.assign(pts.begin(), pts.end());
    grid.kind = GridKind::Dyadic;
    grid.validate(horizon);
    return grid;
}

/// Every location whose both segments contain at least two transitions.
inline CandidateGrid full_grid(int horizon) {
    CandidateGrid grid;
    for (int t = 2; t <= horizon - 2; ++t) grid.points.push_back(t);
    grid.kind = GridKind::Full;
    grid.validate(horizon);
    return grid;
}

inline CandidateGrid single_point_grid(int tau, int horizon) {
    CandidateGrid grid;
    grid.points = {tau};
    grid.kind = GridKind::Single;
    grid.validate(horizon);
    return grid;
}

inline CandidateGrid custom_grid(std::vector<int> points, int horizon) {
    CandidateGrid grid;
    grid.points = std::move(points);
    std::sort(grid.points.begin(), grid.points.end());
    grid.points.erase(std::unique(grid.points.begin(), grid.points.end()), grid.points.end());
    grid.kind = GridKind::Custom;
    grid.validate(horizon);
    return grid;
}

/// Keeps only candidates inside [lo, hi].
inline CandidateGrid restrict_grid(const CandidateGrid& grid, int lo, int hi) {
    CandidateGrid out;
    out.kind = grid.kind;
    out.window_lo = lo;
    out.window_hi = hi;
    for (int t : grid.points)
        if (t >= lo && t <= hi) out.points.push_back(t);
    if (out.points.empty()) throw ConfigInvalid("window restriction removed every grid point");
    return out;
}

/// Regularization weights per candidate split. The practical form uses
/// cross-validated constants times sqrt(p / segment length); the theoretical
/// form follows the default_lambda branches.
struct LambdaRule {
    enum class Kind { Practical, Theoretical };
    Kind kind = Kind::Practical;
    double c1 = 1.0;
    double c2 = 1.0;
    int p = 0;
    int horizon = 0;
    // theoretical-form inputs
    double sigma_z_op = 1.0;
    double sigma1_op = 1.0;
    double sigma2_op = 1.0;
    double gamma1 = 0.9;
    double gamma2 = 0.9;

    static LambdaRule practical(double c1, double c2, int p, int horizon) {
        LambdaRule rule;
        rule.kind = Kind::Practical;
        rule.c1 = c1;
        rule.c2 = c2;
        rule.p = p;
        rule.horizon = horizon;
        return rule;
    }

    double lambda1(int t) const {
        if (kind == Kind::Practical) return c1 * std::sqrt(static_cast<double>(p) / t);
        return default_lambda(t, p, sigma_z_op, sigma1_op, gamma1, c1, c2);
    }

    double lambda2(int t) const {
        const int n = horizon - t;
        if (kind == Kind::Practical) return c2 * std::sqrt(static_cast<double>(p) / n);
        return default_lambda(n, p, sigma_z_op, sigma2_op, gamma2, c1, c2);
    }
};

/// Objectives of both segment problems evaluated at both segment estimates.
struct SegmentFits {
    Matrix theta1;
    Matrix theta2;
    double phi1_at_theta1 = 0.0;
    double phi1_at_theta2 = 0.0;
    double phi2_at_theta1 = 0.0;
    double phi2_at_theta2 = 0.0;
};

/// Cross-evaluates two given candidate matrices on the split at t.
inline SegmentFits evaluate_split(const Trajectory& traj, int t, double lambda1, double lambda2,
                                  const Matrix& theta1, const Matrix& theta2) {
    const SegmentProblem seg1 = first_segment(traj, t, lambda1);
    const SegmentProblem seg2 = second_segment(traj, t, lambda2);
    SegmentFits fits;
    fits.theta1 = theta1;
    fits.theta2 = theta2;
    fits.phi1_at_theta1 = objective(seg1, theta1);
    fits.phi1_at_theta2 = objective(seg1, theta2);
    fits.phi2_at_theta1 = objective(seg2, theta1);
    fits.phi2_at_theta2 = objective(seg2, theta2);
    return fits;
}

/// Fits both segments at the split t and cross-evaluates the objectives.
inline SegmentFits fit_split(const Trajectory& traj, int t, double lambda1, double lambda2,
                             const SolverConfig& cfg, const Matrix* warm1 = nullptr,
                             const Matrix* warm2 = nullptr) {
    const SegmentProblem seg1 = first_segment(traj, t, lambda1);
    const SegmentProblem seg2 = second_segment(traj, t, lambda2);
    EstimateResult fit1 = estimate(seg1, cfg, warm1);
    EstimateResult fit2 = estimate(seg2, cfg, warm2);
    if (!fit1.converged || !fit2.converged)
        throw NumericError("segment solver did not converge at t=" + std::to_string(t));
    SegmentFits fits;
    fits.phi1_at_theta1 = fit1.objective_value;
    fits.phi2_at_theta2 = fit2.objective_value;
    fits.phi1_at_theta2 = objective(seg1, fit2.theta_hat);
    fits.phi2_at_theta1 = objective(seg2, fit1.theta_hat);
    fits.theta1 = std::move(fit1.theta_hat);
    fits.theta2 = std::move(fit2.theta_hat);
    return fits;
}

inline double f_statistic_from(const SegmentFits& fits, int t, int horizon) {
    if (2 * t < horizon) return fits.phi1_at_theta2 - fits.phi1_at_theta1;
    return fits.phi2_at_theta1 - fits.phi2_at_theta2;
}

inline double g_statistic_from(const SegmentFits& fits, int t, int horizon) {
    const double w = static_cast<double>(t) / horizon;
    return w * (fits.phi1_at_theta2 - fits.phi1_at_theta1) +
           (1.0 - w) * (fits.phi2_at_theta1 - fits.phi2_at_theta2);
}

/// One-sided objective-difference statistic keyed on which side of T/2 the
/// candidate lies.
inline double f_statistic(const Trajectory& traj, int t, double lambda1, double lambda2,
                          const SolverConfig& cfg) {
    return f_statistic_from(fit_split(traj, t, lambda1, lambda2, cfg), t, traj.horizon());
}

/// Penalized likelihood-ratio statistic weighting both segment differences.
inline double g_statistic(const Trajectory& traj, int t, double lambda1, double lambda2,
                          const SolverConfig& cfg) {
    return g_statistic_from(fit_split(traj, t, lambda1, lambda2, cfg), t, traj.horizon());
}

struct ThresholdInputs {
    double alpha = 0.05;
    int rank = 1;
    int p = 1;
    int horizon = 2;
    double gamma = 0.9;
    int grid_size = 1;
    double sigma_z_op = 1.0;
    double sigma_op = 1.0;
    double kappa_sigma = 1.0;
    double c_star = 1.0;  // absolute constant in front of the max(...) factor

    void validate() const {
        if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigInvalid("alpha must lie in (0,1)");
        if (rank < 1 || p < 1 || horizon < 2 || grid_size < 1)
            throw ConfigInvalid("threshold inputs must be positive");
        if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigInvalid("gamma must lie in (0,1)");
        if (sigma_z_op <= 0.0 || sigma_op <= 0.0 || kappa_sigma <= 0.0 || c_star <= 0.0)
            throw ConfigInvalid("threshold scale inputs must be positive");
    }
};

/// Rejection level for the one-sided statistic at candidate t. Branches on
/// whether the shorter segment is at most p long.
inline double threshold_H(const ThresholdInputs& in, int t) {
    in.validate();
    if (t < 1 || t > in.horizon - 1) throw ConfigInvalid("threshold candidate outside {1..T-1}");
    const double scale =
        in.c_star * std::max(in.sigma_z_op, in.sigma_op * in.kappa_sigma * in.kappa_sigma /
                                                ((1.0 - in.gamma) * (1.0 - in.gamma)));
    const double base = scale * (static_cast<double>(in.rank) * in.p) /
                        (in.horizon * location_weight_sq(t, in.horizon));
    const double log_term = std::log(8.0 * in.grid_size / in.alpha);
    const int shorter = std::min(t, in.horizon - t);
    if (shorter <= in.p)
        return base * (1.0 + 2.0 / (1.0 - in.gamma) * (in.p + log_term) / in.horizon);
    return base * (1.0 + 2.0 / (1.0 - in.gamma) * (1.0 + log_term / in.horizon));
}

struct TestEvaluation {
    int t = 0;
    double statistic = 0.0;
    double threshold = 0.0;
    double ratio = 0.0;
    bool reject = false;
};

inline TestEvaluation make_evaluation(int t, double statistic, double threshold) {
    TestEvaluation e;
    e.t = t;
    e.statistic = statistic;
    e.threshold = threshold;
    e.ratio = statistic / threshold;
    e.reject = e.ratio > 1.0;
    return e;
}

/// Overall decision: reject if any candidate rejects.
inline bool decide(const std::vector<TestEvaluation>& evaluations) {
    for (const auto& e : evaluations)
        if (e.reject) return true;
    return false;
}

struct TheoreticalTestResult {
    bool decision = false;
    std::vector<TestEvaluation> evaluations;
};

/// Scans the grid with the one-sided statistic against the closed-form
/// thresholds.
inline TheoreticalTestResult run_theoretical_test(const Trajectory& traj, const CandidateGrid& grid,
                                                  const ThresholdInputs& inputs,
                                                  const LambdaRule& rule, const SolverConfig& cfg) {
    grid.validate(traj.horizon());
    TheoreticalTestResult result;
    result.evaluations.reserve(grid.points.size());
    for (int t : grid.points) {
        const double stat = f_statistic(traj, t, rule.lambda1(t), rule.lambda2(t), cfg);
        result.evaluations.push_back(make_evaluation(t, stat, threshold_H(inputs, t)));
    }
    result.decision = decide(result.evaluations);
    return result;
}

struct ArgmaxResult {
    int tau_hat = 0;
    std::vector<double> g_values;
};

/// Location estimate: grid point maximizing the two-sided statistic, ties
/// broken toward the smallest t.
inline ArgmaxResult argmax_changepoint(const Trajectory& traj, const CandidateGrid& grid,
                                       const LambdaRule& rule, const SolverConfig& cfg) {
    grid.validate(traj.horizon());
    ArgmaxResult result;
    result.g_values.reserve(grid.points.size());
    double best = -std::numeric_limits<double>::infinity();
    for (int t : grid.points) {
        const double g = g_statistic(traj, t, rule.lambda1(t), rule.lambda2(t), cfg);
        result.g_values.push_back(g);
        if (g > best) {
            best = g;
            result.tau_hat = t;
        }
    }
    return result;
}

struct SigmaBounds {
    double sigma_op = 0.0;   // bound on the stationary covariance operator norm
    double kappa = 0.0;      // bound on its condition number
};

/// Closed-form bounds on the stationary covariance from the noise covariance:
/// ||Sigma||_op <= ||Sigma_Z||_op / (1 - gamma^2) and
/// kappa(Sigma) <= kappa(Sigma_Z) (1 + gamma^2) / (1 - gamma^2).
inline SigmaBounds sigma_bounds(const NoiseModel& noise, double gamma) {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigInvalid("gamma must lie in [0,1)");
    SigmaBounds b;
    b.sigma_op = noise.operator_norm() / (1.0 - gamma * gamma);
    b.kappa = noise.condition_number() * (1.0 + gamma * gamma) / (1.0 - gamma * gamma);
    return b;
}

}  // namespace lrvar
