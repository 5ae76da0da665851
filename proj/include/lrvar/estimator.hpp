#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "lrvar/common.hpp"
#include "lrvar/var_model.hpp"

namespace lrvar {

enum class PenaltyMode { MatrixNorm, PredictedNorm };

/// One regression instance: columns of `predictors` map to the matching
/// columns of `responses` under the transition matrix being estimated.
/// Short segments (n <= p) penalize ||M * predictors||_*, long segments
/// penalize ||M||_*. The p x p Gram products are cached so solver
/// iterations cost O(p^3) regardless of the segment length.
class SegmentProblem {
  public:
    SegmentProblem(Matrix predictors, Matrix responses, double lambda)
        : predictors_(std::move(predictors)), responses_(std::move(responses)), lambda_(lambda) {
        if (predictors_.rows() != responses_.rows() || predictors_.cols() != responses_.cols())
            throw ShapeMismatch("predictor/response blocks must have identical shape");
        if (predictors_.cols() < 1) throw ShapeMismatch("segment must contain at least one transition");
        if (lambda_ < 0.0) throw ConfigInvalid("lambda must be nonnegative");
        mode_ = (n() <= p()) ? PenaltyMode::PredictedNorm : PenaltyMode::MatrixNorm;
        gram_ = predictors_ * predictors_.transpose();
        gram_ = ((gram_ + gram_.transpose()) * 0.5).eval();
        cross_ = responses_ * predictors_.transpose();
        responses_sq_ = responses_.squaredNorm();
    }

    Index p() const { return predictors_.rows(); }
    Index n() const { return predictors_.cols(); }
    PenaltyMode penalty_mode() const { return mode_; }
    double lambda() const { return lambda_; }
    const Matrix& predictors() const { return predictors_; }
    const Matrix& responses() const { return responses_; }
    const Matrix& gram() const { return gram_; }        // X X^T
    const Matrix& cross() const { return cross_; }      // Y X^T
    double responses_sq() const { return responses_sq_; }

  private:
    Matrix predictors_;
    Matrix responses_;
    double lambda_;
    PenaltyMode mode_;
    Matrix gram_;
    Matrix cross_;
    double responses_sq_;
};

/// Problem on the observation window [t0, t1]: predictors X_{t0}..X_{t1-1},
/// responses X_{t0+1}..X_{t1}.
inline SegmentProblem segment_problem(const Trajectory& traj, int t0, int t1, double lambda) {
    const int horizon = traj.horizon();
    if (t0 < 0 || t1 > horizon || t1 - t0 < 1)
        throw ConfigInvalid("invalid segment window");
    const int n = t1 - t0;
    Matrix x = traj.samples.middleRows(t0, n).transpose();
    Matrix y = traj.samples.middleRows(t0 + 1, n).transpose();
    return SegmentProblem(std::move(x), std::move(y), lambda);
}

inline SegmentProblem first_segment(const Trajectory& traj, int t, double lambda) {
    return segment_problem(traj, 0, t, lambda);
}

inline SegmentProblem second_segment(const Trajectory& traj, int t, double lambda) {
    return segment_problem(traj, t, traj.horizon(), lambda);
}

enum class StepRule { FixedLipschitz, Backtracking };

struct SolverConfig {
    int max_iterations = 5000;
    double tolerance = 1e-9;       // relative objective decrease treated as a stall
    double kkt_tolerance = 1e-6;   // optimality certificate target
    StepRule step_rule = StepRule::FixedLipschitz;
    bool restart = true;

    void validate() const {
        if (max_iterations < 1) throw ConfigInvalid("max_iterations must be >= 1");
        if (tolerance <= 0.0) throw ConfigInvalid("tolerance must be positive");
        if (kkt_tolerance <= 0.0) throw ConfigInvalid("kkt_tolerance must be positive");
    }
};

struct EstimateResult {
    Matrix theta_hat;
    double objective_value = 0.0;
    int iterations_used = 0;
    double kkt_residual = 0.0;
    bool converged = true;
    bool rank_deficient_predictors = false;
};

struct IterationRecord {
    int iteration;
    double objective;
    double kkt_residual;
};

namespace detail {

struct SvdParts {
    Matrix u;               // thin
    Vector singular_values;
    Matrix v;               // thin
};

inline SvdParts thin_svd(const Matrix& m) {
    SvdParts parts;
    if (std::min(m.rows(), m.cols()) <= 16) {
        Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
        if (svd.info() != Eigen::Success) throw SvdFailure("SVD did not converge");
        parts.u = svd.matrixU();
        parts.singular_values = svd.singularValues();
        parts.v = svd.matrixV();
    } else {
        Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
        if (svd.info() != Eigen::Success) throw SvdFailure("SVD did not converge");
        parts.u = svd.matrixU();
        parts.singular_values = svd.singularValues();
        parts.v = svd.matrixV();
    }
    return parts;
}

inline Vector singular_values_of(const Matrix& m) {
    if (std::min(m.rows(), m.cols()) <= 16) return Eigen::JacobiSVD<Matrix>(m).singularValues();
    return Eigen::BDCSVD<Matrix>(m).singularValues();
}

struct ShrinkResult {
    Matrix value;
    Matrix u;                // columns kept after shrinkage
    Vector singular_values;  // shrunk, positive part only
    Matrix v;
    double nuclear = 0.0;
};

inline ShrinkResult shrink_singular_values(const Matrix& m, double threshold) {
    ShrinkResult out;
    const SvdParts parts = thin_svd(m);
    Index kept = 0;
    for (Index i = 0; i < parts.singular_values.size(); ++i)
        if (parts.singular_values(i) > threshold) ++kept;
    out.u = parts.u.leftCols(kept);
    out.v = parts.v.leftCols(kept);
    out.singular_values = (parts.singular_values.head(kept).array() - threshold).matrix();
    out.nuclear = out.singular_values.sum();
    if (kept == 0)
        out.value = Matrix::Zero(m.rows(), m.cols());
    else
        out.value = out.u * out.singular_values.asDiagonal() * out.v.transpose();
    return out;
}

}  // namespace detail

inline double nuclear_norm(const Matrix& m) { return detail::singular_values_of(m).sum(); }

/// Proximal operator of threshold * ||.||_*: soft-thresholds the singular values.
inline Matrix svt(const Matrix& m, double threshold) {
    if (threshold < 0.0) throw ConfigInvalid("svt threshold must be nonnegative");
    if (threshold == 0.0) return m;
    return detail::shrink_singular_values(m, threshold).value;
}

/// Penalized least-squares value of candidate M on the segment. The residual
/// term is evaluated directly (not through the cached Gram products) so this
/// doubles as the reference evaluation for solver output.
inline double objective(const SegmentProblem& problem, const Matrix& m) {
    if (m.rows() != problem.p() || m.cols() != problem.p())
        throw ShapeMismatch("candidate matrix has wrong shape");
    const double fit = (problem.responses() - m * problem.predictors()).squaredNorm() /
                       static_cast<double>(problem.n());
    if (problem.penalty_mode() == PenaltyMode::MatrixNorm)
        return fit + problem.lambda() * nuclear_norm(m);
    return fit + problem.lambda() * nuclear_norm(m * problem.predictors());
}

/// Default regularization weight: the short-segment branch scales like
/// sqrt(p)/n, the long-segment branch like sqrt(p/n).
inline double default_lambda(int n, int p, double sigma_z_op, double sigma_op, double gamma,
                             double c1, double c2) {
    if (n < 1) throw ConfigInvalid("segment length must be >= 1");
    if (n <= p)
        return 6.0 * c1 * std::sqrt(sigma_z_op) * std::sqrt(static_cast<double>(p)) / n;
    return 2.0 * c2 * sigma_op / (1.0 - gamma) * std::sqrt(static_cast<double>(p) / n);
}

/// Distance of the stationarity condition from zero at M:
/// min over subgradients W of || (2/n)(Y - MX)X^T - lambda W ||_F.
/// Valid subgradients are U1 V1^T + W_perp with the perpendicular part's
/// operator norm at most one, so the minimum splits into an exactly
/// cancellable part and a soft-thresholded remainder.
inline double kkt_residual(const SegmentProblem& problem, const Matrix& m) {
    if (problem.penalty_mode() != PenaltyMode::MatrixNorm)
        throw ConfigInvalid("kkt_residual is defined for the matrix-norm penalty");
    const double n = static_cast<double>(problem.n());
    const Matrix grad_fit = (2.0 / n) * (problem.cross() - m * problem.gram());
    const double lambda = problem.lambda();

    const detail::SvdParts parts = detail::thin_svd(m);
    const double top = parts.singular_values.size() > 0 ? parts.singular_values(0) : 0.0;
    Index rank = 0;
    for (Index i = 0; i < parts.singular_values.size(); ++i)
        if (parts.singular_values(i) > 1e-10 * top) ++rank;

    Matrix b = grad_fit;
    if (rank > 0)
        b -= lambda * parts.u.leftCols(rank) * parts.v.leftCols(rank).transpose();

    Matrix b_perp = b;
    if (rank > 0) {
        const Matrix u1 = parts.u.leftCols(rank);
        const Matrix v1 = parts.v.leftCols(rank);
        b_perp -= u1 * (u1.transpose() * b_perp);
        b_perp -= (b_perp * v1) * v1.transpose();
    }
    const Matrix b_rest = b - b_perp;

    const Vector sv = detail::singular_values_of(b_perp);
    double overflow_sq = 0.0;
    for (Index i = 0; i < sv.size(); ++i) {
        const double excess = sv(i) - lambda;
        if (excess > 0.0) overflow_sq += excess * excess;
    }
    return std::sqrt(b_rest.squaredNorm() + overflow_sq);
}

namespace detail {

inline double gram_objective(const SegmentProblem& problem, const Matrix& m, double nuclear) {
    const double n = static_cast<double>(problem.n());
    const double fit =
        (problem.responses_sq() - 2.0 * m.cwiseProduct(problem.cross()).sum() +
         m.cwiseProduct(m * problem.gram()).sum()) /
        n;
    return fit + problem.lambda() * nuclear;
}

}  // namespace detail

/// Accelerated proximal gradient for the matrix-norm regime. Momentum steps
/// that would increase the objective are replaced by a plain proximal step
/// from the previous iterate, which keeps the accepted sequence
/// non-increasing; momentum also restarts on the usual gradient criterion.
/// Terminates once the KKT residual reaches cfg.kkt_tolerance; an iterate
/// sequence whose relative decrease stalls below cfg.tolerance without a
/// certificate ends the loop flagged as not converged.
inline EstimateResult estimate_long(const SegmentProblem& problem, const SolverConfig& cfg,
                                    const Matrix* warm_start = nullptr,
                                    std::vector<IterationRecord>* trace = nullptr) {
    cfg.validate();
    if (problem.penalty_mode() != PenaltyMode::MatrixNorm)
        throw ConfigInvalid("estimate_long requires the matrix-norm regime (n > p)");
    const Index p = problem.p();
    const double n = static_cast<double>(problem.n());
    const double lambda = problem.lambda();

    Eigen::SelfAdjointEigenSolver<Matrix> eig(problem.gram());
    const double gram_top = eig.eigenvalues()(p - 1);
    if (gram_top <= 0.0) {
        // all-zero predictors: the fit term is constant, the penalty picks zero
        EstimateResult res;
        res.theta_hat = Matrix::Zero(p, p);
        res.objective_value = objective(problem, res.theta_hat);
        res.kkt_residual = kkt_residual(problem, res.theta_hat);
        return res;
    }

    double step_l = (2.0 / n) * gram_top;
    if (cfg.step_rule == StepRule::Backtracking) step_l = std::max(step_l / 16.0, 1e-12);

    Matrix x = warm_start ? *warm_start : Matrix::Zero(p, p);
    double x_nuclear = warm_start ? nuclear_norm(x) : 0.0;
    Matrix y = x;
    double f_x = detail::gram_objective(problem, x, x_nuclear);
    double momentum = 1.0;
    Matrix x_prev = x;

    EstimateResult res;
    res.converged = false;
    int stall_count = 0;

    auto smooth_value = [&](const Matrix& m) {
        return (problem.responses_sq() - 2.0 * m.cwiseProduct(problem.cross()).sum() +
                m.cwiseProduct(m * problem.gram()).sum()) /
               n;
    };

    int iter = 0;
    for (iter = 1; iter <= cfg.max_iterations; ++iter) {
        Matrix grad_y = (2.0 / n) * (y * problem.gram() - problem.cross());

        detail::ShrinkResult cand;
        if (cfg.step_rule == StepRule::Backtracking) {
            const double f_y = smooth_value(y);
            for (;;) {
                cand = detail::shrink_singular_values(y - grad_y / step_l, lambda / step_l);
                const Matrix diff = cand.value - y;
                const double quad_bound =
                    f_y + grad_y.cwiseProduct(diff).sum() + 0.5 * step_l * diff.squaredNorm();
                if (smooth_value(cand.value) <= quad_bound + 1e-12 * std::abs(quad_bound)) break;
                step_l *= 2.0;
            }
        } else {
            cand = detail::shrink_singular_values(y - grad_y / step_l, lambda / step_l);
        }
        double f_new = detail::gram_objective(problem, cand.value, cand.nuclear);

        if (cfg.restart && f_new > f_x) {
            // fall back to a guaranteed-descent proximal step from x
            const Matrix grad_x = (2.0 / n) * (x * problem.gram() - problem.cross());
            cand = detail::shrink_singular_values(x - grad_x / step_l, lambda / step_l);
            f_new = detail::gram_objective(problem, cand.value, cand.nuclear);
            momentum = 1.0;
            y = x;
            if (f_new > f_x) {
                // rounding flutter at the solution; hold the iterate
                cand.value = x;
                cand.nuclear = x_nuclear;
                f_new = f_x;
            }
        }

        const Matrix x_new = cand.value;
        const double kkt = kkt_residual(problem, x_new);
        if (trace) trace->push_back({iter, f_new, kkt});

        const double rel_decrease = (f_x - f_new) / std::max(std::abs(f_new), 1e-300);

        const double momentum_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
        Matrix y_next = x_new + ((momentum - 1.0) / momentum_next) * (x_new - x);
        if (cfg.restart && (y - x_new).cwiseProduct(x_new - x).sum() > 0.0) {
            y_next = x_new;
            momentum = 1.0;
        } else {
            momentum = momentum_next;
        }
        x_prev = x;
        x = x_new;
        x_nuclear = cand.nuclear;
        f_x = f_new;
        y = y_next;

        if (kkt <= cfg.kkt_tolerance) {
            res.converged = true;
            break;
        }
        stall_count = (iter > 1 && rel_decrease < cfg.tolerance) ? stall_count + 1 : 0;
        if (stall_count >= 16) break;
    }

    res.theta_hat = x;
    res.iterations_used = std::min(iter, cfg.max_iterations);
    res.objective_value = objective(problem, x);
    res.kkt_residual = kkt_residual(problem, x);
    return res;
}

/// Closed form for the predicted-norm regime. Substituting N = M X turns the
/// program into a proximal problem in N solved by one singular value
/// threshold at level lambda * n / 2; M recovers through the pseudoinverse
/// (minimum-Frobenius representative). With rank-deficient predictors the
/// responses are first projected onto the achievable row space and the
/// result is flagged.
inline EstimateResult estimate_short(const SegmentProblem& problem) {
    if (problem.penalty_mode() != PenaltyMode::PredictedNorm)
        throw ConfigInvalid("estimate_short requires the predicted-norm regime (n <= p)");
    const Index p = problem.p();
    const Index n = problem.n();

    const detail::SvdParts parts = detail::thin_svd(problem.predictors());
    const double top = parts.singular_values.size() > 0 ? parts.singular_values(0) : 0.0;
    Index rank = 0;
    for (Index i = 0; i < parts.singular_values.size(); ++i)
        if (parts.singular_values(i) > 1e-10 * top) ++rank;

    EstimateResult res;
    res.rank_deficient_predictors = (rank < n);
    res.iterations_used = 1;

    if (rank == 0) {
        res.theta_hat = Matrix::Zero(p, p);
        res.objective_value = objective(problem, res.theta_hat);
        return res;
    }

    Matrix y_reachable = problem.responses();
    const Matrix v_r = parts.v.leftCols(rank);
    if (rank < n) y_reachable = (y_reachable * v_r) * v_r.transpose();

    const Matrix target = svt(y_reachable, problem.lambda() * static_cast<double>(n) / 2.0);

    Matrix pinv = v_r * parts.singular_values.head(rank).cwiseInverse().asDiagonal() *
                  parts.u.leftCols(rank).transpose();
    res.theta_hat = target * pinv;
    res.objective_value = objective(problem, res.theta_hat);
    return res;
}

inline EstimateResult estimate(const SegmentProblem& problem, const SolverConfig& cfg,
                               const Matrix* warm_start = nullptr) {
    if (problem.penalty_mode() == PenaltyMode::PredictedNorm) return estimate_short(problem);
    return estimate_long(problem, cfg, warm_start);
}

}  // namespace lrvar
