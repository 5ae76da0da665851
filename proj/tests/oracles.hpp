// Test-only reference computations, kept independent of the library's own
// solver paths: a Kronecker-form linear solve for the stationary covariance,
// smoothed gradient-descent solvers for the penalized programs, and a
// projection search over the nuclear-norm subdifferential.
#pragma once

#include <cmath>
#include <functional>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "lrvar/common.hpp"
#include "lrvar/rng.hpp"
#include "lrvar/var_model.hpp"

namespace oracles {

using lrvar::Index;
using lrvar::Matrix;
using lrvar::Vector;

/// Solves (I - Theta (x) Theta) vec(S) = vec(Sigma_Z) densely. vec stacks
/// columns, so entry (r, c) maps to index c*p + r and the operator for
/// S -> Theta S Theta^T has entries theta(r1, r2) * theta(c1, c2).
inline Matrix lyapunov_kron_solve(const Matrix& theta, const Matrix& sigma_z) {
    const Index p = theta.rows();
    const Index pp = p * p;
    Vector rhs(pp);
    for (Index j = 0; j < p; ++j)
        for (Index i = 0; i < p; ++i) rhs(j * p + i) = sigma_z(i, j);
    Matrix op = Matrix::Identity(pp, pp);
    for (Index c1 = 0; c1 < p; ++c1)
        for (Index r1 = 0; r1 < p; ++r1)
            for (Index c2 = 0; c2 < p; ++c2)
                for (Index r2 = 0; r2 < p; ++r2)
                    op(c1 * p + r1, c2 * p + r2) -= theta(r1, r2) * theta(c1, c2);
    const Vector sol = op.fullPivLu().solve(rhs);
    Matrix s(p, p);
    for (Index j = 0; j < p; ++j)
        for (Index i = 0; i < p; ++i) s(i, j) = sol(j * p + i);
    return s;
}

struct HuberNuclear {
    double value = 0.0;
    Matrix gradient;
};

/// Smoothed nuclear norm: huber(sigma_i) summed, gradient U h'(sigma) V^T.
inline HuberNuclear huber_nuclear(const Matrix& m, double u) {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    HuberNuclear out;
    Vector dh(sv.size());
    for (Index i = 0; i < sv.size(); ++i) {
        if (sv(i) >= u) {
            out.value += sv(i) - 0.5 * u;
            dh(i) = 1.0;
        } else {
            out.value += sv(i) * sv(i) / (2.0 * u);
            dh(i) = sv(i) / u;
        }
    }
    out.gradient = svd.matrixU() * dh.asDiagonal() * svd.matrixV().transpose();
    return out;
}

struct SmoothedProblem {
    std::function<double(const Matrix&)> fit_value;
    std::function<Matrix(const Matrix&)> fit_gradient;
    double fit_lipschitz = 1.0;
    double strong_convexity = 1.0;
    // penalty weight applied to ||A(M)||_*; A maps M to M itself or to M X
    std::function<Matrix(const Matrix&)> penalty_map;
    std::function<Matrix(const Matrix&)> penalty_map_adjoint;  // of the gradient back to M space
    double penalty_weight = 0.0;
    double penalty_map_norm_sq = 1.0;  // ||A||^2 as an operator
};

struct SmoothedSolution {
    Matrix minimizer;
    double smoothed_value = 0.0;
};

/// Accelerated gradient descent on fit + penalty_weight * smoothed nuclear
/// norm, with smoothing level u. Momentum uses the strong-convexity constant;
/// steps that increase the objective restart from the previous iterate.
inline SmoothedSolution smoothed_accelerated_solve(const SmoothedProblem& prob, const Matrix& start,
                                                   double u, int iterations) {
    const double lip = prob.fit_lipschitz + prob.penalty_weight * prob.penalty_map_norm_sq / u;
    const double kappa = lip / prob.strong_convexity;
    const double beta = (std::sqrt(kappa) - 1.0) / (std::sqrt(kappa) + 1.0);

    auto total = [&](const Matrix& m) {
        return prob.fit_value(m) + prob.penalty_weight * huber_nuclear(prob.penalty_map(m), u).value;
    };
    auto gradient = [&](const Matrix& m) {
        const HuberNuclear pen = huber_nuclear(prob.penalty_map(m), u);
        return (prob.fit_gradient(m) + prob.penalty_weight * prob.penalty_map_adjoint(pen.gradient))
            .eval();
    };

    Matrix x = start;
    Matrix y = x;
    double fx = total(x);
    for (int k = 0; k < iterations; ++k) {
        Matrix x_new = y - gradient(y) / lip;
        double f_new = total(x_new);
        if (f_new > fx) {
            x_new = x - gradient(x) / lip;
            f_new = total(x_new);
            if (f_new > fx) break;  // stalled at rounding level
        }
        y = x_new + beta * (x_new - x);
        x = x_new;
        fx = f_new;
    }
    return {x, fx};
}

/// Reference prox of threshold * ||.||_* at M by smoothed gradient descent.
inline Matrix prox_nuclear_reference(const Matrix& m, double threshold, double u = 1e-7,
                                     int iterations = 20000) {
    SmoothedProblem prob;
    prob.fit_value = [&](const Matrix& x) { return 0.5 * (x - m).squaredNorm(); };
    prob.fit_gradient = [&](const Matrix& x) { return (x - m).eval(); };
    prob.fit_lipschitz = 1.0;
    prob.strong_convexity = 1.0;
    prob.penalty_map = [](const Matrix& x) { return x; };
    prob.penalty_map_adjoint = [](const Matrix& g) { return g; };
    prob.penalty_weight = threshold;
    prob.penalty_map_norm_sq = 1.0;
    return smoothed_accelerated_solve(prob, m, u, iterations).minimizer;
}

/// Reference solver for (1/n)||Y - M X||^2 + lambda ||M||_*.
inline Matrix penalized_regression_reference(const Matrix& predictors, const Matrix& responses,
                                             double lambda, double u = 1e-7,
                                             int iterations = 50000) {
    const double n = static_cast<double>(predictors.cols());
    const Matrix gram = predictors * predictors.transpose();
    const Matrix cross = responses * predictors.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    SmoothedProblem prob;
    prob.fit_value = [&, n](const Matrix& m) {
        return (responses - m * predictors).squaredNorm() / n;
    };
    prob.fit_gradient = [&, n](const Matrix& m) {
        return ((2.0 / n) * (m * gram - cross)).eval();
    };
    prob.fit_lipschitz = (2.0 / n) * eig.eigenvalues().maxCoeff();
    prob.strong_convexity = std::max((2.0 / n) * eig.eigenvalues().minCoeff(), 1e-12);
    prob.penalty_map = [](const Matrix& m) { return m; };
    prob.penalty_map_adjoint = [](const Matrix& g) { return g; };
    prob.penalty_weight = lambda;
    prob.penalty_map_norm_sq = 1.0;
    return smoothed_accelerated_solve(prob, Matrix::Zero(predictors.rows(), predictors.rows()), u,
                                      iterations)
        .minimizer;
}

/// Reference solver for (1/n)||Y - M X||^2 + lambda ||M X||_*, iterating
/// directly in M. Started at zero the iterates stay in the subspace where the
/// fit term is strongly convex.
inline Matrix predicted_penalty_reference(const Matrix& predictors, const Matrix& responses,
                                          double lambda, double u = 1e-7, int iterations = 200000) {
    const double n = static_cast<double>(predictors.cols());
    const Matrix gram = predictors * predictors.transpose();
    Eigen::JacobiSVD<Matrix> svd(predictors);
    const Vector sv = svd.singularValues();
    double min_pos = sv(0);
    for (Index i = 0; i < sv.size(); ++i)
        if (sv(i) > 1e-12 * sv(0)) min_pos = sv(i);
    const Matrix cross = responses * predictors.transpose();
    SmoothedProblem prob;
    prob.fit_value = [&, n](const Matrix& m) {
        return (responses - m * predictors).squaredNorm() / n;
    };
    prob.fit_gradient = [&, n](const Matrix& m) {
        return ((2.0 / n) * (m * gram - cross)).eval();
    };
    prob.fit_lipschitz = (2.0 / n) * sv(0) * sv(0);
    prob.strong_convexity = (2.0 / n) * min_pos * min_pos;
    prob.penalty_map = [&](const Matrix& m) { return (m * predictors).eval(); };
    prob.penalty_map_adjoint = [&](const Matrix& g) { return (g * predictors.transpose()).eval(); };
    prob.penalty_weight = lambda;
    prob.penalty_map_norm_sq = sv(0) * sv(0);
    return smoothed_accelerated_solve(prob, Matrix::Zero(predictors.rows(), predictors.rows()), u,
                                      iterations)
        .minimizer;
}

/// Brute-force distance from A/lambda-scaled stationarity to the nuclear-norm
/// subdifferential at M: projected gradient over W = U1 V1^T + U2 W0 V2^T
/// with ||W0||_op <= 1.
inline double subdifferential_distance_reference(const Matrix& a, double lambda, const Matrix& m,
                                                 int iterations = 5000) {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector& sv = svd.singularValues();
    const double top = sv.size() > 0 ? sv(0) : 0.0;
    Index rank = 0;
    for (Index i = 0; i < sv.size(); ++i)
        if (sv(i) > 1e-10 * top) ++rank;
    const Matrix u1 = svd.matrixU().leftCols(rank);
    const Matrix v1 = svd.matrixV().leftCols(rank);
    const Matrix u2 = svd.matrixU().rightCols(m.rows() - rank);
    const Matrix v2 = svd.matrixV().rightCols(m.cols() - rank);

    const Matrix b = a - lambda * u1 * v1.transpose();
    if (u2.cols() == 0 || v2.cols() == 0) return b.norm();

    auto clip_operator_ball = [](const Matrix& w) {
        Eigen::JacobiSVD<Matrix> s(w, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Vector vals = s.singularValues();
        for (Index i = 0; i < vals.size(); ++i) vals(i) = std::min(vals(i), 1.0);
        return (s.matrixU() * vals.asDiagonal() * s.matrixV().transpose()).eval();
    };

    Matrix w0 = Matrix::Zero(u2.cols(), v2.cols());
    const double step = lambda > 0.0 ? 1.0 / (2.0 * lambda * lambda) : 0.0;
    for (int k = 0; k < iterations && lambda > 0.0; ++k) {
        const Matrix residual = b - lambda * u2 * w0 * v2.transpose();
        const Matrix grad = -2.0 * lambda * u2.transpose() * residual * v2;
        w0 = clip_operator_ball(w0 - step * grad);
    }
    return (b - lambda * u2 * w0 * v2.transpose()).norm();
}

/// Term-by-term objective evaluation with its own SVD call.
inline double objective_reference(const Matrix& predictors, const Matrix& responses,
                                  const Matrix& m, double lambda, bool predicted_penalty) {
    double fit = 0.0;
    for (Index i = 0; i < predictors.cols(); ++i)
        fit += (responses.col(i) - m * predictors.col(i)).squaredNorm();
    fit /= static_cast<double>(predictors.cols());
    const Matrix penalized = predicted_penalty ? (m * predictors).eval() : m;
    return fit + lambda * Eigen::JacobiSVD<Matrix>(penalized).singularValues().sum();
}

/// Ordinary least squares via the normal equations.
inline Matrix ols(const Matrix& predictors, const Matrix& responses) {
    const Matrix gram = predictors * predictors.transpose();
    return gram.ldlt().solve(predictors * responses.transpose()).transpose();
}

/// Random stable matrix with operator norm exactly gamma (not low-rank).
inline Matrix random_stable(Index p, double gamma, lrvar::Rng& rng) {
    Matrix g = rng.gaussian_matrix(p, p);
    return g * (gamma / lrvar::operator_norm(g));
}

}  // namespace oracles
