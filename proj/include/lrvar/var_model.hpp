#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "lrvar/common.hpp"
#include "lrvar/csv.hpp"
#include "lrvar/rng.hpp"

namespace lrvar {

/// Square transition matrix together with its rank/operator-norm contract.
/// Construction checks that the numerical rank does not exceed the declared
/// rank and that the operator norm stays within the spectral bound.
class TransitionMatrix {
  public:
    TransitionMatrix(Matrix entries, int declared_rank, double spectral_bound)
        : entries_(std::move(entries)), declared_rank_(declared_rank), spectral_bound_(spectral_bound) {
        if (entries_.rows() != entries_.cols())
            throw ShapeMismatch("transition matrix must be square");
        if (declared_rank_ < 0 || declared_rank_ > entries_.rows())
            throw InvalidRank("declared rank out of range");
        Eigen::JacobiSVD<Matrix> svd(entries_);
        const auto& sv = svd.singularValues();
        operator_norm_ = sv.size() > 0 ? sv(0) : 0.0;
        if (operator_norm_ > spectral_bound_ + 1e-10)
            throw SpectralRadiusViolation("operator norm " + std::to_string(operator_norm_) +
                                          " exceeds spectral bound " + std::to_string(spectral_bound_));
        for (Index i = declared_rank_; i < sv.size(); ++i) {
            if (sv(i) > 1e-8 * operator_norm_)
                throw InvalidRank("numerical rank exceeds declared rank");
        }
    }

    const Matrix& entries() const { return entries_; }
    int declared_rank() const { return declared_rank_; }
    double spectral_bound() const { return spectral_bound_; }
    double operator_norm() const { return operator_norm_; }
    Index dim() const { return entries_.rows(); }

  private:
    Matrix entries_;
    int declared_rank_;
    double spectral_bound_;
    double operator_norm_;
};

/// Innovation covariance with a cached Cholesky factor.
class NoiseModel {
  public:
    explicit NoiseModel(Matrix covariance) : covariance_(std::move(covariance)) {
        if (covariance_.rows() != covariance_.cols())
            throw ShapeMismatch("noise covariance must be square");
        const double scale = std::max(1.0, covariance_.cwiseAbs().maxCoeff());
        if ((covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
            throw NotSpd("noise covariance not symmetric");
        Eigen::SelfAdjointEigenSolver<Matrix> eig(covariance_);
        if (eig.eigenvalues()(0) <= 0.0)
            throw NotSpd("noise covariance not positive definite");
        Eigen::LLT<Matrix> llt(covariance_);
        if (llt.info() != Eigen::Success) throw NotSpd("noise covariance fails Cholesky");
        cholesky_factor_ = llt.matrixL();
        min_eigenvalue_ = eig.eigenvalues()(0);
        max_eigenvalue_ = eig.eigenvalues()(covariance_.rows() - 1);
    }

    static NoiseModel identity(Index p) { return NoiseModel(Matrix::Identity(p, p)); }

    const Matrix& covariance() const { return covariance_; }
    const Matrix& cholesky_factor() const { return cholesky_factor_; }
    Index dim() const { return covariance_.rows(); }
    double operator_norm() const { return max_eigenvalue_; }
    double condition_number() const { return max_eigenvalue_ / min_eigenvalue_; }

  private:
    Matrix covariance_;
    Matrix cholesky_factor_;
    double min_eigenvalue_ = 0.0;
    double max_eigenvalue_ = 0.0;
};

/// Observed path X_0..X_T, one row per time step.
struct Trajectory {
    Matrix samples;  // (T+1) x p

    Index dim() const { return samples.cols(); }
    int horizon() const { return static_cast<int>(samples.rows()) - 1; }

    void save_csv(const std::string& path) const { write_matrix_csv(samples, path, "x"); }

    static Trajectory load_csv(const std::string& path) {
        Trajectory t{read_matrix_csv(path)};
        if (t.samples.rows() < 2) throw IoFailure("trajectory needs at least two rows: " + path);
        if (!t.samples.allFinite()) throw NumericError("trajectory contains non-finite entries");
        return t;
    }
};

/// Piecewise model: theta_before drives transitions with index <= change_point,
/// theta_after the rest. Without a change point both matrices must be equal.
struct ChangeSpec {
    TransitionMatrix theta_before;
    TransitionMatrix theta_after;
    std::optional<int> change_point;

    ChangeSpec(TransitionMatrix before, TransitionMatrix after, std::optional<int> tau)
        : theta_before(std::move(before)), theta_after(std::move(after)), change_point(tau) {
        if (theta_before.dim() != theta_after.dim())
            throw ShapeMismatch("transition matrices of different dimension");
        if (!change_point && theta_before.entries() != theta_after.entries())
            throw ConfigInvalid("null model requires identical transition matrices");
    }

    static ChangeSpec null_model(TransitionMatrix theta) {
        TransitionMatrix copy = theta;
        return ChangeSpec(std::move(theta), std::move(copy), std::nullopt);
    }
};

/// Solves S = Theta S Theta^T + Sigma_Z by a doubling fixed-point iteration:
/// after k rounds S holds the first 2^k terms of the series sum Theta^j Sigma_Z Theta^j^T.
inline Matrix solve_lyapunov(const Matrix& theta, const NoiseModel& noise) {
    if (theta.rows() != theta.cols() || theta.rows() != noise.dim())
        throw ShapeMismatch("solve_lyapunov: dimension mismatch");
    if (operator_norm(theta) >= 1.0)
        throw SpectralRadiusViolation("solve_lyapunov requires operator norm < 1");

    Matrix s = noise.covariance();
    Matrix a = theta;
    const double tol = 1e-12;
    for (int k = 0; k < 200; ++k) {
        const Matrix residual = s - theta * s * theta.transpose() - noise.covariance();
        if (residual.norm() <= tol * s.norm()) break;
        s += a * s * a.transpose();
        s = ((s + s.transpose()) * 0.5).eval();
        a = (a * a).eval();
    }
    return s;
}

inline Matrix solve_lyapunov(const TransitionMatrix& theta, const NoiseModel& noise) {
    return solve_lyapunov(theta.entries(), noise);
}

namespace detail {

/// Orthogonal factor of a Gaussian matrix, with the sign convention that the
/// QR factor's diagonal is nonnegative (makes the draw canonical).
inline Matrix random_orthogonal(Index p, Rng& rng) {
    const Matrix g = rng.gaussian_matrix(p, p);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Index j = 0; j < p; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return q;
}

}  // namespace detail

/// Draws Theta = U D U^T with orthogonal U and a diagonal D carrying R
/// nonzero eigenvalues, the largest magnitude rescaled to exactly gamma.
/// Magnitudes are drawn on [gamma/2, gamma] with random signs so every
/// retained eigenvalue stays well away from zero and the rank is exact.
inline TransitionMatrix random_low_rank_transition(Index p, int rank, double gamma, Rng& rng) {
    if (rank < 1 || rank > p) throw InvalidRank("rank must lie in {1..p}");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigInvalid("gamma must lie in (0,1)");

    const Matrix u = detail::random_orthogonal(p, rng);
    Vector d = Vector::Zero(p);
    for (int i = 0; i < rank; ++i) d(i) = rng.uniform(0.5 * gamma, gamma);
    const double scale = gamma / d.head(rank).cwiseAbs().maxCoeff();
    for (int i = 0; i < rank; ++i) {
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        d(i) *= scale * sign;
    }
    Matrix theta = u * d.asDiagonal() * u.transpose();
    theta = ((theta + theta.transpose()) * 0.5).eval();
    return TransitionMatrix(std::move(theta), rank, gamma);
}

/// Builds a pair sharing the eigenbasis of `base`, with the second matrix's
/// eigenvalues shifted toward (and possibly through) zero so that the
/// Frobenius norm of the difference equals jump_fro exactly.
inline std::pair<TransitionMatrix, TransitionMatrix> make_change_pair(const TransitionMatrix& base,
                                                                      double jump_fro) {
    if (jump_fro < 0.0) throw ConfigInvalid("jump_fro must be nonnegative");
    if (jump_fro == 0.0) return {base, base};

    const Matrix& m = base.entries();
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, m.cwiseAbs().maxCoeff()))
        throw ConfigInvalid("make_change_pair expects a symmetric base matrix");

    Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
    const Vector d = eig.eigenvalues();
    const Matrix u = eig.eigenvectors();

    const double top = d.cwiseAbs().maxCoeff();
    std::vector<Index> active;
    for (Index i = 0; i < d.size(); ++i)
        if (std::abs(d(i)) > 1e-8 * top) active.push_back(i);
    if (active.empty()) throw ZeroMatrix("base matrix has no active eigenvalues");

    const double delta = jump_fro / std::sqrt(static_cast<double>(active.size()));
    Vector d2 = d;
    for (Index i : active) d2(i) -= (d(i) > 0.0 ? delta : -delta);
    if (d2.cwiseAbs().maxCoeff() > base.spectral_bound() + 1e-12)
        throw InfeasibleJump("requested jump leaves the spectral bound");

    Matrix after = u * d2.asDiagonal() * u.transpose();
    after = ((after + after.transpose()) * 0.5).eval();
    TransitionMatrix theta2(std::move(after), base.declared_rank(), base.spectral_bound());
    return {base, theta2};
}

/// Largest jump_fro accepted by make_change_pair for this base matrix.
inline double max_feasible_jump(const TransitionMatrix& base) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(base.entries());
    const Vector d = eig.eigenvalues();
    const double top = d.cwiseAbs().maxCoeff();
    double min_active = top;
    int count = 0;
    for (Index i = 0; i < d.size(); ++i) {
        if (std::abs(d(i)) > 1e-8 * top) {
            min_active = std::min(min_active, std::abs(d(i)));
            ++count;
        }
    }
    if (count == 0) return 0.0;
    return std::sqrt(static_cast<double>(count)) * (base.spectral_bound() + min_active);
}

/// Simulates T transitions with a stationary start X_0 ~ N(0, Sigma_1).
inline Trajectory simulate(const ChangeSpec& spec, const NoiseModel& noise, int horizon, Rng& rng) {
    if (horizon < 2) throw ConfigInvalid("horizon must be at least 2");
    const Index p = spec.theta_before.dim();
    if (noise.dim() != p) throw ShapeMismatch("noise dimension mismatch");
    if (spec.theta_before.operator_norm() >= 1.0 || spec.theta_after.operator_norm() >= 1.0)
        throw SpectralRadiusViolation("simulate requires stable transition matrices");

    const Matrix sigma1 = solve_lyapunov(spec.theta_before, noise);
    Eigen::LLT<Matrix> llt(sigma1);
    if (llt.info() != Eigen::Success) throw NotSpd("stationary covariance fails Cholesky");
    const Matrix l1 = llt.matrixL();

    Trajectory traj;
    traj.samples.resize(horizon + 1, p);
    Vector x = l1 * rng.gaussian_vector(p);
    traj.samples.row(0) = x.transpose();
    const int tau = spec.change_point.value_or(horizon);
    for (int t = 0; t < horizon; ++t) {
        const Matrix& theta = (t <= tau) ? spec.theta_before.entries() : spec.theta_after.entries();
        x = theta * x + noise.cholesky_factor() * rng.gaussian_vector(p);
        traj.samples.row(t + 1) = x.transpose();
    }
    return traj;
}

/// Noise-free recursion from a fixed start; test hook for exact checks.
inline Trajectory simulate_noiseless(const ChangeSpec& spec, const Vector& x0, int horizon) {
    const Index p = spec.theta_before.dim();
    if (x0.size() != p) throw ShapeMismatch("x0 dimension mismatch");
    Trajectory traj;
    traj.samples.resize(horizon + 1, p);
    Vector x = x0;
    traj.samples.row(0) = x.transpose();
    const int tau = spec.change_point.value_or(horizon);
    for (int t = 0; t < horizon; ++t) {
        const Matrix& theta = (t <= tau) ? spec.theta_before.entries() : spec.theta_after.entries();
        x = (theta * x).eval();
        traj.samples.row(t + 1) = x.transpose();
    }
    return traj;
}

/// q^2(t/T) = t(T-t)/T^2 evaluated so that t and T-t give bit-identical values.
inline double location_weight_sq(int t, int horizon) {
    const double num = static_cast<double>(static_cast<std::int64_t>(t) * (horizon - t));
    return num / (static_cast<double>(horizon) * static_cast<double>(horizon));
}

/// Jump energy q(t/T) * ||Theta_1 - Theta_2||_F.
inline double change_energy(int t, int horizon, const Matrix& theta1, const Matrix& theta2) {
    return std::sqrt(location_weight_sq(t, horizon)) * (theta1 - theta2).norm();
}

}  // namespace lrvar
