#include <catch2/catch_amalgamated.hpp>

#include "lrvar/var_model.hpp"
#include "oracles.hpp"

using namespace lrvar;

TEST_CASE("lyapunov: zero dynamics returns the noise covariance") {
    const NoiseModel noise = NoiseModel::identity(3);
    const Matrix sigma = solve_lyapunov(Matrix::Zero(3, 3), noise);
    REQUIRE((sigma - Matrix::Identity(3, 3)).norm() == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("lyapunov: scalar contraction gives the geometric series") {
    const NoiseModel noise = NoiseModel::identity(3);
    const Matrix theta = 0.5 * Matrix::Identity(3, 3);
    const Matrix sigma = solve_lyapunov(theta, noise);
    REQUIRE((sigma - (4.0 / 3.0) * Matrix::Identity(3, 3)).norm() < 1e-12);
}

TEST_CASE("lyapunov: matches the Kronecker linear solve") {
    Rng rng(123);
    Vector diag(4);
    diag << 1, 2, 3, 4;
    const NoiseModel noise{Matrix(diag.asDiagonal())};
    for (int rep = 0; rep < 20; ++rep) {
        const Matrix theta = oracles::random_stable(4, 0.85, rng);
        const Matrix sigma = solve_lyapunov(theta, noise);
        const Matrix ref = oracles::lyapunov_kron_solve(theta, noise.covariance());
        REQUIRE((sigma - ref).norm() < 1e-9);
    }
}

TEST_CASE("lyapunov: rejects unstable dynamics and non-SPD noise") {
    const NoiseModel noise = NoiseModel::identity(2);
    REQUIRE_THROWS_AS(solve_lyapunov(Matrix::Identity(2, 2), noise), SpectralRadiusViolation);
    Matrix bad(2, 2);
    bad << 1, 2, 2, 1;  // eigenvalues 3 and -1
    REQUIRE_THROWS_AS(NoiseModel(bad), NotSpd);
    Matrix asym(2, 2);
    asym << 1, 0.5, 0.0, 1;
    REQUIRE_THROWS_AS(NoiseModel(asym), NotSpd);
}

TEST_CASE("lyapunov residual, condition number and norm bounds hold") {
    Rng rng(99);
    for (int rep = 0; rep < 100; ++rep) {
        const Index p = 2 + static_cast<Index>(rng.uniform_int(0, 3));
        const double gamma = rng.uniform(0.2, 0.95);
        const Matrix theta = oracles::random_stable(p, gamma, rng);
        const Matrix g = rng.gaussian_matrix(p, p);
        const Matrix cov = g * g.transpose() + 0.5 * Matrix::Identity(p, p);
        const NoiseModel noise{cov};
        const Matrix sigma = solve_lyapunov(theta, noise);

        const Matrix residual = sigma - theta * sigma * theta.transpose() - noise.covariance();
        REQUIRE(residual.norm() <= 1e-10 * sigma.norm());

        Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
        const double kappa_sigma = eig.eigenvalues()(p - 1) / eig.eigenvalues()(0);
        const double kappa_bound =
            noise.condition_number() * (1.0 + gamma * gamma) / (1.0 - gamma * gamma);
        REQUIRE(kappa_sigma <= kappa_bound * (1.0 + 1e-10));

        const double norm_bound = noise.operator_norm() / (1.0 - gamma * gamma);
        REQUIRE(eig.eigenvalues()(p - 1) <= norm_bound * (1.0 + 1e-10));
    }
}

TEST_CASE("random low-rank transitions meet their contract") {
    Rng rng(7);
    const TransitionMatrix theta = random_low_rank_transition(4, 4, 0.9, rng);
    REQUIRE(theta.operator_norm() == Catch::Approx(0.9).margin(1e-12));

    Rng rng2(11);
    const TransitionMatrix low = random_low_rank_transition(10, 3, 0.8, rng2);
    const Vector sv = Eigen::JacobiSVD<Matrix>(low.entries()).singularValues();
    for (Index i = 3; i < 10; ++i) REQUIRE(sv(i) < 1e-10);
    REQUIRE(sv(2) > 0.1);

    Rng a(42), b(42);
    const TransitionMatrix t1 = random_low_rank_transition(6, 2, 0.7, a);
    const TransitionMatrix t2 = random_low_rank_transition(6, 2, 0.7, b);
    REQUIRE(t1.entries() == t2.entries());

    REQUIRE_THROWS_AS(random_low_rank_transition(4, 5, 0.9, rng), InvalidRank);
    REQUIRE_THROWS_AS(random_low_rank_transition(4, 0, 0.9, rng), InvalidRank);
}

TEST_CASE("change pairs share the eigenbasis and hit the requested jump") {
    Rng rng(5);
    const TransitionMatrix base = random_low_rank_transition(4, 2, 0.9, rng);

    const auto same = make_change_pair(base, 0.0);
    REQUIRE(same.first.entries() == same.second.entries());

    const auto pair = make_change_pair(base, 0.5);
    REQUIRE((pair.first.entries() - pair.second.entries()).norm() ==
            Catch::Approx(0.5).margin(1e-10));
    REQUIRE(pair.second.operator_norm() <= 0.9 + 1e-10);

    // the jump norm equals the eigenvalue-difference norm (shared basis)
    Eigen::SelfAdjointEigenSolver<Matrix> e1(pair.first.entries());
    Eigen::SelfAdjointEigenSolver<Matrix> e2(pair.second.entries());
    const double diag_jump = (e1.eigenvalues() - e2.eigenvalues()).norm();
    REQUIRE(diag_jump == Catch::Approx(0.5).margin(1e-8));

    REQUIRE_THROWS_AS(make_change_pair(base, 50.0), InfeasibleJump);
}

TEST_CASE("simulate: iid limit has identity covariance") {
    const Index p = 3;
    const TransitionMatrix zero(Matrix::Zero(p, p), 0, 0.5);
    const NoiseModel noise = NoiseModel::identity(p);
    Rng rng(2024);
    const Trajectory traj = simulate(ChangeSpec::null_model(zero), noise, 10000, rng);
    const Matrix centered = traj.samples;
    const Matrix cov = centered.transpose() * centered / static_cast<double>(traj.samples.rows());
    REQUIRE((cov - Matrix::Identity(p, p)).cwiseAbs().maxCoeff() < 0.1);
}

TEST_CASE("simulate: noiseless recursion is the exact matrix power") {
    Rng rng(3);
    const TransitionMatrix theta = random_low_rank_transition(4, 2, 0.8, rng);
    Vector x0(4);
    x0 << 1, -2, 0.5, 3;
    const Trajectory traj = simulate_noiseless(ChangeSpec::null_model(theta), x0, 6);
    Vector expect = x0;
    for (int t = 1; t <= 6; ++t) {
        expect = theta.entries() * expect;
        REQUIRE((traj.samples.row(t).transpose() - expect).norm() < 1e-12);
    }
}

TEST_CASE("simulate: identical seeds give identical trajectories") {
    Rng rng(17);
    const TransitionMatrix base = random_low_rank_transition(5, 2, 0.8, rng);
    const auto pair = make_change_pair(base, 0.4);
    const ChangeSpec spec(pair.first, pair.second, 20);
    const NoiseModel noise = NoiseModel::identity(5);
    Rng a(55), b(55);
    const Trajectory t1 = simulate(spec, noise, 50, a);
    const Trajectory t2 = simulate(spec, noise, 50, b);
    REQUIRE(t1.samples == t2.samples);
}

TEST_CASE("simulate: change point switches the dynamics after tau") {
    // with zero noise impossible, so drive with the noiseless hook instead
    Matrix m1 = Matrix::Zero(2, 2), m2 = Matrix::Zero(2, 2);
    m1(0, 0) = 0.5;
    m2(0, 0) = -0.5;
    const TransitionMatrix t1(m1, 1, 0.9), t2(m2, 1, 0.9);
    Vector x0(2);
    x0 << 1, 0;
    const Trajectory traj = simulate_noiseless(ChangeSpec(t1, t2, 2), x0, 5);
    // transitions 0,1,2 use t1; transitions 3,4 use t2
    REQUIRE(traj.samples(3, 0) == Catch::Approx(0.125));
    REQUIRE(traj.samples(4, 0) == Catch::Approx(-0.0625));
    REQUIRE(traj.samples(5, 0) == Catch::Approx(0.03125));
}

TEST_CASE("stationary long-run covariance matches the Lyapunov solution") {
    Rng rng(31);
    const TransitionMatrix theta = random_low_rank_transition(4, 2, 0.6, rng);
    const NoiseModel noise = NoiseModel::identity(4);
    const int horizon = 20000;
    const Trajectory traj = simulate(ChangeSpec::null_model(theta), noise, horizon, rng);
    const Matrix cov =
        traj.samples.transpose() * traj.samples / static_cast<double>(traj.samples.rows());
    const Matrix sigma = solve_lyapunov(theta, noise);
    REQUIRE((cov - sigma).cwiseAbs().maxCoeff() < 5.0 / std::sqrt(static_cast<double>(horizon)));
}

TEST_CASE("change energy: zero jump, midpoint value, exact symmetry") {
    Rng rng(8);
    const TransitionMatrix base = random_low_rank_transition(4, 2, 0.9, rng);
    REQUIRE(change_energy(10, 100, base.entries(), base.entries()) == 0.0);

    const auto pair = make_change_pair(base, 1.0);
    REQUIRE(change_energy(50, 100, pair.first.entries(), pair.second.entries()) ==
            Catch::Approx(0.5).margin(1e-10));

    for (int rep = 0; rep < 1000; ++rep) {
        const int horizon = 4 + static_cast<int>(rng.uniform_int(0, 4092));
        const int t = 1 + static_cast<int>(rng.uniform_int(0, horizon - 2));
        const double left = change_energy(t, horizon, pair.first.entries(), pair.second.entries());
        const double right =
            change_energy(horizon - t, horizon, pair.first.entries(), pair.second.entries());
        REQUIRE(left == right);
    }
}

TEST_CASE("trajectory csv round-trips exactly") {
    Rng rng(12);
    Trajectory traj;
    traj.samples = rng.gaussian_matrix(7, 3);
    const std::string path = "traj_roundtrip_test.csv";
    traj.save_csv(path);
    const Trajectory back = Trajectory::load_csv(path);
    REQUIRE(back.samples == traj.samples);
    std::remove(path.c_str());
}

TEST_CASE("noise model validates and factors its covariance") {
    Rng rng(21);
    const Matrix g = rng.gaussian_matrix(4, 4);
    const Matrix cov = g * g.transpose() + Matrix::Identity(4, 4);
    const NoiseModel noise{cov};
    const Matrix rebuilt = noise.cholesky_factor() * noise.cholesky_factor().transpose();
    REQUIRE((rebuilt - cov).norm() <= 1e-10 * cov.norm());
}
