#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace lrvar {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Base class for configuration/usage errors (CLI exit code 1).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Base class for numerical failures (CLI exit code 2).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SpectralRadiusViolation : NumericError {
    using NumericError::NumericError;
};
struct NotSpd : NumericError {
    using NumericError::NumericError;
};
struct InvalidRank : ConfigError {
    using ConfigError::ConfigError;
};
struct InfeasibleJump : ConfigError {
    using ConfigError::ConfigError;
};
struct ShapeMismatch : ConfigError {
    using ConfigError::ConfigError;
};
struct SvdFailure : NumericError {
    using NumericError::NumericError;
};
struct DegenerateSplit : ConfigError {
    using ConfigError::ConfigError;
};
struct ZeroMatrix : NumericError {
    using NumericError::NumericError;
};
struct ConfigInvalid : ConfigError {
    using ConfigError::ConfigError;
};
struct IoFailure : ConfigError {
    using ConfigError::ConfigError;
};

inline double operator_norm(const Matrix& m) {
    if (m.rows() == 0 || m.cols() == 0) return 0.0;
    return m.jacobiSvd().singularValues()(0);
}

inline double frobenius(const Matrix& m) { return m.norm(); }

}  // namespace lrvar
