#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace inviv {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Operand dimensions do not conform.
struct ShapeError : Error {
    using Error::Error;
};

/// A linear system or cross-moment matrix is numerically rank deficient.
struct SingularityError : Error {
    using Error::Error;
};

struct NotPositiveDefiniteError : Error {
    using Error::Error;
};

/// A documented precondition was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

/// Rank guard on the instrument/exposure cross-moment failed.
struct WeakInstrumentError : Error {
    using Error::Error;
};

/// Training produced a non-finite loss or gradient.
struct DivergenceError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

inline bool all_finite(const Eigen::Ref<const Matrix>& a) {
    return a.allFinite();
}

inline void require_finite(const Eigen::Ref<const Matrix>& a, const char* what) {
    if (!a.allFinite()) throw Error(std::string(what) + ": non-finite entries");
}

inline std::string shape_str(const Eigen::Ref<const Matrix>& a) {
    return std::to_string(a.rows()) + "x" + std::to_string(a.cols());
}

inline void require_shape(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

} // namespace inviv
