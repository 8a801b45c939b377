#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace singsynth {

#ifdef SINGSYNTH_USE_DOUBLE
using Scalar = double;
#else
using Scalar = float;
#endif

// Rows are frames (or phones / batch items), columns are feature channels.
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Raised when a caller hands in arguments that violate an operation's
// preconditions (bad ids, shape mismatch, out-of-range times, ...).
class InvalidInput : public std::invalid_argument {
public:
    explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

// Raised when the inputs are well formed but the requested quantity does not
// exist for them (no voiced frames, zero vectors, ...).
class UndefinedResult : public std::domain_error {
public:
    explicit UndefinedResult(const std::string& what) : std::domain_error(what) {}
};

inline void require(bool condition, const std::string& message) {
    if (!condition) {
        throw InvalidInput(message);
    }
}

}  // namespace singsynth
