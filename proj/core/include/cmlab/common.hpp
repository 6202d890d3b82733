#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace cmlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Argument outside the mathematical domain of an operation (e.g. t > T).
struct DomainError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Structurally invalid argument (e.g. nonpositive counts, bad params).
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Estimator not applicable to these inputs (dimension, size cap, ...).
struct MethodError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Backward solve produced a non-finite or runaway state.
struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& msg, int step) : std::runtime_error(msg), step_index(step) {}
  int step_index;
};

// Optimization produced a non-finite loss.
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InsufficientDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cmlab
