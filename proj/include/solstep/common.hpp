#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace solstep {

inline constexpr const char* kToolVersion = "0.1.0";

inline constexpr double kPi = 3.14159265358979323846;

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// double throughout: gradients are checked against finite differences and
// artifacts must be byte-reproducible
using Scalar = double;
using Matrix = MatX<Scalar>;
using Vector = VecX<Scalar>;

// Error taxonomy; the CLI maps these onto exit codes (2/3/4).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace solstep
