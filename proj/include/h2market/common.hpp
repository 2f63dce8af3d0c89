#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace h2market {

/// Malformed or inconsistent user input (files, parameters, compatibility).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical routine could not deliver a result within its contract.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Uniform grid on [0, T] with `steps` intervals.
class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(double horizon, int steps);

  double horizon() const { return horizon_; }
  int steps() const { return steps_; }
  int nodes() const { return steps_ + 1; }
  double dt() const { return horizon_ / steps_; }
  double time(int k) const { return k == steps_ ? horizon_ : k * dt(); }

  /// Trapezoidal weights for nodal quadrature over [0, T].
  Eigen::VectorXd trapezoid_weights() const;

  bool operator==(const TimeGrid&) const = default;

 private:
  double horizon_ = 1.0;
  int steps_ = 1;
};

/// Quadrature used for time integrals of products of piecewise-linear series.
enum class TimeQuadrature { trapezoid, simpson };

/// Squared H¹(0,T) norm of a continuous piecewise-linear series, exact.
double h1_norm_squared(const Eigen::Ref<const Eigen::VectorXd>& values, const TimeGrid& grid);

}  // namespace h2market
