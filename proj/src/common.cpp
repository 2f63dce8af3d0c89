#include "h2market/common.hpp"

#include <cmath>

namespace h2market {

TimeGrid::TimeGrid(double horizon, int steps) : horizon_(horizon), steps_(steps) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw InputError("time horizon must be positive and finite");
  }
  if (steps < 1) {
    throw InputError("time grid needs at least one step");
  }
}

Eigen::VectorXd TimeGrid::trapezoid_weights() const {
  Eigen::VectorXd w = Eigen::VectorXd::Constant(nodes(), dt());
  w(0) *= 0.5;
  w(steps_) *= 0.5;
  return w;
}

double h1_norm_squared(const Eigen::Ref<const Eigen::VectorXd>& values, const TimeGrid& grid) {
  const double dt = grid.dt();
  double l2 = 0.0;
  double semi = 0.0;
  for (int k = 0; k < grid.steps(); ++k) {
    const double a = values(k);
    const double b = values(k + 1);
    l2 += dt / 3.0 * (a * a + a * b + b * b);
    semi += (b - a) * (b - a) / dt;
  }
  return l2 + semi;
}

}  // namespace h2market
