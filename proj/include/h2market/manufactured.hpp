#pragma once

#include "h2market/gas_dynamics.hpp"
#include "h2market/network.hpp"

#include <vector>

namespace h2market {

/// Smooth exact solution on an arbitrary tree network together with the source
/// that makes it solve the regularized system. Built from cubic Hermite
/// profiles per pipe whose junction data satisfy both the essential and the
/// natural coupling conditions, plus interior bumps.
class ManufacturedSolution {
 public:
  /// Requires γ constant per pipe (constant reference fields).
  ManufacturedSolution(const NetworkModel& model, const CoefficientFields& coeffs);

  struct Value {
    double v = 0.0;
    double dx = 0.0;
    double dxx = 0.0;
    double dt = 0.0;
  };

  Value pressure(int e, double x, double t) const;
  Value flow(int e, double x, double t) const;

  /// Strong-form residuals of the exact solution (the forcing).
  double source_pressure(int e, double x, double t) const;
  double source_flow(int e, double x, double t) const;

  Eigen::VectorXd nodal(const SpatialMesh& mesh, double t) const;
  Eigen::VectorXd nodal_source(const SpatialMesh& mesh, double t) const;
  BoundaryData boundary(const SpatialMesh& mesh, const TimeGrid& grid) const;

  /// L²(0,T; L²) error of the piecewise-linear state, 3-point Gauss per cell,
  /// trapezoid in time.
  double l2_error(const GasState& y, const SpatialMesh& mesh, const TimeGrid& grid) const;

 private:
  // A e^{-t} + B sin t + C
  struct TimeFn {
    double a = 0.0, b = 0.0, c = 0.0;
    double at(double t) const;
    double rate(double t) const;
  };
  struct EndData {
    TimeFn pv, pd, qv, qd;
  };
  struct PipeData {
    double length = 1.0;
    EndData end[2];
    double p_bump = 0.0;
    double q_bump = 0.0;
  };
  Value evaluate(int e, bool flow_field, double x, double t) const;

  std::vector<PipeData> pipes_;
  double eps_, theta1_, theta2_;
  std::vector<double> gamma1_, gamma2_;
};

struct ConvergenceRow {
  int cells = 0;
  double h = 0.0;
  double dt = 0.0;
  int steps = 0;
  double error = 0.0;
  double order = 0.0;  // log2 slope against the previous row, 0 for the first
};

/// Manufactured-solution refinement study with Δt = dt_factor·h².
std::vector<ConvergenceRow> convergence_study(const NetworkModel& model, const std::vector<int>& cells,
                                              double horizon, double dt_factor = 0.5, double theta = 1.0);

/// Nondimensional three-pipe star used for verification runs.
NetworkModel manufactured_star_network();

}  // namespace h2market
