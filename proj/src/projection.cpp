#include "h2market/projection.hpp"

#include "h2market/common.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace h2market {

AgentPolytope::AgentPolytope(Eigen::VectorXd lo, Eigen::VectorXd hi, Eigen::VectorXd weight,
                             std::vector<std::vector<std::pair<int, double>>> balance, Eigen::VectorXd injection)
    : lo_(std::move(lo)),
      hi_(std::move(hi)),
      weight_(std::move(weight)),
      balance_(std::move(balance)),
      injection_(std::move(injection)) {
  const auto n = lo_.size();
  if (hi_.size() != n || weight_.size() != n || (injection_.size() != 0 && injection_.size() != n)) {
    throw InputError("polytope data sizes disagree");
  }
  if ((weight_.array() <= 0.0).any()) throw InputError("projection weights must be positive");
  for (Eigen::Index j = 0; j < n; ++j) {
    if (lo_(j) > hi_(j)) throw InputError(fmt::format("empty box for variable {}: [{}, {}]", j, lo_(j), hi_(j)));
  }
  std::vector<char> used(n, 0);
  for (const auto& group : balance_) {
    for (auto [j, a] : group) {
      if (a == 0.0) throw InputError("zero coefficient in a balance group");
      if (used[j]) throw InputError("variable appears in two balance groups");
      used[j] = 1;
    }
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!used[j]) free_.push_back(static_cast<int>(j));
  }
}

Eigen::VectorXd AgentPolytope::project_for(const Eigen::VectorXd& y, const Eigen::VectorXd& weight, double mu) const {
  Eigen::VectorXd x(y.size());
  const bool inj = injection_.size() > 0;
  auto shifted = [&](int j) { return y(j) + (inj ? mu * injection_(j) / weight(j) : 0.0); };
  for (int j : free_) x(j) = std::clamp(shifted(j), lo_(j), hi_(j));

  std::vector<double> points;
  for (std::size_t g = 0; g < balance_.size(); ++g) {
    const auto& group = balance_[g];
    if (group.empty()) continue;
    auto value_at = [&](double lambda) {
      double phi = 0.0;
      for (auto [j, a] : group) phi += a * std::clamp(shifted(j) + lambda * a / weight(j), lo_(j), hi_(j));
      return phi;
    };
    points.clear();
    double scale = 0.0;
    for (auto [j, a] : group) {
      points.push_back(weight(j) * (lo_(j) - shifted(j)) / a);
      points.push_back(weight(j) * (hi_(j) - shifted(j)) / a);
      scale += std::abs(a) * std::max(std::abs(lo_(j)), std::abs(hi_(j)));
    }
    std::sort(points.begin(), points.end());
    const double tol = 1e-12 * std::max(scale, 1.0);
    double lambda = 0.0;
    double prev_point = points.front();
    double prev_value = value_at(prev_point);
    if (prev_value > tol) throw SolverError(fmt::format("balance group {} cannot be satisfied (minimum {})", g, prev_value));
    if (prev_value >= 0.0) {
      lambda = prev_point;
    } else {
      bool found = false;
      for (std::size_t i = 1; i < points.size(); ++i) {
        const double v = value_at(points[i]);
        if (v >= 0.0) {
          lambda = v > prev_value ? prev_point + (points[i] - prev_point) * (-prev_value) / (v - prev_value) : points[i];
          found = true;
          break;
        }
        prev_point = points[i];
        prev_value = v;
      }
      if (!found) {
        if (prev_value < -tol) {
          throw SolverError(fmt::format("balance group {} cannot be satisfied (maximum {})", g, prev_value));
        }
        lambda = prev_point;
      }
    }
    for (auto [j, a] : group) x(j) = std::clamp(shifted(j) + lambda * a / weight(j), lo_(j), hi_(j));
  }
  return x;
}

Eigen::VectorXd AgentPolytope::project(const Eigen::VectorXd& y, const Eigen::VectorXd& w) const {
  if (w.size() != lo_.size()) throw InputError("projection metric has the wrong size");
  Eigen::VectorXd x = project_for(y, w, 0.0);
  if (!has_injection()) return x;
  auto psi = [&](const Eigen::VectorXd& v) { return injection_.dot(v); };
  double p0 = psi(x);
  if (p0 >= 0.0) return x;

  // ψ(μ) = bᵀx(μ) is nondecreasing and piecewise linear; bracket then refine.
  double lo = 0.0, hi = 1.0;
  Eigen::VectorXd x_hi = project_for(y, w, hi);
  double p_hi = psi(x_hi);
  int grow = 0;
  while (p_hi < 0.0) {
    if (++grow > 400) throw SolverError("net-injection constraint cannot be satisfied");
    lo = hi;
    p0 = p_hi;
    hi *= 4.0;
    x_hi = project_for(y, w, hi);
    p_hi = psi(x_hi);
  }
  double p_lo = p0;
  int side = 0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    double mid = lo + (hi - lo) * (-p_lo) / (p_hi - p_lo);
    if (!(mid > lo && mid < hi)) mid = 0.5 * (lo + hi);
    const Eigen::VectorXd xm = project_for(y, w, mid);
    const double pm = psi(xm);
    if (pm >= 0.0) {
      hi = mid;
      x_hi = xm;
      p_hi = pm;
      if (pm == 0.0) break;
      if (side == 1) p_lo *= 0.5;  // Illinois modification
      side = 1;
    } else {
      lo = mid;
      p_lo = pm;
      if (side == -1) p_hi *= 0.5;
      side = -1;
    }
  }
  return x_hi;
}

double AgentPolytope::balance_residual(const Eigen::VectorXd& x) const {
  double r = 0.0;
  for (const auto& group : balance_) {
    double s = 0.0;
    for (auto [j, a] : group) s += a * x(j);
    r = std::max(r, std::abs(s));
  }
  return r;
}

double AgentPolytope::injection_value(const Eigen::VectorXd& x) const {
  return injection_.size() ? injection_.dot(x) : 0.0;
}

double AgentPolytope::box_violation(const Eigen::VectorXd& x) const {
  if (x.size() == 0) return 0.0;
  return std::max((lo_ - x).cwiseMax(0.0).maxCoeff(), (x - hi_).cwiseMax(0.0).maxCoeff());
}

}  // namespace h2market
