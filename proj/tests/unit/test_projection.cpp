#include "h2market/projection.hpp"

#include <doctest.h>

#include <random>

using namespace h2market;

namespace {

using Groups = std::vector<std::vector<std::pair<int, double>>>;

bool feasible(const AgentPolytope& p, const Eigen::VectorXd& x, double tol = 1e-10) {
  return p.box_violation(x) <= tol && p.balance_residual(x) <= tol && p.injection_value(x) >= -tol;
}

}  // namespace

TEST_SUITE("projection") {
  TEST_CASE("box-only projection clamps") {
    const AgentPolytope p(Eigen::Vector3d::Zero(), Eigen::Vector3d::Constant(2.0), Eigen::Vector3d::Ones(), {}, {});
    const Eigen::Vector3d x = p.project(Eigen::Vector3d(-1.0, 1.0, 5.0));
    CHECK(x(0) == 0.0);
    CHECK(x(1) == 1.0);
    CHECK(x(2) == 2.0);
  }

  TEST_CASE("balance group projects onto the mean") {
    const AgentPolytope p(Eigen::Vector2d::Zero(), Eigen::Vector2d::Constant(10.0), Eigen::Vector2d::Ones(),
                          Groups{{{0, 1.0}, {1, -1.0}}}, {});
    const Eigen::Vector2d x = p.project(Eigen::Vector2d(1.0, 3.0));
    CHECK(x(0) == doctest::Approx(2.0));
    CHECK(x(1) == doctest::Approx(2.0));
  }

  TEST_CASE("injection constraint is enforced") {
    const AgentPolytope p(Eigen::Vector2d::Zero(), Eigen::Vector2d::Constant(10.0), Eigen::Vector2d::Ones(), {},
                          Eigen::Vector2d(1.0, -1.0));
    const Eigen::Vector2d x = p.project(Eigen::Vector2d(0.0, 1.0));
    CHECK(x(0) == doctest::Approx(0.5));
    CHECK(x(1) == doctest::Approx(0.5));
  }

  TEST_CASE("projection satisfies the variational inequality in its metric") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(-2.0, 4.0);
    std::uniform_real_distribution<double> w(0.5, 3.0);
    const int n = 6;
    Eigen::VectorXd lo = Eigen::VectorXd::Zero(n), hi = Eigen::VectorXd::Constant(n, 3.0), wt(n);
    for (auto& v : wt) v = w(rng);
    Eigen::VectorXd inj(n);
    inj << 1.0, -1.0, 0.5, 0.0, -0.7, 0.2;
    const AgentPolytope p(lo, hi, wt, Groups{{{0, 1.0}, {1, 1.0}, {2, -1.0}}, {{3, 2.0}, {4, -1.0}}}, inj);
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::VectorXd y(n);
      for (auto& v : y) v = u(rng);
      const Eigen::VectorXd x = p.project(y);
      REQUIRE(feasible(p, x));
      CHECK((p.project(x) - x).cwiseAbs().maxCoeff() <= 1e-9);
      for (int k = 0; k < 20; ++k) {
        Eigen::VectorXd z(n);
        for (auto& v : z) v = u(rng);
        z = p.project(z);
        CHECK((y - x).dot(wt.asDiagonal() * (z - x)) <= 1e-8);
      }
    }
  }

  TEST_CASE("points inside are unchanged") {
    const AgentPolytope p(Eigen::Vector3d::Zero(), Eigen::Vector3d::Constant(5.0), Eigen::Vector3d::Ones(),
                          Groups{{{0, 1.0}, {1, -1.0}}}, Eigen::Vector3d(0.0, 0.0, 1.0));
    const Eigen::Vector3d y(2.0, 2.0, 1.0);
    CHECK((p.project(y) - y).cwiseAbs().maxCoeff() <= 1e-14);
  }
}
