#include "builders.hpp"

#include "h2market/market.hpp"

#include <doctest.h>

#include <random>

using namespace h2market;
using namespace h2market::testing;

namespace {

NetworkModel one_node() {
  Node m = make_node("m", roles({"electricity", "generation", "sale"}));
  m.g_max = 100.0;
  m.s_max = 100.0;
  return NetworkModel({m}, {}, {}, unit_constants(), "m");
}

Scenario constant_scenario(double weight, double a, double b, int cols = 2) {
  return Scenario{weight, Eigen::MatrixXd::Constant(1, cols, a), Eigen::MatrixXd::Constant(1, cols, b)};
}

}  // namespace

TEST_SUITE("market") {
  TEST_CASE("scenario averaging") {
    SUBCASE("single scenario") {
      const DemandCurve c = average_demand(ScenarioSet{{constant_scenario(1.0, 7.0, 2.0)}, {}, {}});
      CHECK(c.a(0, 0) == 7.0);
      CHECK(c.b(0, 1) == 2.0);
    }
    SUBCASE("two equal weights") {
      const DemandCurve c =
          average_demand(ScenarioSet{{constant_scenario(0.5, 8.0, 1.0), constant_scenario(0.5, 12.0, 1.0)}, {}, {}});
      CHECK(c.a(0, 0) == doctest::Approx(10.0));
    }
    SUBCASE("five random scenarios match a weighted sum") {
      std::mt19937_64 rng(4);
      std::uniform_real_distribution<double> u(0.1, 1.0);
      ScenarioSet set;
      double total = 0.0;
      for (int s = 0; s < 5; ++s) {
        Scenario sc{u(rng), Eigen::MatrixXd(2, 3), Eigen::MatrixXd(2, 3)};
        for (auto& v : sc.a.reshaped()) v = 10.0 * u(rng);
        for (auto& v : sc.b.reshaped()) v = u(rng);
        total += sc.weight;
        set.scenarios.push_back(sc);
      }
      for (auto& sc : set.scenarios) sc.weight /= total;
      const DemandCurve c = average_demand(set);
      for (int r = 0; r < 2; ++r) {
        for (int k = 0; k < 3; ++k) {
          double a = 0.0, b = 0.0;
          for (const auto& sc : set.scenarios) {
            a += sc.weight * sc.a(r, k);
            b += sc.weight * sc.b(r, k);
          }
          CHECK(std::abs(c.a(r, k) - a) <= 1e-12);
          CHECK(std::abs(c.b(r, k) - b) <= 1e-12);
        }
      }
    }
    SUBCASE("weights not summing to one are rejected") {
      CHECK_THROWS_WITH_AS(average_demand(ScenarioSet{{constant_scenario(0.9, 1.0, 1.0)}, {}, {}}),
                           doctest::Contains("scenario weights"), InputError);
    }
    SUBCASE("negative slope is rejected") {
      CHECK_THROWS_AS(average_demand(ScenarioSet{{constant_scenario(1.0, 1.0, -1.0)}, {}, {}}), InputError);
    }
  }

  TEST_CASE("inverse demand") {
    DemandCurve c{Eigen::MatrixXd::Constant(1, 1, 10.0), Eigen::MatrixXd::Constant(1, 1, 1.0)};
    CHECK(price(c, 0, 0, 0.0) == 10.0);
    CHECK(price(c, 0, 0, 6.0) == 4.0);
    c.b.setZero();
    CHECK(price(c, 0, 0, 50.0) == 10.0);
  }

  TEST_CASE("boundary flow magnitudes and net injection") {
    const NetworkModel m = single_pipe();
    const TimeGrid grid(2.0, 4);
    const MarketLayout lay = MarketLayout::from_model(m, grid);
    ConversionMap conv = ConversionMap::from_model(m, lay);
    AgentDecision d = AgentDecision::zeros(lay);
    CHECK(boundary_flow(d, lay, m, conv).cwiseAbs().maxCoeff() == 0.0);
    CHECK(net_injection(d, lay, m, conv, grid) == 0.0);

    conv.eta.setConstant(15.0);
    d.c.setConstant(2.0);
    const Eigen::MatrixXd q = boundary_flow(d, lay, m, conv);
    CHECK(q.maxCoeff() == doctest::Approx(30.0));

    conv.eta.setConstant(1.0);
    d.c.setConstant(1.0);
    CHECK(net_injection(d, lay, m, conv, grid) == doctest::Approx(2.0));
    d.s.setConstant(2.0);
    CHECK(net_injection(d, lay, m, conv, grid) == doctest::Approx(-2.0));
  }

  TEST_CASE("net injection gradient matches the function") {
    const NetworkModel m = single_pipe();
    const TimeGrid grid(2.0, 4);
    const MarketLayout lay = MarketLayout::from_model(m, grid);
    const ConversionMap conv = ConversionMap::from_model(m, lay);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    Eigen::VectorXd x(lay.size());
    for (auto& v : x) v = u(rng);
    const double value = net_injection(AgentDecision::unstack(lay, x), lay, m, conv, grid);
    CHECK(net_injection_gradient(lay, m, conv, grid).dot(x) == doctest::Approx(value).epsilon(1e-13));
  }

  TEST_CASE("profit of a balanced constant plan") {
    const NetworkModel m = one_node();
    const TimeGrid grid(1.0, 4);
    const MarketLayout lay = MarketLayout::from_model(m, grid);
    const DemandCurve c{Eigen::MatrixXd::Constant(1, grid.nodes(), 10.0), Eigen::MatrixXd::Constant(1, grid.nodes(), 1.0)};
    const CostTable costs{{Eigen::VectorXd::Constant(1, 1.0)}, {Eigen::VectorXd(0)}};
    AgentDecision d = AgentDecision::zeros(lay);
    CHECK(objective(0, {d}, c, costs, grid) == 0.0);
    d.s.setConstant(3.0);
    d.g.setConstant(3.0);
    CHECK(objective(0, {d}, c, costs, grid) == doctest::Approx(18.0));
    CHECK(objective(0, {d}, c, costs, grid, TimeQuadrature::simpson) == doctest::Approx(18.0));
  }

  TEST_CASE("profit gradient matches central differences") {
    const NetworkModel m = one_node();
    const TimeGrid grid(1.0, 3);
    const MarketLayout lay = MarketLayout::from_model(m, grid);
    const DemandCurve c{Eigen::MatrixXd::Constant(1, grid.nodes(), 10.0), Eigen::MatrixXd::Constant(1, grid.nodes(), 1.5)};
    const CostTable costs{{Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 2.0)},
                          {Eigen::VectorXd(0), Eigen::VectorXd(0)}};
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 4.0);
    std::vector<AgentDecision> ds;
    for (int i = 0; i < 2; ++i) {
      Eigen::VectorXd x(lay.size());
      for (auto& v : x) v = u(rng);
      ds.push_back(AgentDecision::unstack(lay, x));
    }
    const Eigen::VectorXd g = objective_gradient(1, ds, c, costs, lay, grid);
    for (int j = 0; j < lay.size(); ++j) {
      auto dp = ds, dm = ds;
      Eigen::VectorXd x = ds[1].stacked();
      x(j) += 1e-5;
      dp[1] = AgentDecision::unstack(lay, x);
      x(j) -= 2e-5;
      dm[1] = AgentDecision::unstack(lay, x);
      const double fd = (objective(1, dp, c, costs, grid) - objective(1, dm, c, costs, grid)) / 2e-5;
      CHECK(g(j) == doctest::Approx(fd).epsilon(1e-7));
    }
  }

  TEST_CASE("box projection") {
    const NetworkModel m = one_node();
    const MarketLayout lay = MarketLayout::from_model(m, TimeGrid(1.0, 2));
    const AgentBounds bounds = AgentBounds::from_model(m, lay);
    AgentDecision d = AgentDecision::zeros(lay);
    d.s.setConstant(5.0);
    CHECK(project_box(d, bounds) == d);
    d.g(0, 1) = -1.0;
    d.s(0, 2) = 150.0;
    const AgentDecision p = project_box(d, bounds);
    CHECK(p.g(0, 1) == 0.0);
    CHECK(p.s(0, 2) == 100.0);
  }

  TEST_CASE("stacking round trip") {
    const NetworkModel m = single_pipe();
    const MarketLayout lay = MarketLayout::from_model(m, TimeGrid(1.0, 3));
    Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(lay.size(), 0.0, 1.0);
    CHECK(AgentDecision::unstack(lay, x).stacked() == x);
  }
}
