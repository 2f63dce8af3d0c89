#include "support/instances.hpp"

#include "h2market/equilibrium.hpp"
#include "h2market/oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace h2market;
using namespace h2market::testing;

namespace {

/// Agent `i` keeps its decision, every other agent sells (and generates) `others`.
std::vector<AgentDecision> with_others(const GamePlan& plan, double mine, double others) {
  std::vector<AgentDecision> d(plan.agents(), AgentDecision::zeros(plan.layout));
  for (int i = 0; i < plan.agents(); ++i) {
    const double v = i == 0 ? mine : others;
    d[i].s.setConstant(v);
    d[i].g.setConstant(v);
  }
  return d;
}

double max_sales_deviation(const std::vector<AgentDecision>& d, double expected) {
  double dev = 0.0;
  for (const auto& x : d) dev = std::max(dev, (x.s.array() - expected).abs().maxCoeff());
  return dev;
}

}  // namespace

TEST_SUITE("equilibrium") {
  TEST_CASE("penalty ladder") {
    const PenaltyConfig c{1.0, 1e3, 10.0, 1e-4, 1e-6};
    CHECK(c.ladder() == std::vector<double>{1.0, 10.0, 100.0, 1000.0});
    CHECK_THROWS_AS((PenaltyConfig{0.0, 1.0, 10.0, 1e-4, 1e-6}.ladder()), InputError);
    CHECK_THROWS_AS((PenaltyConfig{1.0, 1.0, 1.0, 1e-4, 1e-6}.ladder()), InputError);
  }

  TEST_CASE("zero penalty gives the negated profit") {
    const GamePlan plan = shipped_plan("coupled_network.yaml", "coupled_scenario.yaml");
    const auto d = stressed_decisions(plan, 3);
    for (int i = 0; i < plan.agents(); ++i) {
      const double profit = objective(i, d, plan.demand, plan.costs, plan.grid);
      CHECK(std::abs(penalized_objective(i, d, plan, 0.0) + profit) <= 1e-12 * std::abs(profit));
    }
  }

  TEST_CASE("penalty is the shared term, linear in the penalty parameter") {
    const GamePlan plan = shipped_plan("coupled_network.yaml", "coupled_scenario.yaml");
    const auto d = stressed_decisions(plan, 4);
    const double p1 = penalty_value(d, plan, 1.0);
    CHECK(p1 > 0.0);
    CHECK(penalty_value(d, plan, 3.0) == doctest::Approx(3.0 * p1).epsilon(1e-12));
    CHECK(penalized_objective(1, d, plan, 3.0) - penalized_objective(1, d, plan, 0.0) ==
          doctest::Approx(3.0 * p1).epsilon(1e-9));
  }

  TEST_CASE("penalty vanishes without violations") {
    const GamePlan plan = make_plan(cournot_inputs(2, 10.0, 1.0, 1.0));
    const auto d = with_others(plan, 3.0, 3.0);
    CHECK(penalty_value(d, plan, 1e6) == 0.0);
    CHECK(penalized_objective(0, d, plan, 1e6) == penalized_objective(0, d, plan, 0.0));
  }

  TEST_CASE("single-node best response follows the clamped quadratic optimum") {
    const GamePlan plan = make_plan(cournot_inputs(2, 10.0, 1.0, 1.0));
    for (double others : {0.0, 2.0, 5.0, 9.0, 20.0}) {
      const BestResponse br = best_response(0, with_others(plan, 1.0, others), plan, 0.0);
      const double expected = std::clamp((10.0 - 1.0 - others) / 2.0, 0.0, 100.0);
      CHECK(br.converged);
      CHECK((br.decision.s.array() - expected).abs().maxCoeff() <= 1e-6);
    }
  }

  TEST_CASE("flat demand sells the upper bound") {
    const GamePlan plan = make_plan(cournot_inputs(1, 10.0, 0.0, 1.0));
    const BestResponse br = best_response(0, with_others(plan, 0.0, 0.0), plan, 0.0);
    CHECK((br.decision.s.array() - 100.0).abs().maxCoeff() <= 1e-6);
  }

  TEST_CASE("price below cost sells nothing") {
    const GamePlan plan = make_plan(cournot_inputs(1, 1.0, 1.0, 2.0));
    const BestResponse br = best_response(0, with_others(plan, 5.0, 0.0), plan, 0.0);
    CHECK(br.decision.s.cwiseAbs().maxCoeff() <= 1e-6);
  }

  TEST_CASE("Cournot duopoly and monopoly") {
    for (int n : {1, 2, 3}) {
      const EquilibriumReport rep = solve_gnep(make_plan(cournot_inputs(n, 10.0, 1.0, 1.0)));
      CHECK(rep.certified);
      CHECK(rep.gap.total <= 1e-6);
      CHECK(max_sales_deviation(rep.decisions, cournot_sales(n, 10.0, 1.0, 1.0)) <= 1e-6);
    }
  }

  TEST_CASE("Cournot sales scale with the markup") {
    const EquilibriumReport rep = solve_gnep(make_plan(cournot_inputs(2, 19.0, 1.0, 1.0)));
    CHECK(max_sales_deviation(rep.decisions, 6.0) <= 1e-6);
  }

  TEST_CASE("zero demand makes zero decisions an equilibrium") {
    const EquilibriumReport rep = solve_gnep(make_plan(cournot_inputs(2, 0.0, 1.0, 1.0)));
    CHECK(rep.certified);
    CHECK(max_sales_deviation(rep.decisions, 0.0) <= 1e-9);
  }

  TEST_CASE("Nikaido-Isoda gap") {
    const GamePlan plan = make_plan(cournot_inputs(2, 10.0, 1.0, 1.0));
    const auto eq = with_others(plan, 3.0, 3.0);
    CHECK(nikaido_isoda(eq, eq, plan, 0.0) == 0.0);
    CHECK(ni_gap(eq, plan, 0.0).total <= 1e-6);
    const GapReport dev = ni_gap(with_others(plan, 4.0, 3.0), plan, 0.0);
    CHECK(dev.terms[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::abs(dev.terms[1] - 0.25) <= 1e-6);
  }

  TEST_CASE("methods agree on the duopoly") {
    PlanInputs in = cournot_inputs(2, 10.0, 1.0, 1.0);
    const EquilibriumReport gs = solve_gnep(make_plan(in));
    in.config.method = InnerMethod::jacobi;
    const EquilibriumReport jac = solve_gnep(make_plan(in));
    in.config.method = InnerMethod::extragradient;
    const EquilibriumReport eg = solve_gnep(make_plan(in));
    for (int i = 0; i < 2; ++i) {
      CHECK((gs.decisions[i].stacked() - eg.decisions[i].stacked()).cwiseAbs().maxCoeff() <= 1e-4);
      CHECK((gs.decisions[i].stacked() - jac.decisions[i].stacked()).cwiseAbs().maxCoeff() <= 1e-4);
    }
    CHECK(eg.gap.total <= in.config.gap_tol);
  }

  TEST_CASE("identical agents receive symmetric decisions under Jacobi") {
    PlanInputs in = cournot_inputs(3, 10.0, 1.0, 1.0);
    in.config.method = InnerMethod::jacobi;
    in.config.concurrent = true;
    const EquilibriumReport rep = solve_gnep(make_plan(in));
    for (int i = 1; i < 3; ++i) {
      CHECK((rep.decisions[i].stacked() - rep.decisions[0].stacked()).cwiseAbs().maxCoeff() <= 1e-6);
    }
  }

  TEST_CASE("feasibility report") {
    const GamePlan plan = make_plan(cournot_inputs(2, 10.0, 1.0, 1.0));
    auto d = feasible_start(plan);
    FeasibilityReport r = feasibility_report(d, plan);
    CHECK(r.box == 0.0);
    CHECK(r.balance == 0.0);
    CHECK(r.state_l2 == 0.0);
    CHECK(r.transmission_l2 == 0.0);
    d[1].s(0, 2) += 1.0;
    r = feasibility_report(d, plan);
    CHECK(r.balance == doctest::Approx(1.0));
  }

  TEST_CASE("coupled instance follows a monotone penalty path") {
    const GamePlan plan = shipped_plan("coupled_network.yaml", "coupled_scenario.yaml");
    const EquilibriumReport rep = solve_gnep(plan);
    CHECK(rep.certified);
    for (std::size_t r = 1; r < rep.path.size(); ++r) {
      CHECK(rep.path[r].state_violation <= rep.path[r - 1].state_violation + 1e-8);
    }
    CHECK(rep.feasibility.state_l2 <= plan.config.violation_target);
    CHECK(rep.feasibility.balance <= plan.config.residual_tol);
    CHECK(rep.feasibility.min_net_injection >= -plan.config.residual_tol);
  }

  TEST_CASE("t0 values stay at their pins") {
    const GamePlan plan = shipped_plan("coupled_network.yaml", "coupled_scenario.yaml");
    const EquilibriumReport rep = solve_gnep(plan);
    CHECK(rep.feasibility.pin <= 1e-9);
  }
}
