#include "support/instances.hpp"

#include "h2market/io.hpp"
#include "h2market/oracles.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <sstream>

using namespace h2market;
using namespace h2market::testing;

TEST_SUITE("io") {
  TEST_CASE("networks survive an emit/parse round trip") {
    for (const char* name : {"coupled_network.yaml", "cournot_network.yaml", "steady_network.yaml",
                             "mms_star_network.yaml", "tight_network.yaml"}) {
      CAPTURE(name);
      const NetworkModel m = load(name);
      CHECK(parse_network(emit_network(m)) == m);
    }
    CHECK(parse_network(emit_network(tree_grid_network(2))) == tree_grid_network(2));
  }

  TEST_CASE("parse errors carry the source location") {
    const std::string text = "format: h2market.network/1\nnodes:\n  - {id: a, roles: [electricity], bogus: 1}\n";
    CHECK_THROWS_WITH_AS(parse_network(text, "net.yaml"), doctest::Contains("net.yaml:3:"), InputError);
    CHECK_THROWS_AS(parse_network("format: other/1\n"), InputError);
    CHECK_THROWS_AS(parse_network("nodes: [unclosed\n"), InputError);
  }

  TEST_CASE("cyclic network parses but fails validation") {
    const NetworkModel m = load("cyclic_network.yaml");
    CHECK(validate_network(m).has("cycle detected"));
  }

  TEST_CASE("scenario weights are checked when building the plan") {
    const NetworkModel m = load("cournot_network.yaml");
    CHECK_THROWS_WITH_AS(build_plan_inputs(m, load_scenario(data("bad_weights_scenario.yaml"))),
                         doctest::Contains("scenario weights"), InputError);
  }

  TEST_CASE("scenario solver overrides") {
    const ScenarioFile sf = load_scenario(data("coupled_scenario.yaml"));
    CHECK(sf.solver.penalty.gamma_max == 1.0e7);
    CHECK(sf.solver.gap_tol == 1.0e-4);
    CHECK(sf.agents == 2);
    CHECK_THROWS_AS(parse_scenario("format: h2market.scenario/1\nsolver: {anderson: -1}\n"), InputError);
    CHECK_THROWS_AS(parse_scenario("format: h2market.scenario/1\nsolver: {unknown_knob: 1}\n"), InputError);
  }

  TEST_CASE("numbers are written with 17 significant digits") {
    CHECK(format_number(0.1) == "0.10000000000000001");
    CHECK(format_number(2.0) == "2");
    CHECK(std::strtod(format_number(1.0 / 3.0).c_str(), nullptr) == 1.0 / 3.0);
  }

  TEST_CASE("decisions CSV round trip") {
    const GamePlan plan = shipped_plan("coupled_network.yaml", "coupled_scenario.yaml");
    const auto d = stressed_decisions(plan, 5);
    const auto back = parse_decisions_csv(decisions_csv(d, plan), plan);
    REQUIRE(back.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(back[i] == d[i]);
    CHECK_THROWS_AS(parse_decisions_csv("wrong header\n", plan), InputError);
    CHECK_THROWS_AS(parse_decisions_csv("agent,node,variable,k,t,value\n0,nowhere,g,0,0,1\n", plan), InputError);
  }

  TEST_CASE("state CSV has one row per pipe, mesh node and time node") {
    const NetworkModel m = load("steady_network.yaml");
    const SpatialMesh mesh(m, 4);
    const TimeGrid grid(1.0, 3);
    const GasState y{Eigen::MatrixXd::Zero(mesh.local_size(), grid.nodes())};
    const std::string csv = state_csv(y, m, mesh, grid);
    std::istringstream in(csv);
    std::string line;
    int rows = 0;
    std::getline(in, line);
    CHECK(line == "edge,j,x,k,t,p,q");
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 5 * 4);
  }

  TEST_CASE("boundary file resolves node ids") {
    const NetworkModel m = load("steady_network.yaml");
    const BoundaryFile f = load_boundary(data("steady_boundary.yaml"));
    const SpatialMesh mesh(m, f.cells);
    const TimeGrid grid(f.horizon, f.steps);
    const BoundaryData bd = build_boundary_data(m, mesh, grid, f);
    CHECK(bd.pressure.minCoeff() == 5.0e6);
    CHECK(bd.flow.maxCoeff() == 2.5);
  }

  TEST_CASE("report schema and content") {
    const GamePlan plan = shipped_plan("cournot_network.yaml", "cournot_scenario.yaml");
    const EquilibriumReport rep = solve_gnep(plan);
    const auto j = nlohmann::json::parse(report_json(rep, plan, RunInfo{"solve", "n.yaml", "s.yaml", 0, false}));
    CHECK(j["schema"] == "h2market.report/1");
    CHECK(j["status"]["certified"] == true);
    CHECK(j["ni_gap"]["per_agent"].size() == 2);
    CHECK_FALSE(j.contains("timings"));
    const auto timed = nlohmann::json::parse(report_json(rep, plan, RunInfo{"solve", "n.yaml", "s.yaml", 0, true}));
    CHECK(timed.contains("timings"));
  }

  TEST_CASE("bundle writes four files") {
    const GamePlan plan = shipped_plan("cournot_network.yaml", "monopoly_scenario.yaml");
    const auto dir = std::filesystem::temp_directory_path() / "h2market_unit_bundle";
    std::filesystem::remove_all(dir);
    write_bundle(dir, solve_gnep(plan), plan, RunInfo{"solve", "n", "s", 0, false});
    for (const char* f : {"decisions.csv", "state.csv", "prices.csv", "report.json"}) {
      CHECK(std::filesystem::exists(dir / f));
    }
    std::filesystem::remove_all(dir);
  }
}
