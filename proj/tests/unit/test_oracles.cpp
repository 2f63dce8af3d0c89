#include "h2market/oracles.hpp"

#include <doctest.h>

using namespace h2market;

TEST_SUITE("oracles") {
  TEST_CASE("closed-form Cournot sales") {
    CHECK(cournot_sales(2, 10.0, 1.0, 1.0) == 3.0);
    CHECK(cournot_sales(1, 10.0, 1.0, 1.0) == 4.5);
  }

  TEST_CASE("every suite passes") {
    for (const auto& name : oracle_suites()) {
      CAPTURE(name);
      const auto results = run_oracle(name);
      REQUIRE(results.size() == 1);
      for (const auto& c : results[0].checks) {
        CAPTURE(c.name);
        CHECK(c.pass);
      }
    }
  }

  TEST_CASE("all runs every suite") { CHECK(run_oracle("all").size() == oracle_suites().size()); }

  TEST_CASE("unknown suite is an input error") { CHECK_THROWS_AS(run_oracle("nope"), InputError); }
}
