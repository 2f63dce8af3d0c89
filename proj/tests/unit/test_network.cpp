#include "builders.hpp"

#include "h2market/network.hpp"

#include <doctest.h>

using namespace h2market;
using namespace h2market::testing;

TEST_SUITE("network") {
  TEST_CASE("minimal single-pipe instance is valid") {
    const NetworkModel m = single_pipe();
    const ValidationReport r = validate_network(m);
    CHECK_MESSAGE(r.ok(), r.to_string());
  }

  TEST_CASE("hydrogen triangle is rejected as cyclic") {
    std::vector<Node> nodes;
    for (const char* id : {"A", "B", "C"}) {
      Node n = make_node(id, roles({"hydrogen", "sale"}));
      n.eta = 1.0;
      n.s_max = 1.0;
      n.p_max = 7.0e6;
      nodes.push_back(n);
    }
    const NetworkModel m(nodes, {},
                         {make_pipe("AB", "A", "B"), make_pipe("BC", "B", "C"), make_pipe("CA", "C", "A")},
                         unit_constants());
    const ValidationReport r = validate_network(m);
    CHECK_FALSE(r.ok());
    CHECK(r.has("cycle detected"));
  }

  TEST_CASE("boundary node with two pipes violates the degree condition") {
    Node p = make_node("P", roles({"electricity", "hydrogen", "ptg"}));
    p.eta = 1.0;
    p.c_max = 1.0;
    p.p_max = 7.0e6;
    Node h1 = make_node("H1", roles({"hydrogen", "sale"}));
    Node h2 = make_node("H2", roles({"hydrogen", "sale"}));
    for (Node* h : {&h1, &h2}) {
      h->eta = 1.0;
      h->s_max = 1.0;
      h->p_max = 7.0e6;
    }
    const NetworkModel m({p, h1, h2}, {}, {make_pipe("PH1", "P", "H1"), make_pipe("PH2", "P", "H2")},
                         unit_constants(), "P");
    CHECK(validate_network(m).has("boundary degree violation"));
  }

  TEST_CASE("boundary nodes are sale-hydrogen and conversion nodes in id order") {
    Node h1 = make_node("h1", roles({"hydrogen", "sale"}));
    Node h2 = make_node("h2", roles({"electricity", "hydrogen", "ptg"}));
    Node j = make_node("j", roles({"hydrogen"}));
    const NetworkModel m({h2, j, h1}, {}, {make_pipe("a", "h2", "j"), make_pipe("b", "j", "h1")}, unit_constants(),
                         "h2");
    CHECK(boundary_nodes(m) == std::vector<std::string>{"h1", "h2"});
    CHECK(m.inner_hydrogen_nodes() == std::vector<std::size_t>{m.node_index("j")});
  }

  TEST_CASE("no hydrogen network gives no boundary nodes") {
    Node r = make_node("R", roles({"electricity", "generation"}));
    Node s = make_node("S", roles({"electricity", "sale"}));
    const NetworkModel m({r, s}, {make_line("RS", "R", "S")}, {}, unit_constants(), "R");
    CHECK(boundary_nodes(m).empty());
  }

  TEST_CASE("interior junction of a five-node path is not a boundary node") {
    std::vector<Node> nodes;
    Node a = make_node("a", roles({"electricity", "hydrogen", "ptg"}));
    nodes.push_back(a);
    for (const char* id : {"b", "j", "d"}) nodes.push_back(make_node(id, roles({"hydrogen"})));
    nodes.push_back(make_node("e", roles({"hydrogen", "sale"})));
    const NetworkModel m(nodes, {},
                         {make_pipe("1", "a", "b"), make_pipe("2", "b", "j"), make_pipe("3", "j", "d"),
                          make_pipe("4", "d", "e")},
                         unit_constants(), "a");
    const auto b = boundary_nodes(m);
    CHECK(b == std::vector<std::string>{"a", "e"});
  }

  TEST_CASE("pipe orientation signs") {
    const NetworkModel m = single_pipe();
    CHECK(m.orientation(0, m.node_index("P")) == -1);
    CHECK(m.orientation(0, m.node_index("H")) == 1);
    CHECK(m.orientation(0, m.node_index("R")) == 0);
  }

  TEST_CASE("dangling pipe endpoint throws") {
    Node p = make_node("P", roles({"hydrogen", "ptg"}));
    CHECK_THROWS_AS(NetworkModel({p}, {}, {make_pipe("x", "P", "missing")}, unit_constants()), InputError);
  }
}
