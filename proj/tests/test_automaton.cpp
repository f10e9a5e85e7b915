// Rule validation, assembly, and the three evolution entry points
// (configurations, states, transformations).

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <complex>
#include <random>
#include <vector>

#include "opca/automaton.hpp"
#include "opca/backend.hpp"
#include "opca/cayley.hpp"
#include "opca/presentation_io.hpp"
#include "opca/rule.hpp"
#include "test_util.hpp"

using opca::Automaton;
using opca::Backend;
using opca::CayleyGraph;
using opca::LocalRule;
using opca::Region;
using opca::RegionState;
using opca::RegionTransformation;
using opca::SiteSystem;
using opca::Word;
using Catch::Matchers::ContainsSubstring;

namespace {

CayleyGraph finite_graph(const char* fixture) {
  return CayleyGraph::build(testutil::load_fixture_presentation(fixture), std::nullopt);
}

// XOR stencil: every site adds both neighbours (mod 2).
std::vector<std::vector<int>> xor_matrix(int n) {
  std::vector<std::vector<int>> m(n, std::vector<int>(n, 0));
  for (int r = 0; r < n; ++r) {
    m[r][r] = 1;
    m[r][(r + 1) % n] = 1;
    m[r][(r + n - 1) % n] = 1;
  }
  return m;
}

std::vector<Word> xor_offsets() {
  return {Word::parse("1"), Word::parse("a"), Word::parse("a^-1")};
}

RegionTransformation span_named(const std::vector<opca::SpanningElement>& fam,
                                const std::string& name) {
  for (const auto& e : fam)
    if (e.name == name) return e.payload;
  FAIL("no spanning element called " + name);
  return fam.front().payload;  // unreachable
}

}  // namespace

TEST_CASE("bundled rules pass validation") {
  const auto z8 = testutil::load_fixture_presentation("z8.json");

  for (const char* name : {"shift_rule.json", "identity_rule.json",
                           "hadamard_shift_rule.json", "fermionic_walk_balanced.json"}) {
    INFO(name);
    const auto rule = testutil::load_fixture_rule(name);
    const auto report = opca::validate_rule(rule, z8);
    CHECK(report.passed);
    CHECK(report.message.empty());
    CHECK(report.involution_residual <= 1e-10);
    CHECK(report.commutation_residual <= 1e-10);
  }

  // the probe also works on an infinite presentation through a window
  const auto z = testutil::load_fixture_presentation("z_line.json");
  const auto report = opca::validate_rule(testutil::load_fixture_rule("shift_rule.json"), z);
  CHECK(report.passed);
  CHECK(report.probe_radius > 0);
}

TEST_CASE("bad rules are rejected with a reason") {
  const auto z8 = testutil::load_fixture_presentation("z8.json");

  SECTION("non-unitary one-particle walk") {
    const auto rule = testutil::load_fixture_rule("fermionic_walk_unbalanced.json");
    const auto report = opca::validate_rule(rule, z8);
    CHECK_FALSE(report.passed);
    CHECK_FALSE(report.message.empty());
    CHECK(report.fermionic_unitarity_residual > 1e-3);
  }

  SECTION("corrupted qubit block is no longer an involution") {
    const auto rule = testutil::load_fixture_rule("hadamard_shift_rule_corrupted.json");
    const auto report = opca::validate_rule(rule, z8);
    CHECK_FALSE(report.passed);
    CHECK_FALSE(report.message.empty());
  }
}

TEST_CASE("shift automaton on the 8-cycle") {
  const auto graph = finite_graph("z8.json");
  const auto a = opca::assemble(testutil::load_fixture_rule("shift_rule.json"), graph);

  REQUIRE(a.has_blocks());
  REQUIRE(a.has_table());
  REQUIRE(a.table.size() == 256);

  SECTION("the table is a permutation with a consistent inverse") {
    std::vector<bool> hit(a.table.size(), false);
    for (std::size_t x = 0; x < a.table.size(); ++x) {
      CHECK_FALSE(hit[a.table[x]]);
      hit[a.table[x]] = true;
      CHECK(a.table_inv[a.table[x]] == x);
    }
  }

  SECTION("a lone marker moves one step per application") {
    std::vector<int> cfg{1, 0, 0, 0, 0, 0, 0, 0};
    const auto one = opca::evolve_configuration(a, cfg);
    CHECK(one == std::vector<int>{0, 1, 0, 0, 0, 0, 0, 0});
    const auto three = opca::evolve_configuration(a, cfg, 3);
    CHECK(three == std::vector<int>{0, 0, 0, 1, 0, 0, 0, 0});
    CHECK(opca::evolve_configuration(a, three, 3, true) == cfg);
    // negative step counts run the inverse
    CHECK(opca::evolve_configuration(a, one, -1) == cfg);
  }

  SECTION("block geometry follows the offsets") {
    // block at g couples (g*a, layer 0) with (g, layer 1)
    const auto& b2 = a.blocks[2];
    CHECK(b2.home == 2);
    CHECK(b2.op.region.sites == std::vector<int>{opca::doubled_site(2, 1),
                                                 opca::doubled_site(3, 0)});
    // wrap-around at the seam
    CHECK(a.blocks[7].op.region.sites == std::vector<int>{opca::doubled_site(0, 0),
                                                          opca::doubled_site(7, 1)});
  }

  SECTION("assembly is deterministic across consistency seeds") {
    const auto b = opca::assemble(testutil::load_fixture_rule("shift_rule.json"), graph, 999);
    CHECK(a.table == b.table);
  }
}

TEST_CASE("identity rule assembles to the identity table") {
  const auto graph = finite_graph("z4.json");
  const auto a = opca::assemble(testutil::load_fixture_rule("identity_rule.json"), graph);
  REQUIRE(a.has_table());
  for (std::size_t x = 0; x < a.table.size(); ++x) CHECK(a.table[x] == x);
}

TEST_CASE("assembly guards") {
  const auto z = testutil::load_fixture_presentation("z_line.json");
  const auto window = CayleyGraph::build(z, 3);
  const auto rule = testutil::load_fixture_rule("shift_rule.json");

  REQUIRE_THROWS_WITH(opca::assemble(rule, window),
                      ContainsSubstring("assembly needs a finite graph"));

  SECTION("offsets that collide on a small graph are caught") {
    LocalRule doubled;
    doubled.system = SiteSystem{Backend::classical, 2};
    doubled.offsets = {Word::parse("a"), Word::parse("a^9")};  // same element on Z8
    doubled.classical_block = Eigen::MatrixXd::Identity(8, 8);
    const auto graph = finite_graph("z8.json");
    REQUIRE_THROWS_WITH(opca::instantiate_block(graph, doubled, 0),
                        ContainsSubstring("offsets collide"));
  }

  SECTION("offsets leaving a window are caught") {
    const int edge = window.require(opca::Element{std::vector<std::int64_t>{3}});
    REQUIRE_THROWS_WITH(opca::instantiate_block(window, rule, edge),
                        ContainsSubstring("leaves the graph at vertex"));
  }
}

TEST_CASE("XOR automata from a GF(2) matrix") {
  SECTION("five sites: invertible, one step spreads a lone bit") {
    const auto graph = finite_graph("z5.json");
    const auto a = opca::automaton_from_gf2(graph, xor_matrix(5), xor_offsets());
    REQUIRE(a.table.size() == 32);
    CHECK(opca::evolve_configuration(a, {1, 0, 0, 0, 0}) ==
          std::vector<int>{1, 1, 0, 0, 1});
  }

  SECTION("four sites") {
    const auto graph = finite_graph("z4.json");
    const auto a = opca::automaton_from_gf2(graph, xor_matrix(4), xor_offsets());
    CHECK(opca::evolve_configuration(a, {1, 0, 0, 0}) == std::vector<int>{1, 1, 0, 1});
  }

  SECTION("six sites: the matrix is singular") {
    const auto graph = finite_graph("z6.json");
    REQUIRE_THROWS_WITH(opca::automaton_from_gf2(graph, xor_matrix(6), xor_offsets()),
                        ContainsSubstring("table is not a permutation"));
  }

  SECTION("matrix size must match the graph") {
    const auto graph = finite_graph("z4.json");
    REQUIRE_THROWS_WITH(opca::automaton_from_gf2(graph, xor_matrix(5), xor_offsets()),
                        ContainsSubstring("GF(2) matrix size does not match"));
  }
}

TEST_CASE("explicit table constructors") {
  const auto graph = finite_graph("z4.json");

  SECTION("size and permutation checks") {
    REQUIRE_THROWS_WITH((opca::automaton_from_classical_table(graph, 2, {0, 1, 2}, {})),
                        ContainsSubstring("table size does not match"));
    std::vector<std::size_t> zeros(16, 0);
    REQUIRE_THROWS_WITH((opca::automaton_from_classical_table(graph, 2, zeros, {})),
                        ContainsSubstring("table is not a permutation"));
  }

  SECTION("identity table works") {
    std::vector<std::size_t> id(16);
    for (std::size_t x = 0; x < id.size(); ++x) id[x] = x;
    const auto a = opca::automaton_from_classical_table(graph, 2, id, {});
    CHECK(opca::evolve_configuration(a, {1, 0, 1, 0}) == std::vector<int>{1, 0, 1, 0});
  }

  SECTION("explicit unitaries are checked") {
    const Eigen::MatrixXcd u = Eigen::MatrixXcd::Identity(16, 16);
    REQUIRE_NOTHROW(opca::automaton_from_unitary(graph, u, {}));
    REQUIRE_THROWS_WITH(opca::automaton_from_unitary(graph, 2.0 * u, {}),
                        ContainsSubstring("not unitary"));
  }
}

TEST_CASE("configuration guards") {
  const auto graph = finite_graph("z4.json");
  const auto a = opca::assemble(testutil::load_fixture_rule("shift_rule.json"), graph);
  REQUIRE_THROWS_WITH(opca::evolve_configuration(a, {1, 0, 0}),
                      ContainsSubstring("configuration length does not match"));
  REQUIRE_THROWS_WITH(opca::evolve_configuration(a, {2, 0, 0, 0}),
                      ContainsSubstring("configuration digit out of range"));

  const auto q = opca::assemble(testutil::load_fixture_rule("hadamard_shift_rule.json"), graph);
  REQUIRE_THROWS_WITH(opca::evolve_configuration(q, {0, 0, 0, 0}),
                      ContainsSubstring("configuration evolution is classical only"));
}

TEST_CASE("classical state evolution pushes distributions forward") {
  const auto graph = finite_graph("z8.json");
  const auto a = opca::assemble(testutil::load_fixture_rule("shift_rule.json"), graph);

  RegionState p;
  p.system = a.system;
  for (int v = 0; v < 8; ++v) p.region.sites.push_back(v);
  p.classical = Eigen::VectorXd::Zero(256);
  const std::size_t x = opca::detail::config_encode({1, 0, 0, 0, 0, 0, 0, 0}, 2);
  p.classical[static_cast<Eigen::Index>(x)] = 0.25;
  p.classical[0] = 0.75;

  const auto q = opca::evolve_state(a, p);
  CHECK(q.classical.sum() == Catch::Approx(1.0));
  CHECK(q.classical[static_cast<Eigen::Index>(a.table[x])] == Catch::Approx(0.25));
  CHECK(q.classical[static_cast<Eigen::Index>(a.table[0])] == Catch::Approx(0.75));

  RegionState partial = p;
  partial.region = Region{{0, 1}};
  partial.classical = Eigen::VectorXd::Constant(4, 0.25);
  REQUIRE_THROWS_WITH(opca::evolve_state(a, partial),
                      ContainsSubstring("state evolution expects a full-graph state"));
}

TEST_CASE("qubit state evolution preserves the trace and inverts cleanly") {
  const auto graph = finite_graph("z4.json");
  const auto a = opca::assemble(testutil::load_fixture_rule("hadamard_shift_rule.json"), graph);
  REQUIRE(a.has_unitary());
  CHECK((a.unitary.adjoint() * a.unitary -
         Eigen::MatrixXcd::Identity(16, 16)).cwiseAbs().maxCoeff() < 1e-10);

  std::mt19937 gen(4242);
  std::normal_distribution<double> dist;
  Eigen::MatrixXcd g(16, 16);
  for (Eigen::Index r = 0; r < 16; ++r)
    for (Eigen::Index c = 0; c < 16; ++c) g(r, c) = opca::Cd(dist(gen), dist(gen));
  Eigen::MatrixXcd rho = g * g.adjoint();
  rho /= rho.trace().real();

  RegionState s;
  s.system = a.system;
  for (int v = 0; v < 4; ++v) s.region.sites.push_back(v);
  s.qubit = rho;

  const auto t = opca::evolve_state(a, s, 2);
  CHECK(std::abs(t.qubit.trace().real() - 1.0) < 1e-12);
  const auto back = opca::evolve_state(a, t, 2, true);
  CHECK((back.qubit - rho).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("transformation evolution on the shift") {
  const auto graph = finite_graph("z8.json");
  const auto a = opca::assemble(testutil::load_fixture_rule("shift_rule.json"), graph);
  const auto fam = opca::single_site_spanning(a.system, 0);
  const auto& flip = span_named(fam, "cyclic-shift");

  SECTION("support travels with the data") {
    const auto fwd = opca::evolve_transformation(a, flip);
    CHECK(fwd.region.sites == std::vector<int>{1});
    CHECK(fwd.classical.isApprox(flip.classical, 1e-12));

    const auto bwd = opca::evolve_transformation(a, flip, 1, true);
    CHECK(bwd.region.sites == std::vector<int>{7});

    const auto round = opca::evolve_transformation(a, fwd, 1, true);
    CHECK(round.region.sites == std::vector<int>{0});
    CHECK((round.classical - flip.classical).cwiseAbs().maxCoeff() < 1e-9);
  }

  SECTION("zero steps is the identity on maps") {
    const auto same = opca::evolve_transformation(a, flip, 0);
    CHECK(same.region.sites == flip.region.sites);
    CHECK(same.classical.isApprox(flip.classical));
  }

  SECTION("the block path agrees with conjugation by the explicit table") {
    std::vector<Word> offs{Word::parse("a")};
    const auto exp = opca::automaton_from_classical_table(graph, 2, a.table, offs);
    REQUIRE_FALSE(exp.has_blocks());
    for (bool backward : {false, true}) {
      const auto via_blocks = opca::evolve_transformation(a, flip, 1, backward);
      const auto via_table = opca::evolve_transformation(exp, flip, 1, backward);
      CHECK(via_blocks.region.sites == via_table.region.sites);
      CHECK(via_blocks.classical.isApprox(via_table.classical, 1e-9));
    }
  }

  SECTION("backend mismatch is rejected") {
    RegionTransformation wrong;
    wrong.system = SiteSystem{Backend::classical, 3};
    wrong.region = Region{{0}};
    wrong.classical = Eigen::MatrixXd::Identity(3, 3);
    REQUIRE_THROWS_WITH(opca::evolve_transformation(a, wrong),
                        ContainsSubstring("transformation backend mismatch"));
  }
}

TEST_CASE("transformation evolution matches the state picture") {
  // heisenberg vs schroedinger on the XOR automaton, explicit table path
  const auto graph = finite_graph("z4.json");
  const auto a = opca::automaton_from_gf2(graph, xor_matrix(4), xor_offsets());
  const auto& flip = span_named(opca::single_site_spanning(a.system, 0), "cyclic-shift");

  const auto evolved = opca::evolve_transformation(a, flip);
  CHECK(evolved.region.sites == std::vector<int>{0, 1, 3});

  RegionState p;
  p.system = a.system;
  for (int v = 0; v < 4; ++v) p.region.sites.push_back(v);
  std::mt19937 gen(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  p.classical = Eigen::VectorXd::Zero(16);
  for (Eigen::Index i = 0; i < 16; ++i) p.classical[i] = u(gen);
  p.classical /= p.classical.sum();

  const auto lhs = opca::evolve_state(a, opca::apply_to_state(flip, p));
  const auto rhs = opca::apply_to_state(evolved, opca::evolve_state(a, p));
  CHECK(lhs.classical.isApprox(rhs.classical, 1e-9));
}

TEST_CASE("light cones grow one stencil per step") {
  const auto graph = finite_graph("z8.json");
  const auto a = opca::automaton_from_gf2(graph, xor_matrix(8), xor_offsets());
  const auto& flip = span_named(opca::single_site_spanning(a.system, 0), "cyclic-shift");

  const auto one = opca::evolve_transformation(a, flip);
  CHECK(one.region.sites == std::vector<int>{0, 1, 7});
  // over GF(2) the square of the stencil telescopes to {-2, 0, +2}
  const auto two = opca::evolve_transformation(a, flip, 2);
  CHECK(two.region.sites == std::vector<int>{0, 2, 6});
  for (int v : two.region.sites) {
    const int dist = std::min(v, 8 - v);
    CHECK(dist <= 2);
  }
}

TEST_CASE("ancillas ride along untouched") {
  const auto graph = finite_graph("z4.json");
  const auto a = opca::automaton_from_gf2(graph, xor_matrix(4), xor_offsets());
  const auto fam = opca::ancilla_spanning(a.system, 0, 4);
  const auto& probe = span_named(fam, "controlled-add-ancilla");
  REQUIRE(probe.region.sites == std::vector<int>{0, 4});

  const auto out = opca::evolve_transformation(a, probe);
  CHECK(std::find(out.region.sites.begin(), out.region.sites.end(), 4) !=
        out.region.sites.end());
  for (int v : out.region.sites) CHECK((v == 4 || v == 0 || v == 1 || v == 3));

  const auto round = opca::evolve_transformation(a, out, 1, true);
  CHECK(round.region.sites == probe.region.sites);
  CHECK(round.classical.isApprox(probe.classical, 1e-9));
}

TEST_CASE("qubit blocks relocate and rotate a Pauli") {
  const auto graph = finite_graph("z8.json");
  const auto a = opca::assemble(testutil::load_fixture_rule("hadamard_shift_rule.json"), graph);
  REQUIRE(a.has_blocks());

  const auto fam = opca::single_site_spanning(a.system, 1);
  const auto& x = span_named(fam, "pauli-x");
  const auto& z = span_named(fam, "pauli-z");

  // the block conjugates the cell contents by a Hadamard while shifting
  const auto fx = opca::evolve_transformation(a, x);
  REQUIRE(fx.region.sites == std::vector<int>{2});
  REQUIRE(fx.kraus.size() == 1);
  const auto fam2 = opca::single_site_spanning(a.system, 2);
  CHECK(opca::phase_aligned_residual(fx.kraus[0],
                                     span_named(fam2, "pauli-z").kraus[0]) < 1e-10);

  const auto fz = opca::evolve_transformation(a, z);
  REQUIRE(fz.region.sites == std::vector<int>{2});
  CHECK(opca::phase_aligned_residual(fz.kraus[0],
                                     span_named(fam2, "pauli-x").kraus[0]) < 1e-10);

  // and comes back exactly
  const auto back = opca::evolve_transformation(a, fx, 1, true);
  CHECK(back.region.sites == std::vector<int>{1});
  CHECK(opca::phase_aligned_residual(back.kraus[0], x.kraus[0]) < 1e-9);
}

TEST_CASE("fermionic walk assembles to a unitary one-particle matrix") {
  const auto graph = finite_graph("z8.json");
  const auto a = opca::assemble(testutil::load_fixture_rule("fermionic_walk_balanced.json"), graph);
  REQUIRE(a.one_particle.size() > 0);
  REQUIRE(a.one_particle.rows() == 16);
  CHECK((a.one_particle.adjoint() * a.one_particle -
         Eigen::MatrixXcd::Identity(16, 16)).cwiseAbs().maxCoeff() < 1e-12);

  SECTION("mode phases evolve inside the stencil and invert") {
    const auto fam = opca::single_site_spanning(a.system, 3);
    const auto& phase = span_named(fam, "mode-phase-0");
    const auto fwd = opca::evolve_transformation(a, phase);
    for (int v : fwd.region.sites) CHECK((v == 3 || v == 4));
    const auto round = opca::evolve_transformation(a, fwd, 1, true);
    CHECK(round.region.sites == phase.region.sites);
    CHECK((round.fermionic - phase.fermionic).cwiseAbs().maxCoeff() < 1e-9);
  }

  SECTION("the unbalanced walk does not assemble") {
    REQUIRE_THROWS_WITH(
        opca::assemble(testutil::load_fixture_rule("fermionic_walk_unbalanced.json"), graph),
        ContainsSubstring("rule fails validation"));
  }
}
