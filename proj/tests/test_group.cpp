#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <vector>

#include "opca/group.hpp"

using namespace opca;

namespace {

GroupModel cyclic_model(std::vector<std::int64_t> moduli,
                        const std::vector<std::string>& gens) {
  std::map<std::string, Element> gm;
  for (std::size_t i = 0; i < gens.size(); ++i) {
    std::vector<std::int64_t> e(moduli.size(), 0);
    e[i] = 1;
    gm[gens[i]] = e;
  }
  return GroupModel(CyclicProductModel{std::move(moduli)}, std::move(gm));
}

GroupModel free_abelian_model(int dim, const std::vector<std::string>& gens) {
  std::map<std::string, Element> gm;
  for (std::size_t i = 0; i < gens.size(); ++i) {
    std::vector<std::int64_t> e(dim, 0);
    e[i] = 1;
    gm[gens[i]] = e;
  }
  return GroupModel(FreeAbelianModel{dim}, std::move(gm));
}

}  // namespace

TEST_CASE("free abelian model evaluates words as exponent sums") {
  GroupModel z2 = free_abelian_model(2, {"a", "b"});
  Element x = z2.evaluate(Word::parse("a b a b^-1"));
  REQUIRE(std::get<std::vector<std::int64_t>>(x) == std::vector<std::int64_t>{2, 0});
  REQUIRE(z2.is_identity(z2.evaluate(Word::parse("a b a^-1 b^-1"))));
  REQUIRE_FALSE(z2.is_finite());
  REQUIRE(z2.element_str(z2.evaluate(Word::parse("a^3 b^-1"))) == "(3,-1)");
  REQUIRE_THROWS_AS(z2.enumerate(), Error);
}

TEST_CASE("cyclic product model wraps exponents") {
  GroupModel z65 = cyclic_model({6, 5}, {"a", "b"});
  REQUIRE(z65.is_finite());
  REQUIRE(z65.is_identity(z65.evaluate(Word::parse("a^6"))));
  REQUIRE(z65.is_identity(z65.evaluate(Word::parse("b^5"))));
  REQUIRE_FALSE(z65.is_identity(z65.evaluate(Word::parse("a^3"))));
  // inverse is the modular complement
  Element inv = z65.inverse(z65.evaluate(Word::parse("a b^2")));
  REQUIRE(z65.element_str(inv) == "(5,3)");

  SECTION("enumerate is mixed-radix, most significant first") {
    std::vector<Element> all = z65.enumerate();
    REQUIRE(all.size() == 30);
    REQUIRE(z65.element_str(all[0]) == "(0,0)");
    REQUIRE(z65.element_str(all[1]) == "(0,1)");
    REQUIRE(z65.element_str(all[5]) == "(1,0)");
    REQUIRE(z65.element_str(all[29]) == "(5,4)");
  }
}

TEST_CASE("single-modulus elements print as bare integers") {
  GroupModel z8 = cyclic_model({8}, {"a"});
  REQUIRE(z8.element_str(z8.evaluate(Word::parse("a^5"))) == "5");
  REQUIRE(z8.enumerate().size() == 8);
}

TEST_CASE("finite table model") {
  FiniteTableModel t;
  t.names = {"e", "g", "g2"};
  t.identity = 0;
  t.mul = {{0, 1, 2}, {1, 2, 0}, {2, 0, 1}};
  GroupModel m(t, {{"g", 1}});
  REQUIRE(m.is_finite());
  REQUIRE(m.is_identity(m.evaluate(Word::parse("g^3"))));
  REQUIRE(m.element_str(m.evaluate(Word::parse("g^2"))) == "g2");
  REQUIRE(std::get<int>(m.inverse(1)) == 2);

  SECTION("rejects a broken table") {
    FiniteTableModel bad = t;
    bad.mul[1][1] = 1;  // not cancellative / associative
    REQUIRE_THROWS_AS(GroupModel(bad, {{"g", 1}}), Error);
  }

  SECTION("rejects a non-neutral identity") {
    FiniteTableModel bad = t;
    bad.identity = 1;
    REQUIRE_THROWS_AS(GroupModel(bad, {{"g", 1}}), Error);
  }
}

TEST_CASE("free window model bounds word growth") {
  GroupModel w(FreeWindowModel{3}, {{"a", Word::from_symbol("a")},
                                    {"b", Word::from_symbol("b")}});
  REQUIRE_FALSE(w.is_finite());
  Element ab = w.evaluate(Word::parse("a b"));
  REQUIRE(std::get<Word>(ab).str() == "a b");
  // reduction keeps products inside the window
  REQUIRE(w.is_identity(w.mul(ab, w.inverse(ab))));
  REQUIRE_THROWS_AS(w.evaluate(Word::parse("a b a b")), Error);
}

TEST_CASE("evaluate rejects unknown generators") {
  GroupModel z8 = cyclic_model({8}, {"a"});
  REQUIRE_THROWS_AS(z8.evaluate(Word::parse("c")), Error);
}

TEST_CASE("presentation validation") {
  Presentation p;
  p.generators = {"a"};
  p.relators = {Word::parse("a^8")};
  p.model = cyclic_model({8}, {"a"});
  p.name = "Z8";
  REQUIRE_NOTHROW(p.validate());
  REQUIRE(in_relator_subgroup(Word::parse("a^16"), p));
  REQUIRE_FALSE(in_relator_subgroup(Word::parse("a^3"), p));

  SECTION("bad relator") {
    p.relators.push_back(Word::parse("a^3"));
    REQUIRE_THROWS_AS(p.validate(), Error);
  }

  SECTION("generator missing from the model map") {
    p.generators.push_back("c");
    REQUIRE_THROWS_AS(p.validate(), Error);
  }

  SECTION("self-inverse declaration is syntactic") {
    Presentation q;
    q.generators = {"a"};
    q.relators = {Word::parse("a^2")};
    q.model = cyclic_model({2}, {"a"});
    REQUIRE(q.declares_self_inverse("a"));
    REQUIRE_FALSE(p.declares_self_inverse("a"));
  }
}

TEST_CASE("quotient map validation") {
  QuotientMap q;
  q.source.generators = {"a"};
  q.source.model = free_abelian_model(1, {"a"});
  q.source.name = "Z";
  q.target.generators = {"a"};
  q.target.relators = {Word::parse("a^8")};
  q.target.model = cyclic_model({8}, {"a"});
  q.target.name = "Z8";
  q.extra_relators = {Word::parse("a^8")};
  REQUIRE_NOTHROW(q.validate());

  SECTION("generator lists must agree") {
    q.target.generators = {"b"};
    q.target.model = cyclic_model({8}, {"b"});
    REQUIRE_THROWS_AS(q.validate(), Error);
  }

  SECTION("extra relators must hold in the target") {
    q.extra_relators.push_back(Word::parse("a^3"));
    REQUIRE_THROWS_AS(q.validate(), Error);
  }

  SECTION("source relators must hold in the target") {
    q.source.relators = {Word::parse("a^5")};
    REQUIRE_THROWS_AS(q.validate(), Error);
  }
}
