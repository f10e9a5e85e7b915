#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <vector>

#include "opca/backend.hpp"

using namespace opca;

namespace {

const SiteSystem kBit{Backend::classical, 2};
const SiteSystem kTrit{Backend::classical, 3};

RegionEffect effect(const SiteSystem& sys, std::vector<VertexId> sites, std::vector<double> v) {
  RegionEffect e{sys, Region(std::move(sites)), {}, {}, {}};
  e.classical = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  return e;
}

RegionTransformation map_of(const SiteSystem& sys, std::vector<VertexId> sites,
                            const Eigen::MatrixXd& m) {
  return RegionTransformation{sys, Region(std::move(sites)), m, {}, {}, {}};
}

}  // namespace

TEST_CASE("deterministic effect and identity map") {
  auto e = deterministic_effect(kBit, Region({0, 1}));
  REQUIRE(e.classical.size() == 4);
  REQUIRE(e.classical.minCoeff() == 1.0);

  auto id = identity_transformation(kTrit, Region({5}));
  REQUIRE(id.classical.isIdentity(0.0));
  REQUIRE(is_channel(id));
  REQUIRE(sup_norm(id) == 1.0);
}

TEST_CASE("norm spot values") {
  REQUIRE(op_norm(effect(kBit, {0}, {0.3, 0.8})) == 0.8);
  REQUIRE(sup_norm(effect(kBit, {0}, {0.3, 0.8})) == 0.8);
  REQUIRE(op_norm(effect(kTrit, {0}, {-0.7, 0.2, 0.4})) == 0.7);

  Eigen::MatrixXd a(2, 2);
  a << 0.5, -0.25, 0.125, 1.0;
  REQUIRE(sup_norm(map_of(kBit, {0}, a)) == 1.25);

  Eigen::MatrixXd stoch(2, 2);
  stoch << 0.25, 0.5, 0.75, 0.5;
  REQUIRE(sup_norm(map_of(kBit, {0}, stoch)) == 1.0);
  REQUIRE(is_channel(map_of(kBit, {0}, stoch)));
}

TEST_CASE("tensor layout") {
  auto x = effect(kBit, {1}, {0, 1});
  auto e2 = deterministic_effect(kBit, Region({2}));
  auto t = tensor(x, e2);
  REQUIRE(t.region.sites == std::vector<VertexId>{1, 2});
  REQUIRE(t.classical.transpose() == Eigen::RowVector4d(0, 0, 1, 1));

  // arguments in descending site order land in the same ascending layout
  auto s = tensor(e2, x);
  REQUIRE(s.region.sites == std::vector<VertexId>{1, 2});
  REQUIRE(s.classical.transpose() == Eigen::RowVector4d(0, 0, 1, 1));

  REQUIRE_THROWS_WITH(tensor(x, x), Catch::Matchers::ContainsSubstring("regions overlap"));
}

TEST_CASE("lift keeps norms") {
  auto a = effect(kBit, {1}, {0.3, 0.8});
  auto lifted = lift(a, Region({1, 4}));
  REQUIRE(lifted.classical.transpose() == Eigen::RowVector4d(0.3, 0.3, 0.8, 0.8));
  REQUIRE(sup_norm(lifted) == sup_norm(a));

  Eigen::MatrixXd m(2, 2);
  m << 0.5, -0.25, 0.125, 1.0;
  auto t = map_of(kBit, {1}, m);
  REQUIRE(sup_norm(lift(t, Region({0, 1}))) == Catch::Approx(1.25));

  REQUIRE_THROWS_WITH(lift(a, Region({4})),
                      Catch::Matchers::ContainsSubstring("must contain the region"));
}

TEST_CASE("composition and duality") {
  Eigen::MatrixXd shift(2, 2);
  shift << 0, 1, 1, 0;
  auto s = map_of(kBit, {0}, shift);
  REQUIRE(compose(s, s).classical.isIdentity(0.0));

  // effects pull back through the transpose
  Eigen::MatrixXd constant0(2, 2);
  constant0 << 1, 1, 0, 0;
  auto c0 = map_of(kBit, {0}, constant0);
  auto measure0 = effect(kBit, {0}, {1, 0});
  auto pulled = apply_to_effect(c0, measure0);
  REQUIRE(pulled.classical.transpose() == Eigen::RowVector2d(1, 1));

  RegionState rho{kBit, Region({0}), Eigen::Vector2d(0.25, 0.75), {}, {}};
  auto pushed = apply_to_state(c0, rho);
  REQUIRE(pushed.classical.transpose() == Eigen::RowVector2d(1, 0));
  REQUIRE(pair(pulled, rho) == Catch::Approx(pair(measure0, pushed)));
}

TEST_CASE("restriction marginalizes") {
  // joint distribution on two bits with correlated mass
  Eigen::VectorXd p(4);
  p << 0.1, 0.2, 0.3, 0.4;
  RegionState rho{kBit, Region({0, 1}), p, {}, {}};
  auto m0 = restrict_state(rho, Region({0}));
  REQUIRE(m0.region.sites == std::vector<VertexId>{0});
  REQUIRE(m0.classical.isApprox(Eigen::Vector2d(0.3, 0.7)));
  auto m1 = restrict_state(rho, Region({1}));
  REQUIRE(m1.classical.isApprox(Eigen::Vector2d(0.4, 0.6)));
  REQUIRE(pair(deterministic_effect(kBit, Region({1})), m1) == Catch::Approx(1.0));
}

TEST_CASE("minimal support of effects") {
  Eigen::Vector2d f(0.25, 0.75), e(1, 1);

  SECTION("planted middle factor") {
    Eigen::VectorXd inner = Eigen::kroneckerProduct(f, e).eval();
    Eigen::VectorXd v = Eigen::kroneckerProduct(e, inner).eval();
    RegionEffect a{kBit, Region({3, 5, 9}), v, {}, {}};
    auto small = minimal_support(a);
    REQUIRE(small.region.sites == std::vector<VertexId>{5});
    REQUIRE(small.classical.transpose() == Eigen::RowVector2d(0.25, 0.75));
  }

  SECTION("deterministic effect shrinks away entirely") {
    auto small = minimal_support(deterministic_effect(kBit, Region({0, 1, 2})));
    REQUIRE(small.region.size() == 0);
    REQUIRE(small.classical.size() == 1);
  }

  SECTION("sum hiding a product") {
    // f (x) f + f (x) (e - f) = f (x) e
    Eigen::VectorXd v = Eigen::kroneckerProduct(f, f).eval();
    v += Eigen::kroneckerProduct(f, (e - f).eval()).eval();
    RegionEffect a{kBit, Region({0, 1}), v, {}, {}};
    auto small = minimal_support(a);
    REQUIRE(small.region.sites == std::vector<VertexId>{0});
    REQUIRE(small.classical.isApprox(f));
  }
}

TEST_CASE("minimal support of transformations") {
  Eigen::MatrixXd g(2, 2);
  g << 0.5, -0.25, 0.125, 1.0;
  auto planted = tensor(map_of(kBit, {2}, g), identity_transformation(kBit, Region({6})));
  auto small = minimal_support(planted);
  REQUIRE(small.region.sites == std::vector<VertexId>{2});
  REQUIRE(small.classical.isApprox(g));
}

TEST_CASE("classifier predicates") {
  Eigen::MatrixXd sub(2, 2);
  sub << 0.5, 0.25, 0.25, 0.25;  // column sums 0.75, 0.5
  auto t = map_of(kBit, {0}, sub);
  REQUIRE(is_cp(t));
  REQUIRE(is_proper(t));
  REQUIRE_FALSE(is_channel(t));

  Eigen::MatrixXd neg(2, 2);
  neg << 0.5, 0.5, -0.1, 0.5;
  REQUIRE_FALSE(is_cp(map_of(kBit, {0}, neg)));

  Eigen::MatrixXd super(2, 2);
  super << 1.0, 0.0, 0.5, 1.0;  // column sum > 1
  REQUIRE_FALSE(is_proper(map_of(kBit, {0}, super)));
}

TEST_CASE("norm inequalities on random samples") {
  std::mt19937 gen(977);
  std::uniform_real_distribution<double> coin(-1.0, 1.0);
  std::uniform_int_distribution<int> dim_pick(2, 8);

  for (int trial = 0; trial < 60; ++trial) {
    const SiteSystem sys{Backend::classical, dim_pick(gen)};
    const int d = sys.dim;

    Eigen::VectorXd bv(d), cv(d);
    for (int i = 0; i < d; ++i) {
      bv[i] = coin(gen);
      cv[i] = coin(gen);
    }
    auto b = RegionEffect{sys, Region({0}), bv, {}, {}};

    // the two effect norms coincide in the classical theory
    REQUIRE(op_norm(b) == Catch::Approx(sup_norm(b)));

    Eigen::MatrixXd am(d, d), bm(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        am(i, j) = coin(gen);
        bm(i, j) = coin(gen);
      }
    auto ta = map_of(sys, {0}, am);
    auto tb = map_of(sys, {0}, bm);

    REQUIRE(sup_norm(compose(tb, ta)) <= sup_norm(tb) * sup_norm(ta) + 1e-12);
    REQUIRE(op_norm(apply_to_effect(ta, b)) <= sup_norm(ta) * op_norm(b) + 1e-12);

    // random channel: normalize positive columns
    Eigen::MatrixXd ch = am.cwiseAbs();
    for (int j = 0; j < d; ++j) ch.col(j) /= ch.col(j).sum();
    REQUIRE(sup_norm(map_of(sys, {0}, ch)) == Catch::Approx(1.0));
  }
}

TEST_CASE("spanning families") {
  auto bits = single_site_spanning(kBit, 4);
  REQUIRE(bits.size() == 6);
  REQUIRE(bits[0].name == "identity");
  REQUIRE(bits[1].name == "cyclic-shift");
  REQUIRE(bits[2].name == "constant-0");
  REQUIRE(bits[5].name == "measure-1");
  for (const auto& e : bits) {
    REQUIRE(e.payload.region.sites == std::vector<VertexId>{4});
    REQUIRE(is_proper(e.payload));
  }

  REQUIRE(single_site_spanning(kTrit, 0).size() == 8);

  auto anc = ancilla_spanning(kBit, 2, 9);
  REQUIRE(anc.size() == 1);
  REQUIRE(anc[0].name == "controlled-add-ancilla");
  REQUIRE(anc[0].payload.region.sites == std::vector<VertexId>{2, 9});
  // (x, a) -> (x, a + x): input (1, 0) = index 2 goes to (1, 1) = index 3
  REQUIRE(anc[0].payload.classical(3, 2) == 1.0);
  REQUIRE(anc[0].payload.classical(2, 2) == 0.0);

  // ancilla below the site: same map, slots reordered to (ancilla, site)
  auto low = ancilla_spanning(kBit, 2, 0);
  REQUIRE(low[0].payload.region.sites == std::vector<VertexId>{0, 2});
  // (a, x) -> (a + x, x): input (0, 1) = index 1 goes to (1, 1) = index 3
  REQUIRE(low[0].payload.classical(3, 1) == 1.0);

  auto family = region_spanning(kBit, Region({0, 1}));
  REQUIRE(family.size() == 13);  // 6 per site plus one pair coupling
  REQUIRE(family[0].name == "identity@0");
  REQUIRE(family.back().name == "controlled-add@0,1");
}
