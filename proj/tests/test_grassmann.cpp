#include <gtest/gtest.h>

#include <cstdlib>
#include <dimerlab/grassmann.hpp>
#include <random>

#include "support.hpp"

using namespace dimerlab;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

std::vector<CellSpec> random_specs(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<CellSpec> out;
  while (static_cast<int>(out.size()) < n) {
    int m = out.size() % 3 == 2 ? 6 : 4;
    auto s = testsupport::random_nonplanar(testsupport::random_weights(m, rng), 1 + static_cast<int>(rng() % 2), rng);
    if (!s.nonplanar.empty()) out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(Grassmann, TwoCrossingSectorSigns) {
  auto s = testsupport::two_crossing_spec();
  const int expect[4] = {1, -1, -1, 1};
  for (unsigned S = 0; S < 4; ++S) {
    EXPECT_EQ(epsilon_sign(s, 1, S), expect[S]) << S;
    EXPECT_EQ(epsilon_sign_oracle(s, 1, S), expect[S]) << S;
  }
}

TEST(Grassmann, TwoCrossingKernelCoefficients) {
  auto s = testsupport::two_crossing_spec();
  auto pot = cell_potential(s);
  CellModel cm(s);
  std::map<std::vector<int>, double> F;
  for (auto& mono : pot.F_kernel) F[mono.edges] = mono.coeff;
  int np = cm.np_key(0), a = cm.key({7, 4}), b = cm.key({6, 2});
  auto key = [](std::vector<int> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  EXPECT_EQ(F.size(), 4u);
  EXPECT_DOUBLE_EQ(F[key({np})], 1.0);
  EXPECT_DOUBLE_EQ(F[key({np, a})], -2.0);
  EXPECT_DOUBLE_EQ(F[key({np, b})], -2.0);
  EXPECT_DOUBLE_EQ(F[key({np, a, b})], 4.0);
}

TEST(Grassmann, ConstructiveSignsMatchOracle) {
  int checked = 0;
  for (const auto& s : random_specs(12, 5)) {
    for (const auto& sec : cell_sectors(s)) {
      if (sec.J == 0) continue;
      auto parts = sector_ratio_parts(s, sec.J, sec.S);
      if (parts.restricted == 0.0) {
        EXPECT_NEAR(parts.minors, 0.0, 1e-9);
        continue;
      }
      EXPECT_EQ(sec.eps, epsilon_sign_oracle(s, sec.J, sec.S)) << sec.J << " " << sec.S;
      ++checked;
    }
  }
  EXPECT_GT(checked, 20);
}

TEST(Grassmann, SignsIndependentOfPairingChoices) {
  for (const auto& s : random_specs(8, 17)) {
    auto base = cell_sectors(s);
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
      EpsilonOptions o{seed, true, true};
      auto alt = cell_sectors(s, o);
      ASSERT_EQ(alt.size(), base.size());
      for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(alt[i].eps, base[i].eps);
    }
  }
}

TEST(Grassmann, PotentialIsLogarithmOfF) {
  for (const auto& s : random_specs(4, 23)) {
    CellModel cm(s);
    auto pot = cell_potential(s);
    for (auto [V, F] : {std::pair{&pot.V, &pot.F}, std::pair{&pot.V_kernel, &pot.F_kernel}}) {
      EdgePolynomial v(&cm);
      for (auto& mono : *V) v.add(mono.edges, mono.coeff);
      auto e = formal_exp(v, &cm);
      EdgePolynomial f(&cm);
      f.add({}, 1.0);
      for (auto& mono : *F) f.add(mono.edges, mono.coeff);
      f.prune();
      ASSERT_EQ(e.terms.size(), f.terms.size());
      for (auto& [k, c] : f.terms) EXPECT_NEAR(e.terms[k], c, 1e-12);
    }
  }
}

TEST(Grassmann, PartitionMatchesEnumeration) {
  for (const auto& s : random_specs(6, 31)) {
    for (double lam : {0.2, 1.0}) {
      auto g = build_graph(s, 1, lam);
      double z = weighted_sum(g);
      EXPECT_LT(rel(nonplanar_partition(g), z), 1e-10);
      SectorOptions o;
      o.masked_form = true;
      EXPECT_LT(rel(nonplanar_partition(g, o), z), 1e-10);
    }
  }
}

TEST(Grassmann, TwoCrossingTwoByTwoCellsByOrder) {
  auto g = build_graph(testsupport::two_crossing_spec(), 2, 1.0);
  std::vector<double> by_order;
  {
    CellSpec p = testsupport::two_crossing_spec();
    // orders are polynomial coefficients in lambda; compare at lambda = 1 after one enumeration
    by_order = weighted_sum_by_order(build_graph(p, 2, 1.0));
  }
  PolymerEngine eng(g);
  double total = 0.0;
  for (std::size_t k = 0; k < by_order.size(); ++k) {
    EXPECT_LT(rel(eng.partition_order(static_cast<int>(k)), by_order[k]), 1e-10) << k;
    total += by_order[k];
  }
  EXPECT_LT(rel(eng.partition(), total), 1e-10);
  SectorOptions o;
  o.max_order = 1;
  EXPECT_LT(rel(PolymerEngine(g, o).partition(), by_order[0] + by_order[1]), 1e-10);
}

TEST(Grassmann, ObservablesMatchEnumeration) {
  auto specs = random_specs(3, 41);
  specs.push_back(testsupport::two_crossing_spec());
  for (const auto& s : specs) {
    auto g = build_graph(s, 1, 0.7);
    int f = static_cast<int>(g.edges.size()) - 1;
    for (int e : {0, 5, 11}) {
      auto o = nonplanar_observables(g, e, f);
      auto E = joint_occupation(g, {e, f});
      EXPECT_NEAR(o.p_e, E[0][0], 1e-10);
      EXPECT_NEAR(o.p_f, E[1][1], 1e-10);
      EXPECT_NEAR(o.truncated, E[0][1] - E[0][0] * E[1][1], 1e-10);
    }
  }
}

TEST(Grassmann, WardIdentity) {
  auto s = testsupport::two_crossing_spec();
  auto g = build_graph(s, 1, 0.6);
  for (int ell = 1; ell <= 8; ++ell)
    for (int yl : {1, 4})
      for (int zl : {1, 6}) {
        double r = ward_residual(g, {0, 0}, ell, g.white({0, 0}, yl), g.black({0, 0}, zl));
        EXPECT_LT(r, 1e-10) << ell << " " << yl << " " << zl;
      }
  std::mt19937_64 rng(3);
  auto s2 = testsupport::random_nonplanar(testsupport::random_weights(4, rng), 2, rng);
  auto g2 = build_graph(s2, 2, 0.5);
  EXPECT_LT(ward_residual(g2, {1, 0}, 3, g2.white({0, 1}, 2), g2.black({1, 1}, 5)), 1e-10);
  EXPECT_LT(ward_residual(g2, {1, 1}, 5, g2.white({0, 1}, 2), g2.black({1, 1}, 5)), 1e-10);
}

TEST(Grassmann, BudgetExceeded) {
  auto g = build_graph(testsupport::two_crossing_spec(), 2, 1.0);
  SectorOptions o;
  o.budget = 10;
  try {
    PolymerEngine eng(g, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BudgetExceeded);
  }
  setenv("DIMERLAB_BUDGET", "7", 1);
  EXPECT_EQ(default_budget(), 7u);
  unsetenv("DIMERLAB_BUDGET");
  EXPECT_EQ(default_budget(), 1000000u);
}

TEST(Grassmann, PairingAndParityErrors) {
  try {
    pair_face_endpoints({1, 2, 3, 4}, {1, 1, 0, 0});
  } catch (...) {
    FAIL() << "alternating pairs exist";
  }
  try {
    pair_face_endpoints({1, 2}, {1, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::PairingImpossible);
  }
  std::vector<detail::FaceCycle> faces(1);
  faces[0].site = {0, 1, 2, 3};
  faces[0].co = {1, 1, 0, 0};
  try {
    extend_orientation(faces, 0, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NotClockwiseOdd);
  }
  faces[0].co = {1, 0, 0, 0};
  bool fwd = extend_orientation(faces, 0, 2);
  ASSERT_EQ(faces.size(), 2u);
  EXPECT_EQ(faces[0].count() % 2, 1);
  EXPECT_EQ(faces[1].count() % 2, 1);
  EXPECT_TRUE(fwd);
}

TEST(Grassmann, SectorEdgesShareVertexRejected) {
  auto s = testsupport::two_crossing_spec();
  CellModel cm(s);
  for (unsigned S = 0; S < 4; ++S) EXPECT_TRUE(cm.disjoint(cm.sector_edges(1, S, cm.crossed(1))));
}
