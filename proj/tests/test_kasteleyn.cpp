#include <gtest/gtest.h>

#include <dimerlab/enumerate.hpp>
#include <dimerlab/kasteleyn.hpp>

#include "support.hpp"

using namespace dimerlab;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

}  // namespace

TEST(Kasteleyn, ElementaryFacesClockwiseOdd) {
  for (int L : {1, 2}) {
    CellSpec s;
    auto g = build_graph(s, L, 0.0);
    auto o = basic_orientation(g);
    for (int X = 0; X + 1 < g.N; ++X)
      for (int Y = 0; Y + 1 < g.N; ++Y) EXPECT_EQ(clockwise_count(g, o, X, Y) % 2, 1);
  }
}

TEST(Kasteleyn, SeamFacesClockwiseOddUnderReferenceOrientation) {
  CellSpec s;
  auto g = build_graph(s, 2, 0.0);
  auto o = relevant_orientation(g, {1, 1});
  const int N = g.N;
  for (int k = 0; k + 1 < N; ++k) {
    EXPECT_EQ(clockwise_count(g, o, N - 1, k) % 2, 1);
    EXPECT_EQ(clockwise_count(g, o, k, N - 1) % 2, 1);
  }
}

TEST(Kasteleyn, BasicOrientationShape) {
  CellSpec s;
  auto g = build_graph(s, 1, 0.0);
  auto o = basic_orientation(g);
  int up = 0, columns = 0;
  for (int X = 0; X < g.N; ++X) {
    int id = g.site_edge_id(X, 0, 1);
    bool black_below = is_black_site(X, 0);
    up += ((o.arrow[id] > 0) == black_below) ? 1 : 0;
    ++columns;
    int h = g.site_edge_id(X, 0, 0);
    EXPECT_EQ(o.arrow[h] > 0, is_black_site(X, 0));  // left to right
  }
  EXPECT_EQ(2 * up, columns);
  auto g2 = build_graph(s, 2, 0.0);
  auto o2 = basic_orientation(g2);
  for (int id = 0; id < static_cast<int>(g2.edges.size()); ++id) {
    const auto& e = g2.edges[id];
    auto [X, Y] = g2.pos[e.black];
    int t = g2.vertex(X + 4, Y);
    int id2 = g2.planar_edge(g2.cell_of(t), g2.type_of(t), e.j);
    EXPECT_EQ(o2.arrow[id], o2.arrow[id2]);
  }
}

TEST(Kasteleyn, RelevantOrientationSeamFactors) {
  CellSpec s;
  auto g = build_graph(s, 2, 0.0);
  auto kpp = kasteleyn_matrix(g, {1, 1});
  auto kmp = kasteleyn_matrix(g, {-1, 1});
  for (const auto& e : g.edges) {
    double a = kpp(e.black, e.white - g.nb), b = kmp(e.black, e.white - g.nb);
    if (e.wrap & 1)
      EXPECT_EQ(b / a, -1.0);
    else
      EXPECT_EQ(b, a);
  }
  for (auto th : kThetas) {
    auto K = kasteleyn_matrix(g, th);
    for (const auto& e : g.edges)
      if (!e.wrap) EXPECT_EQ(K(e.black, e.white - g.nb), kpp(e.black, e.white - g.nb));
  }
}

TEST(Kasteleyn, UniformTorusCounts) {
  // known matching counts of the 4x4 and 6x6 tori
  CellSpec s4;
  EXPECT_NEAR(planar_partition(build_graph(s4, 1, 0.0)), 272.0, 1e-9);
  CellSpec s6;
  s6.m = 6;
  EXPECT_NEAR(planar_partition(build_graph(s6, 1, 0.0)), 90176.0, 1e-6);
}

TEST(Kasteleyn, MatchesEnumerationUniform) {
  for (auto [m, L] : {std::pair{4, 1}, std::pair{6, 1}}) {
    CellSpec s;
    s.m = m;
    auto g = build_graph(s, L, 0.0);
    EXPECT_LT(rel(planar_partition(g), weighted_sum(g)), 1e-9) << m << " " << L;
  }
}

TEST(Kasteleyn, MatchesEnumerationTwoByTwo) {
  CellSpec s;
  s.m = 2;
  auto g = planar_torus(s, 1);
  auto r = enumerate(g);
  EXPECT_EQ(r.count, 8);
  EXPECT_NEAR(planar_partition(g), r.total_weight, 1e-12);
  auto g2 = planar_torus(s, 2);
  EXPECT_LT(rel(planar_partition(g2), weighted_sum(g2)), 1e-9);
}

TEST(Kasteleyn, MatchesEnumerationRandomWeights) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 6; ++trial) {
    int m = trial % 2 ? 6 : 4;
    auto s = testsupport::random_weights(m, rng);
    auto g = build_graph(s, 1, 0.0);
    EXPECT_LT(rel(planar_partition(g), weighted_sum(g)), 1e-9);
  }
  CellSpec s2;
  s2.m = 2;
  std::uniform_real_distribution<double> u(0.3, 2.0);
  for (int ell = 1; ell <= 2; ++ell)
    for (int j = 1; j <= 4; ++j) s2.planar_weights[{ell, j}] = u(rng);
  auto g = planar_torus(s2, 3);
  EXPECT_LT(rel(planar_partition(g), weighted_sum(g)), 1e-9);
}

TEST(Kasteleyn, WeightScaling) {
  std::mt19937_64 rng(5);
  auto s = testsupport::random_weights(4, rng);
  auto g = build_graph(s, 2, 0.0);
  double z = planar_partition(g);
  for (auto& [k, w] : s.planar_weights) w *= 1.7;
  auto g2 = build_graph(s, 2, 0.0);
  EXPECT_LT(rel(planar_partition(g2), z * std::pow(1.7, 32)), 1e-9);
}

TEST(Kasteleyn, ReferenceSignComputed) {
  for (int L : {1, 2, 3}) {
    CellSpec s;
    auto g = build_graph(s, L, 0.0);
    int r = reference_sign(g);
    EXPECT_TRUE(r == 1 || r == -1);
  }
}

TEST(Kasteleyn, TypeRelabelingLeavesDeterminantsUnchanged) {
  std::mt19937_64 rng(7);
  auto s = testsupport::random_weights(4, rng);
  auto g = build_graph(s, 2, 0.0);
  const int T = g.types();
  std::vector<int> perm(T);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (auto th : kThetas) {
    auto K = kasteleyn_matrix(g, th);
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(g.nb, g.nb);
    for (int c = 0; c < g.num_cells(); ++c)
      for (int t = 0; t < T; ++t) P(c * T + t, c * T + perm[t]) = 1.0;
    Eigen::MatrixXd K2 = P * K * P.transpose();
    EXPECT_NEAR(determinant(K2), determinant(K), 1e-9 * std::abs(determinant(K)));
  }
}

TEST(Kasteleyn, AntisymmetricForm) {
  CellSpec s;
  auto g = build_graph(s, 1, 0.0);
  auto A = antisymmetric_form(kasteleyn_matrix(g, {1, -1}));
  EXPECT_EQ((A + A.transpose()).norm(), 0.0);
}

TEST(Kasteleyn, SignedMinorAgainstGrassmannExpansion) {
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int n = 1; n <= 4; ++n) {
    Eigen::MatrixXd K(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) K(i, j) = u(rng);
    testsupport::Grassmann G(n);
    auto gauss = G.gaussian(K);
    EXPECT_NEAR(G.integrate(gauss), signed_minor(K, {}), 1e-12);
    EXPECT_NEAR(signed_minor(K, {}), determinant(K), 1e-12);
    std::vector<int> ws(n);
    std::iota(ws.begin(), ws.end(), 0);
    for (int trial = 0; trial < 12; ++trial) {
      int p = 1 + static_cast<int>(rng() % n);
      std::vector<int> bs(n);
      std::iota(bs.begin(), bs.end(), 0);
      std::shuffle(bs.begin(), bs.end(), rng);
      std::shuffle(ws.begin(), ws.end(), rng);
      std::vector<std::pair<int, int>> pairs;
      auto mono = testsupport::Grassmann::one();
      for (int k = 0; k < p; ++k) {
        pairs.push_back({bs[k], ws[k]});
        mono = testsupport::Grassmann::mul(mono, testsupport::Grassmann::generator(testsupport::Grassmann::gen_plus(bs[k])));
        mono = testsupport::Grassmann::mul(mono, testsupport::Grassmann::generator(testsupport::Grassmann::gen_minus(ws[k])));
      }
      double expect = G.integrate(testsupport::Grassmann::mul(gauss, mono));
      EXPECT_NEAR(signed_minor(K, pairs), expect, 1e-12) << n << " " << p;
    }
  }
}

TEST(Kasteleyn, SignedMinorEdgeCases) {
  Eigen::MatrixXd K(2, 2);
  K << 1, 2, 3, 4;
  EXPECT_EQ(signed_minor(K, {{0, 1}, {1, 0}}), -1.0);  // psi+_0 psi-_1 psi+_1 psi-_0 is odd w.r.t. the normalisation
  EXPECT_THROW(signed_minor(K, {{0, 1}, {0, 0}}), Error);
  EXPECT_THROW(signed_minor(K, {{0, 5}}), Error);
}
