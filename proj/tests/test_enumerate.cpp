#include <gtest/gtest.h>

#include <dimerlab/enumerate.hpp>
#include <dimerlab/kasteleyn.hpp>

#include "support.hpp"

using namespace dimerlab;

TEST(Enumerate, VertexSumRule) {
  std::mt19937_64 rng(2);
  auto s = testsupport::random_weights(4, rng);
  s.nonplanar = testsupport::two_crossing_spec().nonplanar;
  auto g = build_graph(s, 1, 0.7);
  auto r = enumerate(g);
  for (int v = 0; v < g.num_vertices(); ++v) {
    double sum = 0.0;
    for (int e : g.incident[v]) sum += r.marginal[e];
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Enumerate, TransferSumMatchesVisitor) {
  std::mt19937_64 rng(12);
  std::vector<TorusGraph> gs;
  gs.push_back(build_graph(testsupport::two_crossing_spec(), 1, 0.7));
  gs.push_back(build_graph(testsupport::random_nonplanar(testsupport::random_weights(6, rng), 2, rng), 1, -0.4));
  CellSpec two;
  two.m = 2;
  two.planar_weights[{1, 2}] = 1.7;
  gs.push_back(planar_torus(two, 3));
  for (const auto& g : gs) {
    std::vector<double> byk;
    for_each_matching(g, [&](const std::vector<int>& c, double w) {
      std::size_t k = 0;
      for (int e : c) k += g.edges[e].planar() ? 0 : 1;
      if (byk.size() <= k) byk.resize(k + 1, 0.0);
      byk[k] += w;
    });
    auto dp = weighted_sum_by_order(g);
    ASSERT_EQ(dp.size(), byk.size());
    for (std::size_t k = 0; k < dp.size(); ++k) EXPECT_NEAR(dp[k], byk[k], 1e-10 * std::abs(byk[0])) << k;
  }
}

TEST(Enumerate, DiagonalCorrelation) {
  auto g = build_graph(testsupport::two_crossing_spec(), 1, 0.3);
  for (int e : {0, 5, 32}) {
    double p = edge_marginal(g, e);
    EXPECT_NEAR(truncated_corr(g, e, e), p * (1 - p), 1e-14);
  }
}

TEST(Enumerate, NonplanarMatchingsIncluded) {
  auto g = build_graph(testsupport::two_crossing_spec(), 1, 0.2);
  int np = static_cast<int>(g.edges.size()) - 1;
  bool seen = false;
  for (auto& M : enumerate_matchings(g))
    for (int e : M.edge) seen |= (e == np);
  EXPECT_TRUE(seen);
  for (auto& M : enumerate_matchings(g)) EXPECT_TRUE(is_perfect(g, M));
}

TEST(Enumerate, TooLarge) {
  CellSpec s;
  s.m = 6;
  auto g = build_graph(s, 2, 0.0);
  EXPECT_THROW(weighted_sum(g), Error);
}

TEST(Enumerate, RegressionAdjacentParallelDimers) {
  CellSpec s;
  auto g = build_graph(s, 1, 0.0);
  int e1 = g.site_edge_id(0, 0, 0), e2 = g.site_edge_id(0, 1, 0);
  // 32 of the 272 matchings hold both dimers: 2/17 - 1/16
  EXPECT_NEAR(truncated_corr(g, e1, e2), 15.0 / 272.0, 1e-13);
}

TEST(Enumerate, RestrictedSumsPartitionZ) {
  auto g = build_graph(testsupport::two_crossing_spec(), 1, 0.3);
  int np = static_cast<int>(g.edges.size()) - 1;
  const auto& P = g.edges[np].crossings;
  double total = restricted_sum(g, {}, {});
  int nonzero = total > 0 ? 1 : 0;
  for (int mask = 0; mask < 4; ++mask) {
    std::vector<int> S;
    for (int k = 0; k < 2; ++k)
      if (mask >> k & 1) S.push_back(P[k]);
    double r = restricted_sum(g, {np}, S);
    EXPECT_GE(r, 0.0);
    nonzero += r > 0 ? 1 : 0;
    total += r;
  }
  EXPECT_NEAR(total, weighted_sum(g), 1e-12 * total);
  EXPECT_EQ(nonzero, 5);
}

TEST(Enumerate, GaugeInvariance) {
  std::mt19937_64 rng(9);
  auto s = testsupport::random_weights(4, rng);
  s.nonplanar = testsupport::two_crossing_spec().nonplanar;
  auto g = build_graph(s, 1, 0.4);
  auto r = enumerate(g);
  for (double c : {0.5, 2.0}) {
    auto h = g;
    int v = 5;
    for (int e : h.incident[v]) h.edges[e].weight *= c;
    auto r2 = enumerate(h);
    EXPECT_NEAR(r2.total_weight, c * r.total_weight, 1e-12 * r.total_weight);
    for (std::size_t e = 0; e < g.edges.size(); ++e) EXPECT_NEAR(r2.marginal[e], r.marginal[e], 1e-12);
    EXPECT_NEAR(truncated_corr(h, 0, 9), truncated_corr(g, 0, 9), 1e-12);
  }
}

TEST(Enumerate, HeightCovarianceBasics) {
  CellSpec s;
  s.m = 2;
  auto g = planar_torus(s, 3);
  EXPECT_EQ(exact_height_covariance(g, {1, 0}, {1, 0}, {1, 1}, {0, 0}), 0.0);
  double a = exact_height_covariance(g, {1, 0}, {0, 0}, {1, 1}, {0, 1});
  double b = exact_height_covariance(g, {1, 1}, {0, 1}, {1, 0}, {0, 0});
  EXPECT_NEAR(a, b, 1e-13);
  double var = exact_height_covariance(g, {1, 1}, {0, 0}, {1, 1}, {0, 0});
  EXPECT_GT(var, 0.0);
}

TEST(Enumerate, HeightClosedLoopVanishes) {
  auto g = build_graph(testsupport::two_crossing_spec(), 1, 0.3);
  auto loop = corridor_path(g, {0, 0}, {1, 1});
  auto back = corridor_path_vertical_first(g, {1, 1}, {0, 0});
  loop.insert(loop.end(), back.begin(), back.end());
  for_each_matching(g, [&](const std::vector<int>& c, double) {
    std::vector<char> occ(g.edges.size(), 0);
    for (int e : c) occ[e] = 1;
    EXPECT_DOUBLE_EQ(path_increment(loop, occ), 0.0);
  });
}
