#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <set>
#include <unordered_map>
#include <vector>

#include "error.hpp"
#include "height.hpp"
#include "lattice.hpp"

namespace dimerlab {

struct EnumOptions {
  int max_vertices = 100;
  bool skip_zero_weight = true;
};

// Calls visit(edge_per_black, weight) once per perfect matching, blacks chosen in index order.
template <class Visit>
void for_each_matching(const TorusGraph& g, Visit&& visit, const EnumOptions& opt = {}) {
  if (g.num_vertices() > opt.max_vertices || g.nb > 64)
    throw Error(Errc::TooLarge, "enumeration limited to " + std::to_string(opt.max_vertices) + " vertices");
  struct Arc {
    int white;
    int edge;
    double w;
  };
  std::vector<std::vector<Arc>> adj(g.nb);
  for (int id = 0; id < static_cast<int>(g.edges.size()); ++id) {
    const auto& e = g.edges[id];
    if (opt.skip_zero_weight && e.weight == 0.0) continue;
    adj[e.black].push_back({e.white - g.nb, id, e.weight});
  }
  // whites whose last black neighbour is b must be covered once b is placed
  std::vector<std::uint64_t> due(g.nb, 0);
  {
    std::vector<int> last(g.nb, -1);
    for (int b = 0; b < g.nb; ++b)
      for (const auto& a : adj[b]) last[a.white] = std::max(last[a.white], b);
    for (int w = 0; w < g.nb; ++w) {
      if (last[w] < 0) return;
      due[last[w]] |= std::uint64_t{1} << w;
    }
  }
  std::vector<int> chosen(g.nb, -1);
  auto rec = [&](auto&& self, int b, std::uint64_t used, double w) -> void {
    if (b == g.nb) {
      visit(static_cast<const std::vector<int>&>(chosen), w);
      return;
    }
    for (const auto& a : adj[b]) {
      std::uint64_t bit = std::uint64_t{1} << a.white;
      if (used & bit) continue;
      std::uint64_t u = used | bit;
      if ((u & due[b]) != due[b]) continue;
      chosen[b] = a.edge;
      self(self, b + 1, u, w * a.w);
    }
  };
  rec(rec, 0, 0, 1.0);
}

inline std::vector<Matching> enumerate_matchings(const TorusGraph& g, const EnumOptions& opt = {}) {
  std::vector<Matching> out;
  for_each_matching(g, [&](const std::vector<int>& c, double) { out.push_back({c}); }, opt);
  return out;
}

struct EnumerationResult {
  double total_weight = 0.0;
  long long count = 0;
  std::vector<double> marginal;  // per edge id
};

inline EnumerationResult enumerate(const TorusGraph& g, const EnumOptions& opt = {}) {
  EnumerationResult r;
  r.marginal.assign(g.edges.size(), 0.0);
  for_each_matching(
      g,
      [&](const std::vector<int>& c, double w) {
        r.total_weight += w;
        ++r.count;
        for (int e : c) r.marginal[e] += w;
      },
      opt);
  for (auto& p : r.marginal) p /= r.total_weight;
  return r;
}

namespace detail {

// Transfer over black vertices in column order, keyed by the set of whites already covered; each
// state carries the weight split by the number of non-planar edges used.
inline std::vector<double> summed_by_order(const TorusGraph& g, const EnumOptions& opt) {
  if (g.num_vertices() > opt.max_vertices || g.nb > 64)
    throw Error(Errc::TooLarge, "enumeration limited to " + std::to_string(opt.max_vertices) + " vertices");
  struct Arc {
    int white;
    int order;
    double w;
  };
  std::vector<int> seq(g.nb);
  std::iota(seq.begin(), seq.end(), 0);
  std::sort(seq.begin(), seq.end(), [&](int a, int b) { return g.pos[a] < g.pos[b]; });
  std::vector<std::vector<Arc>> adj(g.nb);
  int max_order = 0;
  for (const auto& e : g.edges) {
    if (opt.skip_zero_weight && e.weight == 0.0) continue;
    adj[e.black].push_back({e.white - g.nb, e.planar() ? 0 : 1, e.weight});
  }
  for (const auto& a : adj) max_order += std::any_of(a.begin(), a.end(), [](const Arc& x) { return x.order; });
  std::vector<std::uint64_t> due(g.nb, 0);
  {
    std::vector<int> last(g.nb, -1);
    for (int k = 0; k < g.nb; ++k)
      for (const auto& a : adj[seq[k]]) last[a.white] = std::max(last[a.white], k);
    for (int w = 0; w < g.nb; ++w) {
      if (last[w] < 0) return std::vector<double>(1, 0.0);
      due[last[w]] |= std::uint64_t{1} << w;
    }
  }
  const std::size_t width = static_cast<std::size_t>(max_order) + 1;
  std::unordered_map<std::uint64_t, std::vector<double>> cur{{0, std::vector<double>(width, 0.0)}}, next;
  cur[0][0] = 1.0;
  for (int k = 0; k < g.nb; ++k) {
    next.clear();
    for (const auto& [used, z] : cur)
      for (const auto& a : adj[seq[k]]) {
        const std::uint64_t bit = std::uint64_t{1} << a.white;
        if (used & bit) continue;
        const std::uint64_t u = used | bit;
        if ((u & due[k]) != due[k]) continue;
        auto [it, fresh] = next.try_emplace(u, width, 0.0);
        for (std::size_t o = 0; o + a.order < width; ++o) it->second[o + a.order] += a.w * z[o];
      }
    cur.swap(next);
  }
  std::vector<double> out(width, 0.0);
  for (const auto& [used, z] : cur)
    for (std::size_t o = 0; o < width; ++o) out[o] += z[o];
  while (out.size() > 1 && out.back() == 0.0) out.pop_back();
  return out;
}

}  // namespace detail

inline double weighted_sum(const TorusGraph& g, const EnumOptions& opt = {}) {
  auto z = detail::summed_by_order(g, opt);
  return std::accumulate(z.begin(), z.end(), 0.0);
}

// Z split by the number of non-planar edges in the matching.
inline std::vector<double> weighted_sum_by_order(const TorusGraph& g, const EnumOptions& opt = {}) {
  return detail::summed_by_order(g, opt);
}

inline double edge_marginal(const TorusGraph& g, int e, const EnumOptions& opt = {}) {
  return enumerate(g, opt).marginal.at(e);
}

// Joint occupation E(1_e 1_e') for every pair of the listed edges, with the marginals on the diagonal.
inline std::vector<std::vector<double>> joint_occupation(const TorusGraph& g, const std::vector<int>& list,
                                                         const EnumOptions& opt = {}) {
  const int n = static_cast<int>(list.size());
  std::vector<int> slot(g.edges.size(), -1);
  for (int i = 0; i < n; ++i) slot[list[i]] = i;
  std::vector<std::vector<double>> E(n, std::vector<double>(n, 0.0));
  double z = 0.0;
  std::vector<int> hit;
  for_each_matching(
      g,
      [&](const std::vector<int>& c, double w) {
        z += w;
        hit.clear();
        for (int e : c)
          if (slot[e] >= 0) hit.push_back(slot[e]);
        for (int i : hit)
          for (int k : hit) E[i][k] += w;
      },
      opt);
  for (auto& row : E)
    for (auto& v : row) v /= z;
  // repeated entries in `list` share a slot; copy the values back
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) E[i][k] = E[slot[list[i]]][slot[list[k]]];
  return E;
}

inline double truncated_corr(const TorusGraph& g, int e, int e2, const EnumOptions& opt = {}) {
  auto E = joint_occupation(g, {e, e2}, opt);
  return E[0][1] - E[0][0] * E[1][1];
}

// Sum over matchings using exactly the non-planar edges J and, among P_J, exactly the edges S.
inline double restricted_sum(const TorusGraph& g, const std::vector<int>& J, const std::vector<int>& S,
                             const EnumOptions& opt = {}) {
  std::set<int> Jset(J.begin(), J.end()), Sset(S.begin(), S.end()), P;
  for (int e : J)
    for (int c : g.edges.at(e).crossings) P.insert(c);
  for (int s : Sset)
    if (!P.count(s)) throw Error(Errc::InvalidSpec, "S must lie in P_J");
  double z = 0.0;
  for_each_matching(
      g,
      [&](const std::vector<int>& c, double w) {
        std::size_t nj = 0, ns = 0;
        for (int e : c) {
          if (!g.edges[e].planar()) {
            if (!Jset.count(e)) return;
            ++nj;
          } else if (P.count(e)) {
            if (!Sset.count(e)) return;
            ++ns;
          }
        }
        if (nj == Jset.size() && ns == Sset.size()) z += w;
      },
      opt);
  return z;
}

// Cov(h(eta_a) - h(eta_b), h(eta_c) - h(eta_d)) as a double sum over truncated correlations of crossed edges.
inline double exact_height_covariance(const TorusGraph& g, std::array<int, 2> a, std::array<int, 2> b,
                                      std::array<int, 2> c, std::array<int, 2> d, const EnumOptions& opt = {}) {
  auto p1 = corridor_path(g, b, a), p2 = corridor_path(g, d, c);
  std::vector<int> list;
  for (auto s : p1) list.push_back(s.edge);
  for (auto s : p2) list.push_back(s.edge);
  if (p1.empty() || p2.empty()) return 0.0;
  auto E = joint_occupation(g, list, opt);
  const int n1 = static_cast<int>(p1.size());
  double cov = 0.0;
  for (int i = 0; i < n1; ++i)
    for (int k = 0; k < static_cast<int>(p2.size()); ++k) {
      double t = E[i][n1 + k] - E[i][i] * E[n1 + k][n1 + k];
      cov += p1[i].sigma * p2[k].sigma * t;
    }
  return cov;
}

}  // namespace dimerlab
