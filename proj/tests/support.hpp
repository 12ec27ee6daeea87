#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <vector>

#include <dimerlab/lattice.hpp>

namespace testsupport {

using dimerlab::CellSpec;

inline CellSpec two_crossing_spec() {
  CellSpec s;
  s.m = 4;
  s.nonplanar.push_back({5, 6, 1.0, {{7, 4}, {6, 2}}});
  return s;
}

// Non-uniform m = 4 weights with two well separated simple Fermi points.
inline CellSpec liquid_spec() {
  CellSpec s;
  s.m = 4;
  const double w[8][4] = {{0.6, 1.1, 1.8, 1.4}, {2.0, 1.8, 1.4, 1.9}, {0.6, 1.0, 1.3, 2.0}, {0.5, 0.9, 1.1, 1.7},
                          {1.2, 0.9, 1.3, 1.5}, {1.1, 0.8, 1.7, 1.7}, {0.5, 1.3, 0.9, 1.7}, {1.5, 1.6, 2.0, 1.1}};
  for (int ell = 1; ell <= 8; ++ell)
    for (int j = 1; j <= 4; ++j) s.planar_weights[{ell, j}] = w[ell - 1][j - 1];
  return s;
}

inline CellSpec random_weights(int m, std::mt19937_64& rng, double lo = 0.3, double hi = 2.0) {
  CellSpec s;
  s.m = m;
  std::uniform_real_distribution<double> u(lo, hi);
  for (int ell = 1; ell <= m * m / 2; ++ell)
    for (int j = 1; j <= 4; ++j) s.planar_weights[{ell, j}] = u(rng);
  return s;
}

// Appends up to `count` random valid non-planar edges, each along a short self-avoiding face walk.
inline CellSpec random_nonplanar(CellSpec s, int count, std::mt19937_64& rng, int max_walk = 3,
                                 double lo = 0.3, double hi = 2.0) {
  dimerlab::CellLayout lay(s.m);
  const int nf = s.m - 1;
  std::uniform_real_distribution<double> u(lo, hi);
  for (int added = 0, tries = 0; added < count && tries < 2000; ++tries) {
    std::vector<std::array<int, 2>> walk{{static_cast<int>(rng() % nf), static_cast<int>(rng() % nf)}};
    std::set<std::array<int, 2>> seen(walk.begin(), walk.end());
    int len = 1 + static_cast<int>(rng() % max_walk);
    bool ok = true;
    for (int step = 0; step < len && ok; ++step) {
      int d = static_cast<int>(rng() % 4);
      std::array<int, 2> f{walk.back()[0] + dimerlab::kDx[d], walk.back()[1] + dimerlab::kDy[d]};
      if (f[0] < 0 || f[1] < 0 || f[0] >= nf || f[1] >= nf || seen.count(f)) ok = false;
      else {
        walk.push_back(f);
        seen.insert(f);
      }
    }
    if (!ok) continue;
    dimerlab::NonplanarEdge e;
    for (std::size_t k = 1; k < walk.size(); ++k) {
      auto a = walk[k - 1], b = walk[k];
      // shared side of two neighbouring faces
      std::array<int, 2> p{std::max(a[0], b[0]), std::max(a[1], b[1])}, q = p;
      if (a[0] != b[0]) q[1] += 1;
      else q[0] += 1;
      e.crossings.push_back(lay.ref_between(p, q));
    }
    auto corners = [&](std::array<int, 2> f, bool black) {
      std::vector<std::array<int, 2>> out;
      for (int du = 0; du <= 1; ++du)
        for (int dv = 0; dv <= 1; ++dv)
          if (dimerlab::is_black_site(f[0] + du, f[1] + dv) == black) out.push_back({f[0] + du, f[1] + dv});
      return out;
    };
    auto bs = corners(walk.front(), true), ws = corners(walk.back(), false);
    auto b = bs[rng() % bs.size()], w = ws[rng() % ws.size()];
    e.bl = lay.type_at(b[0], b[1]);
    e.wh = lay.type_at(w[0], w[1]);
    e.weight = u(rng);
    CellSpec t = s;
    t.nonplanar.push_back(e);
    if (!dimerlab::validate_spec(t).empty()) continue;
    s = t;
    ++added;
  }
  return s;
}

// Formal Grassmann algebra on psi+_i, psi-_i (i < n), generators ordered psi+_0, psi-_0, psi+_1, ...
class Grassmann {
 public:
  explicit Grassmann(int n) : n_(n) {}
  using Poly = std::map<std::uint32_t, double>;

  static int gen_plus(int i) { return 2 * i; }
  static int gen_minus(int i) { return 2 * i + 1; }

  static Poly one() { return {{0u, 1.0}}; }
  static Poly generator(int g) { return {{1u << g, 1.0}}; }

  static Poly mul(const Poly& a, const Poly& b) {
    Poly out;
    for (auto [ma, ca] : a)
      for (auto [mb, cb] : b) {
        if (ma & mb) continue;
        int swaps = 0;
        for (int i = 0; i < 32; ++i)
          if (mb & (1u << i)) swaps += __builtin_popcount(ma >> (i + 1));
        out[ma | mb] += (swaps % 2 ? -1.0 : 1.0) * ca * cb;
      }
    return out;
  }
  static Poly add(Poly a, const Poly& b, double s = 1.0) {
    for (auto [m, c] : b) a[m] += s * c;
    return a;
  }

  // exp(-sum K_bw psi+_b psi-_w), built as a product of commuting nilpotent factors.
  template <class M>
  Poly gaussian(const M& K) const {
    Poly p = one();
    for (int b = 0; b < n_; ++b)
      for (int w = 0; w < n_; ++w) {
        if (K(b, w) == 0.0) continue;
        Poly f = add(one(), mul(generator(gen_plus(b)), generator(gen_minus(w))), -K(b, w));
        p = mul(p, f);
      }
    return p;
  }

  // Berezin integral normalised by int prod_i psi-_i psi+_i = 1.
  double integrate(const Poly& p) const {
    std::uint32_t top = (n_ == 16) ? 0xffffffffu : ((1u << (2 * n_)) - 1u);
    auto it = p.find(top);
    double c = it == p.end() ? 0.0 : it->second;
    return (n_ % 2) ? -c : c;
  }

 private:
  int n_;
};

}  // namespace testsupport
