#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "enumerate.hpp"
#include "error.hpp"
#include "height.hpp"
#include "kasteleyn.hpp"
#include "lattice.hpp"
#include "parallel.hpp"

namespace dimerlab {

// ---------------------------------------------------------------------------------------------
// Cell-local data. Sites are u*m + v; planar in-cell edges are keyed (ell-1)*4 + (j-1),
// non-planar edge k is keyed 4*T + k.

class CellModel {
 public:
  explicit CellModel(const CellSpec& s) : spec(s), layout(s.m), m(s.m), T(s.m * s.m / 2) {}

  CellSpec spec;
  CellLayout layout;
  int m;
  int T;

  int site(std::array<int, 2> p) const { return p[0] * m + p[1]; }
  std::array<int, 2> coords(int s) const { return {s / m, s % m}; }
  bool black(int s) const { return is_black_site(s / m, s % m); }

  int key(EdgeRef r) const { return (r.ell - 1) * 4 + r.j - 1; }
  int np_key(int k) const { return 4 * T + k; }
  bool is_np(int key) const { return key >= 4 * T; }
  EdgeRef ref(int key) const { return {key / 4 + 1, key % 4 + 1}; }

  // {black site, white site}
  std::array<int, 2> ends(int key) const {
    if (is_np(key)) {
      const auto& e = spec.nonplanar[key - 4 * T];
      return {site(layout.site(true, e.bl)), site(layout.site(false, e.wh))};
    }
    auto p = layout.endpoints(ref(key));
    return {site(p[0]), site(p[1])};
  }

  // P_J in order of first appearance along the crossing lists.
  std::vector<int> crossed(unsigned J) const {
    std::vector<int> out;
    for (std::size_t k = 0; k < spec.nonplanar.size(); ++k)
      if (J >> k & 1u)
        for (auto r : spec.nonplanar[k].crossings) {
          int c = key(r);
          if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
        }
    return out;
  }

  bool disjoint(const std::vector<int>& keys) const {
    std::set<int> seen;
    for (int k : keys)
      for (int s : ends(k))
        if (!seen.insert(s).second) return false;
    return true;
  }

  // Keys of J followed by the selected keys of P.
  std::vector<int> sector_edges(unsigned J, unsigned S, const std::vector<int>& P) const {
    std::vector<int> out;
    for (std::size_t k = 0; k < spec.nonplanar.size(); ++k)
      if (J >> k & 1u) out.push_back(np_key(static_cast<int>(k)));
    for (std::size_t i = 0; i < P.size(); ++i)
      if (S >> i & 1u) out.push_back(P[i]);
    return out;
  }

  // Basic orientation restricted to the cell: true iff the edge a -- b points a -> b.
  bool arrow(int a, int b) const {
    auto pa = coords(a), pb = coords(b);
    if (pa[1] == pb[1]) return pb[0] == pa[0] + 1;
    return (pa[0] % 2 == 0) ? pb[1] == pa[1] + 1 : pb[1] == pa[1] - 1;
  }
  int planar_sign(int key) const {
    auto e = ends(key);
    return arrow(e[0], e[1]) ? 1 : -1;
  }
};

struct EpsilonOptions {
  std::uint64_t seed = 0;
  bool shuffle_pairing = false;
  bool shuffle_insertion = false;
};

namespace detail {

struct FaceCycle {
  std::vector<int> site;
  std::vector<char> co;  // co[i]: edge site[i] -> site[i+1] is traversed along its arrow
  int count() const { return static_cast<int>(std::count(co.begin(), co.end(), 1)); }
  int find(int s) const {
    auto it = std::find(site.begin(), site.end(), s);
    return it == site.end() ? -1 : static_cast<int>(it - site.begin());
  }
};

struct UnionFind {
  std::vector<int> p;
  explicit UnionFind(int n) : p(n) { std::iota(p.begin(), p.end(), 0); }
  int find(int x) { return p[x] == x ? x : p[x] = find(p[x]); }
  void unite(int a, int b) { p[find(a)] = find(b); }
};

}  // namespace detail

// Greedy re-pairing along a face boundary: repeatedly join two opposite-colour marked sites that are
// adjacent once already paired sites are dropped. Returns pairs (black, white).
inline std::vector<std::array<int, 2>> pair_face_endpoints(const std::vector<int>& marked_in_order,
                                                           const std::vector<char>& is_black,
                                                           std::mt19937_64* choice = nullptr) {
  std::vector<int> list = marked_in_order;
  std::vector<char> col = is_black;
  std::vector<std::array<int, 2>> out;
  while (!list.empty()) {
    const int n = static_cast<int>(list.size());
    std::vector<int> cand;
    for (int i = 0; i < n; ++i)
      if (col[i] != col[(i + 1) % n] && n >= 2) cand.push_back(i);
    if (cand.empty()) throw Error(Errc::PairingImpossible, "no adjacent opposite-colour endpoints on the face");
    int i = choice ? cand[(*choice)() % cand.size()] : cand.front();
    int k = (i + 1) % n;
    int a = list[i], b = list[k];
    out.push_back(col[i] ? std::array<int, 2>{a, b} : std::array<int, 2>{b, a});
    int hi = std::max(i, k), lo = std::min(i, k);
    list.erase(list.begin() + hi);
    col.erase(col.begin() + hi);
    list.erase(list.begin() + lo);
    col.erase(col.begin() + lo);
  }
  return out;
}

// Inserts the chord a -- b into the face of `faces` holding both sites, orienting it so that both halves
// are clockwise odd. Returns true iff the chord points a -> b.
inline bool extend_orientation(std::vector<detail::FaceCycle>& faces, int a, int b) {
  for (std::size_t f = 0; f < faces.size(); ++f) {
    auto& F = faces[f];
    int i = F.find(a), j = F.find(b);
    if (i < 0 || j < 0) continue;
    if (F.count() % 2 == 0) throw Error(Errc::NotClockwiseOdd, "face is not clockwise odd before insertion");
    bool swapped = i > j;
    if (swapped) std::swap(i, j);
    const int n = static_cast<int>(F.site.size());
    int c1 = 0;
    for (int t = i; t < j; ++t) c1 += F.co[t];
    bool j_to_i = (c1 % 2 == 0);
    detail::FaceCycle A, B;
    for (int t = i; t <= j; ++t) A.site.push_back(F.site[t]);
    for (int t = i; t < j; ++t) A.co.push_back(F.co[t]);
    A.co.push_back(j_to_i ? 1 : 0);
    for (int t = j; t < n; ++t) {
      B.site.push_back(F.site[t]);
      B.co.push_back(F.co[t]);
    }
    for (int t = 0; t < i; ++t) {
      B.site.push_back(F.site[t]);
      B.co.push_back(F.co[t]);
    }
    B.site.push_back(F.site[i]);
    B.co.push_back(j_to_i ? 0 : 1);
    if (A.count() % 2 == 0 || B.count() % 2 == 0)
      throw Error(Errc::NotClockwiseOdd, "chord orientation failed the parity check");
    faces[f] = std::move(A);
    faces.push_back(std::move(B));
    // chord runs site[j] -> site[i] iff j_to_i; translate back to a -> b
    bool i_is_a = !swapped;
    return j_to_i ? !i_is_a : i_is_a;
  }
  throw Error(Errc::PairingImpossible, "chord endpoints do not share a face");
}

// Constructive sector sign: pairing of J u S endpoints inside merged faces, orientation extension,
// permutation parity and the orientation signs of the S edges.
inline int epsilon_sign(const CellSpec& spec, unsigned J, unsigned S, const EpsilonOptions& opt = {}) {
  CellModel cm(spec);
  const int m = cm.m, nf = (m - 1) * (m - 1);
  const auto P = cm.crossed(J);
  if (S >> P.size()) throw Error(Errc::InvalidSpec, "S mask exceeds P_J");
  const auto sec = cm.sector_edges(J, S, P);
  if (sec.empty()) return 1;
  if (!cm.disjoint(sec)) throw Error(Errc::InvalidSpec, "sector edges share a vertex");

  auto face_id = [&](std::array<int, 2> f) { return f[0] * (m - 1) + f[1]; };
  detail::UnionFind uf(nf);
  std::set<std::pair<int, int>> removed;
  for (int k : P) {
    auto fs = cm.layout.faces_of(cm.ref(k));
    uf.unite(face_id(fs[0]), face_id(fs[1]));
    auto e = cm.ends(k);
    removed.insert({std::min(e[0], e[1]), std::max(e[0], e[1])});
  }
  std::mt19937_64 rng(opt.seed);

  // region of every sector edge
  std::map<int, std::vector<int>> region_edges;
  for (int k : sec) {
    int f;
    if (cm.is_np(k))
      f = face_id(cm.layout.faces_of(spec.nonplanar[k - 4 * cm.T].crossings.front())[0]);
    else
      f = face_id(cm.layout.faces_of(cm.ref(k))[0]);
    region_edges[uf.find(f)].push_back(k);
  }

  std::map<int, int> chord_partner;  // black site -> white site
  std::vector<std::array<int, 2>> chords;
  int sigma = 1;
  std::vector<detail::FaceCycle> faces;
  for (auto& [root, keys] : region_edges) {
    // clockwise boundary of the merged face
    std::map<int, int> next;
    for (int fu = 0; fu < m - 1; ++fu)
      for (int fv = 0; fv < m - 1; ++fv) {
        if (uf.find(face_id({fu, fv})) != root) continue;
        int c[4] = {cm.site({fu, fv}), cm.site({fu, fv + 1}), cm.site({fu + 1, fv + 1}), cm.site({fu + 1, fv})};
        for (int t = 0; t < 4; ++t) {
          int a = c[t], b = c[(t + 1) % 4];
          if (removed.count({std::min(a, b), std::max(a, b)})) continue;
          if (!next.emplace(a, b).second) throw Error(Errc::InvalidSpec, "merged face is not a disk");
        }
      }
    detail::FaceCycle F;
    int start = next.begin()->first, s = start;
    do {
      F.site.push_back(s);
      int t = next.at(s);
      F.co.push_back(cm.arrow(s, t) ? 1 : 0);
      s = t;
    } while (s != start && F.site.size() <= next.size());
    if (s != start || F.site.size() != next.size())
      throw Error(Errc::InvalidSpec, "merged face boundary is not a simple cycle");
    if (F.count() % 2 == 0) throw Error(Errc::NotClockwiseOdd, "merged face is not clockwise odd");

    std::set<int> marked;
    for (int k : keys)
      for (int v : cm.ends(k)) marked.insert(v);
    std::vector<int> order;
    std::vector<char> col;
    for (int v : F.site)
      if (marked.count(v)) {
        order.push_back(v);
        col.push_back(cm.black(v) ? 1 : 0);
      }
    if (order.size() != marked.size()) throw Error(Errc::PairingImpossible, "endpoint is not on its merged face");
    if (!order.empty() && opt.shuffle_pairing) {
      // start the cyclic order at a random place; pairing stays adjacent-greedy
      auto r = static_cast<long>(rng() % order.size());
      std::rotate(order.begin(), order.begin() + r, order.end());
      std::rotate(col.begin(), col.begin() + r, col.end());
    }
    auto pairs = pair_face_endpoints(order, col, opt.shuffle_pairing ? &rng : nullptr);
    faces.push_back(std::move(F));
    for (auto p : pairs) chords.push_back(p);
  }
  if (opt.shuffle_insertion) std::shuffle(chords.begin(), chords.end(), rng);
  for (auto [b, w] : chords) {
    bool b_to_w = extend_orientation(faces, b, w);
    sigma *= b_to_w ? 1 : -1;
    chord_partner[b] = w;
  }

  // permutation parity between the chord pairing and the sector pairing
  std::vector<int> blacks, whites;
  for (int k : sec) {
    auto e = cm.ends(k);
    blacks.push_back(e[0]);
    whites.push_back(e[1]);
  }
  std::vector<int> tau(blacks.size());
  for (std::size_t i = 0; i < blacks.size(); ++i) {
    int w = chord_partner.at(blacks[i]);
    tau[i] = static_cast<int>(std::find(whites.begin(), whites.end(), w) - whites.begin());
  }
  int pi = permutation_sign(tau);
  int ks = 1;
  for (int k : sec)
    if (!cm.is_np(k)) ks *= cm.planar_sign(k);
  return pi * sigma * ks;
}

// ---------------------------------------------------------------------------------------------
// Sign oracle: the restricted matching sum divided by the theta-summed signed minor on one cell.

namespace detail {

inline int global_edge(const TorusGraph& g, const CellModel& cm, std::array<int, 2> x, int key) {
  if (cm.is_np(key)) return g.nonplanar_edge(x, key - 4 * cm.T);
  auto r = cm.ref(key);
  return g.planar_edge(x, r.ell, r.j);
}

}  // namespace detail

inline double sector_minor_sum(const TorusGraph& g, const std::vector<int>& sector, const std::vector<int>& masked_ids,
                               const std::vector<std::pair<int, int>>& extra = {}) {
  std::vector<char> mask(g.edges.size(), 0);
  for (int id : masked_ids) mask[id] = 1;
  double total = 0.0;
  for (auto th : kThetas) {
    auto K = kasteleyn_matrix(g, th, {}, mask);
    std::vector<std::pair<int, int>> pairs;
    double w = 1.0;
    for (int id : sector) {
      const auto& e = g.edges[id];
      pairs.push_back({e.black, e.white - g.nb});
      w *= -(e.planar() ? relevant_arrow(g, e, th) * e.weight : e.weight);
    }
    for (auto p : extra) pairs.push_back(p);
    total += 0.5 * c_theta(th) * w * signed_minor(K, pairs);
  }
  return total * reference_sign(g);
}

struct SectorRatio {
  double restricted = 0.0;  // matching sum over the sector on the one-cell torus
  double minors = 0.0;      // theta-summed signed minors with P_J removed
};

inline SectorRatio sector_ratio_parts(const CellSpec& spec, unsigned J, unsigned S) {
  CellModel cm(spec);
  auto g = build_graph(spec, 1, 1.0);
  const auto P = cm.crossed(J);
  auto sec = cm.sector_edges(J, S, P);
  std::vector<int> ids, Jids, Sids, Pids;
  for (int k : sec) ids.push_back(detail::global_edge(g, cm, {0, 0}, k));
  for (int k : P) Pids.push_back(detail::global_edge(g, cm, {0, 0}, k));
  for (std::size_t i = 0; i < sec.size(); ++i) (cm.is_np(sec[i]) ? Jids : Sids).push_back(ids[i]);
  return {restricted_sum(g, Jids, Sids), sector_minor_sum(g, ids, Pids)};
}

inline double epsilon_ratio(const CellSpec& spec, unsigned J, unsigned S) {
  auto r = sector_ratio_parts(spec, J, S);
  if (r.restricted == 0.0 || r.minors == 0.0) throw Error(Errc::RatioNotUnit, "empty sector on the one-cell torus");
  return r.restricted / r.minors;
}

inline int epsilon_sign_oracle(const CellSpec& spec, unsigned J, unsigned S) {
  double r = epsilon_ratio(spec, J, S);
  if (std::abs(r - 1.0) <= 1e-9) return 1;
  if (std::abs(r + 1.0) <= 1e-9) return -1;
  std::ostringstream os;
  os << "ratio " << r << " for J=" << J << " S=" << S;
  throw Error(Errc::RatioNotUnit, os.str());
}

// ---------------------------------------------------------------------------------------------
// Sectors and the cell potential.

struct CellSector {
  unsigned J = 0;
  unsigned S = 0;
  std::vector<int> P;  // keys of P_J
  std::vector<int> edges;  // keys of J u S
  int eps = 1;
};

inline std::vector<CellSector> cell_sectors(const CellSpec& spec, const EpsilonOptions& opt = {}) {
  CellModel cm(spec);
  std::vector<CellSector> out;
  const unsigned nJ = 1u << spec.nonplanar.size();
  for (unsigned J = 0; J < nJ; ++J) {
    auto P = cm.crossed(J);
    for (unsigned S = 0; S < (1u << P.size()); ++S) {
      auto sec = cm.sector_edges(J, S, P);
      if (!cm.disjoint(sec)) continue;
      out.push_back({J, S, P, sec, epsilon_sign(spec, J, S, opt)});
    }
  }
  return out;
}

struct EdgeMonomial {
  std::vector<int> edges;  // sorted keys
  double coeff = 0.0;
};

// Polynomials in the commuting nilpotent psi(e); products of edges sharing a vertex vanish.
class EdgePolynomial {
 public:
  explicit EdgePolynomial(const CellModel* cm) : cm_(cm) {}

  std::map<std::vector<int>, double> terms;

  void add(std::vector<int> edges, double c) {
    std::sort(edges.begin(), edges.end());
    terms[edges] += c;
  }
  EdgePolynomial operator*(const EdgePolynomial& o) const {
    EdgePolynomial r(cm_);
    for (auto& [a, ca] : terms)
      for (auto& [b, cb] : o.terms) {
        std::vector<int> u = a;
        u.insert(u.end(), b.begin(), b.end());
        if (!cm_->disjoint(u)) continue;
        r.add(u, ca * cb);
      }
    return r;
  }
  EdgePolynomial& operator+=(const EdgePolynomial& o) {
    for (auto& [a, c] : o.terms) terms[a] += c;
    return *this;
  }
  EdgePolynomial scaled(double s) const {
    EdgePolynomial r(*this);
    for (auto& [a, c] : r.terms) c *= s;
    return r;
  }
  void prune(double tol = 1e-12) {
    for (auto it = terms.begin(); it != terms.end();)
      it = std::abs(it->second) <= tol ? terms.erase(it) : std::next(it);
  }
  bool empty() const { return terms.empty(); }
  std::vector<EdgeMonomial> monomials() const {
    std::vector<EdgeMonomial> out;
    for (auto& [a, c] : terms) out.push_back({a, c});
    return out;
  }

 private:
  const CellModel* cm_;
};

inline EdgePolynomial formal_log1p(const EdgePolynomial& F, const CellModel* cm) {
  EdgePolynomial V(cm), power = F;
  for (int n = 1; !power.empty(); ++n) {
    V += power.scaled((n % 2 ? 1.0 : -1.0) / n);
    power = power * F;
    power.prune(0.0);
  }
  V.prune();
  return V;
}

inline EdgePolynomial formal_exp(const EdgePolynomial& V, const CellModel* cm) {
  EdgePolynomial E(cm), power(cm);
  power.add({}, 1.0);
  double fact = 1.0;
  for (int n = 0; !power.empty(); ++n) {
    if (n > 0) fact *= n;
    E += power.scaled(1.0 / fact);
    power = power * V;
    power.prune(0.0);
  }
  E.prune();
  return E;
}

struct CellPotential {
  // Sector form: F = sum of eps * prod_{J u S} psi(e); valid against K_theta with P_J removed.
  std::vector<EdgeMonomial> F;
  std::vector<EdgeMonomial> V;
  // Kernel form: the same sum re-expanded for the unmodified K_theta, each removed crossed edge
  // contributing a factor (1 - psi(e)).
  std::vector<EdgeMonomial> F_kernel;
  std::vector<EdgeMonomial> V_kernel;
  std::vector<CellSector> sectors;
};

inline CellPotential cell_potential(const CellSpec& spec, const EpsilonOptions& opt = {}) {
  CellModel cm(spec);
  CellPotential out;
  out.sectors = cell_sectors(spec, opt);
  EdgePolynomial F(&cm), Fk(&cm);
  for (const auto& s : out.sectors) {
    if (s.edges.empty()) continue;
    F.add(s.edges, s.eps);
    EdgePolynomial t(&cm);
    t.add(s.edges, s.eps);
    for (std::size_t i = 0; i < s.P.size(); ++i) {
      if (s.S >> i & 1u) continue;
      EdgePolynomial f(&cm);
      f.add({}, 1.0);
      f.add({s.P[i]}, -1.0);
      t = t * f;
    }
    Fk += t;
  }
  F.prune();
  Fk.prune();
  out.F = F.monomials();
  out.F_kernel = Fk.monomials();
  out.V = formal_log1p(F, &cm).monomials();
  out.V_kernel = formal_log1p(Fk, &cm).monomials();
  return out;
}

inline std::string monomial_string(const CellSpec& spec, const std::vector<int>& edges) {
  CellModel cm(spec);
  std::ostringstream os;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (i) os << ' ';
    if (cm.is_np(edges[i]))
      os << "psi(np" << edges[i] - 4 * cm.T << ")";
    else {
      auto r = cm.ref(edges[i]);
      os << "psi(" << r.ell << "," << r.j << ")";
    }
  }
  return os.str();
}

// ---------------------------------------------------------------------------------------------
// Global expansion over products of per-cell monomials.

inline std::size_t default_budget() {
  if (const char* s = std::getenv("DIMERLAB_BUDGET")) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(s, &end, 10);
    if (end != s && v > 0) return static_cast<std::size_t>(v);
  }
  return 1000000;
}

struct SectorOptions {
  int max_order = -1;  // cap on the number of non-planar edges per global term; -1 for none
  std::size_t budget = default_budget();
  int threads = 1;
  bool masked_form = false;  // evaluate sector by sector with P_J removed from K_theta
};

class PolymerEngine {
 public:
  explicit PolymerEngine(const TorusGraph& g, SectorOptions opt = {}) : g_(g), opt_(opt) {
    CellModel cm(g.spec);
    auto pot = cell_potential(g.spec);
    std::vector<Local> local;
    if (opt.masked_form) {
      for (const auto& s : pot.sectors) local.push_back({s.edges, s.P, static_cast<double>(s.eps)});
    } else {
      local.push_back({{}, {}, 1.0});
      for (const auto& mono : pot.F_kernel) local.push_back({mono.edges, {}, mono.coeff});
    }
    cells_.resize(g.num_cells());
    for (int c = 0; c < g.num_cells(); ++c)
      for (const auto& l : local) {
        Term t;
        t.coeff = l.coeff;
        for (int k : l.edges) {
          int id = detail::global_edge(g, cm, g.cell_at(c), k);
          t.edges.push_back(id);
          t.order += g.edges[id].planar() ? 0 : 1;
        }
        for (int k : l.masked) t.masked.push_back(detail::global_edge(g, cm, g.cell_at(c), k));
        cells_[c].push_back(std::move(t));
      }
    // number of global terms, by order
    std::vector<double> count(1, 1.0);
    for (const auto& cell : cells_) {
      std::vector<double> next(count.size() + g.spec.nonplanar.size() + 1, 0.0);
      for (std::size_t o = 0; o < count.size(); ++o)
        for (const auto& t : cell) next[o + t.order] += count[o];
      count.swap(next);
    }
    double total = 0.0;
    for (std::size_t o = 0; o < count.size(); ++o)
      if (opt_.max_order < 0 || static_cast<int>(o) <= opt_.max_order) total += count[o];
    terms_ = total;
    if (total > static_cast<double>(opt_.budget))
      throw Error(Errc::BudgetExceeded, "global sector count " + std::to_string(total) + " exceeds budget " +
                                            std::to_string(opt_.budget));
    radix_total_ = 1;
    for (const auto& cell : cells_) radix_total_ *= cell.size();
  }

  double num_terms() const { return terms_; }

  // Z with per-edge weights (empty: graph weights).
  double partition(const std::vector<double>& weights = {}) const { return evaluate(weights, nullptr, -1); }

  // Z restricted to global terms with the given number of non-planar edges.
  double partition_order(int order, const std::vector<double>& weights = {}) const {
    return evaluate(weights, nullptr, order);
  }

  // Expansion with the extra monomial psi-_{white} psi+_{black}.
  double insertion(int white, int black, const std::vector<double>& weights = {}) const {
    std::pair<int, int> p{black, white - g_.nb};
    return evaluate(weights, &p, -1);
  }

 private:
  struct Local {
    std::vector<int> edges;
    std::vector<int> masked;
    double coeff;
  };
  struct Term {
    std::vector<int> edges;
    std::vector<int> masked;
    double coeff = 1.0;
    int order = 0;
  };
  struct ThetaData {
    Eigen::MatrixXd K;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu;
    Eigen::MatrixXd inv;
    double det = 0.0;
    bool use_inverse = false;
  };

  double evaluate(const std::vector<double>& weights, const std::pair<int, int>* extra, int only_order) const {
    const auto& w = weights.empty() ? default_weights() : weights;
    std::array<ThetaData, 4> th;
    if (!opt_.masked_form)
      for (int t = 0; t < 4; ++t) {
        th[t].K = kasteleyn_matrix(g_, kThetas[t], w);
        th[t].lu.compute(th[t].K);
        th[t].det = th[t].lu.determinant();
        // Schur route only when the factorisation is well conditioned
        auto piv = th[t].lu.matrixLU().diagonal().cwiseAbs();
        th[t].use_inverse = piv.size() > 0 && piv.minCoeff() > 1e-10 * piv.maxCoeff();
        if (th[t].use_inverse) {
          th[t].inv = th[t].lu.inverse();
          th[t].use_inverse = th[t].inv.allFinite();
        }
      }
    const std::size_t ncell = cells_.size();
    auto term_value = [&](std::size_t idx) -> double {
      double coeff = 1.0;
      int order = 0;
      std::vector<int> edges, masked;
      std::size_t r = idx;
      for (std::size_t c = 0; c < ncell; ++c) {
        const auto& t = cells_[c][r % cells_[c].size()];
        r /= cells_[c].size();
        coeff *= t.coeff;
        order += t.order;
        edges.insert(edges.end(), t.edges.begin(), t.edges.end());
        masked.insert(masked.end(), t.masked.begin(), t.masked.end());
      }
      if (coeff == 0.0) return 0.0;
      if (only_order >= 0 && order != only_order) return 0.0;
      if (opt_.max_order >= 0 && order > opt_.max_order) return 0.0;
      std::vector<std::pair<int, int>> pairs;
      std::vector<char> used_b(g_.nb, 0), used_w(g_.nb, 0);
      for (int id : edges) {
        const auto& e = g_.edges[id];
        pairs.push_back({e.black, e.white - g_.nb});
        used_b[e.black] = used_w[e.white - g_.nb] = 1;
      }
      double sgn_extra = 1.0;
      if (extra) {
        if (used_b[extra->first] || used_w[extra->second]) return 0.0;
        pairs.push_back(*extra);
        sgn_extra = -1.0;  // psi-_w psi+_b = -psi+_b psi-_w
      }
      double total = 0.0;
      for (int t = 0; t < 4; ++t) {
        double wt = 1.0;
        for (int id : edges) {
          const auto& e = g_.edges[id];
          wt *= -(e.planar() ? relevant_arrow(g_, e, kThetas[t]) * w[id] : w[id]);
        }
        if (wt == 0.0) continue;
        double minor;
        if (opt_.masked_form) {
          std::vector<char> mask(g_.edges.size(), 0);
          for (int id : masked) mask[id] = 1;
          minor = signed_minor(kasteleyn_matrix(g_, kThetas[t], w, mask), pairs);
        } else {
          minor = minor_value(th[t], pairs);
        }
        total += 0.5 * c_theta(kThetas[t]) * wt * minor;
      }
      return sgn_extra * coeff * total;
    };
    double z = parallel_sum(radix_total_, term_value, opt_.threads);
    z *= reference_sign(g_);
    if (!std::isfinite(z)) throw Error(Errc::NumericalFailure, "non-finite sector sum");
    return z;
  }

  static double minor_value(const ThetaData& th, const std::vector<std::pair<int, int>>& pairs) {
    const int p = static_cast<int>(pairs.size());
    if (p == 0) return th.det;
    if (!th.use_inverse) return signed_minor(th.K, pairs);
    // det of K with rows b_i replaced by e_{w_i} equals det K * det[K^{-1}(w_r, b_c)]
    Eigen::MatrixXd S(p, p);
    for (int r = 0; r < p; ++r)
      for (int c = 0; c < p; ++c) S(r, c) = th.inv(pairs[r].second, pairs[c].first);
    double d = th.det * determinant(S);
    return (p % 2) ? -d : d;
  }

  const std::vector<double>& default_weights() const {
    if (wdef_.empty()) {
      wdef_.reserve(g_.edges.size());
      for (const auto& e : g_.edges) wdef_.push_back(e.weight);
    }
    return wdef_;
  }

  const TorusGraph& g_;
  SectorOptions opt_;
  std::vector<std::vector<Term>> cells_;
  double terms_ = 0.0;
  std::size_t radix_total_ = 1;
  mutable std::vector<double> wdef_;
};

inline double nonplanar_partition(const TorusGraph& g, const SectorOptions& opt = {}) {
  return PolymerEngine(g, opt).partition();
}

struct Observables {
  double z = 0.0;
  double p_e = 0.0;
  double p_f = 0.0;
  double joint = 0.0;
  double truncated = 0.0;
};

// Exact P(e), P(f) and E(1_e; 1_f): Z is affine in each weight, so setting a weight to zero removes
// exactly the configurations using that edge.
inline Observables nonplanar_observables(const TorusGraph& g, int e, int f, const SectorOptions& opt = {}) {
  PolymerEngine eng(g, opt);
  std::vector<double> w;
  for (const auto& ed : g.edges) w.push_back(ed.weight);
  Observables o;
  o.z = eng.partition(w);
  auto without = [&](std::vector<int> ids) {
    auto v = w;
    for (int id : ids) v[id] = 0.0;
    return eng.partition(v);
  };
  double ze = without({e}), zf = without({f});
  o.p_e = (o.z - ze) / o.z;
  o.p_f = (o.z - zf) / o.z;
  o.joint = (e == f) ? o.p_e : (o.z - ze - zf + without({e, f})) / o.z;
  o.truncated = o.joint - o.p_e * o.p_f;
  return o;
}

// Cov(h(eta_a) - h(eta_b), h(eta_c) - h(eta_d)) from the sector engine; the exact counterpart of
// exact_height_covariance on tori too large to enumerate.
inline double engine_height_covariance(const TorusGraph& g, std::array<int, 2> a, std::array<int, 2> b,
                                       std::array<int, 2> c, std::array<int, 2> d, const SectorOptions& opt = {}) {
  auto p1 = corridor_path(g, b, a), p2 = corridor_path(g, d, c);
  if (p1.empty() || p2.empty()) return 0.0;
  PolymerEngine eng(g, opt);
  std::vector<double> w;
  for (const auto& ed : g.edges) w.push_back(ed.weight);
  const double Z = eng.partition(w);
  std::map<int, double> z1;
  auto without = [&](std::vector<int> ids) {
    auto v = w;
    for (int id : ids) v[id] = 0.0;
    return eng.partition(v);
  };
  for (auto st : p1) z1.try_emplace(st.edge, 0.0);
  for (auto st : p2) z1.try_emplace(st.edge, 0.0);
  for (auto& [id, z] : z1) z = without({id});
  double cov = 0.0;
  for (auto s1 : p1)
    for (auto s2 : p2) {
      const int e = s1.edge, f = s2.edge;
      double pe = (Z - z1[e]) / Z, pf = (Z - z1[f]) / Z;
      double joint = (e == f) ? pe : (Z - z1[e] - z1[f] + without({e, f})) / Z;
      cov += s1.sigma * s2.sigma * (joint - pe * pf);
    }
  return cov;
}

// Largest violation of the two finite-volume Ward identities at the black and white sites of
// coordinate x, with the fermionic sources at the white site y and the black site z.
inline double ward_residual(const TorusGraph& g, std::array<int, 2> x, int ell, int y_white, int z_black,
                            const SectorOptions& opt = {}) {
  PolymerEngine eng(g, opt);
  std::vector<double> w;
  for (const auto& ed : g.edges) w.push_back(ed.weight);
  const double Z = eng.partition(w);
  const double Nn = eng.insertion(y_white, z_black, w);
  auto g_edge = [&](int id) {
    auto v = w;
    v[id] = 0.0;
    double ze = Z - eng.partition(v);
    double ne = Nn - eng.insertion(y_white, z_black, v);
    return (ne - Nn * ze / Z) / Z;
  };
  const int bx = g.black(x, ell), wx = g.white(x, ell);
  double rb = (bx == z_black) ? Nn / Z : 0.0, rw = (wx == y_white) ? Nn / Z : 0.0;
  for (int id : g.incident[bx]) rb += g_edge(id);
  for (int id : g.incident[wx]) rw += g_edge(id);
  return std::max(std::abs(rb), std::abs(rw));
}

}  // namespace dimerlab
