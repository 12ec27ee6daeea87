#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace dimerlab {

// Square grid, site (X, Y) is black iff X + Y is even.
// Directions are indexed E, N, W, S; a planar label j corresponds to direction j - 1.
inline constexpr int kDx[4] = {1, 0, -1, 0};
inline constexpr int kDy[4] = {0, 1, 0, -1};

inline bool is_black_site(int X, int Y) { return ((X + Y) % 2 + 2) % 2 == 0; }

inline int floor_div(int a, int b) { return (a >= 0) ? a / b : -((-a + b - 1) / b); }
inline int mod(int a, int b) { return ((a % b) + b) % b; }

struct EdgeRef {
  int ell = 0;
  int j = 0;
  bool operator<(const EdgeRef& o) const { return std::tie(ell, j) < std::tie(o.ell, o.j); }
  bool operator==(const EdgeRef& o) const { return ell == o.ell && j == o.j; }
};

struct NonplanarEdge {
  int bl = 0;
  int wh = 0;
  double weight = 1.0;
  std::vector<EdgeRef> crossings;
};

struct CellSpec {
  int m = 4;
  std::map<std::pair<int, int>, double> planar_weights;
  std::vector<NonplanarEdge> nonplanar;

  int types() const { return m * m / 2; }
  double planar_weight(int ell, int j) const {
    auto it = planar_weights.find({ell, j});
    return it == planar_weights.end() ? 1.0 : it->second;
  }
};

// Types enumerate same-colour sites of a cell in row-major order from the bottom row.
class CellLayout {
 public:
  explicit CellLayout(int m) : m_(m), type_(m * m, 0) {
    for (int v = 0; v < m; ++v)
      for (int u = 0; u < m; ++u) {
        auto& list = is_black_site(u, v) ? black_ : white_;
        list.push_back({u, v});
        type_[u * m + v] = static_cast<int>(list.size());
      }
  }

  int m() const { return m_; }
  int types() const { return static_cast<int>(black_.size()); }
  std::array<int, 2> site(bool black, int ell) const { return black ? black_.at(ell - 1) : white_.at(ell - 1); }
  int type_at(int u, int v) const { return type_[mod(u, m_) * m_ + mod(v, m_)]; }
  bool inside(int u, int v) const { return u >= 0 && v >= 0 && u < m_ && v < m_; }

  // Endpoints of the planar edge (ell, j) in cell-local, unwrapped coordinates: {black, white}.
  std::array<std::array<int, 2>, 2> endpoints(EdgeRef r) const {
    auto b = site(true, r.ell);
    return {b, std::array<int, 2>{b[0] + kDx[r.j - 1], b[1] + kDy[r.j - 1]}};
  }
  bool in_cell(EdgeRef r) const {
    auto e = endpoints(r);
    return inside(e[1][0], e[1][1]);
  }
  static bool horizontal(EdgeRef r) { return r.j == 1 || r.j == 3; }
  // Horizontal dimers with an even left endpoint form M0; m is even so the local parity is the global one.
  bool in_reference(EdgeRef r) const {
    if (!horizontal(r)) return false;
    auto e = endpoints(r);
    return std::min(e[0][0], e[1][0]) % 2 == 0;
  }
  // Faces (lower-left corner) inside the cell bordering an in-cell edge.
  std::vector<std::array<int, 2>> faces_of(EdgeRef r) const {
    auto e = endpoints(r);
    int u = std::min(e[0][0], e[1][0]), v = std::min(e[0][1], e[1][1]);
    std::vector<std::array<int, 2>> out;
    std::array<std::array<int, 2>, 2> cand;
    if (horizontal(r))
      cand = {std::array<int, 2>{u, v - 1}, std::array<int, 2>{u, v}};
    else
      cand = {std::array<int, 2>{u - 1, v}, std::array<int, 2>{u, v}};
    for (auto f : cand)
      if (f[0] >= 0 && f[1] >= 0 && f[0] <= m_ - 2 && f[1] <= m_ - 2) out.push_back(f);
    return out;
  }
  bool interior(EdgeRef r) const { return in_cell(r) && faces_of(r).size() == 2; }
  // Faces having the site as a corner.
  std::vector<std::array<int, 2>> faces_at(int u, int v) const {
    std::vector<std::array<int, 2>> out;
    for (int du = -1; du <= 0; ++du)
      for (int dv = -1; dv <= 0; ++dv) {
        int fu = u + du, fv = v + dv;
        if (fu >= 0 && fv >= 0 && fu <= m_ - 2 && fv <= m_ - 2) out.push_back({fu, fv});
      }
    return out;
  }
  // The in-cell planar edge joining two adjacent sites.
  EdgeRef ref_between(std::array<int, 2> a, std::array<int, 2> b) const {
    if (!is_black_site(a[0], a[1])) std::swap(a, b);
    for (int j = 1; j <= 4; ++j)
      if (a[0] + kDx[j - 1] == b[0] && a[1] + kDy[j - 1] == b[1]) return {type_at(a[0], a[1]), j};
    throw Error(Errc::InvariantViolation, "sites are not adjacent");
  }

 private:
  int m_;
  std::vector<std::array<int, 2>> black_, white_;
  std::vector<int> type_;
};

namespace detail {

// Planar in-cell grid with a set of removed edges; true iff connected without cut vertices.
inline bool biconnected_grid(int m, const std::set<std::pair<int, int>>& removed) {
  int n = m * m;
  std::vector<std::vector<int>> adj(n);
  for (int u = 0; u < m; ++u)
    for (int v = 0; v < m; ++v)
      for (int d : {0, 1}) {
        int u2 = u + kDx[d], v2 = v + kDy[d];
        if (u2 >= m || v2 >= m) continue;
        int a = u * m + v, b = u2 * m + v2;
        if (removed.count({std::min(a, b), std::max(a, b)})) continue;
        adj[a].push_back(b);
        adj[b].push_back(a);
      }
  std::vector<int> disc(n, -1), low(n, 0);
  bool cut = false;
  int timer = 0;
  auto dfs = [&](auto&& self, int x, int parent) -> void {
    disc[x] = low[x] = timer++;
    int children = 0;
    for (int y : adj[x]) {
      if (y == parent) continue;
      if (disc[y] >= 0) {
        low[x] = std::min(low[x], disc[y]);
      } else {
        ++children;
        self(self, y, x);
        low[x] = std::min(low[x], low[y]);
        if (parent >= 0 && low[y] >= disc[x]) cut = true;
      }
    }
    if (parent < 0 && children > 1) cut = true;
  };
  dfs(dfs, 0, -1);
  for (int x = 0; x < n; ++x)
    if (disc[x] < 0) return false;
  return !cut;
}

inline std::pair<int, int> site_pair(int m, std::array<int, 2> a, std::array<int, 2> b) {
  int x = a[0] * m + a[1], y = b[0] * m + b[1];
  return {std::min(x, y), std::max(x, y)};
}

}  // namespace detail

inline std::vector<std::string> validate_spec(const CellSpec& spec) {
  std::vector<std::string> out;
  auto fail = [&](const std::string& s) { out.push_back(s); };
  if (spec.m < 4) fail("m must be >= 4");
  if (spec.m % 2 != 0) fail("m must be even");
  if (!out.empty()) return out;

  const CellLayout cell(spec.m);
  const int T = cell.types();
  for (auto& [key, w] : spec.planar_weights) {
    if (key.first < 1 || key.first > T || key.second < 1 || key.second > 4) {
      fail("planar weight reference out of range");
      continue;
    }
    if (!(w > 0)) fail("planar weight must be positive");
  }

  std::set<std::pair<int, int>> removed;
  for (std::size_t k = 0; k < spec.nonplanar.size(); ++k) {
    const auto& e = spec.nonplanar[k];
    std::string tag = "non-planar edge " + std::to_string(k) + ": ";
    if (e.bl < 1 || e.bl > T || e.wh < 1 || e.wh > T) {
      fail(tag + "endpoint type out of range");
      continue;
    }
    if (!(e.weight > 0)) fail(tag + "weight must be positive");
    auto b = cell.site(true, e.bl), w = cell.site(false, e.wh);
    if (is_black_site(b[0], b[1]) == is_black_site(w[0], w[1])) fail(tag + "endpoints have the same colour");
    if (e.crossings.empty()) {
      fail(tag + "empty crossing list");
      continue;
    }
    bool refs_ok = true;
    std::set<EdgeRef> seen;
    for (auto r : e.crossings) {
      if (r.ell < 1 || r.ell > T || r.j < 1 || r.j > 4) {
        fail(tag + "crossing reference out of range");
        refs_ok = false;
        continue;
      }
      if (!seen.insert(r).second) fail(tag + "crossing listed twice");
      if (!cell.interior(r)) {
        fail(tag + "crossed edge is not inside the cell");
        refs_ok = false;
        continue;
      }
      if (cell.in_reference(r)) fail(tag + "crossed edge belongs to the reference matching M0");
      auto ep = cell.endpoints(r);
      for (auto s : ep)
        if (s == b || s == w) fail(tag + "crossed edge is incident to an endpoint of the non-planar edge");
      removed.insert(detail::site_pair(spec.m, ep[0], ep[1]));
    }
    if (!refs_ok) continue;
    auto has_face = [](const std::vector<std::array<int, 2>>& fs, std::array<int, 2> f) {
      return std::find(fs.begin(), fs.end(), f) != fs.end();
    };
    auto share = [&](const std::vector<std::array<int, 2>>& A, const std::vector<std::array<int, 2>>& B) {
      for (auto f : A)
        if (has_face(B, f)) return true;
      return false;
    };
    if (!share(cell.faces_at(b[0], b[1]), cell.faces_of(e.crossings.front())))
      fail(tag + "first crossing does not border a face at the black endpoint");
    if (!share(cell.faces_at(w[0], w[1]), cell.faces_of(e.crossings.back())))
      fail(tag + "last crossing does not border a face at the white endpoint");
    for (std::size_t i = 0; i + 1 < e.crossings.size(); ++i)
      if (!share(cell.faces_of(e.crossings[i]), cell.faces_of(e.crossings[i + 1])))
        fail(tag + "consecutive crossings do not share a face");
  }
  if (out.empty() && !detail::biconnected_grid(spec.m, removed))
    fail("cell graph minus crossed edges is not 2-connected");
  return out;
}

struct Edge {
  int black = -1;
  int white = -1;
  double weight = 0.0;
  int ell = 0;
  int j = 0;  // 0 for non-planar edges
  int np = -1;  // index into spec.nonplanar, -1 for planar edges
  std::array<int, 2> cell{};  // cell of the black endpoint
  std::array<int, 2> v{};  // cell(white) - cell(black)
  int wrap = 0;  // bit 0: crosses the X seam, bit 1: the Y seam
  std::vector<int> crossings;

  bool planar() const { return np < 0; }
  bool horizontal() const { return j == 1 || j == 3; }
};

struct Matching {
  std::vector<int> edge;  // edge id per black vertex
};

class TorusGraph {
 public:
  CellSpec spec;
  int L = 1;
  int m = 4;
  int N = 4;
  double lambda = 0.0;
  int nb = 0;
  std::vector<std::array<int, 2>> pos;
  std::vector<Edge> edges;
  std::vector<std::vector<int>> incident;
  std::vector<std::array<int, 4>> site_edge;

  int types() const { return m * m / 2; }
  int num_vertices() const { return 2 * nb; }
  int num_cells() const { return L * L; }
  int cell_index(std::array<int, 2> x) const { return mod(x[0], L) * L + mod(x[1], L); }
  std::array<int, 2> cell_at(int c) const { return {c / L, c % L}; }
  int black(std::array<int, 2> x, int ell) const { return cell_index(x) * types() + ell - 1; }
  int white(std::array<int, 2> x, int ell) const { return nb + black(x, ell); }
  int vertex(int X, int Y) const { return at_[mod(X, N) * N + mod(Y, N)]; }
  bool is_black(int vtx) const { return vtx < nb; }
  std::array<int, 2> cell_of(int vtx) const { return cell_at((vtx % nb) / types()); }
  int type_of(int vtx) const { return (vtx % nb) % types() + 1; }
  int site_edge_id(int X, int Y, int dir) const { return site_edge[mod(X, N) * N + mod(Y, N)][dir]; }
  int planar_edge(std::array<int, 2> x, int ell, int j) const { return 4 * black(x, ell) + j - 1; }
  int nonplanar_edge(std::array<int, 2> x, int k) const {
    return 4 * nb + cell_index(x) * static_cast<int>(spec.nonplanar.size()) + k;
  }
  int other(int e, int vtx) const { return edges[e].black == vtx ? edges[e].white : edges[e].black; }

  double weight(const Matching& M) const {
    double w = 1.0;
    for (int e : M.edge) w *= edges[e].weight;
    return w;
  }

  std::vector<int> at_;  // site X*N+Y -> vertex
};

inline TorusGraph assemble_torus(const CellSpec& spec, int L, double lambda) {
  TorusGraph g;
  g.spec = spec;
  g.L = L;
  g.m = spec.m;
  g.N = L * spec.m;
  g.lambda = lambda;
  const CellLayout cell(spec.m);
  const int T = cell.types(), N = g.N;
  g.nb = L * L * T;
  g.pos.resize(2 * g.nb);
  g.at_.assign(N * N, -1);
  for (int c = 0; c < L * L; ++c)
    for (int ell = 1; ell <= T; ++ell)
      for (bool b : {true, false}) {
        auto s = cell.site(b, ell);
        auto x = g.cell_at(c);
        int X = x[0] * g.m + s[0], Y = x[1] * g.m + s[1];
        int idx = b ? g.black(x, ell) : g.white(x, ell);
        g.pos[idx] = {X, Y};
        g.at_[X * N + Y] = idx;
      }
  g.site_edge.assign(N * N, {-1, -1, -1, -1});
  const int K = static_cast<int>(spec.nonplanar.size());
  g.edges.reserve(4 * g.nb + L * L * K);
  for (int b = 0; b < g.nb; ++b) {
    auto [X, Y] = g.pos[b];
    for (int j = 1; j <= 4; ++j) {
      Edge e;
      e.black = b;
      int X2 = X + kDx[j - 1], Y2 = Y + kDy[j - 1];
      e.white = g.vertex(X2, Y2);
      e.ell = g.type_of(b);
      e.j = j;
      e.weight = spec.planar_weight(e.ell, j);
      e.cell = g.cell_of(b);
      e.v = {floor_div(X2, g.m) - floor_div(X, g.m), floor_div(Y2, g.m) - floor_div(Y, g.m)};
      e.wrap = ((X2 < 0 || X2 >= N) ? 1 : 0) | ((Y2 < 0 || Y2 >= N) ? 2 : 0);
      int id = static_cast<int>(g.edges.size());
      g.site_edge[X * N + Y][j - 1] = id;
      g.site_edge[mod(X2, N) * N + mod(Y2, N)][(j + 1) % 4] = id;
      g.edges.push_back(e);
    }
  }
  for (int c = 0; c < L * L; ++c)
    for (int k = 0; k < K; ++k) {
      const auto& s = spec.nonplanar[k];
      auto x = g.cell_at(c);
      Edge e;
      e.black = g.black(x, s.bl);
      e.white = g.white(x, s.wh);
      e.np = k;
      e.ell = s.bl;
      e.weight = lambda * s.weight;
      e.cell = x;
      for (auto r : s.crossings) e.crossings.push_back(g.planar_edge(x, r.ell, r.j));
      g.edges.push_back(e);
    }
  g.incident.assign(2 * g.nb, {});
  for (int id = 0; id < static_cast<int>(g.edges.size()); ++id) {
    g.incident[g.edges[id].black].push_back(id);
    g.incident[g.edges[id].white].push_back(id);
  }
  return g;
}

inline TorusGraph build_graph(const CellSpec& spec, int L, double lambda) {
  auto v = validate_spec(spec);
  if (!v.empty()) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "; " : "") << v[i];
    throw Error(Errc::InvalidSpec, os.str());
  }
  if (L < 1) throw Error(Errc::InvalidSpec, "L must be positive");
  return assemble_torus(spec, L, lambda);
}

// Planar torus of side N = L*m with no validation beyond evenness; allows m = 2 (multi-edges).
inline TorusGraph planar_torus(const CellSpec& spec, int L) {
  if (spec.m < 2 || spec.m % 2 || L < 1) throw Error(Errc::InvalidSpec, "planar torus needs even m >= 2");
  if (!spec.nonplanar.empty()) throw Error(Errc::InvalidSpec, "planar torus takes no non-planar edges");
  return assemble_torus(spec, L, 0.0);
}

inline Matching reference_matching(const TorusGraph& g) {
  Matching M;
  M.edge.resize(g.nb);
  for (int b = 0; b < g.nb; ++b) {
    auto [X, Y] = g.pos[b];
    M.edge[b] = g.site_edge_id(X, Y, X % 2 == 0 ? 0 : 2);
  }
  return M;
}

inline bool is_perfect(const TorusGraph& g, const Matching& M) {
  if (static_cast<int>(M.edge.size()) != g.nb) return false;
  std::vector<char> used(g.nb, 0);
  for (int b = 0; b < g.nb; ++b) {
    int e = M.edge[b];
    if (e < 0 || e >= static_cast<int>(g.edges.size()) || g.edges[e].black != b) return false;
    int w = g.edges[e].white - g.nb;
    if (used[w]) return false;
    used[w] = 1;
  }
  return true;
}

}  // namespace dimerlab
