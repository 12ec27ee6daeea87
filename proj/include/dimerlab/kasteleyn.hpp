#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "error.hpp"
#include "lattice.hpp"

namespace dimerlab {

using Theta = std::array<int, 2>;
inline constexpr std::array<Theta, 4> kThetas = {{{1, 1}, {1, -1}, {-1, 1}, {-1, -1}}};

inline double c_theta(Theta t) { return (t[0] == -1 && t[1] == -1) ? -1.0 : 1.0; }

struct Orientation {
  std::vector<int> arrow;  // +1 black -> white, 0 for non-planar edges
};

// Horizontal edges point right, vertical edges point up on even columns and down on odd ones.
inline int basic_arrow(const TorusGraph& g, const Edge& e) {
  const int X = g.pos[e.black][0];
  switch (e.j) {
    case 1: return 1;
    case 3: return -1;
    case 2: return X % 2 == 0 ? 1 : -1;
    case 4: return X % 2 == 0 ? -1 : 1;
    default: return 0;
  }
}

// Seam edges of D_(+1,+1) run against the periodic continuation of the basic orientation.
inline int relevant_arrow(const TorusGraph& g, const Edge& e, Theta th) {
  int a = basic_arrow(g, e);
  if (e.wrap & 1) a *= -th[0];
  if (e.wrap & 2) a *= -th[1];
  return a;
}

inline Orientation basic_orientation(const TorusGraph& g) {
  Orientation o;
  o.arrow.reserve(g.edges.size());
  for (const auto& e : g.edges) o.arrow.push_back(e.planar() ? basic_arrow(g, e) : 0);
  return o;
}

inline Orientation relevant_orientation(const TorusGraph& g, Theta th) {
  Orientation o;
  o.arrow.reserve(g.edges.size());
  for (const auto& e : g.edges) o.arrow.push_back(e.planar() ? relevant_arrow(g, e, th) : 0);
  return o;
}

// Number of edges of face (X, Y) traversed along their arrow when walking it clockwise.
inline int clockwise_count(const TorusGraph& g, const Orientation& o, int X, int Y) {
  const int corners[5][2] = {{X, Y}, {X, Y + 1}, {X + 1, Y + 1}, {X + 1, Y}, {X, Y}};
  const int dirs[4] = {1, 0, 3, 2};
  int count = 0;
  for (int k = 0; k < 4; ++k) {
    int id = g.site_edge_id(corners[k][0], corners[k][1], dirs[k]);
    bool from_black = is_black_site(corners[k][0], corners[k][1]);
    if ((o.arrow[id] > 0) == from_black) ++count;
  }
  return count;
}

// Kasteleyn matrix, rows blacks and columns whites; parallel edges add up.
// weights overrides the graph weights when non-empty; masked edges are left out.
inline Eigen::MatrixXd kasteleyn_matrix(const TorusGraph& g, Theta th, const std::vector<double>& weights = {},
                                        const std::vector<char>& masked = {}) {
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(g.nb, g.nb);
  for (int id = 0; id < static_cast<int>(g.edges.size()); ++id) {
    const auto& e = g.edges[id];
    if (!e.planar()) continue;
    if (!masked.empty() && masked[id]) continue;
    double w = weights.empty() ? e.weight : weights[id];
    K(e.black, e.white - g.nb) += relevant_arrow(g, e, th) * w;
  }
  return K;
}

inline double determinant(const Eigen::MatrixXd& K) {
  if (K.rows() == 0) return 1.0;
  return Eigen::PartialPivLU<Eigen::MatrixXd>(K).determinant();
}

inline int permutation_sign(std::vector<int> p) {
  int s = 1;
  for (std::size_t i = 0; i < p.size(); ++i)
    while (p[i] != static_cast<int>(i)) {
      std::swap(p[i], p[p[i]]);
      s = -s;
    }
  return s;
}

// Sign of the M0 term in the expansion of det K_theta.
inline int reference_sign(const TorusGraph& g) {
  auto M = reference_matching(g);
  std::vector<int> perm(g.nb);
  int s = 1;
  for (int b = 0; b < g.nb; ++b) {
    const auto& e = g.edges[M.edge[b]];
    perm[b] = e.white - g.nb;
    s *= basic_arrow(g, e);
  }
  return s * permutation_sign(perm);
}

// Coefficient of the Grassmann integral of exp(-psi+ K psi-) times prod_i psi+_{b_i} psi-_{w_i}.
// Blacks index rows, whites index columns.
inline double signed_minor(const Eigen::MatrixXd& K, const std::vector<std::pair<int, int>>& pairs) {
  const int n = static_cast<int>(K.rows());
  std::vector<char> rb(n, 0), cw(n, 0);
  for (auto [b, w] : pairs) {
    if (b < 0 || w < 0 || b >= n || w >= n || rb[b] || cw[w])
      throw Error(Errc::DimensionMismatch, "signed_minor needs distinct in-range blacks and whites");
    rb[b] = cw[w] = 1;
  }
  Eigen::MatrixXd A = K;
  for (auto [b, w] : pairs) {
    A.row(b).setZero();
    A(b, w) = 1.0;
  }
  double d = determinant(A);
  return (pairs.size() % 2) ? -d : d;
}

inline double planar_partition(const TorusGraph& g) {
  double z = 0.0;
  for (auto th : kThetas) z += 0.5 * c_theta(th) * determinant(kasteleyn_matrix(g, th));
  z *= reference_sign(g);
  if (!std::isfinite(z)) throw Error(Errc::NumericalFailure, "non-finite determinant");
  return z;
}

// The antisymmetric adjacency form [[0, K], [-K^T, 0]].
inline Eigen::MatrixXd antisymmetric_form(const Eigen::MatrixXd& K) {
  const auto n = K.rows();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  A.topRightCorner(n, n) = K;
  A.bottomLeftCorner(n, n) = -K.transpose();
  return A;
}

}  // namespace dimerlab
