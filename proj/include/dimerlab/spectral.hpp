#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <boost/math/constants/constants.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

#include "error.hpp"
#include "kasteleyn.hpp"
#include "lattice.hpp"
#include "parallel.hpp"

namespace dimerlab {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using KPoint = std::array<double, 2>;
using Cell = std::array<int, 2>;

inline constexpr double kPi = boost::math::constants::pi<double>();

inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2 * kPi);
  if (a < 0) a += 2 * kPi;
  return a - kPi;
}

inline double torus_distance(KPoint a, KPoint b) {
  return std::hypot(wrap_angle(a[0] - b[0]), wrap_angle(a[1] - b[1]));
}

// Planar edge of the infinite periodic graph: black (x, ell) to white (x + v, white_type).
struct PlanarEdgeRef {
  Cell x{0, 0};
  int ell = 1;
  int j = 1;
};

// Fourier block of the periodic Kasteleyn matrix; rows black types, columns white types (0-based).
class BlochMatrix {
 public:
  struct Term {
    int lb;
    int lw;
    Cell v;
    double K;
  };

  explicit BlochMatrix(const CellSpec& spec) : m_(spec.m), T_(spec.m * spec.m / 2) {
    CellSpec planar = spec;
    planar.nonplanar.clear();
    auto g = planar_torus(planar, 3);
    const Cell mid{1, 1};
    for (int ell = 1; ell <= T_; ++ell)
      for (int j = 1; j <= 4; ++j) {
        const auto& e = g.edges[g.planar_edge(mid, ell, j)];
        auto c = g.cell_of(e.white);
        Term t{ell - 1, g.type_of(e.white) - 1, {c[0] - 1, c[1] - 1}, basic_arrow(g, e) * e.weight};
        edge_.push_back(t);
        terms_.push_back(t);
      }
  }

  int size() const { return T_; }
  int m() const { return m_; }
  const std::vector<Term>& terms() const { return terms_; }
  // Edge (ell, j) out of a black of type ell in cell 0.
  const Term& edge(int ell, int j) const { return edge_.at((ell - 1) * 4 + j - 1); }

  CMatrix operator()(KPoint k) const {
    CMatrix M = CMatrix::Zero(T_, T_);
    for (const auto& t : terms_) M(t.lb, t.lw) += t.K * std::polar(1.0, -(k[0] * t.v[0] + k[1] * t.v[1]));
    return M;
  }

  // d M / d k_i
  CMatrix derivative(KPoint k, int i) const {
    CMatrix M = CMatrix::Zero(T_, T_);
    for (const auto& t : terms_)
      if (t.v[i]) M(t.lb, t.lw) += cplx(0, -t.v[i]) * t.K * std::polar(1.0, -(k[0] * t.v[0] + k[1] * t.v[1]));
    return M;
  }

 private:
  int m_, T_;
  std::vector<Term> terms_;
  std::vector<Term> edge_;
};

inline cplx mu(const BlochMatrix& B, KPoint k) {
  CMatrix M = B(k);
  return M.rows() == 0 ? cplx(1.0) : Eigen::PartialPivLU<CMatrix>(M).determinant();
}

// adj(A) from the singular decomposition; stays accurate where A is singular.
inline CMatrix adjugate(const CMatrix& A) {
  const auto n = A.rows();
  if (n == 1) return CMatrix::Ones(1, 1);
  Eigen::JacobiSVD<CMatrix> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  Eigen::VectorXd cof(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double p = 1.0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) p *= s(j);
    cof(i) = p;
  }
  cplx phase = svd.matrixU().determinant() * std::conj(svd.matrixV().determinant());
  return phase * svd.matrixV() * cof.asDiagonal() * svd.matrixU().adjoint();
}

// (d mu / d k1, d mu / d k2) by Jacobi's formula.
inline std::array<cplx, 2> mu_gradient(const BlochMatrix& B, KPoint k) {
  CMatrix adj = adjugate(B(k));
  return {(adj * B.derivative(k, 0)).trace(), (adj * B.derivative(k, 1)).trace()};
}

inline std::array<std::array<cplx, 2>, 2> mu_hessian(const BlochMatrix& B, KPoint k, double h = 1e-5) {
  std::array<std::array<cplx, 2>, 2> H{};
  for (int i = 0; i < 2; ++i) {
    KPoint kp = k, km = k;
    kp[i] += h;
    km[i] -= h;
    auto gp = mu_gradient(B, kp), gm = mu_gradient(B, km);
    for (int j = 0; j < 2; ++j) H[i][j] = (gp[j] - gm[j]) / (2 * h);
  }
  cplx off = 0.5 * (H[0][1] + H[1][0]);
  H[0][1] = H[1][0] = off;
  return H;
}

// Winding of arg mu along a small counter-clockwise circle around p.
inline int winding_number(const BlochMatrix& B, KPoint p, double r = 1e-3, int steps = 256) {
  double total = 0.0;
  cplx prev = mu(B, {p[0] + r, p[1]});
  for (int s = 1; s <= steps; ++s) {
    double t = 2 * kPi * s / steps;
    cplx cur = mu(B, {p[0] + r * std::cos(t), p[1] + r * std::sin(t)});
    total += std::arg(cur / prev);
    prev = cur;
  }
  return static_cast<int>(std::lround(total / (2 * kPi)));
}

// A linear form q -> alpha*q1 + beta*q2 with phi(x) = beta*x1 - alpha*x2.
struct LinearForm {
  cplx alpha;
  cplx beta;
  cplx phi(double x1, double x2) const { return beta * x1 - alpha * x2; }
};

struct ZeroInfo {
  KPoint k{};
  cplx value;
  std::array<cplx, 2> grad{};
  int winding = 0;
  bool simple() const { return std::abs(winding) == 1; }
};

struct FermiData {
  KPoint p_plus{}, p_minus{};
  cplx alpha_plus, beta_plus, alpha_minus, beta_minus;
  CVector U_plus, V_plus, U_minus, V_minus;
  double adj_residual = 0.0;  // max over omega of |adj M - U (x) V|
  double sv_ratio = 0.0;      // max over omega of second / first singular value of adj M
  std::vector<ZeroInfo> zeros;

  KPoint p(int omega) const { return omega > 0 ? p_plus : p_minus; }
  cplx alpha(int omega) const { return omega > 0 ? alpha_plus : alpha_minus; }
  cplx beta(int omega) const { return omega > 0 ? beta_plus : beta_minus; }
  const CVector& U(int omega) const { return omega > 0 ? U_plus : U_minus; }
  const CVector& V(int omega) const { return omega > 0 ? V_plus : V_minus; }
  cplx phi(int omega, double x1, double x2) const { return double(omega) * (beta(omega) * x1 - alpha(omega) * x2); }
  LinearForm form_plus() const { return {alpha_plus, beta_plus}; }
};

struct FermiOptions {
  int grid = 512;
  double residual = 1e-12;
  double min_gradient = 1e-6;
  int max_newton = 200;
  int threads = 1;
};

namespace detail {

// Gauss-Newton on (Re mu, Im mu) with a tiny Levenberg damping, so that it still creeps into zeros
// where the Jacobian degenerates.
inline bool newton_zero(const BlochMatrix& B, KPoint& k, const FermiOptions& opt) {
  for (int it = 0; it < opt.max_newton; ++it) {
    cplx f = mu(B, k);
    if (std::abs(f) <= opt.residual) return true;
    auto g = mu_gradient(B, k);
    Eigen::Matrix2d J;
    J << g[0].real(), g[1].real(), g[0].imag(), g[1].imag();
    Eigen::Vector2d r(f.real(), f.imag());
    Eigen::Matrix2d A = J.transpose() * J;
    A.diagonal().array() += 1e-14 * A.trace() + 1e-300;
    Eigen::Vector2d d = A.ldlt().solve(J.transpose() * r);
    if (!d.allFinite()) return false;
    double step = d.norm();
    if (step > 0.5) d *= 0.5 / step;
    k = {wrap_angle(k[0] - d(0)), wrap_angle(k[1] - d(1))};
  }
  return std::abs(mu(B, k)) <= opt.residual;
}

}  // namespace detail

// Every zero of mu on the Brillouin torus found by grid scan and Newton polish, simple or not.
inline std::vector<ZeroInfo> scan_zeros(const BlochMatrix& B, const FermiOptions& opt = {}) {
  const int n = opt.grid;
  const double h = 2 * kPi / n;
  std::vector<double> a(static_cast<std::size_t>(n) * n);
  auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(mod(i, n)) * n + mod(j, n)]; };
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) at(i, j) = std::abs(mu(B, {-kPi + (i + 0.5) * h, -kPi + (j + 0.5) * h}));
  double scale = *std::max_element(a.begin(), a.end());
  std::vector<std::pair<double, KPoint>> cand;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double v = at(i, j);
      bool minimum = true;
      for (int di = -1; di <= 1 && minimum; ++di)
        for (int dj = -1; dj <= 1; ++dj)
          if ((di || dj) && at(i + di, j + dj) < v) {
            minimum = false;
            break;
          }
      // a simple zero leaves |mu| at most about |grad| * h on its grid cell
      if (minimum && v < 0.05 * scale) cand.push_back({v, {-kPi + (i + 0.5) * h, -kPi + (j + 0.5) * h}});
    }
  std::sort(cand.begin(), cand.end(), [](auto& x, auto& y) { return x.first < y.first; });
  if (cand.size() > 32) cand.resize(32);
  std::vector<ZeroInfo> out;
  for (auto [v, k] : cand) {
    KPoint z = k;
    bool ok = detail::newton_zero(B, z, opt);
    // convergence is only linear at multiple zeros; accept a point far below the scan scale
    if (!ok && std::abs(mu(B, z)) > 1e-8 * scale) continue;
    bool dup = false;
    for (const auto& o : out)
      if (torus_distance(o.k, z) < 1e-5) dup = true;
    if (dup) continue;
    ZeroInfo zi;
    zi.k = z;
    zi.value = mu(B, z);
    zi.grad = mu_gradient(B, z);
    double gn = std::hypot(std::abs(zi.grad[0]), std::abs(zi.grad[1]));
    double r = std::min(1e-3, 0.25 * h);
    zi.winding = gn >= opt.min_gradient ? winding_number(B, z, r) : winding_number(B, z, std::max(r, 1e-3));
    if (gn < opt.min_gradient && std::abs(zi.winding) == 1) zi.winding = 0;  // flat zero, not simple
    out.push_back(zi);
  }
  return out;
}

namespace detail {

inline void rank_one(const CMatrix& adj, CVector& U, CVector& V, double& residual, double& ratio) {
  Eigen::JacobiSVD<CMatrix> svd(adj, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  U = svd.matrixU().col(0) * s(0);
  V = svd.matrixV().col(0).conjugate();
  residual = (adj - U * V.transpose()).cwiseAbs().maxCoeff();
  ratio = s.size() > 1 ? s(1) / s(0) : 0.0;
}

}  // namespace detail

inline FermiData find_fermi_points(const BlochMatrix& B, const FermiOptions& opt = {}) {
  auto zeros = scan_zeros(B, opt);
  if (zeros.empty()) throw Error(Errc::NotLiquidPhase, "mu has no zeros on the torus");
  for (const auto& z : zeros)
    if (!z.simple())
      throw Error(Errc::NotLiquidPhase, "mu has a non-simple zero at (" + std::to_string(z.k[0]) + ", " +
                                            std::to_string(z.k[1]) + "), winding " + std::to_string(z.winding));
  if (zeros.size() != 2)
    throw Error(Errc::NotLiquidPhase, "mu has " + std::to_string(zeros.size()) + " simple zeros, expected 2");
  FermiData f;
  f.zeros = zeros;
  auto ratio = [](const ZeroInfo& z) { return std::imag(z.grad[1] / z.grad[0]); };
  int plus = ratio(zeros[0]) > 0 ? 0 : 1;
  if (ratio(zeros[0]) > 0 && ratio(zeros[1]) > 0)
    plus = (zeros[0].k < zeros[1].k) ? 0 : 1;  // tie: lexicographically smaller point
  const auto& zp = zeros[plus];
  const auto& zm = zeros[1 - plus];
  f.p_plus = zp.k;
  f.p_minus = zm.k;
  f.alpha_plus = zp.grad[0];
  f.beta_plus = zp.grad[1];
  f.alpha_minus = zm.grad[0];
  f.beta_minus = zm.grad[1];
  double r1, r2, s1, s2;
  detail::rank_one(adjugate(B(f.p_plus)), f.U_plus, f.V_plus, r1, s1);
  detail::rank_one(adjugate(B(f.p_minus)), f.U_minus, f.V_minus, r2, s2);
  f.adj_residual = std::max(r1, r2);
  f.sv_ratio = std::max(s1, s2);
  if (f.sv_ratio > 1e-8) throw Error(Errc::NumericalFailure, "adjugate at a Fermi point is not rank one");
  return f;
}

inline FermiData find_fermi_points(const CellSpec& spec, const FermiOptions& opt = {}) {
  return find_fermi_points(BlochMatrix(spec), opt);
}

// At a zero where mu vanishes to second order, factor its Hessian q^T H q into two linear forms and
// return the one with Im(beta/alpha) > 0.
inline LinearForm node_linear_form(const BlochMatrix& B, KPoint p) {
  auto H = mu_hessian(B, p);
  cplx a = H[0][0], b = H[0][1], c = H[1][1];
  // a q1^2 + 2 b q1 q2 + c q2^2 = a (q1 - r1 q2)(q1 - r2 q2)
  if (std::abs(a) < 1e-14 * (std::abs(b) + std::abs(c)))
    throw Error(Errc::NumericalFailure, "degenerate Hessian at the node");
  cplx disc = std::sqrt(b * b - a * c);
  for (cplx r : {(-b + disc) / a, (-b - disc) / a}) {
    LinearForm f{1.0, -r};
    if (std::imag(f.beta / f.alpha) > 0) return f;
  }
  throw Error(Errc::NumericalFailure, "Hessian factors are collinear");
}

// Linear form for height covariances: phi_+ at two simple Fermi points, or a factor of the quadratic
// part of mu when the only zero is a single real node.
inline LinearForm height_form(const BlochMatrix& B, const FermiOptions& opt = {}) {
  try {
    return find_fermi_points(B, opt).form_plus();
  } catch (const Error& e) {
    if (e.code() != Errc::NotLiquidPhase) throw;
    auto z = scan_zeros(B, opt);
    if (z.size() != 1 || z[0].winding != 0) throw;
    return node_linear_form(B, z[0].k);
  }
}

// det K_theta on the L-torus as the product of mu over the twisted momenta.
inline cplx torus_determinant_from_mu(const BlochMatrix& B, int L, Theta th) {
  cplx d = 1.0;
  for (int a = 0; a < L; ++a)
    for (int b = 0; b < L; ++b)
      d *= mu(B, {2 * kPi * (a + (th[0] + 1) / 4.0) / L, 2 * kPi * (b + (th[1] + 1) / 4.0) / L});
  return d;
}

// ---------------------------------------------------------------------------------------------
// Infinite-volume inverse Kasteleyn matrix.

struct QuadratureOptions {
  int grid = 512;
  int grid_check = 256;
  int radial = 128;
  int angular = 256;
  double tolerance = 1e-6;
  int threads = 1;
};

// Kinv(x)(lw, lb) = K^{-1}(w, b) for w of type lw in cell x and b of type lb in cell 0.
// The integrand is split with smooth bumps around the Fermi points: the bump parts are integrated
// in polar coordinates, where the 1/|q| singularity cancels, and the smooth remainder on a shifted
// midpoint grid.
class InverseKasteleyn {
 public:
  InverseKasteleyn(const BlochMatrix& B, std::vector<KPoint> singular, QuadratureOptions opt = {})
      : B_(B), pts_(std::move(singular)), opt_(opt) {
    double sep = 2 * kPi;
    for (std::size_t i = 0; i < pts_.size(); ++i)
      for (std::size_t j = i + 1; j < pts_.size(); ++j) sep = std::min(sep, torus_distance(pts_[i], pts_[j]));
    s_ = std::min(0.15, sep / 8.0);
  }

  InverseKasteleyn(const BlochMatrix& B, const FermiData& f, QuadratureOptions opt = {})
      : InverseKasteleyn(B, std::vector<KPoint>{f.p_plus, f.p_minus}, opt) {}

  double bump_width() const { return s_; }

  CMatrix at(Cell x) {
    batch({x});
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.at(x);
  }

  // Computes (and caches) the matrices for all requested cells at once.
  void batch(const std::vector<Cell>& xs) {
    std::vector<Cell> todo;
    {
      std::lock_guard<std::mutex> lock(mu_);
      for (auto x : xs)
        if (!cache_.count(x) && std::find(todo.begin(), todo.end(), x) == todo.end()) todo.push_back(x);
    }
    if (todo.empty()) return;
    auto bump_fine = bump_part(todo, opt_.radial, opt_.angular);
    auto grid_fine = grid_part(todo, opt_.grid);
    auto bump_coarse = bump_part(todo, opt_.radial * 3 / 4, opt_.angular * 3 / 4);
    auto grid_coarse = grid_part(todo, opt_.grid_check);
    std::lock_guard<std::mutex> lock(mu_);
    for (std::size_t i = 0; i < todo.size(); ++i) {
      CMatrix fine = bump_fine[i] + grid_fine[i];
      CMatrix coarse = bump_coarse[i] + grid_coarse[i];
      double err = (fine - coarse).cwiseAbs().maxCoeff();
      max_error_ = std::max(max_error_, err);
      if (err > opt_.tolerance)
        throw Error(Errc::QuadratureNotConverged, "K^-1 quadrature at (" + std::to_string(todo[i][0]) + ", " +
                                                      std::to_string(todo[i][1]) + ") moved by " +
                                                      std::to_string(err));
      cache_[todo[i]] = fine;
    }
  }

  cplx operator()(Cell x, int lw, int lb) { return at(x)(lw, lb); }
  double max_error() const { return max_error_; }

 private:
  // chi(rho) = exp(-u)(1 + u + u^2/2), u = rho^2 / s^2; equals 1 - O(rho^6) near the point
  double chi(double rho) const {
    double u = rho * rho / (s_ * s_);
    return u > 60 ? 0.0 : std::exp(-u) * (1 + u + 0.5 * u * u);
  }
  double chi_total(KPoint k) const {
    double c = 0.0;
    for (auto p : pts_) c += chi(torus_distance(k, p));
    return c;
  }

  template <unsigned N>
  static std::vector<std::pair<double, double>> gauss_nodes(double a, double b) {
    using G = boost::math::quadrature::gauss<double, N>;
    std::vector<std::pair<double, double>> out;
    const auto& x = G::abscissa();
    const auto& w = G::weights();
    double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] == 0.0) {
        out.push_back({mid, half * w[i]});
        continue;
      }
      out.push_back({mid + half * x[i], half * w[i]});
      out.push_back({mid - half * x[i], half * w[i]});
    }
    return out;
  }

  std::vector<CMatrix> bump_part(const std::vector<Cell>& xs, int radial, int angular) const {
    const int T = B_.size();
    std::vector<CMatrix> acc(xs.size(), CMatrix::Zero(T, T));
    const double rmax = s_ * std::sqrt(60.0);
    auto nodes = radial >= 128 ? gauss_nodes<128>(0.0, rmax) : gauss_nodes<96>(0.0, rmax);
    for (auto p : pts_) {
      for (int a = 0; a < angular; ++a) {
        double t = 2 * kPi * (a + 0.5) / angular;
        double ct = std::cos(t), st = std::sin(t);
        for (auto [rho, w] : nodes) {
          KPoint k{p[0] + rho * ct, p[1] + rho * st};
          double weight = w * rho * chi(rho) * (2 * kPi / angular);
          if (weight == 0.0) continue;
          CMatrix inv = B_(k).inverse();
          for (std::size_t i = 0; i < xs.size(); ++i)
            acc[i] += (weight * std::polar(1.0, -(k[0] * xs[i][0] + k[1] * xs[i][1]))) * inv;
        }
      }
    }
    for (auto& a : acc) a /= 4 * kPi * kPi;
    return acc;
  }

  std::vector<CMatrix> grid_part(const std::vector<Cell>& xs, int n) const {
    const int T = B_.size();
    const double h = 2 * kPi / n;
    const std::size_t nx = xs.size();
    // separable phase tables e^{-i k_c x_c}
    std::vector<cplx> ph1(nx * n), ph2(nx * n);
    for (std::size_t i = 0; i < nx; ++i)
      for (int a = 0; a < n; ++a) {
        double k = -kPi + (a + 0.5) * h;
        ph1[i * n + a] = std::polar(1.0, -k * xs[i][0]);
        ph2[i * n + a] = std::polar(1.0, -k * xs[i][1]);
      }
    // rows of the grid are independent chunks, reduced in fixed order
    std::vector<std::vector<CMatrix>> rows(n);
    auto row = [&](std::size_t a) -> double {
      std::vector<CMatrix> acc(nx, CMatrix::Zero(T, T));
      const double k1 = -kPi + (a + 0.5) * h;
      for (int b = 0; b < n; ++b) {
        KPoint k{k1, -kPi + (b + 0.5) * h};
        double w = 1.0 - chi_total(k);
        if (std::abs(w) < 1e-300) continue;
        CMatrix inv = w * B_(k).inverse();
        for (std::size_t i = 0; i < nx; ++i) acc[i].noalias() += (ph1[i * n + a] * ph2[i * n + b]) * inv;
      }
      rows[a] = std::move(acc);
      return 0.0;
    };
    parallel_sum(static_cast<std::size_t>(n), row, opt_.threads, 1);
    std::vector<CMatrix> out(nx, CMatrix::Zero(T, T));
    for (int a = 0; a < n; ++a)
      for (std::size_t i = 0; i < nx; ++i) out[i] += rows[a][i];
    for (auto& o : out) o *= h * h / (4 * kPi * kPi);
    return out;
  }

  const BlochMatrix& B_;
  std::vector<KPoint> pts_;
  QuadratureOptions opt_;
  double s_ = 0.15;
  std::map<Cell, CMatrix> cache_;
  std::mutex mu_;
  double max_error_ = 0.0;
};

// Exact finite-torus analogue: (1/L^2) sum over twisted momenta of M(k)^{-1} e^{-ik.x}.
inline CMatrix torus_inverse_from_mu(const BlochMatrix& B, int L, Theta th, Cell x) {
  CMatrix acc = CMatrix::Zero(B.size(), B.size());
  for (int a = 0; a < L; ++a)
    for (int b = 0; b < L; ++b) {
      KPoint k{2 * kPi * (a + (th[0] + 1) / 4.0) / L, 2 * kPi * (b + (th[1] + 1) / 4.0) / L};
      acc += std::polar(1.0, -(k[0] * x[0] + k[1] * x[1])) * B(k).inverse();
    }
  return acc / double(L * L);
}

// ---------------------------------------------------------------------------------------------
// Correlations.

// -K(b,w) K(b',w') K^{-1}(w',b) K^{-1}(w,b') for planar edges of the infinite graph.
inline double correlation_planar(const BlochMatrix& B, InverseKasteleyn& kinv, PlanarEdgeRef e, PlanarEdgeRef f) {
  const auto& te = B.edge(e.ell, e.j);
  const auto& tf = B.edge(f.ell, f.j);
  Cell we{e.x[0] + te.v[0], e.x[1] + te.v[1]}, wf{f.x[0] + tf.v[0], f.x[1] + tf.v[1]};
  Cell d1{wf[0] - e.x[0], wf[1] - e.x[1]};  // w' relative to b
  Cell d2{we[0] - f.x[0], we[1] - f.x[1]};  // w relative to b'
  kinv.batch({d1, d2});
  cplx g1 = kinv(d1, tf.lw, te.lb), g2 = kinv(d2, te.lw, tf.lb);
  if (e.x == f.x && e.ell == f.ell && e.j == f.j) {
    // same edge: variance p(1-p) with p = K(b,w) K^{-1}(w,b)
    double p = (te.K * kinv(Cell{te.v[0], te.v[1]}, te.lw, te.lb)).real();
    return p * (1 - p);
  }
  return (-te.K * tf.K * g1 * g2).real();
}

struct AsymptoticModel {
  const BlochMatrix& B;
  FermiData f;

  cplx K0(int omega, int ell, int j) const {
    const auto& t = B.edge(ell, j);
    auto p = f.p(omega);
    return t.K / (2 * kPi) * std::polar(1.0, -(p[0] * t.v[0] + p[1] * t.v[1])) * f.U(omega)(t.lw) * f.V(omega)(t.lb);
  }
  cplx H0(int omega, int ell, int j) const {
    const auto& t = B.edge(ell, j);
    auto p = f.p(omega);
    return t.K / (2 * kPi) * std::polar(1.0, p[0] * t.v[0] + p[1] * t.v[1]) * f.U(-omega)(t.lw) * f.V(omega)(t.lb);
  }

  // Leading long-distance behaviour of K^{-1}(w, b), w of type lw in cell x, b of type lb in cell 0.
  cplx kinv_leading(Cell x, int lw, int lb) const {
    cplx s = 0.0;
    for (int om : {1, -1}) {
      auto p = f.p(om);
      s += f.U(om)(lw) * f.V(om)(lb) * std::polar(1.0, -(p[0] * x[0] + p[1] * x[1])) / f.phi(om, x[0], x[1]);
    }
    return s / (2 * kPi);
  }

  // (A, B) terms for edges e at cell x and f at cell x'.
  std::pair<double, double> terms(PlanarEdgeRef e, PlanarEdgeRef g) const {
    double d1 = e.x[0] - g.x[0], d2 = e.x[1] - g.x[1];
    cplx A = 0.0, Bt = 0.0;
    for (int om : {1, -1}) {
      cplx ph = f.phi(om, d1, d2);
      A += K0(om, e.ell, e.j) * K0(om, g.ell, g.j) / (ph * ph);
      auto p = f.p(om);
      Bt += H0(om, e.ell, e.j) * H0(-om, g.ell, g.j) * std::polar(1.0, 2 * (p[0] * d1 + p[1] * d2)) / std::norm(ph);
    }
    return {A.real(), Bt.real()};
  }
};

// Least-squares decay exponent: minus the slope of log|y| against log x.
inline double fit_decay_exponent(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(Errc::DimensionMismatch, "fit needs matching samples");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double a = std::log(x[i]), b = std::log(std::abs(y[i]));
    sx += a;
    sy += b;
    sxx += a * a;
    sxy += a * b;
  }
  return -(n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// Covariance of h(x1) - h(x2) and h(x3) - h(x4) for a free field with stiffness nu in phi coordinates.
inline double gff_prediction(const LinearForm& phi, Cell x1, Cell x2, Cell x3, Cell x4, double nu) {
  auto P = [&](Cell x) { return phi.phi(x[0], x[1]); };
  if (x1 == x2 || x3 == x4) return 0.0;
  if (x1 == x3 && x2 == x4) return nu / (kPi * kPi) * std::log(std::abs(P(x1) - P(x2)));
  if (x1 == x4 && x2 == x3) return -nu / (kPi * kPi) * std::log(std::abs(P(x1) - P(x2)));
  if (x1 == x3 || x2 == x4 || x1 == x4 || x2 == x3)
    throw Error(Errc::CoincidentPoints, "coincident points in the four-point covariance");
  cplx r = (P(x1) - P(x4)) * (P(x2) - P(x3)) / ((P(x1) - P(x3)) * (P(x2) - P(x4)));
  return nu / (2 * kPi * kPi) * std::log(std::abs(r));
}

}  // namespace dimerlab
