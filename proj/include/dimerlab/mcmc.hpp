#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <exception>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <complex>
#include <map>
#include <numeric>
#include <set>
#include <thread>
#include <vector>

#include "enumerate.hpp"
#include "error.hpp"
#include "height.hpp"
#include "lattice.hpp"
#include "rng.hpp"
#include "spectral.hpp"

namespace dimerlab {

enum MoveType { kFace = 0, kSwap = 1, kLoop = 2, kWorm = 3 };

struct ChainConfig {
  std::uint64_t seed = 1;
  long sweeps = 1000;
  long burn_in = 100;
  std::array<double, 3> move_mix{0.5, 0.4, 0.1};
  long thin = 1;  // sweeps between recorded samples
  int worms_per_sweep = 1;
  bool self_test = false;

  void check() const {
    double s = move_mix[0] + move_mix[1] + move_mix[2];
    if (std::abs(s - 1.0) > 1e-12 || *std::min_element(move_mix.begin(), move_mix.end()) < 0)
      throw Error(Errc::InvalidSpec, "move probabilities must be non-negative and sum to 1");
    if (burn_in < 0 || sweeps <= burn_in) throw Error(Errc::InvalidSpec, "need sweeps > burn_in >= 0");
    if (thin < 1) throw Error(Errc::InvalidSpec, "thin must be positive");
    if (worms_per_sweep < 0) throw Error(Errc::InvalidSpec, "worms_per_sweep must be non-negative");
  }
};

struct MoveStats {
  std::array<long, 4> proposed{0, 0, 0, 0};
  std::array<long, 4> accepted{0, 0, 0, 0};  // for worms: the matching changed
  long worm_steps = 0;
  double rate(int t) const { return proposed[t] ? double(accepted[t]) / proposed[t] : 0.0; }
};

// Metropolis-Hastings chain on perfect matchings of g with stationary law proportional to w(M).
class DimerChain {
 public:
  DimerChain(const TorusGraph& g, const ChainConfig& cfg, std::uint64_t stream = 0)
      : DimerChain(g, cfg, reference_matching(g), stream) {}

  DimerChain(const TorusGraph& g, const ChainConfig& cfg, const Matching& init, std::uint64_t stream = 0)
      : g_(g), cfg_(cfg), rng_(cfg.seed, stream) {
    cfg.check();
    if (!is_perfect(g, init)) throw Error(Errc::InvariantViolation, "initial state is not a perfect matching");
    mate_b_ = init.edge;
    mate_w_.assign(g.nb, -1);
    for (int b = 0; b < g.nb; ++b) mate_w_[g.edges[mate_b_[b]].white - g.nb] = mate_b_[b];
    mult_.resize(g.nb);
    for (int b = 0; b < g.nb; ++b)
      for (int e : g.incident[b]) mult_[b][g.edges[e].white - g.nb].push_back(e);
    wcum_.resize(g.nb);
    for (int wt = 0; wt < g.nb; ++wt) {
      double c = 0.0;
      for (int e : g.incident[g.nb + wt]) wcum_[wt].push_back(c += g.edges[e].weight);
    }
    build_loops();
    cum_ = {cfg.move_mix[0], cfg.move_mix[0] + cfg.move_mix[1]};
  }

  const TorusGraph& graph() const { return g_; }
  const std::vector<int>& edges() const { return mate_b_; }
  bool occupied(int e) const { return mate_b_[g_.edges[e].black] == e; }
  Matching matching() const { return {mate_b_}; }
  const MoveStats& stats() const { return stats_; }
  std::size_t num_loops() const { return loops_.size(); }

  double log_weight() const {
    double s = 0.0;
    for (int e : mate_b_) s += std::log(g_.edges[e].weight);
    return s;
  }

  void step() {
    double u = rng_.uniform();
    if (u < cum_[0]) face_move();
    else if (u < cum_[1]) swap_move();
    else loop_move();
  }

  // |V| attempted local moves, then the worms.
  void sweep() {
    for (int i = 0; i < g_.num_vertices(); ++i) step();
    for (int i = 0; i < cfg_.worms_per_sweep; ++i) worm_move();
    if (cfg_.self_test && !is_perfect(g_, matching()))
      throw Error(Errc::InvariantViolation, "chain left the set of perfect matchings");
  }

  // Exposed for tests: the individual moves, each one proposal.
  bool face_move() {
    ++stats_.proposed[kFace];
    int X = static_cast<int>(rng_.below(g_.N)), Y = static_cast<int>(rng_.below(g_.N));
    auto [from, to] = face_edges(X, Y);
    if (from[0] < 0) return false;
    double r = w(to[0]) * w(to[1]) / (w(from[0]) * w(from[1]));
    if (!accept(r)) return false;
    set(to[0]);
    set(to[1]);
    ++stats_.accepted[kFace];
    return true;
  }

  bool swap_move() {
    ++stats_.proposed[kSwap];
    const int b1 = static_cast<int>(rng_.below(g_.nb));
    const auto& inc1 = g_.incident[b1];
    const int ep = inc1[rng_.below(inc1.size())];  // proposed edge (b1, w2)
    const int e1 = mate_b_[b1];
    if (ep == e1) return false;
    const int w1 = g_.edges[e1].white - g_.nb, w2 = g_.edges[ep].white - g_.nb;
    if (w1 == w2) {
      // parallel edge: switch in place
      if (!accept(w(ep) / w(e1))) return false;
      set(ep);
      ++stats_.accepted[kSwap];
      return true;
    }
    const int e2 = mate_w_[w2];
    const int b2 = g_.edges[e2].black;
    const auto& c21 = mult_[b2][w1];
    if (c21.empty()) return false;
    const int f = c21[rng_.below(c21.size())];
    const double r = swap_ratio(ep, f);
    if (!accept(r)) return false;
    set(ep);
    set(f);
    ++stats_.accepted[kSwap];
    return true;
  }

  bool loop_move() {
    ++stats_.proposed[kLoop];
    if (loops_.empty()) return false;
    const auto& L = loops_[rng_.below(loops_.size())];
    int phase = -1;
    for (int p = 0; p < 2 && phase < 0; ++p) {
      bool all = true;
      for (std::size_t i = p; i < L.size() && all; i += 2) all = occupied(L[i]);
      if (all) phase = p;
    }
    if (phase < 0) return false;
    double r = 1.0;
    for (std::size_t i = 0; i < L.size(); ++i) r *= (static_cast<int>(i % 2) == phase) ? 1.0 / w(L[i]) : w(L[i]);
    if (!accept(r)) return false;
    for (std::size_t i = 1 - phase; i < L.size(); i += 2) set(L[i]);
    ++stats_.accepted[kLoop];
    return true;
  }

  // Occupied and vacant pairs of the face with lower-left corner (X, Y); {-1, -1} first when it cannot rotate.
  std::pair<std::array<int, 2>, std::array<int, 2>> face_edges(int X, int Y) const {
    int bot = g_.site_edge_id(X, Y, 0), top = g_.site_edge_id(X, Y + 1, 0);
    int lef = g_.site_edge_id(X, Y, 1), rig = g_.site_edge_id(X + 1, Y, 1);
    if (occupied(bot) && occupied(top)) return {{bot, top}, {lef, rig}};
    if (occupied(lef) && occupied(rig)) return {{lef, rig}, {bot, top}};
    return {{-1, -1}, {-1, -1}};
  }

  // Hastings ratio for replacing the dimers at black(ep) and black(f) by ep and f; with no parallel
  // edges the proposal is symmetric and this is the plain weight ratio.
  double swap_ratio(int ep, int f) const {
    const int b1 = g_.edges[ep].black, b2 = g_.edges[f].black;
    const int e1 = mate_b_[b1], e2 = mate_b_[b2];
    const int w1 = g_.edges[e1].white - g_.nb, w2 = g_.edges[e2].white - g_.nb;
    if (g_.edges[ep].white - g_.nb != w2 || g_.edges[f].white - g_.nb != w1 || b1 == b2)
      throw Error(Errc::InvariantViolation, "not a two-dimer swap");
    auto count = [&](int b, int wt) {
      auto it = mult_[b].find(wt);
      return it == mult_[b].end() ? 0.0 : static_cast<double>(it->second.size());
    };
    const double d1 = static_cast<double>(g_.incident[b1].size()), d2 = static_cast<double>(g_.incident[b2].size());
    // both orders of choosing the pair lead to the same proposal
    double q_fwd = 1.0 / (d1 * count(b2, w1)) + 1.0 / (d2 * count(b1, w2));
    double q_rev = 1.0 / (d1 * count(b2, w2)) + 1.0 / (d2 * count(b1, w1));
    return w(ep) * w(f) / (w(e1) * w(e2)) * q_rev / q_fwd;
  }

  // Heat-bath worm: remove the dimer at a random black vertex, then let the white end choose a new
  // partner with probability proportional to the edge weight until it returns to the first black vertex.
  // Rejection-free; crosses winding sectors.
  bool worm_move() {
    ++stats_.proposed[kWorm];
    const int b0 = static_cast<int>(rng_.below(g_.nb));
    const int e0 = mate_b_[b0];
    int wt = g_.edges[e0].white - g_.nb;
    mate_b_[b0] = -1;
    mate_w_[wt] = -1;
    bool changed = false;
    for (;;) {
      ++stats_.worm_steps;
      const auto& inc = g_.incident[g_.nb + wt];
      const auto& cum = wcum_[wt];
      double u = rng_.uniform() * cum.back();
      std::size_t k = 0;
      while (k + 1 < cum.size() && u >= cum[k]) ++k;
      const int e = inc[k];
      const int b = g_.edges[e].black;
      if (b == b0) {
        set(e);
        changed = changed || e != e0;
        break;
      }
      const int old = mate_b_[b];
      changed = changed || e != old;
      const int next = g_.edges[old].white - g_.nb;
      set(e);
      mate_w_[next] = -1;
      wt = next;
    }
    if (changed) ++stats_.accepted[kWorm];
    return changed;
  }

 private:
  double w(int e) const { return g_.edges[e].weight; }
  bool accept(double r) {
    if (!(r > 0.0)) return false;
    return r >= 1.0 || rng_.uniform() < r;
  }
  void set(int e) {
    const auto& ed = g_.edges[e];
    mate_b_[ed.black] = e;
    mate_w_[ed.white - g_.nb] = e;
  }

  // Straight non-contractible cycles: every row and column of the torus.
  void build_loops() {
    const int N = g_.N;
    std::set<std::vector<int>> seen;
    auto walk = [&](int X, int Y, int d) {
      std::vector<int> out;
      for (int s = 0; s < N; ++s, X += kDx[d], Y += kDy[d]) out.push_back(g_.site_edge_id(X, Y, d));
      auto key = out;
      std::sort(key.begin(), key.end());
      if (std::adjacent_find(key.begin(), key.end()) != key.end()) return;
      if (seen.insert(key).second) loops_.push_back(out);
    };
    for (int t = 0; t < N; ++t) {
      walk(0, t, 0);
      walk(t, 0, 1);
    }
  }

  const TorusGraph& g_;
  ChainConfig cfg_;
  CounterRng rng_;
  std::vector<int> mate_b_, mate_w_;
  std::vector<std::map<int, std::vector<int>>> mult_;
  std::vector<std::vector<int>> loops_;
  std::vector<std::vector<double>> wcum_;
  std::array<double, 2> cum_{};
  MoveStats stats_;
};

// ---------------------------------------------------------------------------------------------
// Heights on the corner faces eta_x.

class HeightSampler {
 public:
  explicit HeightSampler(const TorusGraph& g) : g_(g) {
    const int L = g.L;
    for (int x1 = 1; x1 < L; ++x1) row_.push_back(corridor_path(g, {x1 - 1, 0}, {x1, 0}));
    col_.resize(L);
    for (int x1 = 0; x1 < L; ++x1)
      for (int x2 = 1; x2 < L; ++x2) col_[x1].push_back(corridor_path(g, {x1, x2 - 1}, {x1, x2}));
    wind_row_ = corridor_path(g, {0, 0}, {L, 0});
    wind_col_ = corridor_path(g, {0, 0}, {0, L});
  }

  // h(eta_x) - h(eta_0) for x = (x1, x2), stored at x1 * L + x2.
  template <class Occ>
  void heights(const Occ& occupied, std::vector<double>& h) const {
    const int L = g_.L;
    h.assign(static_cast<std::size_t>(L) * L, 0.0);
    double base = 0.0;
    for (int x1 = 0; x1 < L; ++x1) {
      if (x1 > 0) base += increment(row_[x1 - 1], occupied);
      double v = base;
      h[x1 * L] = v;
      for (int x2 = 1; x2 < L; ++x2) {
        v += increment(col_[x1][x2 - 1], occupied);
        h[x1 * L + x2] = v;
      }
    }
  }

  template <class Occ>
  std::array<double, 2> windings(const Occ& occupied) const {
    return {increment(wind_row_, occupied), increment(wind_col_, occupied)};
  }

  template <class Occ>
  static double increment(const std::vector<CorridorStep>& p, const Occ& occupied) {
    double s = 0.0;
    for (auto st : p) s += st.sigma * ((occupied(st.edge) ? 1.0 : 0.0) - 0.25);
    return s;
  }

 private:
  const TorusGraph& g_;
  std::vector<std::vector<CorridorStep>> row_;
  std::vector<std::vector<std::vector<CorridorStep>>> col_;
  std::vector<CorridorStep> wind_row_, wind_col_;
};

// ---------------------------------------------------------------------------------------------
// Distribution test against enumeration.

struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 0.0;
  long samples = 0;
  std::size_t states = 0;
  std::size_t visited = 0;
  MoveStats stats;
};

inline ChiSquareResult chi_square_test(const TorusGraph& g, const ChainConfig& cfg) {
  auto all = enumerate_matchings(g);
  std::map<std::vector<int>, std::size_t> index;
  std::vector<double> prob;
  double z = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    index[all[i].edge] = i;
    prob.push_back(g.weight(all[i]));
    z += prob.back();
  }
  for (auto& p : prob) p /= z;
  DimerChain chain(g, cfg);
  std::vector<long> counts(all.size(), 0);
  ChiSquareResult r;
  for (long s = 0; s < cfg.sweeps; ++s) {
    chain.sweep();
    if (s < cfg.burn_in || (s - cfg.burn_in) % cfg.thin) continue;
    auto it = index.find(chain.edges());
    if (it == index.end()) throw Error(Errc::InvariantViolation, "sampled state missing from the enumeration");
    ++counts[it->second];
    ++r.samples;
  }
  // merge states in order of probability until every bin expects at least 5
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return prob[a] < prob[b]; });
  std::vector<std::pair<double, double>> bins;  // expected, observed
  double e = 0.0, o = 0.0;
  for (auto i : order) {
    e += prob[i] * r.samples;
    o += counts[i];
    if (e >= 5.0) {
      bins.push_back({e, o});
      e = o = 0.0;
    }
  }
  if (e > 0.0) {
    if (bins.empty()) bins.push_back({e, o});
    else {
      bins.back().first += e;
      bins.back().second += o;
    }
  }
  if (bins.size() < 2) throw Error(Errc::InsufficientStatistics, "too few samples for a chi-square test");
  for (auto [ex, ob] : bins) r.statistic += (ob - ex) * (ob - ex) / ex;
  r.dof = static_cast<int>(bins.size()) - 1;
  r.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(r.dof), r.statistic));
  r.states = all.size();
  r.visited = static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](long c) { return c > 0; }));
  r.stats = chain.stats();
  return r;
}

// ---------------------------------------------------------------------------------------------
// Stiffness.

// Jacobi theta_1(z | tau) by its q-series.
inline std::complex<double> theta1(std::complex<double> z, std::complex<double> tau) {
  const std::complex<double> i(0, 1);
  std::complex<double> s = 0.0;
  for (int n = 0; n < 64; ++n) {
    double k = n + 0.5;
    std::complex<double> term = std::exp(i * kPi * tau * k * k) * std::sin((2.0 * n + 1.0) * z);
    s += (n % 2 ? -1.0 : 1.0) * term;
    if (std::abs(term) < 1e-18 * std::abs(s) && n > 2) break;
  }
  return 2.0 * s;
}

// (1/pi^2) log|phi(d)| and its periodic version on the L-torus.
struct StiffnessRegressor {
  LinearForm phi;
  int L = 1;

  double plane(Cell d) const { return std::log(std::abs(phi.phi(d[0], d[1]))) / (kPi * kPi); }

  double torus(Cell d) const {
    std::complex<double> w1 = phi.phi(L, 0), w2 = phi.phi(0, L);
    std::complex<double> tau = w2 / w1;
    if (tau.imag() < 0) {
      std::swap(w1, w2);
      tau = w2 / w1;
    }
    std::complex<double> u = phi.phi(d[0], d[1]) / w1;
    double v = std::log(std::abs(theta1(kPi * u, tau))) - kPi * u.imag() * u.imag() / tau.imag();
    return v / (kPi * kPi);
  }
};

struct StiffnessResult {
  double nu = 0.0;          // tilt-free heights against the torus regressor
  double stderr_nu = 0.0;
  double nu_plane = 0.0;    // cover heights against the plane regressor
  double stderr_plane = 0.0;
  long samples = 0;
  int batches = 0;
  std::vector<Cell> displacements;
  std::vector<double> variance, variance_err;  // cover heights
  std::vector<double> variance_periodic, variance_periodic_err;  // tilt removed
  std::vector<double> x_plane, x_torus;
  double k3 = 0.0, k4 = 0.0;  // standardized cumulants of h(f)
  MoveStats stats;
  // per chain: sweep, log-weight, then h at the probe cells
  std::vector<std::vector<std::vector<double>>> traces;
  std::vector<Cell> probes;
};

struct StiffnessOptions {
  int batches = 20;
  int chains = 1;
  double min_dist = 4.0;
  double max_dist = -1.0;  // default max(L/4, min(L/2, 2 min_dist))
  int threads = 1;
  long trace_every = 0;  // sweeps between trace rows, 0 for none
};

inline std::vector<Cell> stiffness_probes(int L) { return {{L / 4, 0}, {0, L / 4}, {L / 4, L / 4}, {L / 2, L / 2}}; }

inline std::vector<Cell> stiffness_displacements(int L, double lo, double hi) {
  std::vector<Cell> out;
  for (int a = 0; a <= L / 2; ++a)
    for (int b = 0; b <= a; ++b) {
      double r = std::hypot(a, b);
      if (r >= lo - 1e-12 && r <= hi + 1e-12 && (b == 0 || b == a)) out.push_back({a, b});
    }
  // the transposed copies of the axis directions
  std::vector<Cell> extra;
  for (auto d : out)
    if (d[1] == 0) extra.push_back({0, d[0]});
  out.insert(out.end(), extra.begin(), extra.end());
  return out;
}

namespace detail {

inline double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

struct BatchAccumulator {
  std::vector<double> sum, sum2;    // D on the universal cover
  std::vector<double> psum, psum2;  // D minus the winding tilt d . W / L
  std::vector<double> hf;
  long n = 0;
};

// One chain: batches of per-displacement means of D and D^2, D = h(x + d) - h(x) on the cover.
inline std::vector<BatchAccumulator> run_stiffness_chain(const TorusGraph& g, const ChainConfig& cfg,
                                                         std::uint64_t stream, const std::vector<Cell>& disp,
                                                         int batches, MoveStats& stats, long trace_every,
                                                         std::vector<std::vector<double>>& trace) {
  DimerChain chain(g, cfg, stream);
  HeightSampler hs(g);
  const int L = g.L;
  const long recorded = (cfg.sweeps - cfg.burn_in + cfg.thin - 1) / cfg.thin;
  const long per_batch = std::max<long>(1, recorded / batches);
  std::vector<BatchAccumulator> out(batches);
  for (auto& b : out) {
    b.sum.assign(disp.size(), 0.0);
    b.sum2.assign(disp.size(), 0.0);
    b.psum.assign(disp.size(), 0.0);
    b.psum2.assign(disp.size(), 0.0);
  }
  std::vector<double> h;
  auto occ = [&](int e) { return chain.occupied(e); };
  const auto probes = stiffness_probes(L);
  long k = 0;
  for (long s = 0; s < cfg.sweeps; ++s) {
    chain.sweep();
    if (trace_every > 0 && s % trace_every == 0) {
      hs.heights(occ, h);
      std::vector<double> row{static_cast<double>(s), chain.log_weight()};
      for (auto p : probes) row.push_back(h[p[0] * L + p[1]]);
      trace.push_back(row);
    }
    if (s < cfg.burn_in || (s - cfg.burn_in) % cfg.thin) continue;
    int bi = static_cast<int>(std::min<long>(k / per_batch, batches - 1));
    ++k;
    hs.heights(occ, h);
    auto W = hs.windings(occ);
    if (cfg.self_test)
      for (Cell x : {Cell{L - 1, L - 1}, Cell{L / 2, L / 3}}) {
        double v = HeightSampler::increment(corridor_path_vertical_first(g, {0, 0}, x), occ);
        if (std::abs(v - h[x[0] * L + x[1]]) > 1e-9) throw Error(Errc::InvariantViolation, "height depends on the path");
      }
    auto& acc = out[bi];
    ++acc.n;
    for (std::size_t di = 0; di < disp.size(); ++di) {
      double s1 = 0, s2 = 0;
      for (int x1 = 0; x1 < L; ++x1)
        for (int x2 = 0; x2 < L; ++x2) {
          int y1 = x1 + disp[di][0], y2 = x2 + disp[di][1];
          double hy = h[mod(y1, L) * L + mod(y2, L)] + floor_div(y1, L) * W[0] + floor_div(y2, L) * W[1];
          double D = hy - h[x1 * L + x2];
          s1 += D;
          s2 += D * D;
        }
      const double tilt = (disp[di][0] * W[0] + disp[di][1] * W[1]) / L, n = L * L;
      acc.sum[di] += s1 / n;
      acc.sum2[di] += s2 / n;
      acc.psum[di] += s1 / n - tilt;
      acc.psum2[di] += (s2 - 2.0 * tilt * s1) / n + tilt * tilt;
    }
    // test function: +1 on the lower-left quarter, -1 on the upper-right quarter
    double hf = 0;
    for (int x1 = 0; x1 < L / 2; ++x1)
      for (int x2 = 0; x2 < L / 2; ++x2) hf += h[x1 * L + x2] - h[(x1 + L / 2) * L + x2 + L / 2];
    acc.hf.push_back(hf / (L * L / 4.0));
  }
  stats = chain.stats();
  return out;
}

}  // namespace detail

inline StiffnessResult estimate_stiffness(const TorusGraph& g, const ChainConfig& cfg, const LinearForm& phi,
                                          const StiffnessOptions& opt = {}) {
  cfg.check();
  const int L = g.L;
  const double hi = opt.max_dist > 0 ? opt.max_dist : std::max(L / 4.0, std::min(L / 2.0, 2.0 * opt.min_dist));
  StiffnessResult res;
  res.displacements = stiffness_displacements(L, opt.min_dist, hi);
  {
    std::set<long> radii;
    for (auto d : res.displacements) radii.insert(std::lround(1e6 * std::hypot(d[0], d[1])));
    if (radii.size() < 2) throw Error(Errc::InsufficientStatistics, "fewer than two distinct distances in range");
  }
  const long recorded = (cfg.sweeps - cfg.burn_in + cfg.thin - 1) / cfg.thin;
  if (recorded < 2L * opt.batches) throw Error(Errc::InsufficientStatistics, "too few recorded sweeps for the batches");

  std::vector<std::vector<detail::BatchAccumulator>> per_chain(opt.chains);
  std::vector<MoveStats> stats(opt.chains);
  res.traces.resize(opt.chains);
  res.probes = stiffness_probes(L);
  auto run = [&](int c) {
    per_chain[c] = detail::run_stiffness_chain(g, cfg, static_cast<std::uint64_t>(c), res.displacements, opt.batches,
                                               stats[c], opt.trace_every, res.traces[c]);
  };
  if (opt.threads <= 1 || opt.chains == 1) {
    for (int c = 0; c < opt.chains; ++c) run(c);
  } else {
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errs(opt.chains);
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min(opt.threads, opt.chains); ++t)
      pool.emplace_back([&] {
        for (int c; (c = next++) < opt.chains;) {
          try {
            run(c);
          } catch (...) {
            errs[c] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errs)
      if (e) std::rethrow_exception(e);
  }
  for (const auto& s : stats) {
    for (int t = 0; t < 4; ++t) {
      res.stats.proposed[t] += s.proposed[t];
      res.stats.accepted[t] += s.accepted[t];
    }
    res.stats.worm_steps += s.worm_steps;
  }

  StiffnessRegressor reg{phi, L};
  for (auto d : res.displacements) {
    res.x_plane.push_back(reg.plane(d));
    res.x_torus.push_back(reg.torus(d));
  }
  // every (chain, batch) is one batch estimate
  std::vector<std::vector<double>> cover_batches, periodic_batches;
  std::vector<double> hf_all;
  for (const auto& ch : per_chain)
    for (const auto& b : ch) {
      if (b.n == 0) continue;
      std::vector<double> v(res.displacements.size()), p(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) {
        double m1 = b.sum[i] / b.n, q1 = b.psum[i] / b.n;
        v[i] = b.sum2[i] / b.n - m1 * m1;
        p[i] = b.psum2[i] / b.n - q1 * q1;
      }
      cover_batches.push_back(v);
      periodic_batches.push_back(p);
      hf_all.insert(hf_all.end(), b.hf.begin(), b.hf.end());
      res.samples += b.n;
    }
  const int nb = static_cast<int>(cover_batches.size());
  if (nb < 2) throw Error(Errc::InsufficientStatistics, "fewer than two batches");
  res.batches = nb;
  auto mean_err = [&](const std::vector<std::vector<double>>& bs, std::vector<double>& mean, std::vector<double>& err) {
    mean.assign(res.displacements.size(), 0.0);
    err.assign(res.displacements.size(), 0.0);
    for (const auto& v : bs)
      for (std::size_t i = 0; i < v.size(); ++i) mean[i] += v[i] / nb;
    for (const auto& v : bs)
      for (std::size_t i = 0; i < v.size(); ++i) err[i] += std::pow(v[i] - mean[i], 2);
    for (auto& e : err) e = std::sqrt(e / (nb - 1) / nb);
  };
  mean_err(cover_batches, res.variance, res.variance_err);
  mean_err(periodic_batches, res.variance_periodic, res.variance_periodic_err);

  auto slope_stats = [&](const std::vector<double>& x, const std::vector<std::vector<double>>& bs,
                         const std::vector<double>& y, double& mean, double& se) {
    std::vector<double> s;
    for (const auto& v : bs) s.push_back(detail::ls_slope(x, v));
    mean = detail::ls_slope(x, y);
    double acc = 0;
    for (double t : s) acc += (t - mean) * (t - mean);
    se = std::sqrt(acc / (nb - 1) / nb);
  };
  slope_stats(res.x_torus, periodic_batches, res.variance_periodic, res.nu, res.stderr_nu);
  slope_stats(res.x_plane, cover_batches, res.variance, res.nu_plane, res.stderr_plane);

  // cumulant diagnostics
  if (hf_all.size() > 3) {
    double m = std::accumulate(hf_all.begin(), hf_all.end(), 0.0) / hf_all.size();
    double c2 = 0, c3 = 0, c4 = 0;
    for (double v : hf_all) {
      double d = v - m;
      c2 += d * d;
      c3 += d * d * d;
      c4 += d * d * d * d;
    }
    c2 /= hf_all.size();
    c3 /= hf_all.size();
    c4 /= hf_all.size();
    if (c2 > 0) {
      res.k3 = c3 / std::pow(c2, 1.5);
      res.k4 = c4 / (c2 * c2) - 3.0;
    }
  }
  return res;
}

// Height covariance Cov(h(a) - h(b), h(c) - h(d)) estimated from one chain, with a batch error.
struct CovarianceEstimate {
  double value = 0.0;
  double stderr_value = 0.0;
  long samples = 0;
};

inline CovarianceEstimate mc_height_covariance(const TorusGraph& g, const ChainConfig& cfg, Cell a, Cell b, Cell c,
                                               Cell d, int batches = 20) {
  cfg.check();
  DimerChain chain(g, cfg);
  auto occ = [&](int e) { return chain.occupied(e); };
  auto p1 = corridor_path(g, b, a), p2 = corridor_path(g, d, c);
  std::vector<double> u, v;
  for (long s = 0; s < cfg.sweeps; ++s) {
    chain.sweep();
    if (s < cfg.burn_in || (s - cfg.burn_in) % cfg.thin) continue;
    u.push_back(HeightSampler::increment(p1, occ));
    v.push_back(HeightSampler::increment(p2, occ));
  }
  const long n = static_cast<long>(u.size());
  if (n < 2L * batches) throw Error(Errc::InsufficientStatistics, "too few samples for the covariance");
  auto cov = [&](long lo, long hi) {
    double mu = 0, mv = 0;
    for (long i = lo; i < hi; ++i) {
      mu += u[i];
      mv += v[i];
    }
    mu /= (hi - lo);
    mv /= (hi - lo);
    double s = 0;
    for (long i = lo; i < hi; ++i) s += (u[i] - mu) * (v[i] - mv);
    return s / (hi - lo);
  };
  CovarianceEstimate r;
  r.samples = n;
  r.value = cov(0, n);
  std::vector<double> bs;
  for (int k = 0; k < batches; ++k) bs.push_back(cov(n * k / batches, n * (k + 1) / batches));
  double m = std::accumulate(bs.begin(), bs.end(), 0.0) / batches, acc = 0;
  for (double t : bs) acc += (t - m) * (t - m);
  r.stderr_value = std::sqrt(acc / (batches - 1) / batches);
  return r;
}

}  // namespace dimerlab
