// One line per acceptance criterion; non-zero exit if any line fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <dimerlab/enumerate.hpp>
#include <dimerlab/grassmann.hpp>
#include <dimerlab/kasteleyn.hpp>
#include <dimerlab/mcmc.hpp>
#include <dimerlab/spectral.hpp>
#include <functional>
#include <numeric>
#include <random>
#include <string>

#include "support.hpp"

using namespace dimerlab;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

void report(const std::string& id, bool ok, const std::string& what) {
  std::printf("[%s] %-3s %s\n", ok ? "PASS" : "FAIL", id.c_str(), what.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

void guarded(const std::string& id, const std::function<void()>& body) {
  try {
    body();
  } catch (const Error& e) {
    report(id, false, std::string("error ") + e.what());
  } catch (const std::exception& e) {
    report(id, false, std::string("exception ") + e.what());
  }
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

CellSpec uniform4() {
  CellSpec s;
  s.m = 4;
  return s;
}

void planar_oracle() {
  auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  const std::array<std::array<int, 2>, 4> shapes{{{4, 1}, {4, 2}, {6, 1}, {8, 1}}};  // (m, L), L m <= 8
  double worst = 0;
  int n = 0;
  for (int i = 0; i < 24; ++i) {
    auto [m, L] = shapes[i % shapes.size()];
    auto g = planar_torus(testsupport::random_weights(m, rng), L);
    worst = std::max(worst, rel(planar_partition(g), weighted_sum(g)));
    ++n;
  }
  double t = seconds_since(t0);
  report("1", worst <= 1e-9 && t < 120, fmt("planar: %d specs, max rel %.2e, %.1f s", n, worst, t));
}

void nonplanar_oracle() {
  auto t0 = Clock::now();
  std::vector<CellSpec> specs{testsupport::two_crossing_spec()};
  std::mt19937_64 rng(202);
  while (specs.size() < 13) {
    int m = specs.size() % 3 == 0 ? 6 : 4;
    auto s = testsupport::random_nonplanar(testsupport::random_weights(m, rng), 1, rng);
    if (s.nonplanar.size() == 1) specs.push_back(s);
  }
  double worst = 0;
  int n = 0, skipped = 0;
  for (const auto& s : specs)
    for (int L : {1, 2}) {
      // a 12 x 12 torus is beyond enumeration
      if (s.m * L > 8) {
        ++skipped;
        continue;
      }
      for (double lam : {-0.3, -0.1, 0.1, 0.3}) {
        auto g = build_graph(s, L, lam);
        worst = std::max(worst, rel(nonplanar_partition(g), weighted_sum(g)));
        ++n;
      }
    }
  double t = seconds_since(t0);
  report("2", worst <= 1e-9 && t < 300,
         fmt("non-planar: %zu specs, %d (spec, L, lambda) cases, max rel %.2e, %.1f s (%d m=6 L=2 cases not enumerable)",
             specs.size(), n, worst, t, skipped));
}

void sign_table() {
  auto s = testsupport::two_crossing_spec();
  const int expect[4] = {1, -1, -1, 1};
  bool ok = true;
  std::string got;
  for (unsigned S = 0; S < 4; ++S) {
    int a = epsilon_sign(s, 1, S), b = epsilon_sign_oracle(s, 1, S);
    ok = ok && a == expect[S] && b == expect[S];
    got += fmt(" %+d/%+d", a, b);
  }
  report("3", ok, "signs (constructive/oracle):" + got);
}

void fermi_check(const std::string& id, const CellSpec& spec, const std::string& label) {
  BlochMatrix B(spec);
  auto f = find_fermi_points(B);
  bool two = f.zeros.size() == 2 && f.zeros[0].simple() && f.zeros[1].simple();
  double sym = torus_distance({f.p_plus[0] + f.p_minus[0], f.p_plus[1] + f.p_minus[1]}, {0, 0});
  double im = std::imag(f.beta_plus / f.alpha_plus);
  double scale = adjugate(B(f.p_plus)).cwiseAbs().maxCoeff();
  double res = f.adj_residual / scale;
  report(id, two && sym <= 1e-10 && im > 0 && res <= 1e-8,
         fmt("%s: %zu zeros, |p+ + p-| %.1e, Im(beta/alpha) %.3f, adjugate residual %.1e", label.c_str(),
             f.zeros.size(), sym, im, res));
}

void spectral() {
  try {
    fermi_check("4", uniform4(), "uniform m=4");
  } catch (const Error& e) {
    report("4", false, std::string("uniform m=4: ") + e.what());
  }
  guarded("4s", [] { fermi_check("4s", testsupport::liquid_spec(), "supplementary, non-uniform liquid m=4"); });
}

void asymptotics() {
  auto t0 = Clock::now();
  BlochMatrix B(testsupport::liquid_spec());
  auto f = find_fermi_points(B);
  InverseKasteleyn kinv(B, f);
  AsymptoticModel am{B, f};
  PlanarEdgeRef e{{0, 0}, 3, 1};
  const auto& te = B.edge(3, 1);
  const auto& tf = B.edge(5, 2);
  std::vector<Cell> need;
  for (int t = 8; t <= 42; t += 2) {
    need.push_back({t + tf.v[0], t / 2 + tf.v[1]});
    need.push_back({te.v[0] - t, te.v[1] - t / 2});
  }
  kinv.batch(need);
  std::vector<double> dist, rem, lead;
  for (int t = 8; t <= 42; t += 2) {
    PlanarEdgeRef g{{t, t / 2}, 5, 2};
    auto [A, Bt] = am.terms(e, g);
    dist.push_back(std::hypot(t, t / 2));
    rem.push_back(correlation_planar(B, kinv, e, g) - A - Bt);
    lead.push_back(A);
  }
  double r = fit_decay_exponent(dist, rem), a = fit_decay_exponent(dist, lead), t = seconds_since(t0);
  report("5", r >= 2.5 && std::abs(a - 2.0) <= 0.1 && t < 600,
         fmt("liquid m=4, |x| in [%.0f, %.0f]: remainder exponent %.3f, leading exponent %.3f, %.1f s", dist.front(),
             dist.back(), r, a, t));
}

void ward() {
  double w0 = 0, w2 = 0;
  {
    std::mt19937_64 rng(7);
    auto g = build_graph(testsupport::random_weights(4, rng), 2, 0.0);
    for (int ell = 1; ell <= 8; ++ell)
      w0 = std::max(w0, ward_residual(g, {1, 0}, ell, g.white({0, 1}, 3), g.black({1, 1}, 6)));
  }
  auto g = build_graph(testsupport::two_crossing_spec(), 1, 0.2);
  for (int ell = 1; ell <= 8; ++ell)
    for (int yl = 1; yl <= 8; ++yl)
      for (int zl : {1, 4, 6}) w2 = std::max(w2, ward_residual(g, {0, 0}, ell, g.white({0, 0}, yl), g.black({0, 0}, zl)));
  report("6", w0 <= 1e-10 && w2 <= 1e-9,
         fmt("Ward: max residual %.1e at lambda=0 (L=2), %.1e at lambda=0.2 (two-crossing, L=1)", w0, w2));
}

void gauge() {
  std::mt19937_64 rng(9);
  auto s = testsupport::random_weights(4, rng);
  s.nonplanar = testsupport::two_crossing_spec().nonplanar;
  auto g = build_graph(s, 1, 0.3);
  const int ne = static_cast<int>(g.edges.size());
  std::vector<int> all(ne);
  std::iota(all.begin(), all.end(), 0);
  auto E = joint_occupation(g, all);
  const int v = 5;
  std::vector<int> probe{0, 5, 9, ne - 1};
  for (int e : g.incident[v]) probe.push_back(e);
  double worst_enum = 0, worst_engine = 0;
  for (double c : {0.5, 2.0}) {
    auto h = g;
    for (int e : h.incident[v]) h.edges[e].weight *= c;
    auto F = joint_occupation(h, all);
    for (int i = 0; i < ne; ++i)
      for (int k = 0; k < ne; ++k) {
        double tg = E[i][k] - E[i][i] * E[k][k], th = F[i][k] - F[i][i] * F[k][k];
        worst_enum = std::max({worst_enum, std::abs(th - tg), std::abs(F[i][i] - E[i][i])});
      }
    for (int a : probe)
      for (int b : probe) {
        auto o = nonplanar_observables(g, a, b), p = nonplanar_observables(h, a, b);
        worst_engine = std::max({worst_engine, std::abs(o.p_e - p.p_e), std::abs(o.p_f - p.p_f),
                                 std::abs(o.truncated - p.truncated)});
      }
  }
  report("7", worst_enum <= 1e-9 && worst_engine <= 1e-9,
         fmt("gauge c in {0.5, 2}: max change %.1e (enumeration, all pairs), %.1e (sector engine, %zu^2 pairs)",
             worst_enum, worst_engine, probe.size()));
}

void chi_square() {
  std::mt19937_64 rng(23);
  struct Case {
    std::string name;
    TorusGraph g;
  };
  std::vector<Case> cases;
  cases.push_back({"uniform m=4 L=1", build_graph(uniform4(), 1, 0.0)});
  cases.push_back({"random m=4 L=1", build_graph(testsupport::random_weights(4, rng), 1, 0.0)});
  cases.push_back({"two-crossing lambda=0.3", build_graph(testsupport::two_crossing_spec(), 1, 0.3)});
  std::uint64_t seed = 1;
  for (auto& c : cases) {
    auto t0 = Clock::now();
    ChainConfig cfg;
    cfg.seed = seed++;
    cfg.sweeps = 1000000;
    cfg.burn_in = 1000;
    cfg.thin = 10;
    auto r = chi_square_test(c.g, cfg);
    double t = seconds_since(t0);
    report("8", r.p_value > 0.01 && t < 120,
           fmt("chi-square %s: %zu/%zu states, X2 %.1f on %d dof, p %.3f, %.1f s", c.name.c_str(), r.visited,
               r.states, r.statistic, r.dof, r.p_value, t));
  }
}

StiffnessResult stiffness;

void gff() {
  auto t0 = Clock::now();
  auto s = uniform4();
  auto g = build_graph(s, 32, 0.0);
  ChainConfig cfg;
  cfg.seed = 2024;
  cfg.sweeps = 40000;
  cfg.burn_in = 4000;
  auto phi = height_form(BlochMatrix(s));
  stiffness = estimate_stiffness(g, cfg, phi);
  double t = seconds_since(t0);
  report("9", stiffness.nu >= 0.9 && stiffness.nu <= 1.1 && t <= 1800,
         fmt("L=32 uniform: nu %.3f +- %.3f (%ld samples, %.0f s)", stiffness.nu, stiffness.stderr_nu,
             stiffness.samples, t));
}

// Z restricted to the graph without the endpoints of e, using planar edges only.
double contracted_sum(const TorusGraph& g, int e) {
  const int cb = g.edges[e].black, cw = g.edges[e].white;
  std::vector<std::vector<std::pair<int, double>>> adj(g.nb);
  for (const auto& ed : g.edges)
    if (ed.planar() && ed.black != cb && ed.white != cw) adj[ed.black].push_back({ed.white, ed.weight});
  std::vector<char> used(g.num_vertices(), 0);
  used[cw] = 1;
  std::function<double(int)> rec = [&](int b) -> double {
    if (b == g.nb) return 1.0;
    if (b == cb) return rec(b + 1);
    double z = 0;
    for (auto [w, wt] : adj[b])
      if (!used[w]) {
        used[w] = 1;
        z += wt * rec(b + 1);
        used[w] = 0;
      }
    return z;
  };
  return rec(0);
}

void desk_scale() {
  std::printf("[NOTE] 10  not reproducible at desk scale: nu(lambda) as an analytic function of lambda, the Haldane "
              "relation at lambda != 0 to quantitative precision, full distributional convergence of the height "
              "field\n");
  double worst = 0;
  int n = 0;
  std::mt19937_64 rng(303);
  std::vector<std::pair<CellSpec, int>> cases{{testsupport::two_crossing_spec(), 1}, {testsupport::two_crossing_spec(), 2}};
  for (int i = 0; i < 3; ++i) cases.push_back({testsupport::random_nonplanar(testsupport::random_weights(4, rng), 2, rng), 1});
  for (const auto& [s, L] : cases) {
    auto g = build_graph(s, L, 1.0);
    double d = PolymerEngine(g).partition_order(1), oracle = 0;
    for (int e = 0; e < static_cast<int>(g.edges.size()); ++e)
      if (!g.edges[e].planar()) oracle += g.edges[e].weight * contracted_sum(g, e);
    worst = std::max(worst, rel(d, oracle));
    ++n;
  }
  report("10", worst <= 1e-8, fmt("dZ/dlambda at 0 vs contracted-edge sums: %d cases, max rel %.1e", n, worst));
  std::printf("[LOG]  10  height test-function cumulants at L=32: k3 %.4f, k4 %.4f; plane-regressor slope %.3f +- %.3f\n",
              stiffness.k3, stiffness.k4, stiffness.nu_plane, stiffness.stderr_plane);
}

}  // namespace

int main() {
  guarded("1", planar_oracle);
  guarded("2", nonplanar_oracle);
  guarded("3", sign_table);
  spectral();
  guarded("5", asymptotics);
  guarded("6", ward);
  guarded("7", gauge);
  guarded("8", chi_square);
  guarded("9", gff);
  guarded("10", desk_scale);
  std::printf("%d failed\n", failures);
  return failures == 0 ? 0 : 1;
}
