#include <CLI11.hpp>
#include <dimerlab/enumerate.hpp>
#include <dimerlab/grassmann.hpp>
#include <dimerlab/io.hpp>
#include <dimerlab/kasteleyn.hpp>
#include <dimerlab/mcmc.hpp>
#include <dimerlab/spectral.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>

using namespace dimerlab;
namespace fs = std::filesystem;
using io::json;

namespace {

int exit_code(Errc c) {
  switch (c) {
    case Errc::InvalidSpec:
    case Errc::DimensionMismatch:
    case Errc::CoincidentPoints:
    case Errc::NotLiquidPhase:
      return 1;
    case Errc::TooLarge:
    case Errc::BudgetExceeded:
    case Errc::NumericalFailure:
    case Errc::NewtonDivergence:
    case Errc::QuadratureNotConverged:
    case Errc::InsufficientStatistics:
      return 2;
    default:
      return 3;
  }
}

struct Common {
  std::string spec_path;
  std::string out = "runs";
  int threads = std::max(1u, std::thread::hardware_concurrency());
};

// Run directory and manifest bookkeeping for one invocation.
class Run {
 public:
  Run(const std::string& command, const Common& c, json params) {
    m_.command = command;
    m_.spec_path = c.spec_path;
    m_.spec_hash = io::git_blob_hash(io::read_file(c.spec_path));
    m_.parameters = std::move(params);
    m_.started = io::utc_now();
    dir_ = fs::path(c.out) / m_.hash().substr(0, 12);
  }

  std::string hash() const { return m_.hash(); }
  fs::path file(const std::string& name) {
    fs::create_directories(dir_);
    m_.outputs.push_back(name);
    return dir_ / name;
  }
  void finish() {
    m_.finished = io::utc_now();
    fs::create_directories(dir_);
    std::ofstream(dir_ / "manifest.json") << m_.to_json().dump(2) << "\n";
    std::cout << "run " << dir_.string() << "\n";
  }

 private:
  io::RunManifest m_;
  fs::path dir_;
};

CellSpec checked_spec(const std::string& path) {
  auto s = io::load_spec(path);
  auto v = validate_spec(s);
  if (!v.empty()) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "; " : "") << v[i];
    throw Error(Errc::InvalidSpec, os.str());
  }
  return s;
}

std::vector<double> edge_weights(const TorusGraph& g) {
  std::vector<double> w;
  for (const auto& e : g.edges) w.push_back(e.weight);
  return w;
}

json cjson(cplx z) { return json::array({z.real(), z.imag()}); }

Cell parse_cell(const std::string& s) {
  Cell c{};
  char comma = 0;
  std::istringstream is(s);
  if (!(is >> c[0] >> comma >> c[1]) || comma != ',') throw Error(Errc::InvalidSpec, "expected a pair like 1,0: " + s);
  return c;
}

// ------------------------------------------------------------------------------------------------

int cmd_validate(const Common& c) {
  auto s = io::load_spec(c.spec_path);
  auto v = validate_spec(s);
  if (!v.empty()) {
    for (const auto& m : v) std::cerr << "invalid: " << m << "\n";
    return 1;
  }
  std::cout << "ok: m=" << s.m << ", " << s.types() << " types, " << s.nonplanar.size() << " non-planar edge(s)\n";
  return 0;
}

struct PartitionArgs {
  int L = 1;
  double lambda = 0.0;
  std::string method = "grassmann";
  int max_order = -1;
};

int cmd_partition(const Common& c, const PartitionArgs& a) {
  auto s = checked_spec(c.spec_path);
  auto g = build_graph(s, a.L, a.lambda);
  Run run("partition", c, {{"L", a.L}, {"lambda", a.lambda}, {"method", a.method}, {"max_order", a.max_order}});
  json out{{"L", a.L}, {"lambda", a.lambda}, {"method", a.method}};
  double z = 0.0;
  if (a.method == "kasteleyn") {
    if (a.lambda != 0.0 && !s.nonplanar.empty())
      throw Error(Errc::InvalidSpec, "the kasteleyn method needs lambda = 0 when the spec has non-planar edges");
    z = planar_partition(g);
  } else if (a.method == "grassmann") {
    SectorOptions opt;
    opt.threads = c.threads;
    opt.max_order = a.max_order;
    PolymerEngine eng(g, opt);
    z = eng.partition(edge_weights(g));
    out["terms"] = eng.num_terms();
    json orders = json::array();
    for (int k = 0; k <= static_cast<int>(s.nonplanar.size()) * g.num_cells() && (a.max_order < 0 || k <= a.max_order); ++k)
      orders.push_back(eng.partition_order(k, edge_weights(g)));
    out["by_order"] = orders;
  } else if (a.method == "enumerate") {
    auto r = enumerate(g);
    z = r.total_weight;
    out["matchings"] = r.count;
  } else {
    throw Error(Errc::InvalidSpec, "unknown method " + a.method);
  }
  out["Z"] = z;
  io::write_json(run.file("partition.json"), out, run.hash());
  std::cout.precision(17);
  std::cout << "Z = " << z << "\n";
  run.finish();
  return 0;
}

int cmd_signs(const Common& c, bool check) {
  auto s = checked_spec(c.spec_path);
  Run run("signs", c, {{"check", check}});
  auto secs = cell_sectors(s);
  std::vector<std::string> header{"cell", "J", "S", "eps"};
  if (check) header.push_back("eps_oracle");
  io::CsvWriter csv(run.file("signs.csv"), header, run.hash());
  bool mismatch = false;
  std::cout << "J S eps\n";
  for (const auto& sec : secs) {
    std::vector<std::string> row{"0", std::to_string(sec.J), std::to_string(sec.S), std::to_string(sec.eps)};
    if (check) {
      auto parts = sector_ratio_parts(s, sec.J, sec.S);
      if (parts.restricted == 0.0 && std::abs(parts.minors) < 1e-9) {
        row.push_back("");  // empty on the one-cell torus
      } else {
        int o = epsilon_sign_oracle(s, sec.J, sec.S);
        row.push_back(std::to_string(o));
        mismatch = mismatch || o != sec.eps;
      }
    }
    csv.line(row);
    std::cout << sec.J << " " << sec.S << " " << (sec.eps > 0 ? "+1" : "-1") << "\n";
  }
  run.finish();
  if (mismatch) throw Error(Errc::InvariantViolation, "constructive sign differs from the oracle");
  return 0;
}

int cmd_spectral(const Common& c, int grid) {
  auto s = checked_spec(c.spec_path);
  Run run("spectral", c, {{"grid", grid}});
  BlochMatrix B(s);
  FermiOptions fo;
  fo.grid = grid;
  fo.threads = c.threads;
  json out;
  json zs = json::array();
  auto zeros = scan_zeros(B, fo);
  for (const auto& z : zeros)
    zs.push_back({{"k", {z.k[0], z.k[1]}}, {"mu", cjson(z.value)}, {"grad", {cjson(z.grad[0]), cjson(z.grad[1])}},
                  {"winding", z.winding}});
  out["zeros"] = zs;
  int code = 0;
  try {
    auto f = find_fermi_points(B, fo);
    out["liquid"] = true;
    AsymptoticModel am{B, f};
    for (int om : {1, -1}) {
      std::string key = om > 0 ? "plus" : "minus";
      json amp = json::array();
      for (int ell = 1; ell <= B.size(); ++ell)
        for (int j = 1; j <= 4; ++j)
          amp.push_back({{"ell", ell}, {"j", j}, {"K0", cjson(am.K0(om, ell, j))}, {"H0", cjson(am.H0(om, ell, j))}});
      json U = json::array(), V = json::array();
      for (int i = 0; i < B.size(); ++i) {
        U.push_back(cjson(f.U(om)(i)));
        V.push_back(cjson(f.V(om)(i)));
      }
      out[key] = {{"p", {f.p(om)[0], f.p(om)[1]}}, {"alpha", cjson(f.alpha(om))}, {"beta", cjson(f.beta(om))},
                  {"U", U}, {"V", V}, {"amplitudes", amp}};
    }
    out["adj_residual"] = f.adj_residual;
    out["sv_ratio"] = f.sv_ratio;
    std::cout << "p+ = (" << f.p_plus[0] << ", " << f.p_plus[1] << ")  p- = (" << f.p_minus[0] << ", " << f.p_minus[1]
              << ")\n";
  } catch (const Error& e) {
    if (e.code() != Errc::NotLiquidPhase) throw;
    out["liquid"] = false;
    out["reason"] = e.what();
    if (zeros.size() == 1 && zeros[0].winding == 0) {
      auto nf = node_linear_form(B, zeros[0].k);
      out["node_form"] = {{"alpha", cjson(nf.alpha)}, {"beta", cjson(nf.beta)}};
    }
    std::cerr << e.what() << "\n";
    code = 1;
  }
  io::write_json(run.file("fermi.json"), out, run.hash());
  run.finish();
  return code;
}

int cmd_correlate(const Common& c, const std::string& pairs_path, int grid) {
  auto s = checked_spec(c.spec_path);
  Run run("correlate", c, {{"pairs_hash", io::git_blob_hash(io::read_file(pairs_path))}, {"grid", grid}});
  BlochMatrix B(s);
  auto f = find_fermi_points(B);
  QuadratureOptions qo;
  qo.grid = grid;
  qo.grid_check = grid / 2;
  qo.threads = c.threads;
  InverseKasteleyn kinv(B, f, qo);
  AsymptoticModel am{B, f};
  std::vector<std::pair<PlanarEdgeRef, PlanarEdgeRef>> pairs;
  {
    std::istringstream in(io::read_file(pairs_path));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || std::isalpha(static_cast<unsigned char>(line[0]))) continue;
      for (auto& ch : line)
        if (ch == ',') ch = ' ';
      std::istringstream ls(line);
      PlanarEdgeRef e, g;
      if (!(ls >> e.x[0] >> e.x[1] >> e.ell >> e.j >> g.x[0] >> g.x[1] >> g.ell >> g.j))
        throw Error(Errc::InvalidSpec, "pairs rows need x1,x2,ell,j,y1,y2,ell2,j2: " + line);
      for (auto r : {e, g})
        if (r.ell < 1 || r.ell > B.size() || r.j < 1 || r.j > 4) throw Error(Errc::InvalidSpec, "edge out of range: " + line);
      pairs.push_back({e, g});
    }
  }
  std::vector<Cell> cells;
  for (auto [e, g] : pairs)
    for (auto [a, b] : {std::pair{e, g}, std::pair{g, e}}) {
      const auto& t = B.edge(b.ell, b.j);
      cells.push_back({b.x[0] + t.v[0] - a.x[0], b.x[1] + t.v[1] - a.x[1]});
    }
  kinv.batch(cells);
  io::CsvWriter csv(run.file("correlations.csv"),
                    {"x1", "x2", "ell", "j", "y1", "y2", "ell2", "j2", "distance", "corr", "A", "B", "R"}, run.hash());
  io::CsvWriter plot(run.file("decay.csv"), {"distance", "value", "stderr"}, run.hash());
  for (auto [e, g] : pairs) {
    double corr = correlation_planar(B, kinv, e, g);
    auto [A, Bt] = am.terms(e, g);
    double d = std::hypot(e.x[0] - g.x[0], e.x[1] - g.x[1]);
    csv.row({double(e.x[0]), double(e.x[1]), double(e.ell), double(e.j), double(g.x[0]), double(g.x[1]), double(g.ell),
             double(g.j), d, corr, A, Bt, corr - A - Bt});
    plot.row({d, corr, kinv.max_error()});
  }
  std::cout << pairs.size() << " pairs, quadrature error " << kinv.max_error() << "\n";
  run.finish();
  return 0;
}

int cmd_ward(const Common& c, int L, double lambda) {
  auto s = checked_spec(c.spec_path);
  auto g = build_graph(s, L, lambda);
  Run run("ward", c, {{"L", L}, {"lambda", lambda}});
  SectorOptions opt;
  opt.threads = c.threads;
  io::CsvWriter csv(run.file("ward.csv"), {"ell", "y_white", "z_black", "residual"}, run.hash());
  const int T = s.types();
  double worst = 0.0;
  const Cell x{0, 0}, far{L > 1 ? 1 : 0, 0};
  for (int ell = 1; ell <= T; ++ell) {
    std::vector<std::pair<int, int>> yz{{g.white(x, ell), g.black(x, ell)},
                                        {g.white(x, ell % T + 1), g.black(far, (ell + 2) % T + 1)},
                                        {g.white(far, ell), g.black(x, ell)}};
    for (auto [y, z] : yz) {
      double r = ward_residual(g, x, ell, y, z, opt);
      worst = std::max(worst, r);
      csv.row({double(ell), double(y), double(z), r});
    }
  }
  io::write_json(run.file("ward.json"), {{"L", L}, {"lambda", lambda}, {"max_residual", worst}}, run.hash());
  std::cout << "max residual " << worst << "\n";
  run.finish();
  return 0;
}

struct SampleArgs {
  int L = 16;
  double lambda = 0.0;
  long sweeps = 10000;
  long burn_in = -1;
  long thin = 1;
  std::uint64_t seed = 1;
  int chains = 1;
  int batches = 20;
  int worms = 1;
  std::vector<double> mix{0.5, 0.4, 0.1};
  long trace_every = 10;
  double min_dist = 4.0;
  double max_dist = -1.0;
};

int cmd_sample(const Common& c, const SampleArgs& a) {
  auto s = checked_spec(c.spec_path);
  auto g = build_graph(s, a.L, a.lambda);
  if (a.mix.size() != 3) throw Error(Errc::InvalidSpec, "--mix takes three probabilities");
  ChainConfig cfg;
  cfg.seed = a.seed;
  cfg.sweeps = a.sweeps;
  cfg.burn_in = a.burn_in >= 0 ? a.burn_in : a.sweeps / 10;
  cfg.thin = a.thin;
  cfg.worms_per_sweep = a.worms;
  cfg.move_mix = {a.mix[0], a.mix[1], a.mix[2]};
  cfg.check();
  StiffnessOptions so;
  so.batches = a.batches;
  so.chains = a.chains;
  so.threads = c.threads;
  so.trace_every = a.trace_every;
  so.min_dist = a.min_dist;
  so.max_dist = a.max_dist;
  Run run("sample", c,
          {{"L", a.L}, {"lambda", a.lambda}, {"sweeps", a.sweeps}, {"burn_in", cfg.burn_in}, {"thin", a.thin},
           {"seed", a.seed}, {"chains", a.chains}, {"batches", a.batches}, {"worms", a.worms}, {"mix", a.mix},
           {"trace_every", a.trace_every}, {"min_dist", a.min_dist}, {"max_dist", a.max_dist}});
  auto phi = height_form(BlochMatrix(s));
  auto r = estimate_stiffness(g, cfg, phi, so);
  for (int ch = 0; ch < a.chains; ++ch) {
    std::vector<std::string> header{"sweep", "log_weight"};
    for (auto p : r.probes) header.push_back("h_" + std::to_string(p[0]) + "_" + std::to_string(p[1]));
    io::CsvWriter csv(run.file("chain_" + std::to_string(ch) + ".csv"), header, run.hash());
    for (const auto& row : r.traces[ch]) csv.row(row);
  }
  io::CsvWriter fit(run.file("stiffness_fit.csv"),
                    {"d1", "d2", "x_plane", "x_torus", "var", "var_stderr", "var_periodic", "var_periodic_stderr"},
                    run.hash());
  io::CsvWriter plot(run.file("height_variance.csv"), {"distance", "value", "stderr"}, run.hash());
  for (std::size_t i = 0; i < r.displacements.size(); ++i) {
    auto d = r.displacements[i];
    fit.row({double(d[0]), double(d[1]), r.x_plane[i], r.x_torus[i], r.variance[i], r.variance_err[i],
             r.variance_periodic[i], r.variance_periodic_err[i]});
    plot.row({std::abs(phi.phi(d[0], d[1])), r.variance_periodic[i], r.variance_periodic_err[i]});
  }
  json acc;
  const char* names[] = {"face", "swap", "loop", "worm"};
  for (int t = 0; t < 4; ++t) acc[names[t]] = r.stats.rate(t);
  json summary{{"nu", r.nu},
               {"stderr", r.stderr_nu},
               {"nu_plane", r.nu_plane},
               {"stderr_plane", r.stderr_plane},
               {"samples", r.samples},
               {"batches", r.batches},
               {"acceptance", acc},
               {"worm_steps_per_sweep", double(r.stats.worm_steps) / (double(a.sweeps) * a.chains)},
               {"cumulants", {{"k3", r.k3}, {"k4", r.k4}}},
               {"phi", {{"alpha", cjson(phi.alpha)}, {"beta", cjson(phi.beta)}}}};
  io::write_json(run.file("summary.json"), summary, run.hash());
  std::cout << "nu = " << r.nu << " +- " << r.stderr_nu << " (plane " << r.nu_plane << " +- " << r.stderr_plane << ")\n";
  run.finish();
  return 0;
}

struct HeightCovArgs {
  int L = 2;
  double lambda = 0.0;
  std::string method = "engine";
  std::string dir = "1,0";
  int max_distance = -1;
  std::vector<int> points;
  long sweeps = 20000;
  std::uint64_t seed = 1;
};

int cmd_height_cov(const Common& c, const HeightCovArgs& a) {
  auto s = checked_spec(c.spec_path);
  auto g = build_graph(s, a.L, a.lambda);
  Run run("height-cov", c,
          {{"L", a.L}, {"lambda", a.lambda}, {"method", a.method}, {"dir", a.dir}, {"max_distance", a.max_distance},
           {"points", a.points}, {"sweeps", a.sweeps}, {"seed", a.seed}});
  SectorOptions so;
  so.threads = c.threads;
  ChainConfig cfg;
  cfg.seed = a.seed;
  cfg.sweeps = a.sweeps;
  cfg.burn_in = a.sweeps / 10;
  auto cov = [&](Cell p, Cell q, Cell r, Cell t) -> std::pair<double, double> {
    if (a.method == "engine") return {engine_height_covariance(g, p, q, r, t, so), 0.0};
    if (a.method == "enumerate") return {exact_height_covariance(g, p, q, r, t), 0.0};
    if (a.method == "mc") {
      auto e = mc_height_covariance(g, cfg, p, q, r, t);
      return {e.value, e.stderr_value};
    }
    throw Error(Errc::InvalidSpec, "unknown method " + a.method);
  };
  if (!a.points.empty()) {
    if (a.points.size() != 8) throw Error(Errc::InvalidSpec, "--points takes eight integers a1 a2 b1 b2 c1 c2 d1 d2");
    Cell p{a.points[0], a.points[1]}, q{a.points[2], a.points[3]}, r{a.points[4], a.points[5]}, t{a.points[6], a.points[7]};
    auto [v, e] = cov(p, q, r, t);
    io::write_json(run.file("height_cov.json"), {{"value", v}, {"stderr", e}, {"points", a.points}}, run.hash());
    std::cout << "cov = " << v << " +- " << e << "\n";
  } else {
    Cell d = parse_cell(a.dir);
    const int R = a.max_distance > 0 ? a.max_distance : a.L;
    io::CsvWriter plot(run.file("height_cov.csv"), {"distance", "value", "stderr"}, run.hash());
    for (int k = 1; k <= R; ++k) {
      Cell p{k * d[0], k * d[1]};
      auto [v, e] = cov(p, {0, 0}, p, {0, 0});
      plot.row({k * std::hypot(d[0], d[1]), v, e});
    }
  }
  run.finish();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dimer models on periodic bipartite graphs with non-planar edges"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool outputs = true) {
    sub->add_option("spec", common.spec_path, "graph spec (JSON)")->required()->check(CLI::ExistingFile);
    if (outputs) {
      sub->add_option("--out", common.out, "root directory for run outputs");
      sub->add_option("--threads", common.threads, "worker threads")->check(CLI::PositiveNumber);
    }
  };

  auto* validate = app.add_subcommand("validate", "check a spec");
  add_common(validate, false);

  PartitionArgs pa;
  auto* partition = app.add_subcommand("partition", "partition function on the L x L torus");
  add_common(partition);
  partition->add_option("--L", pa.L)->check(CLI::PositiveNumber);
  partition->add_option("--lambda", pa.lambda);
  partition->add_option("--method", pa.method)->check(CLI::IsMember({"kasteleyn", "grassmann", "enumerate"}));
  partition->add_option("--max-order", pa.max_order, "truncate at this many non-planar edges");

  bool check_signs = true;
  auto* signs = app.add_subcommand("signs", "sector sign table of the cell");
  add_common(signs);
  signs->add_flag("--check,!--no-check", check_signs, "compare with the determinant-ratio oracle");

  int spectral_grid = 512;
  auto* spectral = app.add_subcommand("spectral", "Fermi points and amplitudes");
  add_common(spectral);
  spectral->add_option("--grid", spectral_grid);

  std::string pairs_path;
  int corr_grid = 512;
  auto* correlate = app.add_subcommand("correlate", "infinite-volume dimer-dimer correlations");
  add_common(correlate);
  correlate->add_option("--pairs", pairs_path, "CSV rows x1,x2,ell,j,y1,y2,ell2,j2")->required()->check(CLI::ExistingFile);
  correlate->add_option("--grid", corr_grid);

  int wL = 1;
  double wlambda = 0.0;
  auto* ward = app.add_subcommand("ward", "finite-volume Ward identity residuals");
  add_common(ward);
  ward->add_option("--L", wL)->check(CLI::PositiveNumber);
  ward->add_option("--lambda", wlambda);

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample", "Monte Carlo heights and stiffness");
  add_common(sample);
  sample->add_option("--L", sa.L)->check(CLI::PositiveNumber);
  sample->add_option("--lambda", sa.lambda);
  sample->add_option("--sweeps", sa.sweeps);
  sample->add_option("--burn-in", sa.burn_in, "default: a tenth of the sweeps");
  sample->add_option("--thin", sa.thin);
  sample->add_option("--seed", sa.seed);
  sample->add_option("--chains", sa.chains)->check(CLI::PositiveNumber);
  sample->add_option("--batches", sa.batches);
  sample->add_option("--worms", sa.worms, "worm updates per sweep");
  sample->add_option("--mix", sa.mix, "face,swap,loop probabilities")->delimiter(',');
  sample->add_option("--trace-every", sa.trace_every);
  sample->add_option("--min-dist", sa.min_dist);
  sample->add_option("--max-dist", sa.max_dist, "default max(L/4, min(L/2, 2 min-dist))");

  HeightCovArgs ha;
  auto* hcov = app.add_subcommand("height-cov", "height covariances");
  add_common(hcov);
  hcov->add_option("--L", ha.L)->check(CLI::PositiveNumber);
  hcov->add_option("--lambda", ha.lambda);
  hcov->add_option("--method", ha.method)->check(CLI::IsMember({"engine", "enumerate", "mc"}));
  hcov->add_option("--dir", ha.dir, "direction of the variance profile, e.g. 1,0");
  hcov->add_option("--max-distance", ha.max_distance);
  hcov->add_option("--points", ha.points, "a1,a2,b1,b2,c1,c2,d1,d2 for Cov(h(a)-h(b), h(c)-h(d))")->delimiter(',');
  hcov->add_option("--sweeps", ha.sweeps);
  hcov->add_option("--seed", ha.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int r = app.exit(e);
    return r == 0 ? 0 : 1;
  }

  try {
    if (*validate) return cmd_validate(common);
    if (*partition) return cmd_partition(common, pa);
    if (*signs) return cmd_signs(common, check_signs);
    if (*spectral) return cmd_spectral(common, spectral_grid);
    if (*correlate) return cmd_correlate(common, pairs_path, corr_grid);
    if (*ward) return cmd_ward(common, wL, wlambda);
    if (*sample) return cmd_sample(common, sa);
    if (*hcov) return cmd_height_cov(common, ha);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
