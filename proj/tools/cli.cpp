#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>
#include <optional>
#include <sstream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "slowfast/harness.hpp"
#include "slowfast/io.hpp"

namespace slowfast::cli {
namespace {

using nlohmann::json;

struct Common {
  std::string system = "L1";
  double eps = 0.1;
  int grid = 0;
  int m = 64;
  double dt = 0.01;
  double horizon = 0.0;
  int derivative = 0;
  int jobs = 1;
  unsigned seed = 1;
  std::string out;
  std::string certificate = "auto";
  std::vector<std::string> overrides;
  std::vector<double> lower, upper;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--system", c.system, "L1, Q1, L2, VDP-cut or NF1");
  cmd->add_option("--eps", c.eps, "timescale ratio")->check(CLI::NonNegativeNumber);
  cmd->add_option("--grid", c.grid, "slow grid points per axis (0 = example default)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--m", c.m, "NF1 quadrature nodes")->check(CLI::PositiveNumber);
  cmd->add_option("--dt", c.dt, "RK4 step")->check(CLI::PositiveNumber);
  cmd->add_option("--horizon", c.horizon, "backward horizon (0 = truncation rule)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--jobs", c.jobs, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "sampling seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--certificate", c.certificate, "auto, closed-form or sampled")
      ->check(CLI::IsMember({"auto", "closed-form", "sampled"}));
  cmd->add_option("--override", c.overrides, "certificate field override NAME=VALUE (repeatable)");
  cmd->add_option("--lower", c.lower, "slow box lower corner")->delimiter(',');
  cmd->add_option("--upper", c.upper, "slow box upper corner")->delimiter(',');
}

Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

std::map<std::string, double> parse_overrides(const std::vector<std::string>& items) {
  std::map<std::string, double> out;
  const auto& names = ConstantsCertificate::field_names();
  for (const auto& s : items) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail(ErrorCode::usage, "override '" + s + "' is not NAME=VALUE");
    const std::string key = s.substr(0, eq);
    if (std::find(names.begin(), names.end(), key) == names.end())
      fail(ErrorCode::usage, "unknown certificate field '" + key + "'");
    try {
      std::size_t used = 0;
      const double v = std::stod(s.substr(eq + 1), &used);
      if (used != s.size() - eq - 1) throw std::invalid_argument(s);
      out[key] = v;
    } catch (const std::logic_error&) {
      fail(ErrorCode::usage, "override '" + s + "' has a non-numeric value");
    }
  }
  return out;
}

ExampleParams params(const Common& c) {
  ExampleParams p;
  p.eps = c.eps;
  p.grid = c.grid;
  p.m = c.m;
  if (!c.lower.empty()) p.lower = to_vec(c.lower);
  if (!c.upper.empty()) p.upper = to_vec(c.upper);
  return p;
}

LPConfig lp_config(const Example& ex, const Common& c) {
  LPConfig cfg = default_lp_config(ex, c.dt, c.jobs);
  cfg.horizon = c.horizon;
  return cfg;
}

void write_or_print(const Common& c, const std::string& file, const std::string& content, std::ostream& out) {
  if (c.out.empty()) {
    out << content;
  } else {
    atomic_write(c.out + "/" + file, content);
    spdlog::info("wrote {}/{}", c.out, file);
  }
}

std::string field_csv(const FastField& h, const OperatorField* Dh, const OperatorField* D2h) {
  const GridDomain& dom = h.domain();
  const int n = dom.dim();
  const int m = static_cast<int>(h.at(0).size());
  std::vector<std::string> header;
  for (int k = 0; k < n; ++k) header.push_back("y" + std::to_string(k));
  for (int i = 0; i < m; ++i) header.push_back("h" + std::to_string(i));
  if (Dh)
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < n; ++k) header.push_back("Dh" + std::to_string(i) + "_" + std::to_string(k));
  if (D2h)
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < n * n; ++k) header.push_back("D2h" + std::to_string(i) + "_" + std::to_string(k));
  std::vector<std::vector<double>> rows;
  for (std::size_t j = 0; j < dom.size(); ++j) {
    std::vector<double> r;
    const Vec y = dom.node(j);
    for (int k = 0; k < n; ++k) r.push_back(y(k));
    for (int i = 0; i < m; ++i) r.push_back(h.at(j)(i));
    if (Dh)
      for (int i = 0; i < m; ++i)
        for (int k = 0; k < n; ++k) r.push_back(Dh->at(j)(i, k));
    if (D2h)
      for (int i = 0; i < m; ++i)
        for (int k = 0; k < n * n; ++k) r.push_back(D2h->at(j)(i, k));
    rows.push_back(std::move(r));
  }
  return to_csv(header, rows);
}

// --- subcommands -------------------------------------------------------------

int cmd_certify(const Common& c, std::ostream& out) {
  const Example ex = make_example(c.system, params(c));
  const ConstantsCertificate cert = build_certificate(ex, c.certificate, parse_overrides(c.overrides), c.seed);
  const auto rows = hypothesis_table(cert, &ex.sys);
  json doc = {{"system", to_string(ex.id)}, {"eps", c.eps}, {"seed", c.seed}, {"certificate", cert.to_json()}};
  if (ex.id == ExampleId::NF1 || ex.id == ExampleId::VDP) {
    const FastField h0 = newton_branch(ex.sys, ex.grid, ex.newton_seed);
    const SpectralGap gap = spectral_gap_check(ex.sys, h0, 0.5);
    doc["spectral_gap"] = {{"max_real", gap.max_real}, {"gap", gap.gap}, {"margin", gap.margin}, {"pass", gap.pass}};
  }
  out << format_hypothesis_table(rows);
  write_or_print(c, "certificate.json", doc.dump(2) + "\n", out);
  if (!cert.existence_ok()) {
    spdlog::error("certificate infeasible: existence inequality fails");
    return exit_code(ErrorCode::infeasible);
  }
  for (const auto& r : rows)
    if (r.required && r.verdict != Verdict::pass) return exit_code(ErrorCode::infeasible);
  return 0;
}

int cmd_slow_manifold(const Common& c, std::ostream& out) {
  const Example ex = make_example(c.system, params(c));
  const ConstantsCertificate cert = build_certificate(ex, c.certificate, parse_overrides(c.overrides), c.seed);
  const LPConfig cfg = lp_config(ex, c);
  spdlog::info("lp_solve {} on {} nodes, horizon {}", to_string(ex.id), ex.grid.size(), cfg.resolved_horizon(cert));
  const LPResult h = lp_solve(ex.sys, cert, cfg);
  json report = {{"system", to_string(ex.id)},
                 {"eps", c.eps},
                 {"certificate", cert.to_json()},
                 {"lp", h.report.to_json()},
                 {"h_sup", sup_norm(h.h, ex.sys.norm)},
                 {"h_bound", cert.h0_bound()}};
  std::optional<DhResult> dh;
  std::optional<D2hResult> d2h;
  if (c.derivative >= 1) {
    dh = dh_solve(ex.sys, h.h, cert, cfg);
    report["dh"] = dh->report.to_json();
    report["dh_fd_error"] = dh->fd_error;
  }
  if (c.derivative >= 2) {
    d2h = d2h_solve(ex.sys, h.h, dh->Dh, cert, cfg);
    report["d2h"] = d2h->report.to_json();
    report["d2h_fd_error"] = d2h->fd_error;
  }
  if (c.eps == 0.0) {
    const FastField nb = newton_branch(ex.sys, ex.grid, ex.newton_seed);
    report["newton_branch_distance"] = sup_distance(h.h, nb, ex.sys.norm);
  }
  write_or_print(c, "h.csv", field_csv(h.h, dh ? &dh->Dh : nullptr, d2h ? &d2h->D2h : nullptr), out);
  if (!c.out.empty()) atomic_write(c.out + "/report.json", report.dump(2) + "\n");
  const bool ok = h.report.converged && (!dh || dh->report.converged) && (!d2h || d2h->report.converged);
  return ok ? 0 : exit_code(ErrorCode::divergence);
}

int cmd_reduce(const Common& c, const std::vector<double>& point, double t_max, std::ostream& out) {
  const Example ex = make_example(c.system, params(c));
  const ConstantsCertificate cert = build_certificate(ex, c.certificate, parse_overrides(c.overrides), c.seed);
  const LPConfig cfg = lp_config(ex, c);
  Vec xi = ex.query_xi, eta = ex.query_eta;
  if (!point.empty()) {
    if (static_cast<int>(point.size()) != ex.sys.m + ex.sys.n)
      fail(ErrorCode::usage, "--point needs " + std::to_string(ex.sys.m + ex.sys.n) + " comma-separated values");
    xi = to_vec(std::vector<double>(point.begin(), point.begin() + ex.sys.m));
    eta = to_vec(std::vector<double>(point.begin() + ex.sys.m, point.end()));
  }
  const LPResult h = lp_solve(ex.sys, cert, cfg);
  const DhResult dh = dh_solve(ex.sys, h.h, cert, cfg);
  const StraightenedSystem ss = straighten(ex.sys, h, dh, cert);
  ReductionConfig rc;
  rc.integ.dt = c.dt;
  const ReductionResult r = q_along_orbit(ss, xi, eta, rc);
  json doc = r.to_json();
  doc["system"] = to_string(ex.id);
  doc["e_bound"] = ss.e_bound();
  const SemiconjugacyReport sc = semiconjugacy_residual(ss, r, t_max, rc);
  doc["semiconjugacy_residual"] = sc.max_residual;
  const Decomposition d = decompose_orbit(ss, r, t_max, rc);
  doc["decomposition"] = {{"C_fit", d.C_fit}, {"bound_ok", d.bound_ok}, {"reconstruction_error", d.reconstruction_error}};
  if (c.out.empty()) {
    out << doc.dump(2) << "\n";
  } else {
    atomic_write(c.out + "/reduction.json", doc.dump(2) + "\n");
    atomic_write(c.out + "/decomposition.csv", decomposition_csv(d));
  }
  return r.report.converged ? 0 : exit_code(ErrorCode::contraction);
}

int cmd_run(const Common& c, const std::string& scenario_path, bool system_set, std::ostream& out) {
  ScenarioSpec spec;
  if (!scenario_path.empty()) {
    spec = load_scenario(scenario_path);
  } else {
    spec.name = std::string(c.system) + "-default";
    spec.system = c.system;
    spec.eps = {c.eps};
    spec.grid = c.grid;
    spec.m = c.m;
    spec.integ.dt = c.dt;
    spec.horizon = c.horizon;
    spec.derivative = std::max(c.derivative, 1);
    spec.certificate = c.certificate;
    spec.overrides = parse_overrides(c.overrides);
  }
  // Command-line values win over the scenario file where given explicitly.
  if (system_set && !scenario_path.empty()) spec.system = c.system;
  if (!c.out.empty()) spec.out = c.out;
  spec.seed = c.seed != 1 ? c.seed : spec.seed;
  spec.jobs = c.jobs != 1 ? c.jobs : spec.jobs;
  const ScenarioReport rep = run_scenario(spec);
  out << rep.payload.dump(2) << "\n";
  if (rep.first_error) return exit_code(*rep.first_error);
  return rep.passed ? 0 : 4;
}

void configure_logging() {
  static bool done = false;
  if (done) return;
  done = true;
  auto logger = spdlog::stderr_color_mt("slowfast");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("SLOWFAST_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  configure_logging();
  CLI::App app{"slow manifolds and reduction maps of fast-slow systems", "slowfast"};
  app.require_subcommand(1);
  Common common;
  std::vector<double> point;
  double t_max = 10.0;
  std::string scenario;

  auto* certify = app.add_subcommand("certify", "estimate constants and print the hypothesis table");
  add_common(certify, common);
  auto* manifold = app.add_subcommand("slow-manifold", "compute h (and derivatives) on the slow grid");
  add_common(manifold, common);
  manifold->add_option("--derivative", common.derivative, "0, 1 or 2")->check(CLI::Range(0, 2));
  auto* reduce = app.add_subcommand("reduce", "reduction map at one point");
  add_common(reduce, common);
  reduce->add_option("--point", point, "xi components then eta components")->delimiter(',');
  reduce->add_option("--t-max", t_max, "length of the semiconjugacy check")->check(CLI::PositiveNumber);
  auto* runcmd = app.add_subcommand("run", "run a scenario and print its report");
  add_common(runcmd, common);
  runcmd->add_option("--scenario", scenario, "scenario JSON file");
  runcmd->add_option("--derivative", common.derivative, "0, 1 or 2")->check(CLI::Range(0, 2));

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (certify->parsed()) return cmd_certify(common, out);
    if (manifold->parsed()) return cmd_slow_manifold(common, out);
    if (reduce->parsed()) return cmd_reduce(common, point, t_max, out);
    return cmd_run(common, scenario, runcmd->count("--system") > 0, out);
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace slowfast::cli
