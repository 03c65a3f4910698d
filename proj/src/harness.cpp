#include "slowfast/harness.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "slowfast/io.hpp"

namespace slowfast {

const char* to_string(ExampleId id) {
  switch (id) {
    case ExampleId::L1: return "L1";
    case ExampleId::Q1: return "Q1";
    case ExampleId::L2: return "L2";
    case ExampleId::VDP: return "VDP-cut";
    case ExampleId::NF1: return "NF1";
  }
  return "?";
}

ExampleId example_from_string(const std::string& s) {
  if (s == "L1") return ExampleId::L1;
  if (s == "Q1") return ExampleId::Q1;
  if (s == "L2") return ExampleId::L2;
  if (s == "VDP-cut" || s == "VDP") return ExampleId::VDP;
  if (s == "NF1") return ExampleId::NF1;
  fail(ErrorCode::usage, "unknown system '" + s + "' (expected L1, Q1, L2, VDP-cut or NF1)");
}

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }
Mat m1(double a) { return Mat::Constant(1, 1, a); }
Mat row(double a, double b) {
  Mat r(1, 2);
  r << a, b;
  return r;
}

GridDomain box(const ExampleParams& p, double lo, double hi, int default_points) {
  Vec l = p.lower.value_or(v1(lo));
  Vec u = p.upper.value_or(v1(hi));
  return GridDomain(l, u, p.grid > 0 ? p.grid : default_points);
}

double max_abs(const GridDomain& g, int axis = 0) {
  return std::max(std::abs(g.lower()(axis)), std::abs(g.upper()(axis)));
}

ConstantsCertificate closed(double K, double mu, double M0, double M1x, double M1y, double N0, double N1) {
  ConstantsCertificate c;
  const std::pair<const char*, double> vals[] = {{"K", K},     {"mu", mu}, {"M0", M0}, {"M1x", M1x},
                                                 {"M1y", M1y}, {"N0", N0}, {"N1", N1}};
  for (const auto& [k, v] : vals) c.set(k, v, Provenance::closed_form);
  complete_budgets(c);
  return c;
}

Example make_L1(const ExampleParams& p) {
  const double eps = p.eps;
  Example ex;
  ex.id = ExampleId::L1;
  FastSlowSystem& s = ex.sys;
  s.name = "L1";
  s.m = s.n = 1;
  s.norm = FastNorm::euclidean();
  s.eps = eps;
  s.F = [](const Vec& x, const Vec& y) { return Vec(-x + y); };
  s.g = [eps](const Vec&, const Vec&) { return v1(eps); };
  s.A0 = [](const Vec&) { return m1(-1.0); };
  s.DF = [](const Vec&, const Vec&) { return row(-1.0, 1.0); };
  s.Dg = [](const Vec&, const Vec&) { return row(0.0, 0.0); };
  s.D2F = [](const Vec&, const Vec&) { return std::vector<Mat>{Mat::Zero(2, 2)}; };
  s.D2g = [](const Vec&, const Vec&) { return std::vector<Mat>{Mat::Zero(2, 2)}; };
  s.family = EpsFamily{[](const Vec& x, const Vec& y, double) { return Vec(-x + y); },
                       [](const Vec&, const Vec&, double) { return v1(1.0); },
                       [](const Vec&, double) { return m1(-1.0); }};
  ex.grid = box(p, -0.5, 0.5, 101);
  ex.closed_form = closed(1.0, 1.0, max_abs(ex.grid), 0.0, 1.0, eps, 0.0);
  ex.h_exact = [eps](const Vec& y) { return v1(y(0) - eps); };
  ex.Dh_exact = [](const Vec&) { return m1(1.0); };
  ex.D2h_exact = [](const Vec&) { return m1(0.0); };
  ex.P_exact = [](const Vec&, const Vec& eta) { return eta; };
  ex.h_tol = 1e-6;
  ex.query_xi = v1(0.5);
  ex.query_eta = v1(0.0);
  ex.newton_seed = v1(0.0);
  return ex;
}

Example make_Q1(const ExampleParams& p) {
  const double eps = p.eps;
  Example ex;
  ex.id = ExampleId::Q1;
  FastSlowSystem& s = ex.sys;
  s.name = "Q1";
  s.m = s.n = 1;
  s.norm = FastNorm::euclidean();
  s.eps = eps;
  s.F = [](const Vec& x, const Vec& y) { return Vec(-x + y.cwiseProduct(y)); };
  s.g = [eps](const Vec&, const Vec&) { return v1(eps); };
  s.A0 = [](const Vec&) { return m1(-1.0); };
  s.DF = [](const Vec&, const Vec& y) { return row(-1.0, 2.0 * y(0)); };
  s.Dg = [](const Vec&, const Vec&) { return row(0.0, 0.0); };
  s.D2F = [](const Vec&, const Vec&) {
    Mat H = Mat::Zero(2, 2);
    H(1, 1) = 2.0;
    return std::vector<Mat>{H};
  };
  s.D2g = [](const Vec&, const Vec&) { return std::vector<Mat>{Mat::Zero(2, 2)}; };
  s.family = EpsFamily{[](const Vec& x, const Vec& y, double) { return Vec(-x + y.cwiseProduct(y)); },
                       [](const Vec&, const Vec&, double) { return v1(1.0); },
                       [](const Vec&, double) { return m1(-1.0); }};
  ex.grid = box(p, -1.0, 1.0, 101);
  const double ym = max_abs(ex.grid);
  ex.closed_form = closed(1.0, 1.0, ym * ym, 0.0, 2.0 * ym, eps, 0.0);
  ex.h_exact = [eps](const Vec& y) { return v1(y(0) * y(0) - 2.0 * eps * y(0) + 2.0 * eps * eps); };
  ex.Dh_exact = [eps](const Vec& y) { return m1(2.0 * y(0) - 2.0 * eps); };
  ex.D2h_exact = [](const Vec&) { return m1(2.0); };
  ex.P_exact = [](const Vec&, const Vec& eta) { return eta; };
  ex.h_tol = 1e-5;
  ex.query_xi = v1(0.5);
  ex.query_eta = v1(0.2);
  ex.newton_seed = v1(0.0);
  return ex;
}

Example make_L2(const ExampleParams& p) {
  const double eps = p.eps;
  Example ex;
  ex.id = ExampleId::L2;
  FastSlowSystem& s = ex.sys;
  s.name = "L2";
  s.m = s.n = 1;
  s.norm = FastNorm::euclidean();
  s.eps = eps;
  s.F = [](const Vec& x, const Vec&) { return Vec(-x); };
  s.g = [eps](const Vec& x, const Vec&) { return Vec(eps * x); };
  s.A0 = [](const Vec&) { return m1(-1.0); };
  s.DF = [](const Vec&, const Vec&) { return row(-1.0, 0.0); };
  s.Dg = [eps](const Vec&, const Vec&) { return row(eps, 0.0); };
  s.D2F = [](const Vec&, const Vec&) { return std::vector<Mat>{Mat::Zero(2, 2)}; };
  s.D2g = [](const Vec&, const Vec&) { return std::vector<Mat>{Mat::Zero(2, 2)}; };
  s.family = EpsFamily{[](const Vec& x, const Vec&, double) { return Vec(-x); },
                       [](const Vec& x, const Vec&, double) { return Vec(x); },
                       [](const Vec&, double) { return m1(-1.0); }};
  ex.grid = box(p, -1.0, 1.0, 21);
  // N0 is quoted for |x| <= 1.
  ex.closed_form = closed(1.0, 1.0, 0.0, 0.0, 0.0, eps, eps);
  ex.h_exact = [](const Vec&) { return v1(0.0); };
  ex.Dh_exact = [](const Vec&) { return m1(0.0); };
  ex.D2h_exact = [](const Vec&) { return m1(0.0); };
  ex.P_exact = [eps](const Vec& xi, const Vec& eta) { return Vec(eta + eps * xi); };
  ex.h_tol = 1e-8;
  ex.query_xi = v1(1.0);
  ex.query_eta = v1(0.0);
  ex.newton_seed = v1(0.0);
  return ex;
}

Example make_vdp(const ExampleParams& p) {
  const double eps = p.eps;
  // Slow equilibrium on the attracting branch at y = 1.25, so slow orbits stay in the box.
  const double a = 2.1737383920443665;
  FastSlowSystem base;
  base.name = "VDP";
  base.m = base.n = 1;
  base.norm = FastNorm::euclidean();
  base.eps = eps;
  base.F = [](const Vec& x, const Vec& y) { return v1(y(0) - x(0) * x(0) * x(0) / 3.0 + x(0)); };
  base.g = [eps, a](const Vec& x, const Vec&) { return v1(eps * (a - x(0))); };
  base.A0 = [](const Vec&) { return m1(1.0); };
  base.DF = [](const Vec& x, const Vec&) { return row(1.0 - x(0) * x(0), 1.0); };
  base.Dg = [eps](const Vec&, const Vec&) { return row(-eps, 0.0); };
  base.family = EpsFamily{[](const Vec& x, const Vec& y, double) { return v1(y(0) - x(0) * x(0) * x(0) / 3.0 + x(0)); },
                          [a](const Vec& x, const Vec&, double) { return v1(a - x(0)); },
                          [](const Vec&, double) { return m1(1.0); }};

  Example ex;
  ex.id = ExampleId::VDP;
  ex.grid = box(p, 1.0, 1.5, 21);
  const FastField branch = newton_branch(base, ex.grid, v1(2.0));
  // Outer linear part: average branch linearization over the grid.
  double a_mean = 0.0;
  for (std::size_t i = 0; i < branch.size(); ++i) {
    const double xb = branch.at(i)(0);
    const double jx = 1.0 - xb * xb;
    const double dh = -1.0 / jx;
    a_mean += jx + dh * eps;
  }
  a_mean /= static_cast<double>(branch.size());
  ex.sys = localize(base, branch, 0.05, CutoffSpec{0.2, 1.0}, 1e-8, m1(a_mean));
  ex.sys.name = "VDP-cut";
  ex.h_tol = 0.0;
  ex.sample_radius = 0.3;
  ex.query_xi = v1(0.02);
  ex.query_eta = v1(1.4);
  ex.newton_seed = v1(0.0);
  return ex;
}

Example make_nf1(const ExampleParams& p) {
  const int m = p.m;
  if (m < 2) fail(ErrorCode::argument, "NF1 needs m >= 2");
  const double eps = p.eps;
  Example ex;
  ex.id = ExampleId::NF1;
  ex.node_weight = 2.0 / m;
  ex.nodes.resize(m);
  for (int i = 0; i < m; ++i) ex.nodes(i) = -1.0 + (i + 0.5) * ex.node_weight;
  auto W = std::make_shared<const Mat>(nf1_kernel(ex.nodes, ex.node_weight));
  auto input = std::make_shared<Vec>(m);
  for (int i = 0; i < m; ++i) (*input)(i) = std::cos(M_PI * ex.nodes(i) / 2.0);

  FastSlowSystem& s = ex.sys;
  s.name = "NF1";
  s.m = m;
  s.n = 1;
  s.norm = FastNorm::sup();
  s.eps = eps;
  s.a0_is_linearization = false;
  auto field = [W, input](const Vec& u, const Vec& y) {
    return Vec(-u + y(0) * (*W * u.array().tanh().matrix()) + *input);
  };
  s.F = field;
  s.g = [eps](const Vec&, const Vec&) { return v1(eps); };
  s.A0 = [m](const Vec&) { return Mat(-Mat::Identity(m, m)); };
  s.DF = [W, m](const Vec& u, const Vec& y) {
    Mat J(m, m + 1);
    const Vec sech2 = (1.0 - u.array().tanh().square()).matrix();
    J.leftCols(m) = -Mat::Identity(m, m) + y(0) * (*W) * sech2.asDiagonal();
    J.col(m) = *W * u.array().tanh().matrix();
    return J;
  };
  s.Dg = [m](const Vec&, const Vec&) { return Mat(Mat::Zero(1, m + 1)); };
  s.family = EpsFamily{[field](const Vec& u, const Vec& y, double) { return field(u, y); },
                       [](const Vec&, const Vec&, double) { return v1(1.0); },
                       [m](const Vec&, double) { return Mat(-Mat::Identity(m, m)); }};
  ex.grid = box(p, 0.5, 1.0, 21);
  const double beta = W->cwiseAbs().rowwise().sum().maxCoeff();
  const double ymax = max_abs(ex.grid);
  ex.closed_form = closed(1.0, 1.0, ymax * beta + input->cwiseAbs().maxCoeff(), ymax * beta, beta, eps, 0.0);
  ex.h_tol = 0.0;
  ex.query_xi = Vec::Constant(m, 0.1);
  ex.query_eta = v1(0.75);
  ex.newton_seed = *input;
  return ex;
}

}  // namespace

Mat nf1_kernel(const Vec& nodes, double weight) {
  const double c = 0.25, ell = 0.5;
  const int m = static_cast<int>(nodes.size());
  Mat W(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const double d = nodes(i) - nodes(j);
      W(i, j) = c * std::exp(-d * d / (2.0 * ell * ell)) * weight;
    }
  return W;
}

Example make_example(ExampleId id, const ExampleParams& p) {
  if (!std::isfinite(p.eps) || p.eps < 0.0) fail(ErrorCode::argument, "eps must be finite and >= 0");
  switch (id) {
    case ExampleId::L1: return make_L1(p);
    case ExampleId::Q1: return make_Q1(p);
    case ExampleId::L2: return make_L2(p);
    case ExampleId::VDP: return make_vdp(p);
    case ExampleId::NF1: return make_nf1(p);
  }
  fail(ErrorCode::usage, "unknown example");
}

Example make_example(const std::string& name, const ExampleParams& p) {
  return make_example(example_from_string(name), p);
}

ConstantsCertificate build_certificate(const Example& ex, const std::string& source,
                                       const std::map<std::string, double>& overrides, unsigned seed) {
  ConstantsCertificate cert;
  const bool want_closed = source == "closed-form" || (source == "auto" && ex.closed_form);
  if (source != "auto" && source != "closed-form" && source != "sampled")
    fail(ErrorCode::usage, "certificate source must be auto, closed-form or sampled");
  if (want_closed) {
    if (!ex.closed_form) fail(ErrorCode::usage, std::string(to_string(ex.id)) + " has no closed-form certificate");
    cert = *ex.closed_form;
  } else {
    LipschitzOptions lo;
    lo.seed = seed;
    lo.x_radius = ex.sample_radius;
    const LipschitzEstimate le = estimate_lipschitz(ex.sys, ex.grid, lo);
    std::vector<Driver> drivers = frozen_drivers(ex.grid);
    for (auto& d : fourier_drivers(ex.grid, std::max(le.N0, 1e-12), 4, seed)) drivers.push_back(std::move(d));
    ProcessBoundOptions po;
    po.start_times = {0.0, 2.5};
    const ProcessBound pb = estimate_process_bound(ex.sys, drivers, 10.0, po);
    cert = sampled_certificate(pb, le);
  }
  if (!overrides.empty()) {
    for (const auto& [k, v] : overrides) cert.set(k, v, Provenance::supplied);
    for (const char* b : {"delta", "rho"})
      if (!overrides.count(b)) cert.provenance.erase(b);
    complete_budgets(cert);
  }
  return cert;
}

LPConfig default_lp_config(const Example& ex, double dt, int jobs) {
  LPConfig cfg;
  cfg.grid = ex.grid;
  cfg.integ.dt = dt;
  cfg.jobs = jobs;
  return cfg;
}

// ---------------------------------------------------------------------------

GridStudy nf1_grid_study(const std::vector<int>& ms, const std::vector<int>& slow_points, double eps, int jobs) {
  if (ms.size() != 3 || slow_points.size() != 3) fail(ErrorCode::argument, "nf1_grid_study: needs three resolutions");
  GridStudy st;
  st.m = ms;
  for (std::size_t r = 0; r < ms.size(); ++r) {
    ExampleParams p;
    p.eps = eps;
    p.m = ms[r];
    p.grid = slow_points[r];
    const Example ex = make_example(ExampleId::NF1, p);
    const ConstantsCertificate cert = *ex.closed_form;
    const LPConfig cfg = default_lp_config(ex, 0.01, jobs);
    const LPResult res = lp_solve(ex.sys, cert, cfg);
    const Vec mid = 0.5 * (ex.grid.lower() + ex.grid.upper());
    st.functional.push_back(res.h(mid).sum() * ex.node_weight);
    if (r == 1) st.invariance = invariance_residual(ex.sys, res.h, mid, 20.0, cfg.integ).max_deviation;
  }
  st.differences = {std::abs(st.functional[0] - st.functional[1]), std::abs(st.functional[1] - st.functional[2])};
  st.order = st.differences[1] > 0.0 ? std::log2(st.differences[0] / st.differences[1]) : INFINITY;
  return st;
}

std::vector<double> eps_gaps(ExampleId id, const std::vector<double>& eps, int jobs) {
  ExampleParams p0;
  p0.eps = 0.0;
  const Example ex0 = make_example(id, p0);
  const ConstantsCertificate c0 = build_certificate(ex0, "auto");
  const FastField h0 = lp_solve(ex0.sys, c0, default_lp_config(ex0, 0.01, jobs)).h;
  std::vector<double> gaps;
  for (double e : eps) {
    ExampleParams p;
    p.eps = e;
    const Example ex = make_example(id, p);
    const ConstantsCertificate c = build_certificate(ex, "auto");
    const FastField h = lp_solve(ex.sys, c, default_lp_config(ex, 0.01, jobs)).h;
    gaps.push_back(sup_distance(h, h0, ex.sys.norm));
  }
  return gaps;
}

// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) fail(ErrorCode::usage, where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) fail(ErrorCode::usage, "unknown key '" + k + "' in " + where);
}

template <class T>
T get_as(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::usage, "key '" + key + "' in " + where + " has the wrong type");
  }
}

Vec vec_from(const json& j, const std::string& where) {
  if (!j.is_array()) fail(ErrorCode::usage, where + " must be an array of numbers");
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) fail(ErrorCode::usage, where + " must be an array of numbers");
    v(i) = j[i].get<double>();
  }
  return v;
}

}  // namespace

const std::vector<std::string>& scenario_checks() {
  static const std::vector<std::string> names{"h_exact",      "norm_bound",   "eqv_residual", "eqv_detects",
                                              "invariance",   "contraction",  "dh_fd",        "dh_exact",
                                              "d2h_fd",       "d2h_exact",    "straighten",   "e_norm",
                                              "semiconjugacy", "attraction",  "dp_fd",        "decomposition",
                                              "spectral_gap", "P_exact",     "grid_order"};
  return names;
}

ScenarioSpec parse_scenario(const json& j) {
  check_keys(j, {"name", "system", "eps", "domain", "grid", "m", "integrator", "lp", "certificate", "checks",
                 "derivative", "points", "t_max", "out", "seed", "jobs"},
             "scenario");
  ScenarioSpec s;
  const std::string w = "scenario";
  if (j.contains("name")) s.name = get_as<std::string>(j, "name", w);
  if (j.contains("system")) s.system = get_as<std::string>(j, "system", w);
  example_from_string(s.system);
  if (j.contains("eps")) {
    if (j["eps"].is_number()) s.eps = {j["eps"].get<double>()};
    else s.eps = get_as<std::vector<double>>(j, "eps", w);
    if (s.eps.empty()) fail(ErrorCode::usage, "eps list is empty");
  }
  if (j.contains("domain")) {
    const json& d = j["domain"];
    check_keys(d, {"lower", "upper"}, "domain");
    if (d.contains("lower")) s.lower = vec_from(d["lower"], "domain.lower");
    if (d.contains("upper")) s.upper = vec_from(d["upper"], "domain.upper");
  }
  if (j.contains("grid")) s.grid = get_as<int>(j, "grid", w);
  if (j.contains("m")) s.m = get_as<int>(j, "m", w);
  if (j.contains("integrator")) {
    const json& d = j["integrator"];
    check_keys(d, {"dt", "method", "richardson_check", "max_steps"}, "integrator");
    if (d.contains("dt")) s.integ.dt = get_as<double>(d, "dt", "integrator");
    if (d.contains("method") && get_as<std::string>(d, "method", "integrator") != "rk4")
      fail(ErrorCode::usage, "integrator.method must be rk4");
    if (d.contains("richardson_check")) s.integ.richardson_check = get_as<bool>(d, "richardson_check", "integrator");
    if (d.contains("max_steps")) s.integ.max_steps = get_as<long>(d, "max_steps", "integrator");
    if (!(s.integ.dt > 0.0)) fail(ErrorCode::usage, "integrator.dt must be positive");
  }
  if (j.contains("lp")) {
    const json& d = j["lp"];
    check_keys(d, {"horizon", "tol_phi", "max_iters", "tol_fixed_point"}, "lp");
    if (d.contains("horizon")) s.horizon = get_as<double>(d, "horizon", "lp");
    if (d.contains("tol_phi")) s.tol_phi = get_as<double>(d, "tol_phi", "lp");
    if (d.contains("max_iters")) s.max_iters = get_as<int>(d, "max_iters", "lp");
    if (d.contains("tol_fixed_point")) s.tol_fixed_point = get_as<double>(d, "tol_fixed_point", "lp");
  }
  if (j.contains("certificate")) {
    const json& d = j["certificate"];
    check_keys(d, {"source", "overrides"}, "certificate");
    if (d.contains("source")) s.certificate = get_as<std::string>(d, "source", "certificate");
    if (d.contains("overrides")) {
      const json& o = d["overrides"];
      if (!o.is_object()) fail(ErrorCode::usage, "certificate.overrides must be an object");
      const auto& names = ConstantsCertificate::field_names();
      for (const auto& [k, v] : o.items()) {
        if (std::find(names.begin(), names.end(), k) == names.end())
          fail(ErrorCode::usage, "unknown certificate field '" + k + "'");
        if (!v.is_number()) fail(ErrorCode::usage, "override '" + k + "' must be a number");
        s.overrides[k] = v.get<double>();
      }
    }
  }
  if (j.contains("checks")) {
    s.checks = get_as<std::vector<std::string>>(j, "checks", w);
    const auto& known = scenario_checks();
    for (const auto& c : s.checks)
      if (std::find(known.begin(), known.end(), c) == known.end()) fail(ErrorCode::usage, "unknown check '" + c + "'");
  }
  if (j.contains("derivative")) {
    s.derivative = get_as<int>(j, "derivative", w);
    if (s.derivative < 0 || s.derivative > 2) fail(ErrorCode::usage, "derivative must be 0, 1 or 2");
  }
  if (j.contains("points")) {
    if (!j["points"].is_array()) fail(ErrorCode::usage, "points must be an array");
    for (const auto& pt : j["points"]) {
      check_keys(pt, {"xi", "eta"}, "points[]");
      if (!pt.contains("xi") || !pt.contains("eta")) fail(ErrorCode::usage, "points[] needs xi and eta");
      s.points.push_back({vec_from(pt["xi"], "points[].xi"), vec_from(pt["eta"], "points[].eta")});
    }
  }
  if (j.contains("t_max")) s.t_max = get_as<double>(j, "t_max", w);
  if (j.contains("out")) s.out = get_as<std::string>(j, "out", w);
  if (j.contains("seed")) s.seed = get_as<unsigned>(j, "seed", w);
  if (j.contains("jobs")) s.jobs = get_as<int>(j, "jobs", w);
  return s;
}

ScenarioSpec load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::usage, "cannot read scenario file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::usage, std::string("scenario file is not valid JSON: ") + e.what());
  }
  return parse_scenario(j);
}

// ---------------------------------------------------------------------------

namespace {

class Runner {
 public:
  explicit Runner(const ScenarioSpec& spec) : spec_(spec) {
    for (const auto& c : spec.checks) wanted_.insert(c);
  }

  bool wants(const std::string& c) const { return wanted_.empty() || wanted_.count(c); }

  void check(json& metrics, const std::string& name, double value, double threshold, bool pass) {
    if (!wants(name)) return;
    metrics["checks"][name] = {{"value", value}, {"threshold", threshold}, {"pass", pass}};
    all_pass_ = all_pass_ && pass;
    if (!pass) failed_.push_back(name);
  }

  /// Runs body; errors are recorded in the stage and stop later stages.
  template <class Fn>
  bool stage(const std::string& name, Fn&& body) {
    json st = {{"name", name}, {"metrics", json::object()}};
    if (halted_) {
      st["status"] = "skipped";
      stages_.push_back(st);
      return false;
    }
    try {
      body(st["metrics"]);
      st["status"] = "ok";
    } catch (const Error& e) {
      st["status"] = "error";
      st["error"] = {{"code", to_string(e.code())}, {"message", e.what()}};
      if (!first_error_) first_error_ = e.code();
      halted_ = true;
      all_pass_ = false;
    } catch (const std::exception& e) {
      st["status"] = "error";
      st["error"] = {{"code", "numeric"}, {"message", e.what()}};
      if (!first_error_) first_error_ = ErrorCode::numeric;
      halted_ = true;
      all_pass_ = false;
    }
    stages_.push_back(st);
    return st["status"] == "ok";
  }

  const ScenarioSpec& spec_;
  std::set<std::string> wanted_;
  json stages_ = json::array();
  std::vector<std::string> failed_;
  bool all_pass_ = true;
  bool halted_ = false;
  std::optional<ErrorCode> first_error_;
};

double field_sup_error(const FastField& h, const std::function<Vec(const Vec&)>& exact, const FastNorm& norm) {
  double e = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) e = std::max(e, norm(h.at(i) - exact(h.domain().node(i))));
  return e;
}

double op_sup_error(const OperatorField& f, const std::function<Mat(const Vec&)>& exact) {
  double e = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) e = std::max(e, (f.at(i) - exact(f.domain().node(i))).cwiseAbs().maxCoeff());
  return e;
}

std::string field_csv(const FastField& h, const OperatorField* Dh) {
  const GridDomain& dom = h.domain();
  const int n = dom.dim();
  const int m = static_cast<int>(h.at(0).size());
  std::vector<std::string> header;
  for (int k = 0; k < n; ++k) header.push_back("y" + std::to_string(k));
  for (int i = 0; i < m; ++i) header.push_back("h" + std::to_string(i));
  if (Dh)
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < n; ++k) header.push_back("Dh" + std::to_string(i) + "_" + std::to_string(k));
  std::vector<std::vector<double>> rows;
  for (std::size_t j = 0; j < dom.size(); ++j) {
    std::vector<double> r;
    const Vec y = dom.node(j);
    for (int k = 0; k < n; ++k) r.push_back(y(k));
    for (int i = 0; i < m; ++i) r.push_back(h.at(j)(i));
    if (Dh)
      for (int i = 0; i < m; ++i)
        for (int k = 0; k < n; ++k) r.push_back(Dh->at(j)(i, k));
    rows.push_back(std::move(r));
  }
  return to_csv(header, rows);
}

}  // namespace

ScenarioReport run_scenario(const ScenarioSpec& spec) {
  Runner run(spec);
  ExampleParams ep;
  ep.eps = spec.eps.front();
  ep.lower = spec.lower;
  ep.upper = spec.upper;
  ep.grid = spec.grid;
  ep.m = spec.m;

  std::optional<Example> ex;
  ConstantsCertificate cert;
  LPConfig lp;
  LPResult h;
  DhResult dh;
  std::optional<StraightenedSystem> ss;
  json artifacts = json::array();
  const double margin = 1.01;

  run.stage("certify", [&](json& m) {
    ex = make_example(spec.system, ep);
    cert = build_certificate(*ex, spec.certificate, spec.overrides, spec.seed);
    m["seed"] = spec.seed;
    m["eps"] = ep.eps;
    m["grid_points"] = ex->grid.size();
    json table = json::array();
    for (const auto& r : hypothesis_table(cert, &ex->sys))
      table.push_back({{"name", r.name}, {"verdict", to_string(r.verdict)}, {"required", r.required}});
    m["hypotheses"] = table;
    if (ex->id == ExampleId::NF1 || run.wants("spectral_gap")) {
      const FastField h0 = newton_branch(ex->sys, ex->grid, ex->newton_seed);
      const SpectralGap gap = spectral_gap_check(ex->sys, h0, 0.5);
      m["spectral_gap"] = {{"max_real", gap.max_real}, {"gap", gap.gap}, {"margin", gap.margin}};
      if (ex->id == ExampleId::NF1) run.check(m, "spectral_gap", gap.gap, 0.5, gap.pass);
    }
    lp = default_lp_config(*ex, spec.integ.dt, spec.jobs);
    lp.integ = spec.integ;
    lp.horizon = spec.horizon;
    lp.tol_phi = spec.tol_phi;
    lp.max_iters = spec.max_iters;
    lp.tol_fixed_point = spec.tol_fixed_point;
  });

  run.stage("lp_solve", [&](json& m) {
    h = lp_solve(ex->sys, cert, lp);
    m["report"] = h.report.to_json();
    m["horizon"] = lp.resolved_horizon(cert);
    const double hs = sup_norm(h.h, ex->sys.norm);
    const double bound = cert.h0_bound();
    m["h_sup"] = hs;
    m["h_bound"] = bound;
    run.check(m, "norm_bound", hs, bound, hs * margin <= bound);
    run.check(m, "contraction", h.report.measured_ratio, h.report.theoretical_ratio,
              h.report.measured_ratio <= h.report.theoretical_ratio * 1.05);
    if (ex->h_exact) {
      const double err = field_sup_error(h.h, ex->h_exact, ex->sys.norm);
      m["h_exact_error"] = err;
      run.check(m, "h_exact", err, ex->h_tol, err <= ex->h_tol);
    }
    const double eq = eqv_residual(ex->sys, h.h, cert, lp);
    run.check(m, "eqv_residual", eq, 1e-5, eq <= 1e-5);
    if (run.wants("eqv_detects")) {
      FastField shifted = h.h;
      for (std::size_t i = 0; i < shifted.size(); ++i) shifted.at(i).array() += 0.1;
      const double eqp = eqv_residual(ex->sys, shifted, cert, lp);
      run.check(m, "eqv_detects", eqp, 0.05, eqp >= 0.05);
    }
    const Vec mid = 0.5 * (ex->grid.lower() + ex->grid.upper());
    const GraphDeviation dev = invariance_residual(ex->sys, h.h, mid, spec.t_max, lp.integ);
    m["invariance_partial"] = dev.partial;
    m["invariance_t_reached"] = dev.t_reached;
    run.check(m, "invariance", dev.max_deviation, 1e-4, dev.max_deviation <= 1e-4);
    if (!spec.out.empty()) {
      const std::string path = spec.out + "/h.csv";
      atomic_write(path, field_csv(h.h, nullptr));
      artifacts.push_back(path);
    }
  });

  if (spec.derivative >= 1) {
    run.stage("dh_solve", [&](json& m) {
      dh = dh_solve(ex->sys, h.h, cert, lp);
      m["report"] = dh.report.to_json();
      m["fd_error"] = dh.fd_error;
      m["dh_sup"] = sup_norm(dh.Dh, ex->sys.norm);
      m["dh_bound"] = cert.dh_bound();
      run.check(m, "dh_fd", dh.fd_error, 1e-4, dh.fd_error <= 1e-4);
      if (ex->Dh_exact) {
        const double e = op_sup_error(dh.Dh, ex->Dh_exact);
        run.check(m, "dh_exact", e, 1e-4, e <= 1e-4);
      }
      if (!spec.out.empty()) {
        const std::string path = spec.out + "/h_dh.csv";
        atomic_write(path, field_csv(h.h, &dh.Dh));
        artifacts.push_back(path);
      }
    });
  }
  if (spec.derivative >= 2) {
    run.stage("d2h_solve", [&](json& m) {
      const D2hResult d2 = d2h_solve(ex->sys, h.h, dh.Dh, cert, lp);
      m["report"] = d2.report.to_json();
      m["fd_error"] = d2.fd_error;
      run.check(m, "d2h_fd", d2.fd_error, 1e-3, d2.fd_error <= 1e-3);
      if (ex->D2h_exact) {
        const double e = op_sup_error(d2.D2h, ex->D2h_exact);
        run.check(m, "d2h_exact", e, 1e-3, e <= 1e-3);
      }
    });
  }
  if (spec.derivative >= 1) {
    run.stage("straighten", [&](json& m) {
      ss = straighten(ex->sys, h, dh, cert);
      m["residual"] = ss->residual;
      m["mu_prime"] = ss->mu_prime;
      m["N1_tilde"] = ss->N1;
      run.check(m, "straighten", ss->residual, 1e-4, ss->residual <= 1e-4);
    });
    run.stage("reduction", [&](json& m) {
      std::vector<QueryPoint> pts = spec.points;
      if (pts.empty()) pts.push_back({ex->query_xi, ex->query_eta});
      ReductionConfig rc;
      rc.integ = spec.integ;
      json queries = json::array();
      for (std::size_t k = 0; k < pts.size(); ++k) {
        const auto& pt = pts[k];
        if (pt.xi.size() != ex->sys.m || pt.eta.size() != ex->sys.n)
          fail(ErrorCode::usage, "reduction point has the wrong dimension");
        const ReductionResult r = q_along_orbit(*ss, pt.xi, pt.eta, rc);
        json q = r.to_json();
        const double eb = ss->e_bound();
        run.check(q, "e_norm", r.E_ratio, eb, r.E_ratio <= eb * 1.05);
        if (ex->P_exact) {
          const double e = (r.P - ex->P_exact(pt.xi, pt.eta)).norm();
          run.check(q, "P_exact", e, 1e-6, e <= 1e-6);
        }
        const SemiconjugacyReport sc = semiconjugacy_residual(*ss, r, spec.t_max, rc);
        run.check(q, "semiconjugacy", sc.max_residual, 1e-5, sc.max_residual <= 1e-5);
        // Gaps below the accuracy of P itself are solver noise for the rate fits.
        const double noise = std::max(1e-11, 10.0 * sc.max_residual);
        const AttractionFit af = attraction_rate_fit(*ss, r, spec.t_max, rc, noise);
        q["attraction"] = {{"rate", af.full.rate},
                           {"r2", af.full.r2},
                           {"underdetermined", af.underdetermined},
                           {"prefactor_ok", af.prefactor_ok}};
        if (!af.underdetermined)
          run.check(q, "attraction", af.full.rate, 0.95 * ss->mu_prime,
                    af.full.rate >= 0.95 * ss->mu_prime && af.full.r2 >= 0.99 && af.prefactor_ok);
        if (run.wants("dp_fd") && 2.0 * ss->N1 < ss->mu_prime) {
          const DpResult dp = dp_point(*ss, r, rc);
          const Mat fd = dp_finite_difference(*ss, pt.xi, pt.eta, rc);
          const double e = (dp.P1 - fd).cwiseAbs().maxCoeff();
          q["P1"] = std::vector<double>(dp.P1.data(), dp.P1.data() + dp.P1.size());
          run.check(q, "dp_fd", e, 1e-4, e <= 1e-4);
        }
        const Decomposition d = decompose_orbit(*ss, r, spec.t_max, rc, noise);
        q["decomposition"] = {{"C_fit", d.C_fit}, {"reconstruction_error", d.reconstruction_error}};
        run.check(q, "decomposition", d.reconstruction_error, 1e-9, d.bound_ok && d.reconstruction_error <= 1e-9);
        if (!spec.out.empty()) {
          const std::string path = spec.out + "/decomposition_" + std::to_string(k) + ".csv";
          atomic_write(path, decomposition_csv(d));
          artifacts.push_back(path);
        }
        queries.push_back(q);
      }
      m["queries"] = queries;
    });
  }

  if (ex && ex->id == ExampleId::NF1 && run.wants("grid_order")) {
    run.stage("grid_study", [&](json& m) {
      const int base = std::max(spec.m / 2, 2);
      const GridStudy st = nf1_grid_study({base, 2 * base, 4 * base}, {5, 9, 17}, ep.eps, spec.jobs);
      m["m"] = st.m;
      m["functional"] = st.functional;
      m["differences"] = st.differences;
      m["invariance"] = st.invariance;
      run.check(m, "grid_order", st.order, 1.8, st.order >= 1.8);
    });
  }

  if (spec.eps.size() > 1) {
    run.stage("eps_continuity", [&](json& m) {
      const std::vector<double> gaps = eps_gaps(ex->id, spec.eps, spec.jobs);
      m["eps"] = spec.eps;
      m["gaps"] = gaps;
    });
  }

  ScenarioReport rep;
  rep.passed = run.all_pass_;
  rep.first_error = run.first_error_;
  rep.payload = {{"scenario", spec.name},
                 {"system", spec.system},
                 {"certificate", cert.to_json()},
                 {"stages", run.stages_},
                 {"failed_checks", run.failed_},
                 {"passed", rep.passed},
                 {"artifacts", artifacts}};
  if (!spec.out.empty()) {
    const std::string path = spec.out + "/report.json";
    json with_self = rep.payload;
    with_self["artifacts"].push_back(path);
    atomic_write(path, with_self.dump(2) + "\n");
    rep.payload = with_self;
  }
  return rep;
}

}  // namespace slowfast
