#include "slowfast/certify.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

namespace slowfast {

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::supplied: return "supplied";
    case Provenance::sampled: return "sampled";
    case Provenance::closed_form: return "closed-form";
  }
  return "unknown";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "supplied") return Provenance::supplied;
  if (s == "sampled") return Provenance::sampled;
  if (s == "closed-form") return Provenance::closed_form;
  fail(ErrorCode::usage, "unknown provenance '" + s + "'");
}

namespace {

constexpr double kDeltaFloor = 64.0 * DBL_EPSILON;

double ConstantsCertificate::*member(const std::string& field) {
  if (field == "K") return &ConstantsCertificate::K;
  if (field == "mu") return &ConstantsCertificate::mu;
  if (field == "M0") return &ConstantsCertificate::M0;
  if (field == "M1x") return &ConstantsCertificate::M1x;
  if (field == "M1y") return &ConstantsCertificate::M1y;
  if (field == "N0") return &ConstantsCertificate::N0;
  if (field == "N1") return &ConstantsCertificate::N1;
  if (field == "delta") return &ConstantsCertificate::delta;
  if (field == "rho") return &ConstantsCertificate::rho;
  fail(ErrorCode::usage, "unknown certificate field '" + field + "'");
}

}  // namespace

const std::vector<std::string>& ConstantsCertificate::field_names() {
  static const std::vector<std::string> names{"K", "mu", "M0", "M1x", "M1y", "N0", "N1", "delta", "rho"};
  return names;
}

double ConstantsCertificate::get(const std::string& field) const { return this->*member(field); }

void ConstantsCertificate::set(const std::string& field, double value, Provenance p) {
  if (!std::isfinite(value) || value < 0.0) fail(ErrorCode::argument, "certificate field '" + field + "' must be finite and >= 0");
  this->*member(field) = value;
  provenance[field] = p;
}

bool ConstantsCertificate::strictly_below(double a, double b) const {
  if (!std::isfinite(a) || !std::isfinite(b) || b <= 0.0) return false;
  return a < b * (1.0 - margin);
}

bool ConstantsCertificate::H_ok() const { return K >= 1.0 && mu > 0.0 && strictly_below(K * M1x, mu); }

bool existence_inequality(const ConstantsCertificate& c, double margin) {
  ConstantsCertificate tmp = c;
  tmp.margin = margin;
  const double used = c.K * c.M1x + c.N1 * (c.delta + 1.0);
  if (!tmp.strictly_below(used, c.mu)) return false;
  return tmp.strictly_below(c.K * c.M1y / (c.mu - used), c.delta);
}

bool ConstantsCertificate::existence_ok() const { return H_ok() && existence_inequality(*this, margin); }

bool ConstantsCertificate::smooth_ok() const {
  if (!(rho > 0.0) || !H_ok()) return false;
  const double used = K * M1x + N1 * (rho + 1.0);
  if (!strictly_below(used, mu)) return false;
  return strictly_below(K * M1y / (mu - used), rho);
}

bool ConstantsCertificate::reduction_ok() const { return H_ok() && strictly_below(K * N1, mu_prime()); }

bool ConstantsCertificate::second_order_ok() const {
  if (!smooth_ok()) return false;
  if (!strictly_below(2.0 * N1, mu_prime())) return false;
  const double den = mu_prime() - 2.0 * N1 * (rho + 1.0);
  if (!(den > 0.0)) return false;
  return strictly_below(K * M1y / den, 2.0 * (rho + 1.0) - 1.0);
}

double ConstantsCertificate::lp_ratio() const {
  return K * M1y / ((delta + 1.0) * (mu_prime() - N1 * (delta + 1.0)));
}

double ConstantsCertificate::dh_ratio() const { return K * M1y / (rho * (mu_prime() - N1 * (rho + 1.0))); }

double ConstantsCertificate::dh_bound() const { return K * M1y / (mu_prime() - N1 * (rho + 1.0)); }

double ConstantsCertificate::h0_bound() const { return K * M0 / mu + K * M1y / mu_prime(); }

nlohmann::json ConstantsCertificate::to_json() const {
  nlohmann::json j;
  nlohmann::json fields = nlohmann::json::object();
  for (const auto& name : field_names()) {
    auto it = provenance.find(name);
    fields[name] = {{"value", get(name)},
                    {"provenance", it == provenance.end() ? "closed-form" : to_string(it->second)}};
  }
  j["fields"] = fields;
  j["margin"] = margin;
  j["delta_floor"] = delta_floor;
  j["predicates"] = {{"H_ok", H_ok()},
                     {"existence_ok", existence_ok()},
                     {"smooth_ok", smooth_ok()},
                     {"reduction_ok", reduction_ok()}};
  return j;
}

ConstantsCertificate ConstantsCertificate::from_json(const nlohmann::json& j) {
  ConstantsCertificate c;
  if (!j.is_object() || !j.contains("fields")) fail(ErrorCode::usage, "certificate JSON needs a 'fields' object");
  for (const auto& [key, val] : j.at("fields").items()) {
    const double v = val.at("value").get<double>();
    const Provenance p = val.contains("provenance") ? provenance_from_string(val.at("provenance").get<std::string>())
                                                    : Provenance::supplied;
    c.set(key, v, p);
  }
  if (j.contains("margin")) c.margin = j.at("margin").get<double>();
  if (j.contains("delta_floor")) c.delta_floor = j.at("delta_floor").get<bool>();
  return c;
}

DeltaBudget delta_budget(const ConstantsCertificate& cert) {
  const double rate = cert.mu - cert.K * cert.M1x;
  if (!(rate > 0.0)) fail(ErrorCode::infeasible, "delta_budget: K*M1x >= mu");
  DeltaBudget b;
  if (cert.M1y == 0.0) {
    b.delta = kDeltaFloor;
    b.floor_flag = true;
  } else {
    b.delta = 2.0 * cert.K * cert.M1y / rate;
  }
  b.N1_cap = rate / (2.0 * (b.delta + 1.0));
  return b;
}

double rho_budget(const ConstantsCertificate& cert) {
  const double a = cert.mu - cert.K * cert.M1x;
  if (!(a > 0.0)) fail(ErrorCode::infeasible, "rho_budget: K*M1x >= mu");
  const double c = cert.K * cert.M1y;
  const double keep = 1.0 - cert.margin;
  if (c == 0.0) return kDeltaFloor;
  if (cert.N1 == 0.0) return c / (a * keep) * (1.0 + 1e-9);

  const double rho_max = a / cert.N1 - 1.0;
  if (!(rho_max > 0.0)) fail(ErrorCode::infeasible, "rho_budget: N1 leaves no admissible rho");
  auto f = [&](double r) {
    const double used = cert.N1 * (r + 1.0);
    if (!(used < a * keep)) return -std::numeric_limits<double>::infinity();
    return r * keep - c / (a - used);
  };
  // f is concave on (0, rho_max): locate its maximum, then the left root.
  double lo = 0.0, hi = rho_max;
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 200; ++it) {
    const double m1 = hi - phi * (hi - lo);
    const double m2 = lo + phi * (hi - lo);
    if (f(m1) < f(m2)) lo = m1; else hi = m2;
  }
  const double peak = 0.5 * (lo + hi);
  if (!(f(peak) > 0.0)) fail(ErrorCode::infeasible, "rho_budget: no admissible rho");
  lo = 0.0;
  hi = peak;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) > 0.0) hi = mid; else lo = mid;
  }
  return hi;
}

void complete_budgets(ConstantsCertificate& cert) {
  auto supplied = [&](const char* f) {
    auto it = cert.provenance.find(f);
    return it != cert.provenance.end() && it->second == Provenance::supplied;
  };
  if (!supplied("delta")) {
    if (cert.mu - cert.K * cert.M1x > 0.0) {
      const DeltaBudget b = delta_budget(cert);
      cert.delta = b.delta;
      cert.delta_floor = b.floor_flag;
    } else {
      cert.delta = 0.0;
    }
    cert.provenance["delta"] = Provenance::closed_form;
  }
  if (!supplied("rho")) {
    try {
      cert.rho = rho_budget(cert);
    } catch (const Error&) {
      cert.rho = 0.0;
    }
    cert.provenance["rho"] = Provenance::closed_form;
  }
}

// ---------------------------------------------------------------------------

namespace {

// Tail decay rate of a norm series: least squares of log values over the second half.
double tail_rate(const std::vector<double>& tau, const std::vector<double>& v) {
  const double t_end = tau.back();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int cnt = 0;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    if (tau[i] < 0.5 * t_end || !(v[i] > 0.0)) continue;
    const double ly = std::log(v[i]);
    sx += tau[i];
    sy += ly;
    sxx += tau[i] * tau[i];
    sxy += tau[i] * ly;
    ++cnt;
  }
  if (cnt < 2) return std::numeric_limits<double>::infinity();
  const double den = cnt * sxx - sx * sx;
  if (den <= 0.0) return std::numeric_limits<double>::infinity();
  return -(cnt * sxy - sx * sy) / den;
}

std::vector<double> probe_norm_series(const ProcessHandle& p, double s, double t_max, const FastNorm& norm,
                                      const IntegratorConfig& cfg) {
  // Vector mode for large m: maximum amplification over a fixed probe set.
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> nd;
  std::vector<Vec> probes;
  probes.push_back(Vec::Ones(p.dim));
  for (int i = 0; i < 8; ++i) {
    Vec v(p.dim);
    for (int k = 0; k < p.dim; ++k) v(k) = nd(rng);
    probes.push_back(v);
  }
  for (auto& v : probes) v /= norm(v);
  const long steps = std::max(1L, static_cast<long>(std::ceil((t_max - s) / cfg.dt - 1e-9)));
  const double h = (t_max - s) / static_cast<double>(steps);
  std::vector<double> out(steps + 1, 0.0);
  for (auto v : probes) {
    out[0] = std::max(out[0], norm(v));
    for (long k = 0; k < steps; ++k) {
      const double t = s + k * h;
      const Vec k1 = p.A(t) * v;
      const Vec k2 = p.A(t + 0.5 * h) * (v + 0.5 * h * k1);
      const Vec k3 = p.A(t + 0.5 * h) * (v + 0.5 * h * k2);
      const Vec k4 = p.A(t + h) * (v + h * k3);
      v += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      out[k + 1] = std::max(out[k + 1], norm(v));
    }
  }
  return out;
}

}  // namespace

ProcessBound estimate_process_bound(const std::vector<ProcessHandle>& processes, double t_max, const FastNorm& norm,
                                    const ProcessBoundOptions& opts) {
  if (processes.empty()) fail(ErrorCode::argument, "estimate_process_bound: empty driver sample");
  struct Series {
    std::vector<double> tau, v;
  };
  std::vector<Series> all;
  for (const auto& p : processes) {
    for (double s : opts.start_times) {
      if (!(s < t_max)) continue;
      Series ser;
      ser.v = p.dim <= 64 ? process_norm_series(p, s, t_max, norm, opts.integ)
                          : probe_norm_series(p, s, t_max, norm, opts.integ);
      const double h = (t_max - s) / static_cast<double>(ser.v.size() - 1);
      ser.tau.resize(ser.v.size());
      for (std::size_t k = 0; k < ser.v.size(); ++k) ser.tau[k] = k * h;
      all.push_back(std::move(ser));
    }
  }
  if (all.empty()) fail(ErrorCode::argument, "estimate_process_bound: no start time below t_max");
  ProcessBound pb;
  if (opts.mu_target) {
    pb.mu = *opts.mu_target;
  } else {
    pb.mu = std::numeric_limits<double>::infinity();
    for (const auto& s : all) pb.mu = std::min(pb.mu, tail_rate(s.tau, s.v));
    if (!std::isfinite(pb.mu)) pb.mu = 1.0 / t_max;
  }
  if (!(pb.mu > 0.0)) fail(ErrorCode::no_decay, "estimate_process_bound: sampled process norms do not decay");
  pb.K = 1.0;
  for (const auto& s : all) {
    for (std::size_t k = 0; k < s.v.size(); ++k) pb.K = std::max(pb.K, s.v[k] * std::exp(pb.mu * s.tau[k]));
    pb.samples += s.v.size();
  }
  return pb;
}

ProcessBound estimate_process_bound(const FastSlowSystem& sys, const std::vector<Driver>& drivers, double t_max,
                                    const ProcessBoundOptions& opts) {
  std::vector<ProcessHandle> ps;
  ps.reserve(drivers.size());
  for (const auto& d : drivers) ps.push_back(make_A0_process(sys, d));
  return estimate_process_bound(ps, t_max, sys.norm, opts);
}

std::vector<Driver> frozen_drivers(const GridDomain& dom) {
  std::vector<Driver> out;
  for (const Vec& c : dom.corners()) out.push_back([c](double) { return c; });
  const Vec mid = 0.5 * (dom.lower() + dom.upper());
  out.push_back([mid](double) { return mid; });
  return out;
}

std::vector<Driver> fourier_drivers(const GridDomain& dom, double N0, int count, unsigned seed, int modes) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = dom.dim();
  std::vector<Driver> out;
  for (int d = 0; d < count; ++d) {
    Vec centre(n);
    Mat amp(n, modes), freq(n, modes), phase(n, modes);
    for (int k = 0; k < n; ++k) {
      const double lo = dom.lower()(k), hi = dom.upper()(k);
      centre(k) = lo + (0.25 + 0.5 * u(rng)) * (hi - lo);
      const double room = std::min(centre(k) - lo, hi - centre(k));
      double speed = 0.0, total = 0.0;
      for (int j = 0; j < modes; ++j) {
        amp(k, j) = u(rng);
        freq(k, j) = 0.2 + 1.8 * u(rng);
        phase(k, j) = 2.0 * M_PI * u(rng);
        speed += amp(k, j) * freq(k, j);
        total += amp(k, j);
      }
      double scale = total > 0.0 ? room / total : 0.0;
      if (speed > 0.0) scale = std::min(scale, N0 / (std::sqrt(static_cast<double>(n)) * speed));
      amp.row(k) *= scale;
    }
    out.push_back([centre, amp, freq, phase](double t) {
      Vec y = centre;
      for (int k = 0; k < y.size(); ++k)
        for (int j = 0; j < amp.cols(); ++j) y(k) += amp(k, j) * std::sin(freq(k, j) * t + phase(k, j));
      return y;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Vec random_in_ball(const FastNorm& norm, int m, double r, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec x(m);
  for (int i = 0; i < m; ++i) x(i) = u(rng);
  if (norm.kind() == NormKind::sup) return r * x;
  const double nx = norm(x);
  if (nx == 0.0) return x;
  std::uniform_real_distribution<double> rad(0.0, 1.0);
  return x * (r * std::pow(rad(rng), 1.0 / m) / nx);
}

Vec random_unit(const FastNorm& norm, int m, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Vec x(m);
  do {
    for (int i = 0; i < m; ++i) x(i) = nd(rng);
  } while (norm(x) == 0.0);
  return x / norm(x);
}

}  // namespace

LipschitzEstimate estimate_lipschitz(const FastSlowSystem& sys, const GridDomain& dom, const LipschitzOptions& opts) {
  sys.validate();
  if (opts.n_samples < 1000) fail(ErrorCode::argument, "estimate_lipschitz: sampling budget must be >= 1000");
  const int m = sys.m, n = sys.n;
  const FastNorm& nrm = sys.norm;
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto corners = dom.corners();
  const double r = opts.x_radius;
  const double hq = 1e-5 * std::max(1.0, r);
  LipschitzEstimate e;
  Vec xp = Vec::Zero(m), yp = dom.lower();
  for (int s = 0; s < opts.n_samples; ++s) {
    Vec y(n);
    if (s < static_cast<int>(corners.size()) * 4) {
      y = corners[s % corners.size()];
    } else {
      for (int k = 0; k < n; ++k) y(k) = dom.lower()(k) + u(rng) * (dom.upper()(k) - dom.lower()(k));
    }
    Vec x;
    switch (s % 4) {
      case 0: x = Vec::Zero(m); break;
      case 1: {
        Vec ones = Vec::Ones(m);
        x = (u(rng) < 0.5 ? -r : r) * ones / nrm(ones);
        break;
      }
      default: x = random_in_ball(nrm, m, r, rng);
    }
    const Vec r0 = eval_R0(sys, x, y);
    const Vec f0 = sys.F(x, y);
    const Vec g0 = sys.g(x, y);
    e.M0 = std::max(e.M0, nrm(r0));
    e.N0 = std::max(e.N0, g0.norm());

    const Vec dx = random_unit(nrm, m, rng) * hq;
    Vec dy(n);
    for (int k = 0; k < n; ++k) dy(k) = u(rng) - 0.5;
    if (dy.norm() == 0.0) dy(0) = 1.0;
    dy *= hq / dy.norm();
    e.M1x = std::max(e.M1x, nrm(eval_R0(sys, x + dx, y) - r0) / hq);
    e.M1y = std::max(e.M1y, nrm(sys.F(x, y + dy) - f0) / hq);
    e.N1 = std::max(e.N1, (sys.g(x + dx, y + dy) - g0).norm() / nrm.pair(dx, dy));

    if (s > 0) {
      const double dxf = nrm(x - xp);
      if (dxf > 0.0) e.M1x = std::max(e.M1x, nrm(eval_R0(sys, x, y) - eval_R0(sys, xp, y)) / dxf);
      const double dyf = (y - yp).norm();
      if (dyf > 0.0) e.M1y = std::max(e.M1y, nrm(sys.F(x, y) - sys.F(x, yp)) / dyf);
      const double dp = nrm.pair(x - xp, y - yp);
      if (dp > 0.0) e.N1 = std::max(e.N1, (g0 - sys.g(xp, yp)).norm() / dp);
    }
    if (sys.DF) {
      const Mat J = sys.DF(x, y);
      e.M1x = std::max(e.M1x, nrm.op(J.leftCols(m) - sys.A0(y)));
      e.M1y = std::max(e.M1y, nrm.op_from_slow(J.rightCols(n)));
    }
    if (sys.Dg) e.N1 = std::max(e.N1, nrm.op_from_pair(sys.Dg(x, y), m));
    xp = x;
    yp = y;
  }
  return e;
}

ConstantsCertificate sampled_certificate(const ProcessBound& pb, const LipschitzEstimate& le, double margin) {
  ConstantsCertificate c;
  c.margin = margin;
  c.set("K", pb.K, Provenance::sampled);
  c.set("mu", pb.mu, Provenance::sampled);
  c.set("M0", le.M0, Provenance::sampled);
  c.set("M1x", le.M1x, Provenance::sampled);
  c.set("M1y", le.M1y, Provenance::sampled);
  c.set("N0", le.N0, Provenance::sampled);
  c.set("N1", le.N1, Provenance::sampled);
  complete_budgets(c);
  return c;
}

// ---------------------------------------------------------------------------

double frozen_coefficient_window(double K, double mu, double eps) {
  if (!(eps > 0.0) || !(eps < mu)) fail(ErrorCode::argument, "frozen_coefficient_window: need 0 < eps < mu");
  if (!(K >= 1.0)) fail(ErrorCode::argument, "frozen_coefficient_window: need K >= 1");
  return std::log(K) / eps;
}

DriftBudget slow_drift_budget(double K, double mu_tilde, double mu_target, double M1nu) {
  if (!(mu_target > 0.0) || !(mu_target < mu_tilde)) fail(ErrorCode::argument, "slow_drift_budget: need 0 < mu_target < mu_tilde");
  if (!(K >= 1.0)) fail(ErrorCode::argument, "slow_drift_budget: need K >= 1");
  if (!(M1nu >= 0.0)) fail(ErrorCode::argument, "slow_drift_budget: need M1nu >= 0");
  DriftBudget b;
  const double gap = mu_tilde - mu_target;
  b.l = K == 1.0 ? 1.0 : std::log(K) / gap;
  b.M0_cap = gap / (4.0 * K);
  b.N0_cap = M1nu > 0.0 ? gap / (2.0 * K * M1nu * b.l) : std::numeric_limits<double>::infinity();
  if (!(b.M0_cap > 0.0) || !(b.N0_cap > 0.0)) fail(ErrorCode::infeasible, "slow_drift_budget: infeasible split");
  return b;
}

SpectralGap spectral_gap_check(const FastSlowSystem& sys, const FastField& h0, double mu_req) {
  if (sys.m > 512) fail(ErrorCode::argument, "spectral_gap_check: m > 512 needs a user-supplied bound");
  SpectralGap out;
  out.max_real = -std::numeric_limits<double>::infinity();
  const GridDomain& dom = h0.domain();
  for (std::size_t i = 0; i < dom.size(); ++i) {
    const Vec y = dom.node(i);
    const Mat J = fast_jacobian_x(sys, h0.at(i), y);
    Eigen::EigenSolver<Mat> es(J, false);
    if (es.info() != Eigen::Success) fail(ErrorCode::numeric, "spectral_gap_check: eigen-solver failure");
    const double mr = es.eigenvalues().real().maxCoeff();
    if (mr > out.max_real) {
      out.max_real = mr;
      out.worst_node = i;
    }
  }
  out.gap = -out.max_real;
  out.margin = out.gap - mu_req;
  out.pass = out.max_real < -mu_req;
  return out;
}

// ---------------------------------------------------------------------------

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::unknown: return "unknown";
  }
  return "unknown";
}

std::vector<HypothesisRow> hypothesis_table(const ConstantsCertificate& c, const FastSlowSystem* sys) {
  auto v = [](bool b) { return b ? Verdict::pass : Verdict::fail; };
  std::vector<HypothesisRow> rows;
  rows.push_back({"H1", "K >= 1, mu > 0 (process bound)", v(c.K >= 1.0 && c.mu > 0.0), true});
  rows.push_back({"H2", "K*M1x < mu", v(c.H_ok()), true});
  rows.push_back({"H3", "existence inequality at delta", v(c.existence_ok()), true});
  Verdict h2p = v(c.smooth_ok());
  Verdict h3p = Verdict::unknown;
  if (sys) {
    if (!sys->has_first_derivatives()) h2p = Verdict::unknown;
    h3p = sys->has_first_derivatives() ? Verdict::pass : Verdict::unknown;
  }
  rows.push_back({"H2'", "smoothness inequality at rho", h2p, false});
  rows.push_back({"H3'", "DF and Dg available", h3p, false});
  rows.push_back({"S1", "mu - K*M1x > 0 (straightened decay)", v(c.mu_prime() > 0.0), false});
  rows.push_back({"S2", "K*N1 < mu - K*M1x", v(c.reduction_ok()), false});
  return rows;
}

std::string format_hypothesis_table(const std::vector<HypothesisRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(6) << "hyp" << std::setw(40) << "condition" << std::setw(9) << "verdict"
     << "required\n";
  for (const auto& r : rows)
    os << std::left << std::setw(6) << r.name << std::setw(40) << r.condition << std::setw(9) << to_string(r.verdict)
       << (r.required ? "yes" : "no") << '\n';
  return os.str();
}

}  // namespace slowfast
