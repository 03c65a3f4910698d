#include "slowfast/reduction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "slowfast/io.hpp"

namespace slowfast {

namespace {

Vec join(const Vec& a, const Vec& b) {
  Vec z(a.size() + b.size());
  z << a, b;
  return z;
}

Mat slow_jacobian(const FastSlowSystem& sys, const Vec& x, const Vec& y) {
  if (sys.Dg) return sys.Dg(x, y);
  const int m = sys.m, n = sys.n;
  return fd_jacobian([&](const Vec& z) { return Vec(sys.g(z.head(m), z.tail(n))); }, join(x, y));
}

IntegratorConfig half_step(const ReductionConfig& cfg, double span, long* coarse_out = nullptr) {
  const long coarse = std::max(1L, static_cast<long>(std::ceil(span / cfg.integ.dt - 1e-9)));
  if (coarse_out) *coarse_out = coarse;
  IntegratorConfig c = cfg.integ;
  c.dt = span / static_cast<double>(2 * coarse);
  return c;
}

OrbitPath orbit_or_throw(const FastSlowSystem& sys, const Vec& x0, const Vec& y0, double t1,
                         const IntegratorConfig& cfg) {
  try {
    return flow(sys, x0, y0, 0.0, t1, cfg);
  } catch (const DomainExit& e) {
    fail(ErrorCode::domain_exit, std::string("reduction orbit is partial: ") + e.what());
  }
}

/// Cumulative integral int_{t_k}^{t_end} f on a uniform grid with a fourth-order interval rule.
std::vector<Vec> tail_integral(const std::vector<Vec>& f, double h) {
  const long N = static_cast<long>(f.size()) - 1;
  std::vector<Vec> out(N + 1, Vec::Zero(f[0].size()));
  for (long i = N - 1; i >= 0; --i) {
    Vec piece;
    if (N < 3) {
      piece = 0.5 * h * (f[i] + f[i + 1]);
    } else if (i == 0) {
      piece = (h / 24.0) * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3]);
    } else if (i == N - 1) {
      piece = (h / 24.0) * (f[N - 3] - 5.0 * f[N - 2] + 19.0 * f[N - 1] + 9.0 * f[N]);
    } else {
      piece = (h / 24.0) * (-f[i - 1] + 13.0 * f[i] + 13.0 * f[i + 1] - f[i + 2]);
    }
    out[i] = out[i + 1] + piece;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

Vec StraightenedSystem::F_tilde(const Vec& xt, const Vec& y) const {
  const Vec x = lift(xt, y);
  return base.F(x, y) - Dh.smooth(y) * base.g(x, y);
}

Vec StraightenedSystem::g_tilde(const Vec& xt, const Vec& y) const { return base.g(lift(xt, y), y); }

Vec StraightenedSystem::g_on_manifold(const Vec& p) const { return base.g(h.smooth(p), p); }

Mat StraightenedSystem::Z_generator(const Vec& p) const {
  const Mat dg = slow_jacobian(base, h.smooth(p), p);
  return dg.leftCols(base.m) * Dh.smooth(p) + dg.rightCols(base.n);
}

double StraightenedSystem::e_bound() const {
  const double den = mu_prime - K * N1;
  return den > 0.0 ? K * N1 / den : std::numeric_limits<double>::infinity();
}

double StraightenedSystem::slow_prefactor_bound() const {
  const double den = mu_prime - K * N1;
  return den > 0.0 ? K * K * N1 / den : std::numeric_limits<double>::infinity();
}

FastSlowSystem StraightenedSystem::as_system() const {
  auto self = std::make_shared<const StraightenedSystem>(*this);
  FastSlowSystem s;
  s.name = base.name + "-straightened";
  s.m = base.m;
  s.n = base.n;
  s.norm = base.norm;
  s.eps = base.eps;
  s.definition_box = base.definition_box;
  s.a0_is_linearization = true;
  s.F = [self](const Vec& xt, const Vec& y) { return self->F_tilde(xt, y); };
  s.g = [self](const Vec& xt, const Vec& y) { return self->g_tilde(xt, y); };
  const int m = base.m;
  s.A0 = [self, m](const Vec& y) {
    return fd_jacobian([&](const Vec& xt) { return self->F_tilde(xt, y); }, Vec::Zero(m));
  };
  return s;
}

StraightenedSystem straighten(const FastSlowSystem& sys, const FastField& h, const OperatorField& Dh,
                              const ConstantsCertificate& cert) {
  sys.validate();
  if (h.domain().size() != Dh.domain().size()) fail(ErrorCode::argument, "straighten: h and Dh grids differ");
  StraightenedSystem ss;
  ss.base = sys;
  ss.h = h;
  ss.Dh = Dh;
  ss.K = cert.K;
  ss.mu_prime = cert.mu_prime();
  ss.Dh_sup = sup_norm(Dh, sys.norm);
  ss.N1 = (1.0 + ss.Dh_sup) * cert.N1;
  for (std::size_t i = 0; i < h.size(); ++i)
    ss.residual = std::max(ss.residual, sys.norm(ss.F_tilde(Vec::Zero(sys.m), h.domain().node(i))));
  return ss;
}

StraightenedSystem straighten(const FastSlowSystem& sys, const LPResult& h, const DhResult& Dh,
                              const ConstantsCertificate& cert) {
  if (!h.report.converged) fail(ErrorCode::precondition, "straighten: slow-manifold iteration did not converge");
  if (!Dh.report.converged) fail(ErrorCode::precondition, "straighten: derivative iteration did not converge");
  return straighten(sys, h.h, Dh.Dh, cert);
}

// ---------------------------------------------------------------------------

nlohmann::json ReductionResult::to_json() const {
  auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"xi", vec(xi)},      {"eta", vec(eta)},   {"P", vec(P)},
          {"Q", vec(Q)},        {"T_f", T_f},        {"E_ratio", E_ratio},
          {"report", report.to_json()}};
}

ReductionResult q_along_orbit(const StraightenedSystem& ss, const Vec& xi, const Vec& eta, const ReductionConfig& cfg) {
  const FastSlowSystem& sys = ss.base;
  if (xi.size() != sys.m || eta.size() != sys.n) fail(ErrorCode::argument, "q_along_orbit: point has wrong size");
  if (!(ss.mu_prime > 0.0) || !(ss.K * ss.N1 < ss.mu_prime))
    fail(ErrorCode::contraction, "q_along_orbit: K*N1 >= mu - K*M1x for the straightened system");
  ReductionResult res;
  res.xi = xi;
  res.eta = eta;
  res.report.theoretical_ratio = ss.q_ratio();

  const double xn = sys.norm(xi);
  const double floor_T = std::max(1.0 / ss.mu_prime, 4.0 * cfg.integ.dt);
  double T = floor_T;
  if (xn > 0.0 && ss.N1 > 0.0) {
    const double target = cfg.tol_Q / (2.0 * ss.N1 * (1.0 + ss.e_bound()));
    const double arg = ss.K * xn / target;
    if (arg > 1.0) T = std::max(T, std::log(arg) / ss.mu_prime);
  }
  const IntegratorConfig hc = half_step(cfg, T);
  res.T_f = T;
  res.orbit = orbit_or_throw(sys, ss.lift(xi, eta), eta, T, hc);
  const std::size_t N = res.orbit.size();
  res.q.assign(N, Vec::Zero(sys.n));

  if (xn == 0.0) {
    res.Q = Vec::Zero(sys.n);
    res.P = eta;
    res.report.converged = true;
    return res;
  }

  std::vector<Vec> g_orbit(N);
  for (std::size_t k = 0; k < N; ++k) g_orbit[k] = sys.g(res.orbit.x[k], res.orbit.y[k]);
  const double h = hc.dt;
  for (int it = 0; it < cfg.max_iters; ++it) {
    std::vector<Vec> f(N);
    for (std::size_t k = 0; k < N; ++k) f[k] = ss.g_on_manifold(res.orbit.y[k] - res.q[k]) - g_orbit[k];
    std::vector<Vec> next = tail_integral(f, h);
    double r = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
      const double w = std::exp(ss.mu_prime * res.orbit.t[k]);
      r = std::max(r, w * (next[k] - res.q[k]).norm());
      scale = std::max(scale, w * next[k].norm());
    }
    res.q = std::move(next);
    res.report.residuals.push_back(r);
    res.report.iterations = it + 1;
    if (!std::isfinite(r)) fail(ErrorCode::divergence, "q_along_orbit: non-finite iterate");
    if (r <= cfg.tol_iter * std::max(1.0, scale)) {
      res.report.converged = true;
      break;
    }
  }
  res.report.measured_ratio = median_ratio(res.report.residuals);
  if (!res.report.converged) fail(ErrorCode::divergence, "q_along_orbit: no convergence within max_iters");
  res.Q = res.q.front();
  res.P = eta - res.Q;
  res.E_ratio = res.Q.norm() / xn;
  return res;
}

// ---------------------------------------------------------------------------

SemiconjugacyReport semiconjugacy_residual(const StraightenedSystem& ss, const ReductionResult& result, double t_max,
                                           const ReductionConfig& cfg, int n_samples) {
  if (n_samples < 2) fail(ErrorCode::argument, "semiconjugacy_residual: need at least two sample times");
  const FastSlowSystem& sys = ss.base;
  const double dT = t_max / static_cast<double>(n_samples - 1);
  const IntegratorConfig hc = half_step(cfg, dT);
  SemiconjugacyReport rep;
  Vec x = ss.lift(result.xi, result.eta), y = result.eta;
  Vec px = ss.h.smooth(result.P), py = result.P;
  for (int j = 0; j < n_samples; ++j) {
    const double t = j * dT;
    double r = 0.0;
    if (j > 0) {
      const OrbitPath a = orbit_or_throw(sys, x, y, dT, hc);
      const OrbitPath b = orbit_or_throw(sys, px, py, dT, hc);
      x = a.x.back();
      y = a.y.back();
      px = b.x.back();
      py = b.y.back();
      const ReductionResult at = q_along_orbit(ss, x - ss.h.smooth(y), y, cfg);
      r = (at.P - py).norm();
    } else {
      r = (result.P - py).norm();
    }
    rep.t.push_back(t);
    rep.residual.push_back(r);
    rep.max_residual = std::max(rep.max_residual, r);
  }
  return rep;
}

AttractionFit attraction_rate_fit(const StraightenedSystem& ss, const ReductionResult& result, double t_max,
                                  const ReductionConfig& cfg, double noise_floor) {
  const FastSlowSystem& sys = ss.base;
  const IntegratorConfig hc = half_step(cfg, t_max);
  const OrbitPath a = orbit_or_throw(sys, ss.lift(result.xi, result.eta), result.eta, t_max, hc);
  const OrbitPath b = orbit_or_throw(sys, ss.h.smooth(result.P), result.P, t_max, hc);
  std::vector<double> full(a.size()), slow(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    full[k] = sys.norm.pair(a.x[k] - b.x[k], a.y[k] - b.y[k]);
    slow[k] = (a.y[k] - b.y[k]).norm();
  }
  AttractionFit out;
  out.prefactor_bound = ss.slow_prefactor_bound() * sys.norm(result.xi);
  try {
    out.full = fit_exponential(a.t, full, noise_floor);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::underdetermined) throw;
    out.underdetermined = true;
  }
  try {
    out.slow = fit_exponential(a.t, slow, noise_floor);
    out.prefactor_ok = out.slow.prefactor <= 1.05 * out.prefactor_bound;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::underdetermined) throw;
    out.slow_underdetermined = true;
  }
  return out;
}

// ---------------------------------------------------------------------------

DpResult dp_point(const StraightenedSystem& ss, const ReductionResult& result, const ReductionConfig& cfg) {
  const FastSlowSystem& sys = ss.base;
  if (!(2.0 * ss.N1 < ss.mu_prime)) fail(ErrorCode::infeasible, "dp_point: 2*N1 >= mu - K*M1x");
  if (!sys.has_first_derivatives()) fail(ErrorCode::capability, "dp_point: DF/Dg not supplied");
  const int m = sys.m, n = sys.n, N = m + n;
  IntegratorConfig vc = cfg.integ;
  vc.dt = result.orbit.dt;
  const VariationalPath var =
      variational_flow(sys, result.orbit.x.front(), result.orbit.y.front(), 0.0, result.T_f, 1, vc);
  const std::size_t S = var.base.size();
  if (S != result.q.size() || (S - 1) % 2 != 0) fail(ErrorCode::numeric, "dp_point: orbit grids do not align");

  Mat J0 = Mat::Identity(N, N);
  J0.block(0, m, m, n) = ss.Dh.smooth(result.eta);

  DpResult out;
  std::vector<Mat> Zg(S), I(S);
  for (std::size_t k = 0; k < S; ++k) {
    const Mat PhiJ = var.first[k] * J0;
    out.variational_growth = std::max(out.variational_growth, PhiJ.norm());
    const Vec& x = var.base.x[k];
    const Vec& y = var.base.y[k];
    const Vec p = y - result.q[k];
    Zg[k] = ss.Z_generator(p);
    I[k] = Zg[k] * PhiJ.bottomRows(n) - sys.Dg(x, y) * PhiJ;
  }
  // w' = Z w - I backward from w(T_f) = 0.
  const long coarse = static_cast<long>(S - 1) / 2;
  const double h = -2.0 * result.orbit.dt;
  auto rhs = [&](std::size_t k, const Mat& w) { return Mat(Zg[k] * w - I[k]); };
  Mat w = Mat::Zero(n, N);
  for (long k = coarse; k > 0; --k) {
    const Mat k1 = rhs(2 * k, w);
    const Mat k2 = rhs(2 * k - 1, w + 0.5 * h * k1);
    const Mat k3 = rhs(2 * k - 1, w + 0.5 * h * k2);
    const Mat k4 = rhs(2 * k - 2, w + h * k3);
    w += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  out.Q1 = w;
  out.P1 = Mat::Zero(n, N);
  out.P1.rightCols(n) = Mat::Identity(n, n);
  out.P1 -= w;
  return out;
}

Mat dp_finite_difference(const StraightenedSystem& ss, const Vec& xi, const Vec& eta, const ReductionConfig& cfg,
                         double step) {
  const int m = ss.base.m, n = ss.base.n;
  Mat out(n, m + n);
  for (int j = 0; j < m + n; ++j) {
    Vec xp = xi, xm = xi, yp = eta, ym = eta;
    if (j < m) {
      xp(j) += step;
      xm(j) -= step;
    } else {
      yp(j - m) += step;
      ym(j - m) -= step;
    }
    out.col(j) = (q_along_orbit(ss, xp, yp, cfg).P - q_along_orbit(ss, xm, ym, cfg).P) / (2.0 * step);
  }
  return out;
}

// ---------------------------------------------------------------------------

Decomposition decompose_orbit(const StraightenedSystem& ss, const ReductionResult& result, double t_max,
                              const ReductionConfig& cfg, double noise_floor) {
  const FastSlowSystem& sys = ss.base;
  const IntegratorConfig hc = half_step(cfg, t_max);
  Decomposition d;
  const Vec x0 = ss.lift(result.xi, result.eta);
  const Vec px = ss.h.smooth(result.P);
  d.orbit = orbit_or_throw(sys, x0, result.eta, t_max, hc);
  d.outer = orbit_or_throw(sys, px, result.P, t_max, hc);
  d.layer = d.orbit;
  const std::size_t S = d.orbit.size();
  for (std::size_t k = 0; k < S; ++k) {
    d.layer.x[k] = d.orbit.x[k] - d.outer.x[k];
    d.layer.y[k] = d.orbit.y[k] - d.outer.y[k];
    const double err = sys.norm.pair(d.outer.x[k] + d.layer.x[k] - d.orbit.x[k],
                                     d.outer.y[k] + d.layer.y[k] - d.orbit.y[k]);
    d.reconstruction_error = std::max(d.reconstruction_error, err);
  }
  const double dist = sys.norm.pair(x0 - px, result.eta - result.P);
  const double rate = ss.mu_prime / 1.05;
  double head = 0.0, tail = 0.0;
  for (std::size_t k = 0; k < S; ++k) {
    const double size = sys.norm.pair(d.layer.x[k], d.layer.y[k]);
    if (k > 0 && size <= noise_floor) continue;
    const double wgt = size * std::exp(rate * d.layer.t[k]);
    if (d.layer.t[k] <= 0.5 * t_max) head = std::max(head, wgt); else tail = std::max(tail, wgt);
  }
  d.C_fit = dist > 0.0 ? std::max(head, tail) / dist : 0.0;
  // The weighted layer must not grow: its tail maximum stays below the head maximum.
  d.bound_ok = tail <= head * (1.0 + 1e-9) + 1e-14;
  return d;
}

std::string decomposition_csv(const Decomposition& d) {
  const int m = d.orbit.x.empty() ? 0 : static_cast<int>(d.orbit.x[0].size());
  const int n = d.orbit.y.empty() ? 0 : static_cast<int>(d.orbit.y[0].size());
  std::vector<std::string> header{"t"};
  for (const char* track : {"orbit", "outer", "layer"}) {
    for (int i = 0; i < m; ++i) header.push_back(std::string(track) + "_x" + std::to_string(i));
    for (int i = 0; i < n; ++i) header.push_back(std::string(track) + "_y" + std::to_string(i));
  }
  std::vector<std::vector<double>> rows;
  rows.reserve(d.orbit.size());
  for (std::size_t k = 0; k < d.orbit.size(); ++k) {
    std::vector<double> row{d.orbit.t[k]};
    for (const OrbitPath* p : {&d.orbit, &d.outer, &d.layer}) {
      for (int i = 0; i < m; ++i) row.push_back(p->x[k](i));
      for (int i = 0; i < n; ++i) row.push_back(p->y[k](i));
    }
    rows.push_back(std::move(row));
  }
  return to_csv(header, rows);
}

}  // namespace slowfast
