#include "slowfast/integrate.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "slowfast/certify.hpp"

namespace slowfast {

namespace {

template <class State, class Rhs>
State rk4_step(Rhs&& f, double t, const State& z, double h) {
  const State k1 = f(t, z);
  const State k2 = f(t + 0.5 * h, State(z + (0.5 * h) * k1));
  const State k3 = f(t + 0.5 * h, State(z + (0.5 * h) * k2));
  const State k4 = f(t + h, State(z + h * k3));
  return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

long step_count(double span, double dt, const IntegratorConfig& cfg) {
  if (!(dt > 0.0)) fail(ErrorCode::argument, "integrator step must be positive");
  const long n = std::max(1L, static_cast<long>(std::ceil(std::abs(span) / dt - 1e-9)));
  if (n > cfg.max_steps) fail(ErrorCode::argument, "integration horizon exceeds max_steps * dt");
  return n;
}

bool finite(const Vec& v) { return v.allFinite(); }

void reverse_path(OrbitPath& p) {
  std::reverse(p.t.begin(), p.t.end());
  std::reverse(p.x.begin(), p.x.end());
  std::reverse(p.y.begin(), p.y.end());
}

std::string exit_message(double t, const Vec& y) {
  std::ostringstream os;
  os << "orbit left the definition box at t = " << t << " (y =";
  for (int k = 0; k < y.size(); ++k) os << ' ' << y(k);
  os << ')';
  return os.str();
}

Vec lagrange4(const std::vector<double>& t, const std::vector<Vec>& v, double time) {
  const std::size_t n = t.size();
  if (n == 1) return v[0];
  const double span = t.back() - t.front();
  const double h = span / static_cast<double>(n - 1);
  double s = (time - t.front()) / h;
  long k = static_cast<long>(std::floor(s));
  if (n < 4) {
    k = std::clamp<long>(k, 0, static_cast<long>(n) - 2);
    const double w = s - k;
    return (1.0 - w) * v[k] + w * v[k + 1];
  }
  long start = std::clamp<long>(k - 1, 0, static_cast<long>(n) - 4);
  Vec acc = Vec::Zero(v[0].size());
  for (int i = 0; i < 4; ++i) {
    double w = 1.0;
    for (int j = 0; j < 4; ++j) {
      if (j == i) continue;
      w *= (s - (start + j)) / static_cast<double>(i - j);
    }
    acc += w * v[start + i];
  }
  return acc;
}

}  // namespace

double default_step(double mu, double N1, double diameter) {
  const double denom = mu + N1 * diameter;
  if (!(denom > 0.0)) return 0.01;
  return std::min(0.01, 0.1 / denom);
}

Vec OrbitPath::slow_at(double time) const { return lagrange4(t, y, time); }
Vec OrbitPath::fast_at(double time) const { return lagrange4(t, x, time); }

double OrbitPath::weighted_norm(double gamma, const FastNorm& norm) const {
  double w = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) w = std::max(w, std::exp(gamma * std::abs(t[i])) * norm(x[i]));
  return w;
}

void OrbitPath::validate() const {
  if (x.size() != t.size() || y.size() != t.size()) fail(ErrorCode::argument, "orbit path: track lengths differ");
  for (std::size_t i = 1; i < t.size(); ++i)
    if (!(t[i] > t[i - 1])) fail(ErrorCode::argument, "orbit path: times not strictly increasing");
}

DomainExit::DomainExit(double time, OrbitPath partial_path)
    : Error(ErrorCode::domain_exit,
            exit_message(time, partial_path.y.empty() ? Vec() : partial_path.y.back())),
      time_(time),
      path_(std::move(partial_path)) {}

namespace {

OrbitPath flow_impl(const FastSlowSystem& sys, const Vec& x0, const Vec& y0, double t0, double t1, double dt,
                    const IntegratorConfig& cfg) {
  const int m = sys.m, n = sys.n;
  const long steps = step_count(t1 - t0, dt, cfg);
  const double h = (t1 - t0) / static_cast<double>(steps);
  auto rhs = [&](double, const Vec& z) {
    Vec dz(m + n);
    const Vec x = z.head(m), y = z.tail(n);
    dz.head(m) = sys.F(x, y);
    dz.tail(n) = sys.g(x, y);
    return dz;
  };
  OrbitPath path;
  path.dt = std::abs(h);
  path.horizon = std::abs(t1 - t0);
  path.t.reserve(steps + 1);
  path.x.reserve(steps + 1);
  path.y.reserve(steps + 1);
  Vec z(m + n);
  z << x0, y0;
  path.t.push_back(t0);
  path.x.push_back(x0);
  path.y.push_back(y0);
  for (long k = 0; k < steps; ++k) {
    const double t = t0 + k * h;
    z = rk4_step<Vec>(rhs, t, z, h);
    const double tn = (k + 1 == steps) ? t1 : t0 + (k + 1) * h;
    if (!finite(z)) fail(ErrorCode::numeric, "flow: non-finite state at t = " + std::to_string(tn));
    const Vec y = z.tail(n);
    if (sys.definition_box && !sys.definition_box->contains(y)) {
      if (h < 0) reverse_path(path);
      path.partial = true;
      path.exit_time = tn;
      throw DomainExit(tn, std::move(path));
    }
    path.t.push_back(tn);
    path.x.push_back(z.head(m));
    path.y.push_back(y);
  }
  if (h < 0) reverse_path(path);
  return path;
}

}  // namespace

OrbitPath flow(const FastSlowSystem& sys, const Vec& x0, const Vec& y0, double t0, double t1,
               const IntegratorConfig& cfg) {
  sys.validate();
  if (x0.size() != sys.m || y0.size() != sys.n) fail(ErrorCode::argument, "flow: initial state has wrong size");
  if (sys.definition_box && !sys.definition_box->contains(y0))
    fail(ErrorCode::domain, "flow: initial slow state outside the definition box");
  OrbitPath path = flow_impl(sys, x0, y0, t0, t1, cfg.dt, cfg);
  if (cfg.richardson_check) {
    auto end_state = [&](const OrbitPath& p) {
      const std::size_t i = t1 >= t0 ? p.size() - 1 : 0;
      Vec z(sys.m + sys.n);
      z << p.x[i], p.y[i];
      return z;
    };
    const Vec z1 = end_state(path);
    const Vec z2 = end_state(flow_impl(sys, x0, y0, t0, t1, cfg.dt / 2, cfg));
    const Vec z4 = end_state(flow_impl(sys, x0, y0, t0, t1, cfg.dt / 4, cfg));
    const double den = (z2 - z4).norm();
    path.richardson_ratio = den > 0 ? (z1 - z2).norm() / den : std::numeric_limits<double>::infinity();
  }
  return path;
}

OrbitPath slow_ivp(const FastSlowSystem& sys, const FastField& sigma, const Vec& eta, double t0, double t1,
                   const IntegratorConfig& cfg) {
  sys.validate();
  sigma.domain().require_contains(eta);
  const long steps = step_count(t1 - t0, cfg.dt, cfg);
  const double h = (t1 - t0) / static_cast<double>(steps);
  auto rhs = [&](double, const Vec& y) { return Vec(sys.g(sigma.extended(y), y)); };
  OrbitPath path;
  path.dt = std::abs(h);
  path.horizon = std::abs(t1 - t0);
  Vec y = eta;
  path.t.push_back(t0);
  path.y.push_back(y);
  path.x.push_back(sigma.extended(y));
  for (long k = 0; k < steps; ++k) {
    y = rk4_step<Vec>(rhs, t0 + k * h, y, h);
    const double tn = (k + 1 == steps) ? t1 : t0 + (k + 1) * h;
    if (!finite(y)) fail(ErrorCode::numeric, "slow_ivp: non-finite state");
    if (sys.definition_box && !sys.definition_box->contains(y)) {
      if (h < 0) reverse_path(path);
      path.partial = true;
      path.exit_time = tn;
      throw DomainExit(tn, std::move(path));
    }
    path.t.push_back(tn);
    path.y.push_back(y);
    path.x.push_back(sigma.extended(y));
  }
  if (h < 0) reverse_path(path);
  return path;
}

// ---------------------------------------------------------------------------

ProcessHandle make_A0_process(const FastSlowSystem& sys, Driver psi) {
  auto s = std::make_shared<const FastSlowSystem>(sys);
  ProcessHandle p;
  p.kind = Generator::A0;
  p.dim = sys.m;
  p.A = [s, psi = std::move(psi)](double t) { return s->A0(psi(t)); };
  return p;
}

ProcessHandle make_Ah_process(const FastSlowSystem& sys, const FastField& h, Driver psi) {
  auto s = std::make_shared<const FastSlowSystem>(sys);
  auto hf = std::make_shared<const FastField>(h);
  ProcessHandle p;
  p.kind = Generator::Ah;
  p.dim = sys.m;
  p.A = [s, hf, psi = std::move(psi)](double t) {
    const Vec y = psi(t);
    return fast_jacobian_x(*s, hf->extended(y), y);
  };
  return p;
}

ProcessHandle make_process(std::function<Mat(double)> A, int dim, bool dissipative) {
  ProcessHandle p;
  p.kind = dissipative ? Generator::A0 : Generator::custom;
  p.dim = dim;
  p.A = std::move(A);
  return p;
}

Vec process_apply(const ProcessHandle& p, double t, double s, const Vec& xi, const IntegratorConfig& cfg) {
  if (!p.reversible() && t < s) fail(ErrorCode::order, "process_apply: t < s for a dissipative generator");
  if (xi.size() != p.dim) fail(ErrorCode::argument, "process_apply: vector has wrong size");
  if (t == s) return xi;
  const long steps = step_count(t - s, cfg.dt, cfg);
  const double h = (t - s) / static_cast<double>(steps);
  auto rhs = [&](double tau, const Vec& v) { return Vec(p.A(tau) * v); };
  Vec v = xi;
  for (long k = 0; k < steps; ++k) v = rk4_step<Vec>(rhs, s + k * h, v, h);
  return v;
}

Mat process_matrix(const ProcessHandle& p, double t, double s, const IntegratorConfig& cfg, bool allow_large) {
  if (p.dim > 64 && !allow_large) fail(ErrorCode::argument, "process_matrix: dense mode is limited to m <= 64");
  if (!p.reversible() && t < s) fail(ErrorCode::order, "process_matrix: t < s for a dissipative generator");
  Mat v = Mat::Identity(p.dim, p.dim);
  if (t == s) return v;
  const long steps = step_count(t - s, cfg.dt, cfg);
  const double h = (t - s) / static_cast<double>(steps);
  auto rhs = [&](double tau, const Mat& w) { return Mat(p.A(tau) * w); };
  for (long k = 0; k < steps; ++k) v = rk4_step<Mat>(rhs, s + k * h, v, h);
  return v;
}

std::vector<double> process_norm_series(const ProcessHandle& p, double s, double t_max, const FastNorm& norm,
                                        const IntegratorConfig& cfg) {
  const long steps = step_count(t_max - s, cfg.dt, cfg);
  const double h = (t_max - s) / static_cast<double>(steps);
  auto rhs = [&](double tau, const Mat& w) { return Mat(p.A(tau) * w); };
  Mat v = Mat::Identity(p.dim, p.dim);
  std::vector<double> out;
  out.reserve(steps + 1);
  out.push_back(norm.op(v));
  for (long k = 0; k < steps; ++k) {
    v = rk4_step<Mat>(rhs, s + k * h, v, h);
    out.push_back(norm.op(v));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct VarState {
  Vec z;
  Mat phi;
  std::vector<Mat> psi;

  VarState axpy(double a, const VarState& k) const {
    VarState r;
    r.z = z + a * k.z;
    r.phi = phi + a * k.phi;
    r.psi.resize(psi.size());
    for (std::size_t i = 0; i < psi.size(); ++i) r.psi[i] = psi[i] + a * k.psi[i];
    return r;
  }
};

}  // namespace

VariationalPath variational_flow(const FastSlowSystem& sys, const Vec& x0, const Vec& y0, double t0, double t1,
                                 int order, const IntegratorConfig& cfg) {
  sys.validate();
  if (order < 1 || order > 2) fail(ErrorCode::argument, "variational_flow: order must be 1 or 2");
  if (!sys.has_first_derivatives()) fail(ErrorCode::capability, "variational_flow: DF/Dg not supplied");
  if (order == 2 && !sys.has_second_derivatives())
    fail(ErrorCode::capability, "variational_flow: D2F/D2g not supplied");
  const int m = sys.m, n = sys.n, N = m + n;
  const long steps = step_count(t1 - t0, cfg.dt, cfg);
  const double h = (t1 - t0) / static_cast<double>(steps);

  auto rhs = [&](const VarState& s) {
    VarState d;
    const Vec x = s.z.head(m), y = s.z.tail(n);
    d.z.resize(N);
    d.z.head(m) = sys.F(x, y);
    d.z.tail(n) = sys.g(x, y);
    Mat J(N, N);
    J.topRows(m) = sys.DF(x, y);
    J.bottomRows(n) = sys.Dg(x, y);
    d.phi = J * s.phi;
    if (order == 2) {
      auto hf = sys.D2F(x, y);
      auto hg = sys.D2g(x, y);
      d.psi.assign(N, Mat::Zero(N, N));
      for (int i = 0; i < N; ++i) {
        const Mat& H = i < m ? hf[i] : hg[i - m];
        Mat acc = s.phi.transpose() * H * s.phi;
        for (int j = 0; j < N; ++j)
          if (J(i, j) != 0.0) acc += J(i, j) * s.psi[j];
        d.psi[i] = std::move(acc);
      }
    }
    return d;
  };

  VarState st;
  st.z.resize(N);
  st.z << x0, y0;
  st.phi = Mat::Identity(N, N);
  if (order == 2) st.psi.assign(N, Mat::Zero(N, N));

  VariationalPath out;
  auto record = [&](double t) {
    out.base.t.push_back(t);
    out.base.x.push_back(st.z.head(m));
    out.base.y.push_back(st.z.tail(n));
    out.first.push_back(st.phi);
    if (order == 2) out.second.push_back(st.psi);
  };
  out.base.dt = std::abs(h);
  out.base.horizon = std::abs(t1 - t0);
  record(t0);
  for (long k = 0; k < steps; ++k) {
    const VarState k1 = rhs(st);
    const VarState k2 = rhs(st.axpy(0.5 * h, k1));
    const VarState k3 = rhs(st.axpy(0.5 * h, k2));
    const VarState k4 = rhs(st.axpy(h, k3));
    st = st.axpy(h / 6.0, k1).axpy(h / 3.0, k2).axpy(h / 3.0, k3).axpy(h / 6.0, k4);
    const double tn = (k + 1 == steps) ? t1 : t0 + (k + 1) * h;
    if (!finite(st.z)) fail(ErrorCode::numeric, "variational_flow: non-finite state");
    if (sys.definition_box && !sys.definition_box->contains(st.z.tail(n))) {
      out.base.partial = true;
      out.base.exit_time = tn;
      throw DomainExit(tn, out.base);
    }
    record(tn);
  }
  if (h < 0) {
    reverse_path(out.base);
    std::reverse(out.first.begin(), out.first.end());
    std::reverse(out.second.begin(), out.second.end());
  }
  return out;
}

VariationalPath variational_flow(const FastSlowSystem& sys, const OrbitPath& base, int order,
                                 const IntegratorConfig& cfg) {
  if (base.size() < 2) fail(ErrorCode::argument, "variational_flow: base orbit needs two samples");
  return variational_flow(sys, base.x.front(), base.y.front(), base.t0(), base.t1(), order, cfg);
}

// ---------------------------------------------------------------------------

double truncation_horizon(const ConstantsCertificate& cert, double tol_phi) {
  const double rate = cert.mu - cert.K * cert.M1x;
  if (!(rate > 0.0)) fail(ErrorCode::contraction, "truncation horizon: K*M1x >= mu");
  if (!(tol_phi > 0.0)) fail(ErrorCode::argument, "truncation horizon: tolerance must be positive");
  const double c_amp = 2.0 * (cert.K * cert.M0 / cert.mu + cert.delta);
  const double arg = cert.K * c_amp / tol_phi;
  const double t = arg > 1.0 ? std::log(arg) / rate : 0.0;
  return std::max(t, 1.0 / rate);
}

OrbitPath backward_slow_path(const FastSlowSystem& sys, const FastField& sigma, const Vec& eta, double horizon,
                             const IntegratorConfig& cfg) {
  if (!(horizon > 0.0)) fail(ErrorCode::argument, "backward_slow_path: horizon must be positive");
  const long coarse = step_count(horizon, cfg.dt, cfg);
  IntegratorConfig half = cfg;
  half.dt = horizon / static_cast<double>(2 * coarse);
  // Exactly 2*coarse half steps.
  OrbitPath psi = slow_ivp(sys, sigma, eta, 0.0, -horizon, half);
  psi.dt = horizon / static_cast<double>(coarse);
  return psi;
}

OrbitPath bounded_solution(const FastSlowSystem& sys, const FastField& sigma, const Vec& eta, double horizon,
                           const ConstantsCertificate& cert, const IntegratorConfig& cfg,
                           const BoundedSolutionOptions& opts) {
  if (!(cert.K * cert.M1x < cert.mu)) fail(ErrorCode::contraction, "bounded_solution: K*M1x >= mu");
  const OrbitPath psi = backward_slow_path(sys, sigma, eta, horizon, cfg);
  const long coarse = static_cast<long>(psi.size() - 1) / 2;
  const double h = horizon / static_cast<double>(coarse);

  OrbitPath out;
  out.dt = h;
  out.horizon = horizon;
  out.t.resize(coarse + 1);
  out.y.resize(coarse + 1);
  for (long k = 0; k <= coarse; ++k) {
    out.t[k] = psi.t[2 * k];
    out.y[k] = psi.y[2 * k];
  }
  out.t.back() = 0.0;

  const Vec start = sigma.extended(psi.y.front());
  if (!opts.picard) {
    out.x.resize(coarse + 1);
    Vec x = start;
    out.x[0] = x;
    for (long k = 0; k < coarse; ++k) {
      const Vec& y0 = psi.y[2 * k];
      const Vec& ym = psi.y[2 * k + 1];
      const Vec& y1 = psi.y[2 * k + 2];
      const Vec k1 = sys.F(x, y0);
      const Vec k2 = sys.F(x + 0.5 * h * k1, ym);
      const Vec k3 = sys.F(x + 0.5 * h * k2, ym);
      const Vec k4 = sys.F(x + h * k3, y1);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (!finite(x)) fail(ErrorCode::numeric, "bounded_solution: non-finite state");
      out.x[k + 1] = x;
    }
    return out;
  }

  // Picard iteration phi_{j+1}(t) = T0(t,-T) start + int_{-T}^t T0(t,s) R0(phi_j(s), psi(s)) ds,
  // realized as the linear ODE x' = A0(psi) x + R0(phi_j, psi).
  OrbitPath prev;
  prev.t = out.t;
  prev.y = out.y;
  prev.x.assign(coarse + 1, Vec());
  for (long k = 0; k <= coarse; ++k) prev.x[k] = sigma.extended(out.y[k]);
  for (int it = 0; it < opts.picard_max_iters; ++it) {
    std::vector<Vec> next(coarse + 1);
    Vec x = start;
    next[0] = x;
    for (long k = 0; k < coarse; ++k) {
      const double t0 = out.t[k];
      auto rhs = [&](const Vec& v, const Vec& y, double t) {
        const Vec phi = prev.fast_at(t);
        return Vec(sys.A0(y) * v + eval_R0(sys, phi, y));
      };
      const Vec& y0 = psi.y[2 * k];
      const Vec& ym = psi.y[2 * k + 1];
      const Vec& y1 = psi.y[2 * k + 2];
      const Vec k1 = rhs(x, y0, t0);
      const Vec k2 = rhs(x + 0.5 * h * k1, ym, t0 + 0.5 * h);
      const Vec k3 = rhs(x + 0.5 * h * k2, ym, t0 + 0.5 * h);
      const Vec k4 = rhs(x + h * k3, y1, t0 + h);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      next[k + 1] = x;
    }
    double change = 0.0;
    for (long k = 0; k <= coarse; ++k) change = std::max(change, sys.norm(next[k] - prev.x[k]));
    prev.x = std::move(next);
    if (change <= opts.picard_tol) break;
  }
  out.x = std::move(prev.x);
  return out;
}

}  // namespace slowfast
