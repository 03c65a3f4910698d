#include "slowfast/slow_manifold.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "slowfast/parallel.hpp"

namespace slowfast {

double LPConfig::resolved_horizon(const ConstantsCertificate& cert) const {
  return horizon > 0.0 ? horizon : truncation_horizon(cert, tol_phi);
}

nlohmann::json ContractionReport::to_json() const {
  return {{"residuals", residuals},
          {"measured_ratio", measured_ratio},
          {"theoretical_ratio", theoretical_ratio},
          {"converged", converged},
          {"iterations", iterations}};
}

double median_ratio(const std::vector<double>& residuals) {
  std::vector<double> ratios;
  for (std::size_t i = 1; i < residuals.size(); ++i)
    if (residuals[i - 1] > 0.0) ratios.push_back(residuals[i] / residuals[i - 1]);
  if (ratios.empty()) return 0.0;
  std::sort(ratios.begin(), ratios.end());
  const std::size_t k = ratios.size();
  return k % 2 ? ratios[k / 2] : 0.5 * (ratios[k / 2 - 1] + ratios[k / 2]);
}

bool in_ball(const FastField& sigma, const FastNorm& norm, double radius) {
  return sup_norm(sigma, norm) + 1.1 * lipschitz_estimate(sigma, norm) <= radius;
}

namespace {

void require_existence(const ConstantsCertificate& cert, const char* who) {
  if (!cert.H_ok()) fail(ErrorCode::contraction, std::string(who) + ": K*M1x >= mu");
  if (!cert.existence_ok())
    fail(ErrorCode::infeasible, std::string(who) + ": existence inequality fails for the certificate (delta budget)");
}

std::string residual_trace(const std::vector<double>& r) {
  std::ostringstream os;
  os << "residuals:";
  for (double v : r) os << ' ' << v;
  return os.str();
}

/// Lagrange weights of the four uniform nodes start..start+3 at fractional index s.
std::array<double, 4> cubic_weights(double s, long start) {
  std::array<double, 4> w{};
  for (int i = 0; i < 4; ++i) {
    double acc = 1.0;
    for (int j = 0; j < 4; ++j)
      if (j != i) acc *= (s - (start + j)) / static_cast<double>(i - j);
    w[i] = acc;
  }
  return w;
}

/// Value of a coarse-grid sequence at index k + 1/2.
template <class V>
V midpoint(const std::vector<V>& v, long k) {
  const long n = static_cast<long>(v.size());
  if (n < 4) return 0.5 * (v[k] + v[k + 1]);
  const long start = std::clamp(k - 1, 0L, n - 4);
  const auto w = cubic_weights(k + 0.5, start);
  V acc = w[0] * v[start];
  for (int i = 1; i < 4; ++i) acc += w[i] * v[start + i];
  return acc;
}

/// Jacobian blocks along a slow path sampled on the half-step grid.
struct PathJacobians {
  std::vector<Mat> Fx, Fy, Gx, Gy;
};

/// Bounded solution along the slow path of eta on the half-step grid (midpoints by cubic interpolation).
/// Derivatives are linearized along this track rather than along h, which is only affine outside the box.
std::vector<Vec> fast_track(const FastSlowSystem& sys, const FastField& h, const Vec& eta, double T,
                            const ConstantsCertificate& cert, const IntegratorConfig& integ) {
  const OrbitPath phi = bounded_solution(sys, h, eta, T, cert, integ);
  const long coarse = static_cast<long>(phi.size()) - 1;
  std::vector<Vec> x(2 * coarse + 1);
  for (long k = 0; k <= coarse; ++k) x[2 * k] = phi.x[k];
  for (long k = 0; k < coarse; ++k) x[2 * k + 1] = midpoint(phi.x, k);
  return x;
}

using Tracks = std::vector<std::vector<Vec>>;

Tracks all_tracks(const FastSlowSystem& sys, const FastField& h, const ConstantsCertificate& cert,
                  const LPConfig& cfg) {
  const double T = cfg.resolved_horizon(cert);
  const GridDomain& dom = h.domain();
  Tracks tracks(dom.size());
  parallel_for(dom.size(), cfg.jobs,
               [&](std::size_t i) { tracks[i] = fast_track(sys, h, dom.node(i), T, cert, cfg.integ); });
  return tracks;
}

PathJacobians path_jacobians(const FastSlowSystem& sys, const std::vector<Vec>& track, const OrbitPath& psi) {
  const int m = sys.m, n = sys.n;
  PathJacobians J;
  const std::size_t N = psi.size();
  if (track.size() != N) fail(ErrorCode::numeric, "path_jacobians: track and slow path grids differ");
  J.Fx.resize(N);
  J.Fy.resize(N);
  J.Gx.resize(N);
  J.Gy.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    const Vec& x = track[i];
    const Mat df = sys.DF(x, psi.y[i]);
    const Mat dg = sys.Dg(x, psi.y[i]);
    J.Fx[i] = df.leftCols(m);
    J.Fy[i] = df.rightCols(n);
    J.Gx[i] = dg.leftCols(m);
    J.Gy[i] = dg.rightCols(n);
  }
  return J;
}

/// z' = A(t) z backward from z(0) = I on the coarse grid; A sampled on the half grid.
std::vector<Mat> backward_z(const std::vector<Mat>& A, double h, int n) {
  const long coarse = static_cast<long>(A.size() - 1) / 2;
  std::vector<Mat> z(coarse + 1);
  Mat cur = Mat::Identity(n, n);
  z[coarse] = cur;
  const double s = -h;
  for (long k = coarse; k > 0; --k) {
    const Mat& a0 = A[2 * k];
    const Mat& am = A[2 * k - 1];
    const Mat& a1 = A[2 * k - 2];
    const Mat k1 = a0 * cur;
    const Mat k2 = am * (cur + 0.5 * s * k1);
    const Mat k3 = am * (cur + 0.5 * s * k2);
    const Mat k4 = a1 * (cur + s * k3);
    cur += (s / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    z[k - 1] = cur;
  }
  return z;
}

/// Second-order composition: column a*n + b holds H[z(:,a), z(:,b)] for an m x n^2 field H.
Mat bilinear(const Mat& H, const Mat& z) {
  const int n = static_cast<int>(z.rows());
  const int p = static_cast<int>(z.cols());
  Mat out = Mat::Zero(H.rows(), p * p);
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < p; ++b)
      for (int c = 0; c < n; ++c)
        for (int d = 0; d < n; ++d) {
          const double coef = z(c, a) * z(d, b);
          if (coef != 0.0) out.col(a * p + b) += coef * H.col(c * n + d);
        }
  return out;
}

/// Column a*n + b holds Y(:,a)^T Hess_i Y(:,b) in row i.
Mat hessian_form(const std::vector<Mat>& hess, const Mat& Y) {
  const int p = static_cast<int>(Y.cols());
  Mat out(hess.size(), p * p);
  for (std::size_t i = 0; i < hess.size(); ++i) {
    const Mat HY = hess[i] * Y;
    for (int a = 0; a < p; ++a)
      for (int b = 0; b < p; ++b) out(i, a * p + b) = Y.col(a).dot(HY.col(b));
  }
  return out;
}

double field_error(const OperatorField& a, const OperatorField& b, const FastNorm& norm) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, norm.op_from_slow(a.at(i) - b.at(i)));
  return e;
}

}  // namespace

FastField lp_map(const FastSlowSystem& sys, const FastField& sigma, const ConstantsCertificate& cert,
                 const LPConfig& cfg) {
  require_existence(cert, "lp_map");
  if (cfg.check_ball && !in_ball(sigma, sys.norm, cert.ball_radius()))
    fail(ErrorCode::precondition, "lp_map: iterate lies outside the ball of radius K*M0/mu + delta");
  const double T = cfg.resolved_horizon(cert);
  const GridDomain& dom = sigma.domain();
  std::vector<Vec> out(dom.size());
  parallel_for(dom.size(), cfg.jobs, [&](std::size_t i) {
    const OrbitPath phi = bounded_solution(sys, sigma, dom.node(i), T, cert, cfg.integ);
    out[i] = phi.x.back();
  });
  return FastField(dom, std::move(out));
}

LPResult lp_solve(const FastSlowSystem& sys, const ConstantsCertificate& cert, const LPConfig& cfg,
                  const FastField* sigma0) {
  require_existence(cert, "lp_solve");
  LPResult res;
  res.report.theoretical_ratio = cert.lp_ratio();
  FastField sigma = sigma0 ? *sigma0 : FastField::constant(cfg.grid, Vec::Zero(sys.m));
  for (int it = 0; it < cfg.max_iters; ++it) {
    FastField next = lp_map(sys, sigma, cert, cfg);
    const double r = sup_distance(next, sigma, sys.norm);
    res.report.residuals.push_back(r);
    res.report.iterations = it + 1;
    sigma = std::move(next);
    if (!std::isfinite(r)) fail(ErrorCode::divergence, "lp_solve: non-finite residual; " + residual_trace(res.report.residuals));
    if (r <= cfg.tol_fixed_point) {
      res.report.converged = true;
      break;
    }
  }
  res.report.measured_ratio = median_ratio(res.report.residuals);
  if (!res.report.converged)
    fail(ErrorCode::divergence, "lp_solve: no convergence within max_iters; " + residual_trace(res.report.residuals));
  res.h = std::move(sigma);
  return res;
}

FastField newton_branch(const FastSlowSystem& sys, const GridDomain& grid, const Vec& x_seed) {
  std::vector<Vec> vals(grid.size());
  Vec seed = x_seed;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    vals[i] = newton_root(sys, grid.node(i), seed);
    seed = vals[i];
  }
  return FastField(grid, std::move(vals));
}

double eqv_residual(const FastSlowSystem& sys, const FastField& h, const ConstantsCertificate& cert,
                    const LPConfig& cfg) {
  const double T = cfg.resolved_horizon(cert);
  const GridDomain& dom = h.domain();
  std::vector<double> res(dom.size(), 0.0);
  parallel_for(dom.size(), cfg.jobs, [&](std::size_t i) {
    const Vec eta = dom.node(i);
    const OrbitPath psi = backward_slow_path(sys, h, eta, T, cfg.integ);
    const long coarse = static_cast<long>(psi.size() - 1) / 2;
    const double dt = T / static_cast<double>(coarse);
    auto rhs = [&](const Vec& v, const Vec& y) {
      return Vec(sys.A0(y) * v + eval_R0(sys, h.smooth(y), y));
    };
    // Start where the backward path was last inside the box; the earlier part of the
    // integral is h at that point carried forward by the process.
    long first = 0;
    for (long k = coarse; k >= 0; --k)
      if (!dom.contains(psi.y[2 * k], 1e-12)) {
        first = k + 1;
        break;
      }
    Vec v = first > 0 ? h.smooth(psi.y[2 * first]) : Vec(Vec::Zero(sys.m));
    for (long k = first; k < coarse; ++k) {
      const Vec& y0 = psi.y[2 * k];
      const Vec& ym = psi.y[2 * k + 1];
      const Vec& y1 = psi.y[2 * k + 2];
      const Vec k1 = rhs(v, y0);
      const Vec k2 = rhs(v + 0.5 * dt * k1, ym);
      const Vec k3 = rhs(v + 0.5 * dt * k2, ym);
      const Vec k4 = rhs(v + dt * k3, y1);
      v += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    res[i] = sys.norm(v - h.at(i));
  });
  return *std::max_element(res.begin(), res.end());
}

GraphDeviation invariance_residual(const FastSlowSystem& sys, const FastField& h, const Vec& eta, double t_max,
                                   const IntegratorConfig& cfg, const Vec* x0) {
  h.domain().require_contains(eta);
  const Vec start = x0 ? *x0 : h.cubic(eta);
  OrbitPath orbit;
  GraphDeviation out;
  try {
    orbit = flow(sys, start, eta, 0.0, t_max, cfg);
  } catch (const DomainExit& e) {
    orbit = e.path();
    out.partial = true;
  }
  for (std::size_t k = 0; k < orbit.size(); ++k) {
    if (!h.domain().contains(orbit.y[k], 1e-12)) {
      out.partial = true;
      break;
    }
    const double d = sys.norm(orbit.x[k] - h.cubic(orbit.y[k]));
    out.t.push_back(orbit.t[k]);
    out.deviation.push_back(d);
    out.max_deviation = std::max(out.max_deviation, d);
    out.t_reached = orbit.t[k];
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

OperatorField dh_sweep(const FastSlowSystem& sys, const FastField& h, const OperatorField& w_field,
                       const ConstantsCertificate& cert, const LPConfig& cfg, const Tracks& tracks) {
  const double T = cfg.resolved_horizon(cert);
  const GridDomain& dom = h.domain();
  const int n = sys.n;
  std::vector<Mat> out(dom.size());
  parallel_for(dom.size(), cfg.jobs, [&](std::size_t i) {
    const OrbitPath psi = backward_slow_path(sys, h, dom.node(i), T, cfg.integ);
    const PathJacobians J = path_jacobians(sys, tracks[i], psi);
    const std::size_t N = psi.size();
    const long coarse = static_cast<long>(N - 1) / 2;
    const double dt = T / static_cast<double>(coarse);
    std::vector<Mat> Az(N);
    for (std::size_t k = 0; k < N; ++k) Az[k] = J.Gx[k] * w_field.extended(psi.y[k]) + J.Gy[k];
    const std::vector<Mat> z = backward_z(Az, dt, n);

    Mat v = w_field.extended(psi.y.front()) * z.front();
    auto rhs = [&](const Mat& w, std::size_t j, const Mat& zz) { return Mat(J.Fx[j] * w + J.Fy[j] * zz); };
    for (long k = 0; k < coarse; ++k) {
      const Mat zm = midpoint(z, k);
      const Mat k1 = rhs(v, 2 * k, z[k]);
      const Mat k2 = rhs(v + 0.5 * dt * k1, 2 * k + 1, zm);
      const Mat k3 = rhs(v + 0.5 * dt * k2, 2 * k + 1, zm);
      const Mat k4 = rhs(v + dt * k3, 2 * k + 2, z[k + 1]);
      v += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!v.allFinite()) fail(ErrorCode::numeric, "dh_map: non-finite derivative");
    out[i] = v;
  });
  return OperatorField(dom, std::move(out));
}

void require_first_order(const FastSlowSystem& sys, const ConstantsCertificate& cert) {
  if (!sys.has_first_derivatives()) fail(ErrorCode::capability, "dh_map: DF/Dg not supplied");
  if (!cert.smooth_ok()) fail(ErrorCode::infeasible, "dh_map: smoothness inequality fails at rho");
}

void require_second_order(const FastSlowSystem& sys, const ConstantsCertificate& cert) {
  if (!sys.has_second_derivatives() || !sys.has_first_derivatives())
    fail(ErrorCode::capability, "d2h_map: second derivatives not supplied");
  if (!cert.second_order_ok()) fail(ErrorCode::infeasible, "d2h_map: second-order budget violated");
}

}  // namespace

OperatorField dh_map(const FastSlowSystem& sys, const FastField& h, const OperatorField& w_field,
                     const ConstantsCertificate& cert, const LPConfig& cfg) {
  require_first_order(sys, cert);
  return dh_sweep(sys, h, w_field, cert, cfg, all_tracks(sys, h, cert, cfg));
}

DhResult dh_solve(const FastSlowSystem& sys, const FastField& h, const ConstantsCertificate& cert,
                  const LPConfig& cfg) {
  DhResult res;
  res.report.theoretical_ratio = cert.dh_ratio();
  require_first_order(sys, cert);
  const Tracks tracks = all_tracks(sys, h, cert, cfg);
  OperatorField w = OperatorField::constant(h.domain(), Mat::Zero(sys.m, sys.n));
  for (int it = 0; it < cfg.max_iters; ++it) {
    OperatorField next = dh_sweep(sys, h, w, cert, cfg, tracks);
    const double r = sup_distance(next, w, sys.norm);
    res.report.residuals.push_back(r);
    res.report.iterations = it + 1;
    w = std::move(next);
    if (!std::isfinite(r)) fail(ErrorCode::divergence, "dh_solve: non-finite residual");
    if (r <= cfg.tol_fixed_point) {
      res.report.converged = true;
      break;
    }
  }
  res.report.measured_ratio = median_ratio(res.report.residuals);
  if (!res.report.converged)
    fail(ErrorCode::divergence, "dh_solve: no convergence within max_iters; " + residual_trace(res.report.residuals));
  res.fd_error = field_error(w, finite_difference_derivative(h), sys.norm);
  res.Dh = std::move(w);
  return res;
}

namespace {

OperatorField d2h_sweep(const FastSlowSystem& sys, const FastField& h, const OperatorField& Dh,
                        const OperatorField& h2_field, const ConstantsCertificate& cert, const LPConfig& cfg,
                        const Tracks& tracks) {
  const double T = cfg.resolved_horizon(cert);
  const GridDomain& dom = h.domain();
  const int n = sys.n;
  std::vector<Mat> out(dom.size());
  parallel_for(dom.size(), cfg.jobs, [&](std::size_t i) {
    const OrbitPath psi = backward_slow_path(sys, h, dom.node(i), T, cfg.integ);
    const PathJacobians J = path_jacobians(sys, tracks[i], psi);
    const std::size_t N = psi.size();
    const long coarse = static_cast<long>(N - 1) / 2;
    const double dt = T / static_cast<double>(coarse);

    std::vector<Mat> W(N), H2(N), Az(N);
    std::vector<std::vector<Mat>> hF(N), hG(N);
    for (std::size_t k = 0; k < N; ++k) {
      const Vec& x = tracks[i][k];
      W[k] = Dh.extended(psi.y[k]);
      H2[k] = h2_field.extended(psi.y[k]);
      Az[k] = J.Gx[k] * W[k] + J.Gy[k];
      hF[k] = sys.D2F(x, psi.y[k]);
      hG[k] = sys.D2g(x, psi.y[k]);
    }
    auto stack = [&](std::size_t k, const Mat& z1) {
      Mat Y(sys.m + n, n);
      Y.topRows(sys.m) = W[k] * z1;
      Y.bottomRows(n) = z1;
      return Y;
    };
    // Backward solve of (z1, z2) from (I, 0).
    auto zrhs = [&](std::size_t k, const Mat& z1, const Mat& z2, Mat& d1, Mat& d2) {
      d1 = Az[k] * z1;
      d2 = Az[k] * z2 + J.Gx[k] * bilinear(H2[k], z1) + hessian_form(hG[k], stack(k, z1));
    };
    std::vector<Mat> z1s(coarse + 1), z2s(coarse + 1);
    Mat z1 = Mat::Identity(n, n), z2 = Mat::Zero(n, n * n);
    z1s[coarse] = z1;
    z2s[coarse] = z2;
    const double s = -dt;
    for (long k = coarse; k > 0; --k) {
      Mat a1, b1, a2, b2, a3, b3, a4, b4;
      zrhs(2 * k, z1, z2, a1, b1);
      zrhs(2 * k - 1, z1 + 0.5 * s * a1, z2 + 0.5 * s * b1, a2, b2);
      zrhs(2 * k - 1, z1 + 0.5 * s * a2, z2 + 0.5 * s * b2, a3, b3);
      zrhs(2 * k - 2, z1 + s * a3, z2 + s * b3, a4, b4);
      z1 += (s / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
      z2 += (s / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
      z1s[k - 1] = z1;
      z2s[k - 1] = z2;
    }
    // Forward solve of w2.
    auto wrhs = [&](std::size_t k, const Mat& w2, const Mat& zz1, const Mat& zz2) {
      return Mat(J.Fx[k] * w2 + J.Fy[k] * zz2 + hessian_form(hF[k], stack(k, zz1)));
    };
    Mat w2 = bilinear(H2.front(), z1s.front()) + W.front() * z2s.front();
    for (long k = 0; k < coarse; ++k) {
      const Mat z1m = midpoint(z1s, k), z2m = midpoint(z2s, k);
      const Mat k1 = wrhs(2 * k, w2, z1s[k], z2s[k]);
      const Mat k2 = wrhs(2 * k + 1, w2 + 0.5 * dt * k1, z1m, z2m);
      const Mat k3 = wrhs(2 * k + 1, w2 + 0.5 * dt * k2, z1m, z2m);
      const Mat k4 = wrhs(2 * k + 2, w2 + dt * k3, z1s[k + 1], z2s[k + 1]);
      w2 += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!w2.allFinite()) fail(ErrorCode::numeric, "d2h_map: non-finite second derivative");
    out[i] = w2;
  });
  return OperatorField(dom, std::move(out));
}

}  // namespace

OperatorField d2h_map(const FastSlowSystem& sys, const FastField& h, const OperatorField& Dh,
                      const OperatorField& h2_field, const ConstantsCertificate& cert, const LPConfig& cfg) {
  require_second_order(sys, cert);
  return d2h_sweep(sys, h, Dh, h2_field, cert, cfg, all_tracks(sys, h, cert, cfg));
}

D2hResult d2h_solve(const FastSlowSystem& sys, const FastField& h, const OperatorField& Dh,
                    const ConstantsCertificate& cert, const LPConfig& cfg) {
  D2hResult res;
  // First-order sensitivity of the start value and the z2 coupling.
  const double gap = cert.mu_prime() - 2.0 * cert.N1 * (cert.rho + 1.0);
  res.report.theoretical_ratio = gap > 0.0 ? cert.K * cert.M1y * cert.N1 / (gap * gap) : INFINITY;
  require_second_order(sys, cert);
  const Tracks tracks = all_tracks(sys, h, cert, cfg);
  OperatorField w = OperatorField::constant(h.domain(), Mat::Zero(sys.m, sys.n * sys.n));
  for (int it = 0; it < cfg.max_iters; ++it) {
    OperatorField next = d2h_sweep(sys, h, Dh, w, cert, cfg, tracks);
    const double r = sup_distance(next, w, sys.norm);
    res.report.residuals.push_back(r);
    res.report.iterations = it + 1;
    w = std::move(next);
    if (!std::isfinite(r)) fail(ErrorCode::divergence, "d2h_solve: non-finite residual");
    if (r <= cfg.tol_fixed_point) {
      res.report.converged = true;
      break;
    }
  }
  res.report.measured_ratio = median_ratio(res.report.residuals);
  if (!res.report.converged)
    fail(ErrorCode::divergence, "d2h_solve: no convergence within max_iters; " + residual_trace(res.report.residuals));
  res.fd_error = field_error(w, finite_difference_second_derivative(h), sys.norm);
  res.D2h = std::move(w);
  return res;
}

OrbitPath reduced_flow(const FastSlowSystem& sys, const FastField& h0, const Vec& eta, double tau_end,
                       const IntegratorConfig& cfg) {
  if (!sys.family) fail(ErrorCode::capability, "reduced_flow: system has no eps-family form");
  h0.domain().require_contains(eta);
  const EpsFamily& fam = *sys.family;
  auto rhs = [&](const Vec& y) { return Vec(fam.g_hat(h0.extended(y), y, 0.0)); };
  const long steps = std::max(1L, static_cast<long>(std::ceil(std::abs(tau_end) / cfg.dt - 1e-9)));
  if (steps > cfg.max_steps) fail(ErrorCode::argument, "reduced_flow: horizon exceeds max_steps * dt");
  const double h = tau_end / static_cast<double>(steps);
  OrbitPath path;
  path.dt = std::abs(h);
  path.horizon = std::abs(tau_end);
  Vec y = eta;
  path.t.push_back(0.0);
  path.y.push_back(y);
  path.x.push_back(h0.extended(y));
  for (long k = 0; k < steps; ++k) {
    const Vec k1 = rhs(y);
    const Vec k2 = rhs(y + 0.5 * h * k1);
    const Vec k3 = rhs(y + 0.5 * h * k2);
    const Vec k4 = rhs(y + h * k3);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    const double tn = (k + 1 == steps) ? tau_end : (k + 1) * h;
    if (!h0.domain().contains(y, 1e-12)) {
      path.partial = true;
      path.exit_time = tn;
      break;
    }
    path.t.push_back(tn);
    path.y.push_back(y);
    path.x.push_back(h0.extended(y));
  }
  if (h < 0) {
    std::reverse(path.t.begin(), path.t.end());
    std::reverse(path.x.begin(), path.x.end());
    std::reverse(path.y.begin(), path.y.end());
  }
  return path;
}

}  // namespace slowfast
