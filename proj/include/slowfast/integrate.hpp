#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "slowfast/core.hpp"

namespace slowfast {

struct ConstantsCertificate;

enum class Method { rk4 };

struct IntegratorConfig {
  double dt = 0.01;
  Method method = Method::rk4;
  /// Repeat the solve at dt/2 and dt/4 and record the error ratio (about 16 for RK4).
  bool richardson_check = false;
  long max_steps = 50'000'000;
};

/// Default step min(0.01, 0.1 / (mu + N1 * diameter)).
double default_step(double mu, double N1, double diameter);

/// Time-sampled trajectory; times are strictly increasing.
struct OrbitPath {
  std::vector<double> t;
  std::vector<Vec> x;
  std::vector<Vec> y;
  double dt = 0.0;
  double horizon = 0.0;
  bool partial = false;
  double exit_time = std::numeric_limits<double>::quiet_NaN();
  double richardson_ratio = std::numeric_limits<double>::quiet_NaN();

  std::size_t size() const { return t.size(); }
  double t0() const { return t.front(); }
  double t1() const { return t.back(); }
  /// Cubic Lagrange interpolation on the (uniform) sample grid.
  Vec slow_at(double time) const;
  Vec fast_at(double time) const;
  /// max over samples of e^{gamma |t|} |x(t)|.
  double weighted_norm(double gamma, const FastNorm& norm) const;
  void validate() const;
};

/// Orbit that left the system's definition box; carries the samples up to the exit.
class DomainExit : public Error {
 public:
  DomainExit(double time, OrbitPath partial_path);
  double time() const { return time_; }
  const OrbitPath& path() const { return path_; }

 private:
  double time_;
  OrbitPath path_;
};

/// Solution of the full system from (x0, y0) on [t0, t1]; t1 < t0 integrates backward.
OrbitPath flow(const FastSlowSystem& sys, const Vec& x0, const Vec& y0, double t0, double t1,
               const IntegratorConfig& cfg);

/// psi(t; eta, sigma): y' = g(sigma(y), y), y(t0) = eta, with sigma continued affinely outside its grid.
/// The fast track of the result holds sigma(psi(t)).
OrbitPath slow_ivp(const FastSlowSystem& sys, const FastField& sigma, const Vec& eta, double t0, double t1,
                   const IntegratorConfig& cfg);

// ---------------------------------------------------------------------------
// Linear processes T(t, s) of x' = A(t) x.

enum class Generator { A0, Ah, Z, custom };

struct ProcessHandle {
  Generator kind = Generator::custom;
  int dim = 0;
  std::function<Mat(double)> A;  // generator along the driver
  bool reversible() const { return kind == Generator::Z || kind == Generator::custom; }
};

using Driver = std::function<Vec(double)>;

/// Generator A0(psi(t)).
ProcessHandle make_A0_process(const FastSlowSystem& sys, Driver psi);
/// Generator D_xF(h(psi(t)), psi(t)).
ProcessHandle make_Ah_process(const FastSlowSystem& sys, const FastField& h, Driver psi);
/// Generator supplied directly; `dissipative` forbids t < s.
ProcessHandle make_process(std::function<Mat(double)> A, int dim, bool dissipative);

/// T(t, s) xi. Dissipative generators require t >= s.
Vec process_apply(const ProcessHandle& p, double t, double s, const Vec& xi, const IntegratorConfig& cfg);
/// Dense T(t, s); restricted to dim <= 64 unless `allow_large`.
Mat process_matrix(const ProcessHandle& p, double t, double s, const IntegratorConfig& cfg, bool allow_large = false);
/// Samples ||T(s + k dt, s)|| for k = 0..steps in the given operator norm.
std::vector<double> process_norm_series(const ProcessHandle& p, double s, double t_max, const FastNorm& norm,
                                        const IntegratorConfig& cfg);

// ---------------------------------------------------------------------------

/// Derivatives of the flow with respect to the initial point z0 = (x0, y0).
struct VariationalPath {
  OrbitPath base;
  std::vector<Mat> first;                 // (m+n) x (m+n) per sample
  std::vector<std::vector<Mat>> second;   // per sample, one (m+n) x (m+n) Hessian per component
};

VariationalPath variational_flow(const FastSlowSystem& sys, const Vec& x0, const Vec& y0, double t0, double t1,
                                 int order, const IntegratorConfig& cfg);
/// Uses the first sample of `base` as initial point and its time span.
VariationalPath variational_flow(const FastSlowSystem& sys, const OrbitPath& base, int order,
                                 const IntegratorConfig& cfg);

// ---------------------------------------------------------------------------

/// T = ln(K C_amp / tol) / (mu - K M1x), C_amp = 2 (K M0 / mu + delta).
double truncation_horizon(const ConstantsCertificate& cert, double tol_phi);

struct BoundedSolutionOptions {
  /// Literal Picard iteration of the integral map instead of one forward solve.
  bool picard = false;
  int picard_max_iters = 200;
  double picard_tol = 1e-12;
};

/// Slow path psi(t; eta, sigma) sampled backward on [-T, 0] at spacing dt/2 (for RK4 midpoints).
OrbitPath backward_slow_path(const FastSlowSystem& sys, const FastField& sigma, const Vec& eta, double horizon,
                             const IntegratorConfig& cfg);

/// Bounded solution phi on [-T, 0] of x' = F(x, psi(t; eta, sigma)).
OrbitPath bounded_solution(const FastSlowSystem& sys, const FastField& sigma, const Vec& eta, double horizon,
                           const ConstantsCertificate& cert, const IntegratorConfig& cfg,
                           const BoundedSolutionOptions& opts = {});

}  // namespace slowfast
