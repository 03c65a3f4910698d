#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "slowfast/certify.hpp"
#include "slowfast/core.hpp"
#include "slowfast/fit.hpp"
#include "slowfast/integrate.hpp"
#include "slowfast/slow_manifold.hpp"

namespace slowfast {

/// The system in x~ = x - h(y), together with the constants of the straightened problem:
/// decay rate mu' = mu - K M1x and slow Lipschitz constant N1~ = (1 + |Dh|) N1.
struct StraightenedSystem {
  FastSlowSystem base;
  FastField h;
  OperatorField Dh;
  double K = 1.0;
  double mu_prime = 0.0;
  double N1 = 0.0;
  double Dh_sup = 0.0;
  /// max over grid nodes of |F~(0, y)|
  double residual = 0.0;

  Vec F_tilde(const Vec& xt, const Vec& y) const;
  Vec g_tilde(const Vec& xt, const Vec& y) const;
  /// g~(0, p) = g(h(p), p)
  Vec g_on_manifold(const Vec& p) const;
  /// D_y g~(0, p)
  Mat Z_generator(const Vec& p) const;
  /// Original-coordinate point of (x~, y).
  Vec lift(const Vec& xt, const Vec& y) const { return xt + h.smooth(y); }

  double q_ratio() const { return K * N1 / mu_prime; }
  /// K N1~ / (mu' - K N1~)
  double e_bound() const;
  /// K^2 N1~ / (mu' - K N1~)
  double slow_prefactor_bound() const;
  /// The straightened system as a FastSlowSystem (A0 = D_xF~(0, y) by finite differences).
  FastSlowSystem as_system() const;
};

StraightenedSystem straighten(const FastSlowSystem& sys, const FastField& h, const OperatorField& Dh,
                              const ConstantsCertificate& cert);
/// Same, refusing fields whose fixed-point iterations did not converge.
StraightenedSystem straighten(const FastSlowSystem& sys, const LPResult& h, const DhResult& Dh,
                              const ConstantsCertificate& cert);

struct ReductionConfig {
  IntegratorConfig integ{0.01};
  double tol_Q = 1e-12;
  int max_iters = 200;
  double tol_iter = 1e-14;
};

struct ReductionResult {
  Vec xi, eta;
  Vec P, Q;
  /// Original-coordinate orbit on [0, T_f] at step dt/2 (an even number of steps).
  OrbitPath orbit;
  /// q(t) on the orbit's time grid
  std::vector<Vec> q;
  double T_f = 0.0;
  double E_ratio = 0.0;
  ContractionReport report;

  nlohmann::json to_json() const;
};

/// Q(xi, eta) by the orbit-local fixed point; xi is the straightened fast coordinate.
ReductionResult q_along_orbit(const StraightenedSystem& ss, const Vec& xi, const Vec& eta,
                              const ReductionConfig& cfg = {});

struct SemiconjugacyReport {
  std::vector<double> t;
  std::vector<double> residual;
  double max_residual = 0.0;
};

/// |P(orbit(t)) - y(t; (0, P))| at n_samples equally spaced times in [0, t_max]; the t = 0 term uses result.P.
SemiconjugacyReport semiconjugacy_residual(const StraightenedSystem& ss, const ReductionResult& result, double t_max,
                                           const ReductionConfig& cfg = {}, int n_samples = 21);

struct AttractionFit {
  ExpFit full;               // |orbit - projected orbit| in the product norm
  ExpFit slow;               // slow component only
  bool underdetermined = false;
  bool slow_underdetermined = false;
  double prefactor_bound = 0.0;  // K^2 N1~ / (mu' - K N1~) |xi|
  bool prefactor_ok = true;
};

AttractionFit attraction_rate_fit(const StraightenedSystem& ss, const ReductionResult& result, double t_max,
                                  const ReductionConfig& cfg = {}, double noise_floor = 1e-11);

struct DpResult {
  Mat Q1;  // n x (m + n)
  Mat P1;  // (0, I) - Q1
  /// max over the orbit of the variational flow norm (sampled K^x_1 / K^y_1 surrogate)
  double variational_growth = 0.0;
};

DpResult dp_point(const StraightenedSystem& ss, const ReductionResult& result, const ReductionConfig& cfg = {});

/// Central differences of P in the straightened coordinates (xi, eta).
Mat dp_finite_difference(const StraightenedSystem& ss, const Vec& xi, const Vec& eta, const ReductionConfig& cfg = {},
                         double step = 1e-4);

struct Decomposition {
  OrbitPath orbit, outer, layer;
  double C_fit = 0.0;
  bool bound_ok = true;
  double reconstruction_error = 0.0;
};

/// orbit = outer (slow-manifold orbit from (h(P), P)) + layer. Layer samples at or below
/// noise_floor are left out of the growth test.
Decomposition decompose_orbit(const StraightenedSystem& ss, const ReductionResult& result, double t_max,
                              const ReductionConfig& cfg = {}, double noise_floor = 1e-11);

/// Three-track CSV: t, orbit_x*, orbit_y*, outer_x*, outer_y*, layer_x*, layer_y*.
std::string decomposition_csv(const Decomposition& d);

}  // namespace slowfast
