#pragma once

#include <vector>

#include "json.hpp"

#include "slowfast/certify.hpp"
#include "slowfast/core.hpp"
#include "slowfast/integrate.hpp"

namespace slowfast {

struct LPConfig {
  GridDomain grid;
  /// Backward horizon; 0 selects the truncation rule with tol_phi.
  double horizon = 0.0;
  double tol_phi = 1e-10;
  int max_iters = 60;
  double tol_fixed_point = 1e-11;
  IntegratorConfig integ{0.01};
  int jobs = 1;
  /// Reject iterates outside the ball (sup + 1.1 * Lipschitz estimate <= radius).
  bool check_ball = true;

  double resolved_horizon(const ConstantsCertificate& cert) const;
};

struct ContractionReport {
  std::vector<double> residuals;
  double measured_ratio = 0.0;
  double theoretical_ratio = 0.0;
  bool converged = false;
  int iterations = 0;

  nlohmann::json to_json() const;
};

/// Median of successive residual ratios (0 when fewer than two positive residuals).
double median_ratio(const std::vector<double>& residuals);

/// Ball membership of the BC^{0,1} norm, with the 10% safety factor on the Lipschitz estimate.
bool in_ball(const FastField& sigma, const FastNorm& norm, double radius);

/// Lambda(sigma) at every grid node.
FastField lp_map(const FastSlowSystem& sys, const FastField& sigma, const ConstantsCertificate& cert,
                 const LPConfig& cfg);

struct LPResult {
  FastField h;
  ContractionReport report;
};

/// Fixed point of lp_map from sigma0 (zero when empty). Divergence raises with the report attached in the message.
LPResult lp_solve(const FastSlowSystem& sys, const ConstantsCertificate& cert, const LPConfig& cfg,
                  const FastField* sigma0 = nullptr);

/// Node-wise Newton roots of F(., y) = 0 (the critical manifold branch), continued across the grid.
FastField newton_branch(const FastSlowSystem& sys, const GridDomain& grid, const Vec& x_seed);

/// max over nodes of |h(eta) - int_{-T}^0 T0(0,s) R0(h(psi(s)), psi(s)) ds|. When psi leaves the
/// grid box at -tau the integral is split there: T0(0,-tau) h(psi(-tau)) + int_{-tau}^0 ...
double eqv_residual(const FastSlowSystem& sys, const FastField& h, const ConstantsCertificate& cert,
                    const LPConfig& cfg);

struct GraphDeviation {
  double max_deviation = 0.0;
  std::vector<double> t;
  std::vector<double> deviation;
  bool partial = false;
  double t_reached = 0.0;
};

/// Deviation |x(t) - h(y(t))| of the full orbit from (x0, eta); x0 defaults to h(eta).
/// Stops (flagged partial) once y leaves the grid box.
GraphDeviation invariance_residual(const FastSlowSystem& sys, const FastField& h, const Vec& eta, double t_max,
                                   const IntegratorConfig& cfg, const Vec* x0 = nullptr);

// ---------------------------------------------------------------------------

/// Gamma_eta(W)(0) at every node.
OperatorField dh_map(const FastSlowSystem& sys, const FastField& h, const OperatorField& w_field,
                     const ConstantsCertificate& cert, const LPConfig& cfg);

struct DhResult {
  OperatorField Dh;
  ContractionReport report;
  /// max node error against finite differences of h
  double fd_error = 0.0;
};

DhResult dh_solve(const FastSlowSystem& sys, const FastField& h, const ConstantsCertificate& cert,
                  const LPConfig& cfg);

/// One sweep of the second-order map; fields are m x n^2 with column a*n + b.
OperatorField d2h_map(const FastSlowSystem& sys, const FastField& h, const OperatorField& Dh,
                      const OperatorField& h2_field, const ConstantsCertificate& cert, const LPConfig& cfg);

struct D2hResult {
  OperatorField D2h;
  ContractionReport report;
  double fd_error = 0.0;
};

D2hResult d2h_solve(const FastSlowSystem& sys, const FastField& h, const OperatorField& Dh,
                    const ConstantsCertificate& cert, const LPConfig& cfg);

/// y' = g_hat(h0(y), y, 0) in slow time, lifted by x = h0(y). Stops (partial) when y leaves the grid box.
OrbitPath reduced_flow(const FastSlowSystem& sys, const FastField& h0, const Vec& eta, double tau_end,
                       const IntegratorConfig& cfg);

}  // namespace slowfast
