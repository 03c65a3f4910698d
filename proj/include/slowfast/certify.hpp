#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "slowfast/core.hpp"
#include "slowfast/integrate.hpp"

namespace slowfast {

enum class Provenance { supplied, sampled, closed_form };

const char* to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

/// The constants (K, mu, M0, M1x, M1y, N0, N1, delta, rho) with provenance and
/// the hypothesis predicates built from them.
struct ConstantsCertificate {
  double K = 1.0;
  double mu = 1.0;
  double M0 = 0.0;
  double M1x = 0.0;
  double M1y = 0.0;
  double N0 = 0.0;
  double N1 = 0.0;
  double delta = 0.0;
  double rho = 0.0;
  /// Relative margin applied to every strict inequality.
  double margin = 0.01;
  /// delta sits at the machine floor because M1y = 0.
  bool delta_floor = false;
  std::map<std::string, Provenance> provenance;

  static const std::vector<std::string>& field_names();
  double get(const std::string& field) const;
  void set(const std::string& field, double value, Provenance p);

  /// a < b with the relative margin.
  bool strictly_below(double a, double b) const;

  bool H_ok() const;
  bool existence_ok() const;
  bool smooth_ok() const;
  bool reduction_ok() const;
  /// 2 N1 < mu - K M1x and K M1y / (mu - K M1x - 2 N1 (rho+1)) < 2 (rho+1) - 1.
  bool second_order_ok() const;

  double mu_prime() const { return mu - K * M1x; }
  double ball_radius() const { return K * M0 / mu + delta; }
  double lp_ratio() const;
  double dh_ratio() const;
  double dh_bound() const;
  /// Sup bound K M0/mu + K M1y/(mu - K M1x) on h.
  double h0_bound() const;

  nlohmann::json to_json() const;
  static ConstantsCertificate from_json(const nlohmann::json& j);
};

struct DeltaBudget {
  double delta = 0.0;
  double N1_cap = 0.0;
  bool floor_flag = false;
};

/// delta = 2 K M1y / (mu - K M1x), N1_cap = (mu - K M1x) / (2 (delta + 1)).
DeltaBudget delta_budget(const ConstantsCertificate& cert);
/// The existence inequality evaluated with an explicit margin (0 gives the raw inequality).
bool existence_inequality(const ConstantsCertificate& cert, double margin);

/// Smallest rho with K M1y / (mu - K M1x - N1 (rho+1)) < rho (1 - margin) and N1 (rho+1) < mu - K M1x.
double rho_budget(const ConstantsCertificate& cert);

/// Fills delta and rho from the budgets (keeping any supplied values).
void complete_budgets(ConstantsCertificate& cert);

// ---------------------------------------------------------------------------

struct ProcessBound {
  double K = 1.0;
  double mu = 0.0;
  std::size_t samples = 0;
};

struct ProcessBoundOptions {
  std::vector<double> start_times{0.0};
  /// If set, K is fitted at this rate instead of the tail rate.
  std::optional<double> mu_target;
  IntegratorConfig integ{0.01};
};

/// Sampled (K, mu) with ||T(t,s)|| <= K e^{-mu (t-s)} over all drivers and pairs s <= t <= t_max.
/// mu is the smallest tail decay rate over the sampled series; K is then the smallest constant.
ProcessBound estimate_process_bound(const std::vector<ProcessHandle>& processes, double t_max, const FastNorm& norm,
                                    const ProcessBoundOptions& opts = {});
/// Same, with A0 processes built from drivers.
ProcessBound estimate_process_bound(const FastSlowSystem& sys, const std::vector<Driver>& drivers, double t_max,
                                    const ProcessBoundOptions& opts = {});

/// Constant paths at the box corners and centre.
std::vector<Driver> frozen_drivers(const GridDomain& dom);
/// Band-limited random paths inside the box with |psi'| <= N0.
std::vector<Driver> fourier_drivers(const GridDomain& dom, double N0, int count, unsigned seed, int modes = 3);

struct LipschitzEstimate {
  double M0 = 0.0, M1x = 0.0, M1y = 0.0, N0 = 0.0, N1 = 0.0;
};

struct LipschitzOptions {
  int n_samples = 1000;
  /// Fast states are sampled in the ball of this radius.
  double x_radius = 2.0;
  unsigned seed = 1;
};

LipschitzEstimate estimate_lipschitz(const FastSlowSystem& sys, const GridDomain& dom, const LipschitzOptions& opts = {});

/// Certificate from sampled constants; budgets completed.
ConstantsCertificate sampled_certificate(const ProcessBound& pb, const LipschitzEstimate& le, double margin = 0.01);

// ---------------------------------------------------------------------------

/// l = ln(K) / eps.
double frozen_coefficient_window(double K, double mu, double eps);

struct DriftBudget {
  double M0_cap = 0.0;
  double N0_cap = 0.0;
  double l = 0.0;
};

DriftBudget slow_drift_budget(double K, double mu_tilde, double mu_target, double M1nu);

struct SpectralGap {
  double max_real = 0.0;  // max over nodes of max Re of the spectrum of D_xF(h0(y), y)
  double gap = 0.0;       // -max_real
  double margin = 0.0;    // gap - mu_req
  bool pass = false;
  std::size_t worst_node = 0;
};

SpectralGap spectral_gap_check(const FastSlowSystem& sys, const FastField& h0, double mu_req);

// ---------------------------------------------------------------------------

enum class Verdict { pass, fail, unknown };
const char* to_string(Verdict v);

struct HypothesisRow {
  std::string name;
  std::string condition;
  Verdict verdict = Verdict::unknown;
  bool required = false;
};

std::vector<HypothesisRow> hypothesis_table(const ConstantsCertificate& cert, const FastSlowSystem* sys = nullptr);
std::string format_hypothesis_table(const std::vector<HypothesisRow>& rows);

}  // namespace slowfast
