#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "slowfast/certify.hpp"
#include "slowfast/core.hpp"
#include "slowfast/fit.hpp"
#include "slowfast/integrate.hpp"
#include "slowfast/reduction.hpp"
#include "slowfast/slow_manifold.hpp"

namespace slowfast {

enum class ExampleId { L1, Q1, L2, VDP, NF1 };

const char* to_string(ExampleId id);
/// Accepts L1, Q1, L2, VDP-cut (or VDP), NF1.
ExampleId example_from_string(const std::string& s);

struct ExampleParams {
  double eps = 0.1;
  std::optional<Vec> lower, upper;
  /// Slow grid points per axis; 0 picks the example default.
  int grid = 0;
  /// NF1 quadrature size.
  int m = 64;
};

struct Example {
  ExampleId id = ExampleId::L1;
  FastSlowSystem sys;
  GridDomain grid;
  std::optional<ConstantsCertificate> closed_form;
  std::function<Vec(const Vec&)> h_exact;
  std::function<Mat(const Vec&)> Dh_exact;
  std::function<Mat(const Vec&)> D2h_exact;
  std::function<Vec(const Vec&, const Vec&)> P_exact;
  /// Sup-norm tolerance of the fixed point against h_exact.
  double h_tol = 1e-6;
  /// Radius of the fast ball used when constants are sampled.
  double sample_radius = 2.0;
  /// Default reduction query (straightened fast coordinate and slow point).
  Vec query_xi, query_eta;
  Vec newton_seed;
  /// NF1 quadrature nodes and weight.
  Vec nodes;
  double node_weight = 0.0;
};

Example make_example(ExampleId id, const ExampleParams& p = {});
Example make_example(const std::string& name, const ExampleParams& p = {});

/// NF1 kernel matrix times the quadrature weight; row sums are about 0.3.
Mat nf1_kernel(const Vec& nodes, double weight);

/// Closed-form certificate when the example has one, otherwise sampled constants.
/// Overrides are applied with provenance "supplied" and budgets are recompleted.
ConstantsCertificate build_certificate(const Example& ex, const std::string& source,
                                       const std::map<std::string, double>& overrides = {}, unsigned seed = 1);

/// Fixed-point configuration with the given step and the truncation-rule horizon.
LPConfig default_lp_config(const Example& ex, double dt = 0.01, int jobs = 1);

// ---------------------------------------------------------------------------

struct GridStudy {
  std::vector<int> m;
  std::vector<double> functional;  // sum_i h_i * dxi at the central slow node
  std::vector<double> differences;
  double order = 0.0;
  double invariance = 0.0;         // invariance residual on the middle resolution
};

/// NF1 self-convergence study over the quadrature sizes ms (slow grid refined alongside).
GridStudy nf1_grid_study(const std::vector<int>& ms, const std::vector<int>& slow_points, double eps, int jobs = 1);

/// sup_y |h_eps(y) - h_0(y)| for each eps.
std::vector<double> eps_gaps(ExampleId id, const std::vector<double>& eps, int jobs = 1);

// ---------------------------------------------------------------------------

struct QueryPoint {
  Vec xi, eta;
};

struct ScenarioSpec {
  std::string name = "scenario";
  std::string system = "L1";
  std::vector<double> eps{0.1};
  std::optional<Vec> lower, upper;
  int grid = 0;
  int m = 64;
  IntegratorConfig integ{0.01};
  double horizon = 0.0;
  double tol_phi = 1e-10;
  int max_iters = 60;
  double tol_fixed_point = 1e-11;
  std::string certificate = "auto";  // auto | closed-form | sampled
  std::map<std::string, double> overrides;
  std::vector<std::string> checks;   // empty = all applicable
  int derivative = 1;
  std::vector<QueryPoint> points;
  double t_max = 10.0;
  std::string out;
  unsigned seed = 1;
  int jobs = 1;
};

/// Schema-checked parse; unknown keys and wrong types raise a usage error.
ScenarioSpec parse_scenario(const nlohmann::json& j);
ScenarioSpec load_scenario(const std::string& path);
/// Known check names.
const std::vector<std::string>& scenario_checks();

struct ScenarioReport {
  nlohmann::json payload;
  bool passed = false;
  /// Error code of the first failing stage, if any.
  std::optional<ErrorCode> first_error;
};

ScenarioReport run_scenario(const ScenarioSpec& spec);

}  // namespace slowfast
