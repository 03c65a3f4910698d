#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "slowfast/error.hpp"

namespace slowfast {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Norms on the fast space X = R^m.

enum class NormKind { euclidean, sup, weighted };

const char* to_string(NormKind kind);

/// Norm on X together with the induced operator norms the estimates need.
/// Slow vectors always carry the Euclidean norm; the product space X x R^n
/// uses |(x, y)| = sqrt(|x|_X^2 + |y|^2).
class FastNorm {
 public:
  FastNorm() = default;
  static FastNorm euclidean();
  static FastNorm sup();
  /// |x| = sqrt(sum_i w_i x_i^2), e.g. quadrature weights of a discretized L2 space.
  static FastNorm weighted(Vec weights);

  NormKind kind() const { return kind_; }
  const Vec& weights() const { return weights_; }

  double operator()(const Vec& x) const;
  /// Operator norm of A : X -> X.
  double op(const Mat& a) const;
  /// Operator norm of B : R^n -> X.
  double op_from_slow(const Mat& b) const;
  /// Operator norm (or a tight upper bound, for the sup norm) of C : X -> R^n.
  double op_to_slow(const Mat& c) const;
  /// Norm of the product-space vector (x, y).
  double pair(const Vec& x, const Vec& y) const;
  /// Upper bound for the norm of [Cx | Cy] : X x R^n -> R^p, exact for Euclidean X.
  double op_from_pair(const Mat& c, int m) const;

 private:
  NormKind kind_ = NormKind::euclidean;
  Vec weights_;
};

// ---------------------------------------------------------------------------
// Uniform tensor grids on the slow box.

class GridDomain {
 public:
  GridDomain() = default;
  GridDomain(Vec lower, Vec upper, std::vector<int> points_per_axis);
  /// Same number of points on every axis.
  GridDomain(Vec lower, Vec upper, int points);

  int dim() const { return static_cast<int>(lower_.size()); }
  std::size_t size() const { return size_; }
  const Vec& lower() const { return lower_; }
  const Vec& upper() const { return upper_; }
  const std::vector<int>& points() const { return points_; }
  double spacing(int axis) const;
  double diameter() const { return (upper_ - lower_).norm(); }

  Vec node(std::size_t flat) const;
  std::vector<int> multi_index(std::size_t flat) const;
  std::size_t flat_index(const std::vector<int>& multi) const;
  std::vector<Vec> nodes() const;
  /// Vertices of the box (2^n points).
  std::vector<Vec> corners() const;

  bool contains(const Vec& y, double tol = 1e-12) const;
  /// Throws a domain error naming the offending coordinate.
  void require_contains(const Vec& y) const;

  /// Halves every spacing: N points per axis become 2N - 1.
  GridDomain refined() const;

 private:
  Vec lower_, upper_;
  std::vector<int> points_;
  std::size_t size_ = 0;
};

/// Cell location of a point: lower-corner multi-index and local coordinates.
/// Outside the box the nearest boundary cell is used and local coordinates
/// leave [0, 1], which gives the affine continuation of the interpolant.
struct CellLocation {
  std::vector<int> base;
  std::vector<double> local;
};

CellLocation locate(const GridDomain& dom, const Vec& y);

/// Multilinear interpolation of node values (Vec or Mat) on a GridDomain.
template <class V>
class GridFunction {
 public:
  GridFunction() = default;
  GridFunction(GridDomain dom, std::vector<V> values) : dom_(std::move(dom)), values_(std::move(values)) {
    if (values_.size() != dom_.size()) fail(ErrorCode::argument, "grid function: value count does not match grid size");
  }

  static GridFunction constant(const GridDomain& dom, const V& value) {
    return GridFunction(dom, std::vector<V>(dom.size(), value));
  }

  template <class Fn>
  static GridFunction sample(const GridDomain& dom, Fn&& fn) {
    std::vector<V> vals;
    vals.reserve(dom.size());
    for (std::size_t i = 0; i < dom.size(); ++i) vals.push_back(fn(dom.node(i)));
    return GridFunction(dom, std::move(vals));
  }

  const GridDomain& domain() const { return dom_; }
  std::size_t size() const { return values_.size(); }
  const V& at(std::size_t flat) const { return values_[flat]; }
  V& at(std::size_t flat) { return values_[flat]; }
  const std::vector<V>& values() const { return values_; }

  /// Interpolated value; y must lie in the closed box.
  V operator()(const Vec& y) const {
    dom_.require_contains(y);
    return extended(y);
  }

  /// Interpolated value with affine continuation outside the box.
  V extended(const Vec& y) const {
    const CellLocation loc = locate(dom_, y);
    const int n = dom_.dim();
    const int corners = 1 << n;
    std::vector<int> idx(n);
    V acc;
    bool first = true;
    for (int c = 0; c < corners; ++c) {
      double w = 1.0;
      for (int k = 0; k < n; ++k) {
        const bool up = (c >> k) & 1;
        idx[k] = loc.base[k] + (up ? 1 : 0);
        w *= up ? loc.local[k] : 1.0 - loc.local[k];
      }
      if (w == 0.0) continue;
      const V& v = values_[dom_.flat_index(idx)];
      if (first) {
        acc = w * v;
        first = false;
      } else {
        acc += w * v;
      }
    }
    if (first) acc = 0.0 * values_.front();
    return acc;
  }

  /// Tensor-product four-point Lagrange interpolation inside the box; axes
  /// with fewer than four points fall back to linear weights.
  V cubic(const Vec& y) const {
    dom_.require_contains(y);
    const int n = dom_.dim();
    std::vector<std::vector<int>> nodes(n);
    std::vector<std::vector<double>> weights(n);
    for (int k = 0; k < n; ++k) {
      const int N = dom_.points()[k];
      const double s = N > 1 ? (y(k) - dom_.lower()(k)) / dom_.spacing(k) : 0.0;
      if (N < 4) {
        const int b = std::clamp(static_cast<int>(std::floor(s)), 0, std::max(N - 2, 0));
        const double u = N > 1 ? s - b : 0.0;
        nodes[k] = N > 1 ? std::vector<int>{b, b + 1} : std::vector<int>{0};
        weights[k] = N > 1 ? std::vector<double>{1.0 - u, u} : std::vector<double>{1.0};
        continue;
      }
      const int b = std::clamp(static_cast<int>(std::floor(s)) - 1, 0, N - 4);
      const double u = s - b;
      nodes[k] = {b, b + 1, b + 2, b + 3};
      weights[k] = {-(u - 1) * (u - 2) * (u - 3) / 6.0, u * (u - 2) * (u - 3) / 2.0, -u * (u - 1) * (u - 3) / 2.0,
                    u * (u - 1) * (u - 2) / 6.0};
    }
    std::vector<int> pos(n, 0), idx(n);
    V acc = 0.0 * values_.front();
    while (true) {
      double w = 1.0;
      for (int k = 0; k < n; ++k) {
        idx[k] = nodes[k][pos[k]];
        w *= weights[k][pos[k]];
      }
      acc += w * values_[dom_.flat_index(idx)];
      int k = 0;
      while (k < n && ++pos[k] == static_cast<int>(nodes[k].size())) pos[k++] = 0;
      if (k == n) break;
    }
    return acc;
  }

  /// cubic() inside the box, affine continuation outside.
  V smooth(const Vec& y) const { return dom_.contains(y) ? cubic(y) : extended(y); }

 private:
  GridDomain dom_;
  std::vector<V> values_;
};

using FastField = GridFunction<Vec>;
using OperatorField = GridFunction<Mat>;

/// max over nodes of |sigma(node)|_X.
double sup_norm(const FastField& sigma, const FastNorm& norm);
/// max over nodes of the slow-to-fast operator norm.
double sup_norm(const OperatorField& field, const FastNorm& norm);
/// Adjacent-node difference quotients, combined over axes as sqrt(sum_k L_k^2).
double lipschitz_estimate(const FastField& sigma, const FastNorm& norm);
/// Node-wise maximum distance between two fields on the same grid.
double sup_distance(const FastField& a, const FastField& b, const FastNorm& norm);
double sup_distance(const OperatorField& a, const OperatorField& b, const FastNorm& norm);

/// Finite-difference derivative of a grid function, one operator column per axis.
/// Axes with at least five points use fourth-order five-point stencils (central
/// inside, one-sided near the ends); shorter axes fall back to second order.
OperatorField finite_difference_derivative(const FastField& h);
/// Second finite differences; column a*n + b holds d^2 h / dy_a dy_b.
OperatorField finite_difference_second_derivative(const FastField& h);

// ---------------------------------------------------------------------------
// Fast-slow systems  x' = F(x, y),  y' = g(x, y).

using FastMap = std::function<Vec(const Vec& x, const Vec& y)>;
using SlowMap = std::function<Vec(const Vec& x, const Vec& y)>;
using LinearPart = std::function<Mat(const Vec& y)>;
using Jacobian = std::function<Mat(const Vec& x, const Vec& y)>;
/// One Hessian per output component, each (m+n) x (m+n) over z = (x, y).
using Hessians = std::function<std::vector<Mat>(const Vec& x, const Vec& y)>;

/// Parametric form x' = F(x, y, eps), y' = eps * g_hat(x, y, eps).
struct EpsFamily {
  std::function<Vec(const Vec&, const Vec&, double)> F;
  std::function<Vec(const Vec&, const Vec&, double)> g_hat;
  std::function<Mat(const Vec&, double)> A0;
};

/// Axis-aligned region of slow states on which F and g are defined.
struct SlowBox {
  Vec lower, upper;
  bool contains(const Vec& y) const;
};

struct FastSlowSystem {
  std::string name;
  int m = 0;
  int n = 0;
  FastNorm norm;
  FastMap F;
  SlowMap g;
  LinearPart A0;
  Jacobian DF;   // m x (m+n)
  Jacobian Dg;   // n x (m+n)
  Hessians D2F;  // m Hessians
  Hessians D2g;  // n Hessians
  /// g vanishes on the boundary of the slow box.
  bool boundary_flag = false;
  /// A0(y) equals D_xF(0, y). Some examples split off a y-independent linear part instead.
  bool a0_is_linearization = true;
  double eps = 0.0;
  std::optional<EpsFamily> family;
  /// Orbits leaving this region raise a domain-exit error; unset means all of R^n.
  std::optional<SlowBox> definition_box;

  bool has_first_derivatives() const { return static_cast<bool>(DF) && static_cast<bool>(Dg); }
  bool has_second_derivatives() const { return static_cast<bool>(D2F) && static_cast<bool>(D2g); }
  void validate() const;
};

/// R0(x, y) = F(x, y) - A0(y) x.
Vec eval_R0(const FastSlowSystem& sys, const Vec& x, const Vec& y);
/// Domain-checked variant.
Vec eval_R0(const FastSlowSystem& sys, const GridDomain& dom, const Vec& x, const Vec& y);

/// D_xF and D_yF blocks of DF (falls back to finite differences when DF is absent).
Mat fast_jacobian_x(const FastSlowSystem& sys, const Vec& x, const Vec& y);
Mat fast_jacobian_y(const FastSlowSystem& sys, const Vec& x, const Vec& y);

/// Central-difference Jacobian of fn at z.
Mat fd_jacobian(const std::function<Vec(const Vec&)>& fn, const Vec& z, double step = 1e-6);

/// Fills any missing DF, Dg, D2F, D2g with central differences.
FastSlowSystem with_fd_derivatives(FastSlowSystem sys, double step = 1e-5);

struct DerivativeCheck {
  double DF = 0.0, Dg = 0.0, D2F = 0.0, D2g = 0.0;  // max relative errors (0 if not supplied)
  double A0 = 0.0;                                  // |A0(y) - D_xF(0,y)|, relative
  double boundary = 0.0;                            // max |g| on the box faces
  bool ok(double tol = 1e-5) const;
};

DerivativeCheck check_consistency(const FastSlowSystem& sys, const GridDomain& dom, int n_points,
                                  unsigned seed, double x_radius = 1.0);

/// Closed interval [lo, hi].
struct Interval {
  double lo = 0.0, hi = 0.0;
};

/// Slow state (y, eps) with eps' = 0. Requires sys.family.
FastSlowSystem augment_epsilon(const FastSlowSystem& sys, Interval eps_range);
GridDomain augment_domain(const GridDomain& dom, Interval eps_range, int eps_points);

// ---------------------------------------------------------------------------
// Localization around a critical-manifold sheet.

/// chi(r) = 1 for r <= inner, 0 for r >= outer, C-infinity in between.
struct CutoffSpec {
  double inner = 0.5;
  double outer = 1.0;
  double operator()(double r) const;
};

/// Root of F(., y) = 0 by damped Newton from x0.
Vec newton_root(const FastSlowSystem& sys, const Vec& y, Vec x0, double tol = 1e-14, int max_iter = 100);

/// Shifted system in x~ = x - h0(y) with its nonlinearity cut off beyond |x~| = radius.
/// h0 seeds a Newton-refined (hence smooth) branch of roots of F(., y).
/// Beyond the cutoff F~ is linear: A(y) x~ with the branch linearization A(y), or
/// outer_linear * x~ when given. A constant outer part keeps Lip_y F~ finite; A0 is then that matrix.
FastSlowSystem localize(const FastSlowSystem& sys, const FastField& h0, double radius,
                        CutoffSpec bump = {}, double tol = 1e-6, std::optional<Mat> outer_linear = std::nullopt);

}  // namespace slowfast
