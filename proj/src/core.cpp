#include "slowfast/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <random>
#include <sstream>

namespace slowfast {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::usage: return "usage";
    case ErrorCode::argument: return "argument";
    case ErrorCode::domain: return "domain";
    case ErrorCode::domain_exit: return "domain-exit";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::capability: return "capability";
    case ErrorCode::infeasible: return "infeasible";
    case ErrorCode::contraction: return "contraction";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::no_decay: return "no-decay";
    case ErrorCode::underdetermined: return "underdetermined";
    case ErrorCode::order: return "order";
    case ErrorCode::numeric: return "numeric";
  }
  return "unknown";
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::usage:
    case ErrorCode::argument: return 1;
    case ErrorCode::infeasible:
    case ErrorCode::precondition: return 2;
    case ErrorCode::contraction:
    case ErrorCode::divergence: return 3;
    default: return 4;
  }
}

const char* to_string(NormKind kind) {
  switch (kind) {
    case NormKind::euclidean: return "euclidean";
    case NormKind::sup: return "sup";
    case NormKind::weighted: return "weighted-quadrature";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------

namespace {

double spectral_norm(const Mat& a) {
  if (a.size() == 0) return 0.0;
  if (a.rows() == 1 || a.cols() == 1) return a.norm();
  Eigen::JacobiSVD<Mat> svd(a);
  return svd.singularValues()(0);
}

double max_row_abs_sum(const Mat& a) {
  if (a.size() == 0) return 0.0;
  return a.cwiseAbs().rowwise().sum().maxCoeff();
}

}  // namespace

FastNorm FastNorm::euclidean() { return FastNorm{}; }

FastNorm FastNorm::sup() {
  FastNorm n;
  n.kind_ = NormKind::sup;
  return n;
}

FastNorm FastNorm::weighted(Vec weights) {
  if (weights.size() == 0 || (weights.array() <= 0.0).any())
    fail(ErrorCode::argument, "weighted norm needs positive weights");
  FastNorm n;
  n.kind_ = NormKind::weighted;
  n.weights_ = std::move(weights);
  return n;
}

double FastNorm::operator()(const Vec& x) const {
  switch (kind_) {
    case NormKind::euclidean: return x.norm();
    case NormKind::sup: return x.size() ? x.cwiseAbs().maxCoeff() : 0.0;
    case NormKind::weighted: return std::sqrt((weights_.array() * x.array().square()).sum());
  }
  return 0.0;
}

double FastNorm::op(const Mat& a) const {
  switch (kind_) {
    case NormKind::euclidean: return spectral_norm(a);
    case NormKind::sup: return max_row_abs_sum(a);
    case NormKind::weighted: {
      const Vec d = weights_.cwiseSqrt();
      return spectral_norm(d.asDiagonal() * a * d.cwiseInverse().asDiagonal());
    }
  }
  return 0.0;
}

double FastNorm::op_from_slow(const Mat& b) const {
  switch (kind_) {
    case NormKind::euclidean: return spectral_norm(b);
    case NormKind::sup: return b.size() ? b.rowwise().norm().maxCoeff() : 0.0;
    case NormKind::weighted: return spectral_norm(weights_.cwiseSqrt().asDiagonal() * b);
  }
  return 0.0;
}

double FastNorm::op_to_slow(const Mat& c) const {
  switch (kind_) {
    case NormKind::euclidean: return spectral_norm(c);
    case NormKind::sup: return c.size() ? c.cwiseAbs().rowwise().sum().norm() : 0.0;
    case NormKind::weighted: return spectral_norm(c * weights_.cwiseSqrt().cwiseInverse().asDiagonal());
  }
  return 0.0;
}

double FastNorm::pair(const Vec& x, const Vec& y) const {
  const double a = (*this)(x);
  return std::sqrt(a * a + y.squaredNorm());
}

double FastNorm::op_from_pair(const Mat& c, int m) const {
  if (kind_ == NormKind::euclidean) return spectral_norm(c);
  const double a = op_to_slow(c.leftCols(m));
  const double b = spectral_norm(c.rightCols(c.cols() - m));
  return std::sqrt(a * a + b * b);
}

// ---------------------------------------------------------------------------

GridDomain::GridDomain(Vec lower, Vec upper, std::vector<int> points_per_axis)
    : lower_(std::move(lower)), upper_(std::move(upper)), points_(std::move(points_per_axis)) {
  if (lower_.size() == 0) fail(ErrorCode::argument, "grid domain needs at least one slow dimension");
  if (upper_.size() != lower_.size() || static_cast<int>(points_.size()) != lower_.size())
    fail(ErrorCode::argument, "grid domain: dimension mismatch");
  size_ = 1;
  for (int k = 0; k < dim(); ++k) {
    if (!(lower_(k) < upper_(k))) fail(ErrorCode::argument, "grid domain: lower must be below upper");
    if (points_[k] < 2) fail(ErrorCode::argument, "grid domain: need at least 2 points per axis");
    size_ *= static_cast<std::size_t>(points_[k]);
  }
}

GridDomain::GridDomain(Vec lower, Vec upper, int points)
    : GridDomain(lower, upper, std::vector<int>(static_cast<std::size_t>(lower.size()), points)) {}

double GridDomain::spacing(int axis) const { return (upper_(axis) - lower_(axis)) / (points_[axis] - 1); }

std::vector<int> GridDomain::multi_index(std::size_t flat) const {
  std::vector<int> idx(dim());
  for (int k = 0; k < dim(); ++k) {
    idx[k] = static_cast<int>(flat % points_[k]);
    flat /= points_[k];
  }
  return idx;
}

std::size_t GridDomain::flat_index(const std::vector<int>& multi) const {
  std::size_t flat = 0;
  for (int k = dim() - 1; k >= 0; --k) flat = flat * points_[k] + multi[k];
  return flat;
}

Vec GridDomain::node(std::size_t flat) const {
  const auto idx = multi_index(flat);
  Vec y(dim());
  for (int k = 0; k < dim(); ++k) {
    // Hit the upper bound exactly at the last node.
    y(k) = idx[k] == points_[k] - 1 ? upper_(k) : lower_(k) + idx[k] * spacing(k);
  }
  return y;
}

std::vector<Vec> GridDomain::nodes() const {
  std::vector<Vec> out;
  out.reserve(size_);
  for (std::size_t i = 0; i < size_; ++i) out.push_back(node(i));
  return out;
}

std::vector<Vec> GridDomain::corners() const {
  std::vector<Vec> out;
  for (int c = 0; c < (1 << dim()); ++c) {
    Vec y(dim());
    for (int k = 0; k < dim(); ++k) y(k) = ((c >> k) & 1) ? upper_(k) : lower_(k);
    out.push_back(y);
  }
  return out;
}

bool GridDomain::contains(const Vec& y, double tol) const {
  if (y.size() != lower_.size()) return false;
  for (int k = 0; k < dim(); ++k) {
    const double slack = tol * (upper_(k) - lower_(k));
    if (y(k) < lower_(k) - slack || y(k) > upper_(k) + slack) return false;
  }
  return true;
}

void GridDomain::require_contains(const Vec& y) const {
  if (y.size() != lower_.size()) fail(ErrorCode::domain, "slow state has wrong dimension");
  if (!contains(y)) {
    std::ostringstream os;
    os << "slow state outside the box:";
    for (int k = 0; k < dim(); ++k) os << ' ' << y(k) << " in [" << lower_(k) << ", " << upper_(k) << "]";
    fail(ErrorCode::domain, os.str());
  }
}

GridDomain GridDomain::refined() const {
  std::vector<int> pts(points_);
  for (auto& p : pts) p = 2 * p - 1;
  return GridDomain(lower_, upper_, pts);
}

CellLocation locate(const GridDomain& dom, const Vec& y) {
  CellLocation loc;
  const int n = dom.dim();
  loc.base.resize(n);
  loc.local.resize(n);
  for (int k = 0; k < n; ++k) {
    const double h = dom.spacing(k);
    double s = (y(k) - dom.lower()(k)) / h;
    // Snap to the node so stored values come back unchanged.
    if (std::abs(s - std::round(s)) <= 1e-11 * std::max(1.0, std::abs(s))) s = std::round(s);
    int i = static_cast<int>(std::floor(s));
    i = std::clamp(i, 0, dom.points()[k] - 2);
    loc.base[k] = i;
    loc.local[k] = s - i;
  }
  return loc;
}

double sup_norm(const FastField& sigma, const FastNorm& norm) {
  double s = 0.0;
  for (const auto& v : sigma.values()) s = std::max(s, norm(v));
  return s;
}

double sup_norm(const OperatorField& field, const FastNorm& norm) {
  double s = 0.0;
  for (const auto& v : field.values()) s = std::max(s, norm.op_from_slow(v));
  return s;
}

double lipschitz_estimate(const FastField& sigma, const FastNorm& norm) {
  const GridDomain& dom = sigma.domain();
  double total = 0.0;
  for (int k = 0; k < dom.dim(); ++k) {
    double lk = 0.0;
    const double h = dom.spacing(k);
    for (std::size_t i = 0; i < dom.size(); ++i) {
      auto idx = dom.multi_index(i);
      if (idx[k] + 1 >= dom.points()[k]) continue;
      idx[k] += 1;
      lk = std::max(lk, norm(sigma.at(dom.flat_index(idx)) - sigma.at(i)) / h);
    }
    total += lk * lk;
  }
  return std::sqrt(total);
}

double sup_distance(const FastField& a, const FastField& b, const FastNorm& norm) {
  if (a.size() != b.size()) fail(ErrorCode::argument, "sup_distance: grids differ");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, norm(a.at(i) - b.at(i)));
  return d;
}

double sup_distance(const OperatorField& a, const OperatorField& b, const FastNorm& norm) {
  if (a.size() != b.size()) fail(ErrorCode::argument, "sup_distance: grids differ");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, norm.op_from_slow(a.at(i) - b.at(i)));
  return d;
}

namespace {

// Three-point derivative of a node sequence along one axis.
template <class V, class Get>
V axis_derivative(Get&& get, int i, int count, double h) {
  if (count == 2) return (get(1) - get(0)) / h;
  if (count >= 5) {
    if (i == 0) return (-25.0 * get(0) + 48.0 * get(1) - 36.0 * get(2) + 16.0 * get(3) - 3.0 * get(4)) / (12.0 * h);
    if (i == 1) return (-3.0 * get(0) - 10.0 * get(1) + 18.0 * get(2) - 6.0 * get(3) + get(4)) / (12.0 * h);
    const int e = count - 1;
    if (i == e)
      return (25.0 * get(e) - 48.0 * get(e - 1) + 36.0 * get(e - 2) - 16.0 * get(e - 3) + 3.0 * get(e - 4)) / (12.0 * h);
    if (i == e - 1)
      return (3.0 * get(e) + 10.0 * get(e - 1) - 18.0 * get(e - 2) + 6.0 * get(e - 3) - get(e - 4)) / (12.0 * h);
    return (-get(i + 2) + 8.0 * get(i + 1) - 8.0 * get(i - 1) + get(i - 2)) / (12.0 * h);
  }
  if (i == 0) return (-3.0 * get(0) + 4.0 * get(1) - get(2)) / (2.0 * h);
  if (i == count - 1) return (3.0 * get(count - 1) - 4.0 * get(count - 2) + get(count - 3)) / (2.0 * h);
  return (get(i + 1) - get(i - 1)) / (2.0 * h);
}

template <class V, class Get>
V axis_second_derivative(Get&& get, int i, int count, double h) {
  if (count < 3) return 0.0 * get(0);
  if (count >= 4 && i == 0) return (2.0 * get(0) - 5.0 * get(1) + 4.0 * get(2) - get(3)) / (h * h);
  if (count >= 4 && i == count - 1)
    return (2.0 * get(i) - 5.0 * get(i - 1) + 4.0 * get(i - 2) - get(i - 3)) / (h * h);
  const int c = std::clamp(i, 1, count - 2);
  return (get(c + 1) - 2.0 * get(c) + get(c - 1)) / (h * h);
}

}  // namespace

OperatorField finite_difference_derivative(const FastField& h) {
  const GridDomain& dom = h.domain();
  const int n = dom.dim();
  const int m = static_cast<int>(h.at(0).size());
  std::vector<Mat> out(dom.size(), Mat::Zero(m, n));
  for (std::size_t i = 0; i < dom.size(); ++i) {
    const auto idx = dom.multi_index(i);
    for (int k = 0; k < n; ++k) {
      auto get = [&](int j) -> Vec {
        auto other = idx;
        other[k] = j;
        return h.at(dom.flat_index(other));
      };
      out[i].col(k) = axis_derivative<Vec>(get, idx[k], dom.points()[k], dom.spacing(k));
    }
  }
  return OperatorField(dom, std::move(out));
}

OperatorField finite_difference_second_derivative(const FastField& h) {
  const GridDomain& dom = h.domain();
  const int n = dom.dim();
  const int m = static_cast<int>(h.at(0).size());
  const OperatorField first = finite_difference_derivative(h);
  std::vector<Mat> out(dom.size(), Mat::Zero(m, n * n));
  for (std::size_t i = 0; i < dom.size(); ++i) {
    const auto idx = dom.multi_index(i);
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        Vec col;
        if (a == b) {
          auto get = [&](int j) -> Vec {
            auto other = idx;
            other[a] = j;
            return h.at(dom.flat_index(other));
          };
          col = axis_second_derivative<Vec>(get, idx[a], dom.points()[a], dom.spacing(a));
        } else {
          auto get = [&](int j) -> Vec {
            auto other = idx;
            other[a] = j;
            return first.at(dom.flat_index(other)).col(b);
          };
          col = axis_derivative<Vec>(get, idx[a], dom.points()[a], dom.spacing(a));
        }
        out[i].col(a * n + b) = col;
      }
    }
  }
  return OperatorField(dom, std::move(out));
}

// ---------------------------------------------------------------------------

bool SlowBox::contains(const Vec& y) const {
  for (int k = 0; k < y.size(); ++k)
    if (y(k) < lower(k) || y(k) > upper(k)) return false;
  return true;
}

void FastSlowSystem::validate() const {
  if (n < 1) fail(ErrorCode::argument, "a fast-slow system needs at least one slow variable");
  if (m < 1) fail(ErrorCode::argument, "a fast-slow system needs at least one fast variable");
  if (!F || !g || !A0) fail(ErrorCode::argument, "system '" + name + "' is missing F, g or A0");
  if (norm.kind() == NormKind::weighted && norm.weights().size() != m)
    fail(ErrorCode::argument, "weighted norm size does not match m");
}

Vec eval_R0(const FastSlowSystem& sys, const Vec& x, const Vec& y) { return sys.F(x, y) - sys.A0(y) * x; }

Vec eval_R0(const FastSlowSystem& sys, const GridDomain& dom, const Vec& x, const Vec& y) {
  dom.require_contains(y);
  return eval_R0(sys, x, y);
}

Mat fd_jacobian(const std::function<Vec(const Vec&)>& fn, const Vec& z, double step) {
  const Vec f0 = fn(z);
  Mat jac(f0.size(), z.size());
  Vec zp = z;
  for (int j = 0; j < z.size(); ++j) {
    const double h = step * std::max(1.0, std::abs(z(j)));
    zp(j) = z(j) + h;
    const Vec fp = fn(zp);
    zp(j) = z(j) - h;
    const Vec fm = fn(zp);
    zp(j) = z(j);
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

namespace {

Vec join(const Vec& x, const Vec& y) {
  Vec z(x.size() + y.size());
  z << x, y;
  return z;
}

std::function<Vec(const Vec&)> combined(const FastMap& f, int m, int n) {
  return [f, m, n](const Vec& z) { return f(z.head(m), z.tail(n)); };
}

Hessians fd_hessians(const Jacobian& jac, int m, int n, double step) {
  return [jac, m, n, step](const Vec& x, const Vec& y) {
    const Vec z = join(x, y);
    const int dim = m + n;
    const Mat j0 = jac(x, y);
    std::vector<Mat> hs(j0.rows(), Mat::Zero(dim, dim));
    Vec zp = z;
    for (int c = 0; c < dim; ++c) {
      const double h = step * std::max(1.0, std::abs(z(c)));
      zp(c) = z(c) + h;
      const Mat jp = jac(zp.head(m), zp.tail(n));
      zp(c) = z(c) - h;
      const Mat jm = jac(zp.head(m), zp.tail(n));
      zp(c) = z(c);
      const Mat d = (jp - jm) / (2.0 * h);
      for (int i = 0; i < d.rows(); ++i) hs[i].col(c) = d.row(i).transpose();
    }
    for (auto& hm : hs) hm = 0.5 * (hm + hm.transpose()).eval();
    return hs;
  };
}

}  // namespace

Mat fast_jacobian_x(const FastSlowSystem& sys, const Vec& x, const Vec& y) {
  if (sys.DF) return sys.DF(x, y).leftCols(sys.m);
  return fd_jacobian([&](const Vec& xx) { return sys.F(xx, y); }, x);
}

Mat fast_jacobian_y(const FastSlowSystem& sys, const Vec& x, const Vec& y) {
  if (sys.DF) return sys.DF(x, y).rightCols(sys.n);
  return fd_jacobian([&](const Vec& yy) { return sys.F(x, yy); }, y);
}

FastSlowSystem with_fd_derivatives(FastSlowSystem sys, double step) {
  const int m = sys.m, n = sys.n;
  const bool df_fd = !sys.DF;
  const bool dg_fd = !sys.Dg;
  if (df_fd) {
    auto f = combined(sys.F, m, n);
    sys.DF = [f, m, n, step](const Vec& x, const Vec& y) { return fd_jacobian(f, join(x, y), step * 0.1); };
  }
  if (dg_fd) {
    auto g = combined(sys.g, m, n);
    sys.Dg = [g, m, n, step](const Vec& x, const Vec& y) { return fd_jacobian(g, join(x, y), step * 0.1); };
  }
  if (!sys.D2F) sys.D2F = fd_hessians(sys.DF, m, n, df_fd ? step * 10.0 : step);
  if (!sys.D2g) sys.D2g = fd_hessians(sys.Dg, m, n, dg_fd ? step * 10.0 : step);
  return sys;
}

bool DerivativeCheck::ok(double tol) const {
  return DF <= tol && Dg <= tol && D2F <= 100 * tol && D2g <= 100 * tol && A0 <= tol && boundary <= tol;
}

namespace {

double rel_err(const Mat& a, const Mat& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace

DerivativeCheck check_consistency(const FastSlowSystem& sys, const GridDomain& dom, int n_points, unsigned seed,
                                  double x_radius) {
  sys.validate();
  DerivativeCheck out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int m = sys.m, n = sys.n;
  auto f = combined(sys.F, m, n);
  auto g = combined(sys.g, m, n);
  for (int p = 0; p < n_points; ++p) {
    Vec y(n), x(m);
    for (int k = 0; k < n; ++k) y(k) = dom.lower()(k) + unit(rng) * (dom.upper()(k) - dom.lower()(k));
    for (int i = 0; i < m; ++i) x(i) = x_radius * (2.0 * unit(rng) - 1.0);
    const Vec z = join(x, y);
    if (sys.DF) out.DF = std::max(out.DF, rel_err(sys.DF(x, y), fd_jacobian(f, z)));
    if (sys.Dg) out.Dg = std::max(out.Dg, rel_err(sys.Dg(x, y), fd_jacobian(g, z)));
    if (sys.D2F && sys.DF) {
      const auto hs = sys.D2F(x, y);
      const auto ref = fd_hessians(sys.DF, m, n, 1e-5)(x, y);
      for (int i = 0; i < m; ++i) out.D2F = std::max(out.D2F, rel_err(hs[i], ref[i]));
    }
    if (sys.D2g && sys.Dg) {
      const auto hs = sys.D2g(x, y);
      const auto ref = fd_hessians(sys.Dg, m, n, 1e-5)(x, y);
      for (int i = 0; i < n; ++i) out.D2g = std::max(out.D2g, rel_err(hs[i], ref[i]));
    }
    if (sys.a0_is_linearization) {
      const Mat jx = fd_jacobian([&](const Vec& xx) { return sys.F(xx, y); }, Vec::Zero(m));
      out.A0 = std::max(out.A0, rel_err(sys.A0(y), jx));
    }
    if (sys.boundary_flag) {
      Vec yb = y;
      const int axis = p % n;
      yb(axis) = (p / n) % 2 ? dom.upper()(axis) : dom.lower()(axis);
      out.boundary = std::max(out.boundary, sys.g(x, yb).norm());
    }
  }
  return out;
}

FastSlowSystem augment_epsilon(const FastSlowSystem& sys, Interval eps_range) {
  if (!(eps_range.lo <= eps_range.hi)) fail(ErrorCode::argument, "augment_epsilon: empty eps range");
  if (!sys.family) fail(ErrorCode::capability, "augment_epsilon: system '" + sys.name + "' has no eps family");
  const EpsFamily fam = *sys.family;
  const int n = sys.n;
  FastSlowSystem out;
  out.name = sys.name + "+eps";
  out.m = sys.m;
  out.n = n + 1;
  out.norm = sys.norm;
  out.F = [fam, n](const Vec& x, const Vec& yt) { return fam.F(x, yt.head(n), yt(n)); };
  out.g = [fam, n](const Vec& x, const Vec& yt) {
    Vec r = Vec::Zero(n + 1);
    r.head(n) = yt(n) * fam.g_hat(x, yt.head(n), yt(n));
    return r;
  };
  out.A0 = [fam, n](const Vec& yt) { return fam.A0(yt.head(n), yt(n)); };
  out.a0_is_linearization = sys.a0_is_linearization;
  if (sys.definition_box) {
    SlowBox box;
    box.lower = Vec(n + 1);
    box.upper = Vec(n + 1);
    box.lower << sys.definition_box->lower, eps_range.lo;
    box.upper << sys.definition_box->upper, eps_range.hi;
    out.definition_box = box;
  }
  return with_fd_derivatives(std::move(out));
}

GridDomain augment_domain(const GridDomain& dom, Interval eps_range, int eps_points) {
  if (!(eps_range.lo < eps_range.hi)) fail(ErrorCode::argument, "augment_domain: degenerate eps range");
  const int n = dom.dim();
  Vec lo(n + 1), hi(n + 1);
  lo << dom.lower(), eps_range.lo;
  hi << dom.upper(), eps_range.hi;
  auto pts = dom.points();
  pts.push_back(eps_points);
  return GridDomain(lo, hi, pts);
}

// ---------------------------------------------------------------------------

double CutoffSpec::operator()(double r) const {
  if (r <= inner) return 1.0;
  if (r >= outer) return 0.0;
  const double s = (r - inner) / (outer - inner);
  auto f = [](double t) { return t > 0.0 ? std::exp(-1.0 / t) : 0.0; };
  const double a = f(1.0 - s);
  const double b = f(s);
  return a / (a + b);
}

Vec newton_root(const FastSlowSystem& sys, const Vec& y, Vec x, double tol, int max_iter) {
  Vec r = sys.F(x, y);
  double res = r.norm();
  for (int it = 0; it < max_iter && res > tol; ++it) {
    const Mat jx = fast_jacobian_x(sys, x, y);
    const Vec dx = jx.fullPivLu().solve(-r);
    double step = 1.0;
    Vec xn;
    double resn = 0.0;
    for (int half = 0; half < 30; ++half) {
      xn = x + step * dx;
      resn = sys.F(xn, y).norm();
      if (resn < res || resn <= tol) break;
      step *= 0.5;
    }
    if (!std::isfinite(resn)) fail(ErrorCode::numeric, "newton_root: non-finite residual");
    if (resn >= res && resn > tol) break;
    x = xn;
    r = sys.F(x, y);
    res = r.norm();
  }
  if (!(res <= std::max(tol, 1e-11 * std::max(1.0, x.norm()))))
    fail(ErrorCode::numeric, "newton_root: no convergence (residual " + std::to_string(res) + ")");
  return x;
}

FastSlowSystem localize(const FastSlowSystem& sys, const FastField& h0, double radius, CutoffSpec bump, double tol,
                        std::optional<Mat> outer_linear) {
  sys.validate();
  if (!(radius > 0.0)) fail(ErrorCode::argument, "localize: radius must be positive");
  const GridDomain& dom = h0.domain();
  for (std::size_t i = 0; i < dom.size(); ++i) {
    const double res = sys.F(h0.at(i), dom.node(i)).norm();
    if (res > tol) fail(ErrorCode::precondition, "localize: h0 is not a critical-manifold sheet (residual " +
                                                     std::to_string(res) + ")");
  }
  const int m = sys.m, n = sys.n;
  auto base = std::make_shared<FastSlowSystem>(sys);
  auto seed = std::make_shared<FastField>(h0);

  struct Frame {
    Vec hb;   // branch point
    Mat dh;   // m x n
    Mat a;    // linear part of the shifted system
  };
  struct CacheEntry {
    const void* owner = nullptr;
    Vec y;
    Frame fr;
  };
  auto frame = [base, seed, m, n](const Vec& y) {
    // Integrators evaluate F and g repeatedly at the same slow state, so a few recent frames are kept per thread.
    thread_local std::array<CacheEntry, 4> cache;
    thread_local std::size_t next_slot = 0;
    for (const auto& e : cache)
      if (e.owner == base.get() && e.y.size() == y.size() && e.y == y) return e.fr;
    Frame fr;
    fr.hb = newton_root(*base, y, seed->extended(y));
    const Mat jx = fast_jacobian_x(*base, fr.hb, y);
    const Mat jy = fast_jacobian_y(*base, fr.hb, y);
    fr.dh = -jx.fullPivLu().solve(jy);
    Mat dgx;
    if (base->Dg) {
      dgx = base->Dg(fr.hb, y).leftCols(m);
    } else {
      dgx = fd_jacobian([&](const Vec& xx) { return base->g(xx, y); }, fr.hb);
    }
    fr.a = jx - fr.dh * dgx;
    CacheEntry& slot = cache[next_slot++ % cache.size()];
    slot.owner = base.get();
    slot.y = y;
    slot.fr = fr;
    return fr;
  };

  FastSlowSystem out;
  out.name = sys.name + "-localized";
  out.m = m;
  out.n = n;
  out.norm = sys.norm;
  out.eps = sys.eps;
  out.definition_box = sys.definition_box;
  out.F = [base, frame, radius, bump, outer_linear](const Vec& xt, const Vec& y) {
    const Frame fr = frame(y);
    const Vec x = xt + fr.hb;
    const Vec shifted = base->F(x, y) - fr.dh * base->g(x, y);
    const Vec lin = outer_linear ? Vec(*outer_linear * xt) : Vec(fr.a * xt);
    const double chi = bump(xt.norm() / radius);
    return Vec(lin + chi * (shifted - lin));
  };
  out.g = [base, frame, radius, bump](const Vec& xt, const Vec& y) {
    const Frame fr = frame(y);
    const double chi = bump(xt.norm() / radius);
    return base->g(fr.hb + chi * xt, y);
  };
  if (outer_linear) {
    if (outer_linear->rows() != m || outer_linear->cols() != m)
      fail(ErrorCode::argument, "localize: outer linear part must be m x m");
    const Mat a = *outer_linear;
    out.A0 = [a](const Vec&) { return a; };
    out.a0_is_linearization = false;
  } else {
    out.A0 = [frame](const Vec& y) { return frame(y).a; };
  }
  return with_fd_derivatives(std::move(out));
}

}  // namespace slowfast
