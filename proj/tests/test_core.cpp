#include "doctest.h"

#include <random>

#include "support.hpp"

using namespace slowfast;
using sft::m1;
using sft::v1;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::numeric;
}

// x' = -x - x^3 + y, y' = c (1 - y) + d x; the attracting branch solves x + x^3 = y.
FastSlowSystem cubic_sheet(double c, double d) {
  FastSlowSystem s;
  s.name = "cubic-sheet";
  s.m = s.n = 1;
  s.F = [](const Vec& x, const Vec& y) { return v1(-x(0) - x(0) * x(0) * x(0) + y(0)); };
  s.g = [c, d](const Vec& x, const Vec& y) { return v1(c * (1.0 - y(0)) + d * x(0)); };
  s.A0 = [](const Vec&) { return m1(-1.0); };
  return with_fd_derivatives(s);
}

double branch(double y) {
  double x = 0.0;
  for (int i = 0; i < 60; ++i) x -= (x + x * x * x - y) / (1.0 + 3.0 * x * x);
  return x;
}

FastField branch_field(const GridDomain& dom) {
  return FastField::sample(dom, [](const Vec& y) { return v1(branch(y(0))); });
}

}  // namespace

TEST_CASE("fast norms satisfy positivity and the triangle inequality") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;
  Vec w(4);
  w << 0.1, 0.2, 0.3, 0.4;
  for (const FastNorm& nm : {FastNorm::euclidean(), FastNorm::sup(), FastNorm::weighted(w)}) {
    CHECK(nm(Vec::Zero(4)) == 0.0);
    for (int k = 0; k < 200; ++k) {
      Vec a(4), b(4);
      for (int i = 0; i < 4; ++i) {
        a(i) = nd(rng);
        b(i) = nd(rng);
      }
      CHECK(nm(a) > 0.0);
      CHECK(nm(a + b) <= nm(a) + nm(b) + 1e-14);
      Mat A = a * b.transpose();
      CHECK(nm(A * b) <= nm.op(A) * nm(b) * (1 + 1e-12) + 1e-14);
    }
  }
}

TEST_CASE("grid domain basics") {
  GridDomain dom(v1(-1.0), v1(1.0), 5);
  CHECK(dom.size() == 5);
  CHECK(dom.spacing(0) == doctest::Approx(0.5));
  CHECK(dom.refined().points()[0] == 9);
  CHECK(dom.contains(v1(1.0)));
  CHECK_FALSE(dom.contains(v1(1.01)));
  CHECK(code_of([&] { dom.require_contains(v1(1.5)); }) == ErrorCode::domain);
  CHECK_THROWS_AS(GridDomain(v1(1.0), v1(0.0), 5), Error);
  CHECK_THROWS_AS(GridDomain(v1(0.0), v1(1.0), 1), Error);
  GridDomain two(Vec::Zero(2), Vec::Ones(2), std::vector<int>{3, 4});
  for (std::size_t i = 0; i < two.size(); ++i) CHECK(two.flat_index(two.multi_index(i)) == i);
  CHECK(two.corners().size() == 4);
}

TEST_CASE("grid function node values, sup norm and Lipschitz estimate") {
  GridDomain dom(v1(0.0), v1(1.0), 11);
  auto f = FastField::sample(dom, [](const Vec& y) { return v1(std::sin(3.0 * y(0))); });
  double sup = 0.0, lip = 0.0;
  for (std::size_t i = 0; i < dom.size(); ++i) {
    CHECK(f(dom.node(i))(0) == f.at(i)(0));
    CHECK(f.cubic(dom.node(i))(0) == doctest::Approx(f.at(i)(0)).epsilon(1e-14));
    sup = std::max(sup, std::abs(f.at(i)(0)));
    if (i > 0) lip = std::max(lip, std::abs(f.at(i)(0) - f.at(i - 1)(0)) / dom.spacing(0));
  }
  CHECK(sup_norm(f, FastNorm::euclidean()) == sup);
  CHECK(lipschitz_estimate(f, FastNorm::euclidean()) >= lip * (1 - 1e-12));
  CHECK_THROWS_AS(f(v1(1.5)), Error);
}

TEST_CASE("multilinear interpolation converges at second order") {
  auto err_on = [](int points) {
    GridDomain dom(Vec::Zero(2), Vec::Ones(2), points);
    auto fn = [](const Vec& y) { return v1(std::sin(2.0 * y(0)) * std::exp(y(1))); };
    auto f = FastField::sample(dom, fn);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double e = 0.0;
    for (int k = 0; k < 400; ++k) {
      Vec y(2);
      y << u(rng), u(rng);
      e = std::max(e, std::abs(f(y)(0) - fn(y)(0)));
    }
    return e;
  };
  const double coarse = err_on(9), fine = err_on(17);
  CHECK(std::log2(coarse / fine) >= 1.8);
}

TEST_CASE("cubic interpolation reproduces cubic polynomials") {
  GridDomain dom(v1(-1.0), v1(2.0), 7);
  auto p = [](double y) { return 1.0 - 2.0 * y + 0.5 * y * y * y; };
  auto f = FastField::sample(dom, [&](const Vec& y) { return v1(p(y(0))); });
  for (double y = -1.0; y <= 2.0; y += 0.037) CHECK(f.cubic(v1(y))(0) == doctest::Approx(p(y)).epsilon(1e-12));
}

TEST_CASE("fourth-order finite differences are exact on quartics") {
  GridDomain dom(v1(0.0), v1(1.0), 9);
  auto q = FastField::sample(dom, [](const Vec& y) { return v1(std::pow(y(0), 4) - y(0)); });
  auto d = finite_difference_derivative(q);
  for (std::size_t i = 0; i < dom.size(); ++i) {
    const double y = dom.node(i)(0);
    CHECK(d.at(i)(0, 0) == doctest::Approx(4.0 * y * y * y - 1.0).epsilon(1e-10));
  }
}

TEST_CASE("eval_R0 examples") {
  auto L1 = make_example(ExampleId::L1);
  CHECK(eval_R0(L1.sys, L1.grid, v1(3.0), v1(0.5))(0) == doctest::Approx(0.5));
  auto Q1 = make_example(ExampleId::Q1);
  for (double x : {-2.0, 0.0, 5.0}) CHECK(eval_R0(Q1.sys, Q1.grid, v1(x), v1(1.0))(0) == doctest::Approx(1.0));
  CHECK(code_of([&] { eval_R0(L1.sys, L1.grid, v1(0.0), v1(2.0)); }) == ErrorCode::domain);

  ExampleParams p;
  p.m = 16;
  auto nf = make_example(ExampleId::NF1, p);
  const Vec y = nf.grid.node(3);
  const Vec zero = Vec::Zero(nf.sys.m);
  CHECK((eval_R0(nf.sys, nf.grid, zero, y) - nf.sys.F(zero, y)).norm() == 0.0);
}

TEST_CASE("every example passes the derivative consistency check") {
  for (ExampleId id : {ExampleId::L1, ExampleId::Q1, ExampleId::L2, ExampleId::VDP, ExampleId::NF1}) {
    auto ex = make_example(id);
    auto chk = check_consistency(ex.sys, ex.grid, 100, 11);
    INFO(std::string(to_string(id)), " DF=", chk.DF, " Dg=", chk.Dg, " A0=", chk.A0, " D2F=", chk.D2F, " D2g=", chk.D2g, " bd=", chk.boundary);
    CHECK(chk.DF <= 1e-5);
    CHECK(chk.Dg <= 1e-5);
    CHECK(chk.A0 <= 1e-5);
    CHECK(chk.boundary <= 1e-5);
    // The cut-off example carries nested finite-difference Hessians only.
    if (id != ExampleId::VDP) CHECK(chk.ok(1e-5));
  }
}

TEST_CASE("epsilon augmentation") {
  auto L1 = make_example(ExampleId::L1);
  auto aug = augment_epsilon(L1.sys, {0.0, 0.2});
  CHECK(aug.n == 2);
  Vec yt(2);
  yt << 0.3, 0.15;
  const Vec g = aug.g(v1(1.7), yt);
  CHECK(g(1) == 0.0);
  CHECK(g(0) == doctest::Approx(0.15));
  auto dom = augment_domain(L1.grid, {0.0, 0.2}, 5);
  CHECK(dom.dim() == 2);
  CHECK(dom.upper()(1) == 0.2);

  auto orbit = flow(aug, v1(0.0), yt, 0.0, 10.0, IntegratorConfig{0.01});
  for (const Vec& y : orbit.y) CHECK(y(1) == doctest::Approx(0.15).epsilon(1e-14));
  CHECK(orbit.y.back()(0) == doctest::Approx(0.3 + 1.5).epsilon(1e-10));

  CHECK(code_of([&] { augment_epsilon(L1.sys, {0.2, 0.0}); }) == ErrorCode::argument);
  auto plain = sft::zero_remainder();
  CHECK(code_of([&] { augment_epsilon(plain, {0.0, 0.1}); }) == ErrorCode::capability);
}

TEST_CASE("cutoff bump") {
  CutoffSpec chi;
  CHECK(chi(0.0) == 1.0);
  CHECK(chi(0.5) == 1.0);
  CHECK(chi(1.0) == 0.0);
  double prev = 1.0;
  for (double r = 0.5; r <= 1.0; r += 0.01) {
    CHECK(chi(r) <= prev);
    prev = chi(r);
  }
}

TEST_CASE("localize: equilibrium, outer region and precondition") {
  GridDomain dom(v1(0.5), v1(1.5), 11);
  auto frozen = cubic_sheet(0.0, 0.0);
  auto loc = localize(frozen, branch_field(dom), 0.4);
  for (double y : {0.5, 0.8, 1.5}) CHECK(std::abs(loc.F(v1(0.0), v1(y))(0)) <= 1e-13);

  auto drifting = cubic_sheet(0.1, 0.05);
  auto loc2 = localize(drifting, branch_field(dom), 0.4);
  for (double y : {0.6, 1.1}) {
    const double hb = branch(y);
    const double dh = 1.0 / (1.0 + 3.0 * hb * hb);
    CHECK(loc2.F(v1(0.0), v1(y))(0) == doctest::Approx(-dh * drifting.g(v1(hb), v1(y))(0)).epsilon(1e-6));
    // Beyond the cutoff the remainder is constant (zero) in x~.
    for (double xt = 0.4; xt <= 3.0; xt += 0.2) {
      CHECK(std::abs(eval_R0(loc2, v1(xt), v1(y))(0)) <= 1e-12);
      CHECK(std::abs(eval_R0(loc2, v1(-xt), v1(y))(0)) <= 1e-12);
    }
  }
  auto loc3 = localize(drifting, branch_field(dom), 0.4, {}, 1e-6, m1(-2.0));
  CHECK(std::abs(eval_R0(loc3, v1(1.3), v1(0.9))(0)) <= 1e-12);

  auto wrong = FastField::constant(dom, v1(0.3));
  CHECK(code_of([&] { localize(frozen, wrong, 0.4); }) == ErrorCode::precondition);
  CHECK(code_of([&] { localize(frozen, branch_field(dom), -1.0); }) == ErrorCode::argument);
}

TEST_CASE("localize: inner flow coincides with the shifted original") {
  GridDomain dom(v1(0.5), v1(1.5), 11);
  auto sys = cubic_sheet(0.1, 0.05);
  const double radius = 0.4;
  auto loc = localize(sys, branch_field(dom), radius);
  const IntegratorConfig cfg{0.005};
  for (double xt0 : {0.15, -0.18, 0.05}) {
    const double y0 = 0.7;
    auto a = flow(loc, v1(xt0), v1(y0), 0.0, 5.0, cfg);
    auto b = flow(sys, v1(xt0 + branch(y0)), v1(y0), 0.0, 5.0, cfg);
    double err = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      REQUIRE(std::abs(a.x[k](0)) <= radius / 2);
      err = std::max(err, std::abs(a.x[k](0) - (b.x[k](0) - branch(b.y[k](0)))));
      err = std::max(err, std::abs(a.y[k](0) - b.y[k](0)));
    }
    CHECK(err <= 1e-8);
  }
}

TEST_CASE("localize is idempotent on the inner region") {
  GridDomain dom(v1(0.5), v1(1.5), 11);
  auto sys = cubic_sheet(0.0, 0.0);
  const double radius = 0.4;
  auto once = localize(sys, branch_field(dom), radius);
  auto twice = localize(once, FastField::constant(dom, v1(0.0)), radius);
  const IntegratorConfig cfg{0.01};
  for (double y0 : {0.6, 1.0, 1.4}) {
    auto a = flow(once, v1(0.19), v1(y0), 0.0, 5.0, cfg);
    auto b = flow(twice, v1(0.19), v1(y0), 0.0, 5.0, cfg);
    CHECK(sft::max_abs_diff({a.x.back()(0)}, {b.x.back()(0)}) <= 1e-10);
    for (std::size_t k = 0; k < a.size(); k += 50) CHECK(std::abs(a.x[k](0) - b.x[k](0)) <= 1e-10);
  }
}
