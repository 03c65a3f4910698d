#include "doctest.h"

#include <random>

#include "support.hpp"

using namespace slowfast;
using sft::m1;
using sft::v1;

namespace {

struct Pipeline {
  Example ex;
  ConstantsCertificate cert;
  StraightenedSystem ss;
};

Pipeline solved(ExampleId id, double eps, int grid) {
  ExampleParams p;
  p.eps = eps;
  p.grid = grid;
  Pipeline out{make_example(id, p), {}, {}};
  out.cert = *out.ex.closed_form;
  const auto cfg = default_lp_config(out.ex);
  const auto lp = lp_solve(out.ex.sys, out.cert, cfg);
  const auto dh = dh_solve(out.ex.sys, lp.h, out.cert, cfg);
  out.ss = straighten(out.ex.sys, lp, dh, out.cert);
  return out;
}

// L2 has h = 0 exactly, so the straightening can use the exact fields.
Pipeline exact_L2() {
  Pipeline out{make_example(ExampleId::L2), {}, {}};
  out.cert = *out.ex.closed_form;
  out.ss = straighten(out.ex.sys, FastField::constant(out.ex.grid, v1(0.0)),
                      OperatorField::constant(out.ex.grid, m1(0.0)), out.cert);
  return out;
}

const Pipeline& q1() {
  static const Pipeline p = solved(ExampleId::Q1, 0.05, 41);
  return p;
}

}  // namespace

TEST_CASE("straightened L1 and Q1") {
  auto l1 = solved(ExampleId::L1, 0.1, 21);
  for (double y : {-0.4, 0.0, 0.3})
    for (double xt : {-1.0, 0.2, 2.0}) CHECK(l1.ss.F_tilde(v1(xt), v1(y))(0) == doctest::Approx(-xt).epsilon(1e-8));
  CHECK(l1.ss.residual <= 1e-8);

  const auto& q = q1();
  const Vec xt = v1(0.1), y = v1(0.0);
  const Vec x = xt + q.ss.h.extended(y);
  const Vec direct = q.ex.sys.F(x, y) - q.ss.Dh.extended(y) * q.ex.sys.g(x, y);
  CHECK((q.ss.F_tilde(xt, y) - direct).norm() <= 1e-12);
  CHECK((q.ss.as_system().F(xt, y) - direct).norm() <= 1e-12);
  CHECK(q.ss.residual <= 1e-5);
}

TEST_CASE("straightened orbits stay on or decay to the slow manifold") {
  const auto& q = q1();
  auto sys = q.ss.as_system();
  auto on = flow(sys, v1(0.0), v1(-0.5), 0.0, 10.0, IntegratorConfig{0.01});
  for (const Vec& x : on.x) CHECK(std::abs(x(0)) <= 1e-7);

  auto off = flow(sys, v1(0.8), v1(-0.5), 0.0, 10.0, IntegratorConfig{0.01});
  for (std::size_t s = 0; s < off.size(); s += 97)
    for (std::size_t t = s; t < off.size(); t += 89) {
      const double bound = q.cert.K * std::exp(-q.cert.mu_prime() * (off.t[t] - off.t[s])) * std::abs(off.x[s](0));
      CHECK(std::abs(off.x[t](0)) <= 1.05 * bound + 1e-12);
    }

  // Lipschitz bound of the straightened slow field.
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto wavy = make_example(ExampleId::L2);
  auto l2 = exact_L2();
  for (int k = 0; k < 200; ++k) {
    const Vec x1 = v1(u(rng)), x2 = v1(u(rng)), y1 = v1(u(rng)), y2 = v1(u(rng));
    const double dg = (l2.ss.g_tilde(x1, y1) - l2.ss.g_tilde(x2, y2)).norm();
    const double dz = std::hypot((x1 - x2).norm(), (y1 - y2).norm());
    CHECK(dg <= (1 + l2.ss.Dh_sup) * l2.cert.N1 * dz * (1 + 1e-12));
  }
}

TEST_CASE("straighten refuses unconverged fields") {
  auto l1 = make_example(ExampleId::L1);
  LPResult lp;
  lp.h = FastField::constant(l1.grid, v1(0.0));
  DhResult dh;
  dh.Dh = OperatorField::constant(l1.grid, m1(0.0));
  dh.report.converged = true;
  try {
    straighten(l1.sys, lp, dh, *l1.closed_form);
    FAIL("expected precondition error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::precondition);
  }
}

TEST_CASE("reduction map examples") {
  auto l2 = exact_L2();
  auto r = q_along_orbit(l2.ss, v1(1.0), v1(0.0));
  CHECK(r.P(0) == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(r.Q(0) == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(r.E_ratio <= l2.ss.e_bound() * 1.01);
  CHECK(r.report.measured_ratio <= l2.ss.q_ratio() * 1.01);

  auto zero = q_along_orbit(l2.ss, v1(0.0), v1(0.3));
  CHECK(zero.Q(0) == 0.0);
  CHECK(zero.P(0) == 0.3);

  auto l1 = solved(ExampleId::L1, 0.1, 21);
  auto flat = q_along_orbit(l1.ss, v1(0.7), v1(-0.2));
  CHECK(std::abs(flat.Q(0)) <= 1e-12);
  CHECK(flat.P(0) == doctest::Approx(-0.2));
}

TEST_CASE("reduction map: E-norm bound on random queries") {
  auto l2 = exact_L2();
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 25; ++k) {
    double xi = u(rng);
    if (std::abs(xi) < 1e-3) xi = 0.5;
    auto r = q_along_orbit(l2.ss, v1(xi), v1(0.5 * u(rng)));
    CHECK(std::abs(r.Q(0)) / std::abs(xi) <= l2.ss.e_bound() * 1.05);
  }
}

TEST_CASE("semiconjugacy residual") {
  auto l2 = exact_L2();
  auto r = q_along_orbit(l2.ss, v1(1.0), v1(0.0));
  auto sc = semiconjugacy_residual(l2.ss, r, 10.0);
  CHECK(sc.max_residual <= 1e-6);
  CHECK(sc.t.front() == 0.0);
  CHECK(sc.residual.front() == 0.0);

  auto wrong = r;
  wrong.P(0) += 0.01;
  auto bad = semiconjugacy_residual(l2.ss, wrong, 10.0);
  CHECK(bad.residual.back() >= 0.009);

  const auto& q = q1();
  auto rq = q_along_orbit(q.ss, v1(0.3), v1(-0.5));
  CHECK(semiconjugacy_residual(q.ss, rq, 10.0).max_residual <= 1e-5);
}

TEST_CASE("projections commute with the flow") {
  const auto& q = q1();
  auto sys = q.ss.as_system();
  auto orbit = flow(sys, v1(0.4), v1(-0.6), 0.0, 4.0, IntegratorConfig{0.01});
  auto at = [&](double t) {
    const auto k = static_cast<std::size_t>(std::lround(t / 0.01));
    return q_along_orbit(q.ss, orbit.x[k], orbit.y[k]).P;
  };
  for (auto [t1, t2] : {std::pair{0.0, 1.0}, {0.5, 3.0}, {1.0, 4.0}}) {
    const Vec p1 = at(t1);
    auto moved = flow(sys, v1(0.0), p1, t1, t2, IntegratorConfig{0.01});
    CHECK((moved.y.back() - at(t2)).norm() <= 1e-6);
  }
}

TEST_CASE("leaves contract: points with the same projection converge") {
  auto l2 = exact_L2();
  // P = eta + eps xi on L2.
  const double xi1 = 1.0, xi2 = -0.5, eta1 = 0.0;
  const double eta2 = eta1 + 0.1 * (xi1 - xi2);
  auto r1 = q_along_orbit(l2.ss, v1(xi1), v1(eta1));
  auto r2 = q_along_orbit(l2.ss, v1(xi2), v1(eta2));
  CHECK(r1.P(0) == doctest::Approx(r2.P(0)).epsilon(1e-9));
  auto a = flow(l2.ex.sys, v1(xi1), v1(eta1), 0.0, 8.0, IntegratorConfig{0.01});
  auto b = flow(l2.ex.sys, v1(xi2), v1(eta2), 0.0, 8.0, IntegratorConfig{0.01});
  std::vector<double> t, d;
  for (std::size_t k = 0; k < a.size(); k += 10) {
    t.push_back(a.t[k]);
    d.push_back(std::hypot(a.x[k](0) - b.x[k](0), a.y[k](0) - b.y[k](0)));
  }
  CHECK(fit_exponential(t, d, 1e-12).rate >= 0.95 * l2.cert.mu_prime());
}

TEST_CASE("attraction rate fits") {
  auto l2 = exact_L2();
  auto r = q_along_orbit(l2.ss, v1(1.0), v1(0.0));
  auto fit = attraction_rate_fit(l2.ss, r, 10.0);
  CHECK(fit.full.rate == doctest::Approx(1.0).epsilon(0.02));
  CHECK(fit.full.r2 >= 0.99);
  CHECK(fit.prefactor_ok);

  auto zero = q_along_orbit(l2.ss, v1(0.0), v1(0.0));
  CHECK(attraction_rate_fit(l2.ss, zero, 10.0).underdetermined);

  const auto& q = q1();
  auto rq = q_along_orbit(q.ss, v1(0.5), v1(-0.5));
  auto fq = attraction_rate_fit(q.ss, rq, 10.0);
  CHECK(fq.full.rate >= 0.95 * q.cert.mu_prime());
}

TEST_CASE("derivative of the reduction map") {
  auto l2 = exact_L2();
  auto r = q_along_orbit(l2.ss, v1(1.0), v1(0.0));
  auto dp = dp_point(l2.ss, r);
  CHECK(dp.P1(0, 0) == doctest::Approx(0.1).epsilon(1e-8));
  CHECK(dp.P1(0, 1) == doctest::Approx(1.0).epsilon(1e-8));

  auto l1 = solved(ExampleId::L1, 0.1, 21);
  auto r0 = q_along_orbit(l1.ss, v1(0.0), v1(0.1));
  auto d0 = dp_point(l1.ss, r0);
  CHECK(std::abs(d0.P1(0, 0)) <= 1e-12);
  CHECK(d0.P1(0, 1) == doctest::Approx(1.0));

  const auto& q = q1();
  for (double eta : {-0.5, 0.2}) {
    auto rq = q_along_orbit(q.ss, v1(0.4), v1(eta));
    const Mat fd = dp_finite_difference(q.ss, v1(0.4), v1(eta));
    CHECK((dp_point(q.ss, rq).P1 - fd).cwiseAbs().maxCoeff() <= 1e-4);
  }
}

TEST_CASE("orbit decomposition") {
  auto l2 = exact_L2();
  auto r = q_along_orbit(l2.ss, v1(1.0), v1(0.0));
  auto d = decompose_orbit(l2.ss, r, 4.0);
  CHECK(d.reconstruction_error <= 1e-9);
  CHECK(d.bound_ok);
  const auto k = static_cast<std::size_t>(std::lround(2.0 / (d.layer.t[1] - d.layer.t[0])));
  REQUIRE(d.layer.t[k] == doctest::Approx(2.0));
  CHECK(d.layer.x[k](0) == doctest::Approx(0.135335).epsilon(1e-5));
  CHECK(d.layer.y[k](0) == doctest::Approx(-0.0135335).epsilon(1e-5));
  CHECK(decomposition_csv(d).rfind("t,", 0) == 0);

  auto on = q_along_orbit(l2.ss, v1(0.0), v1(0.2));
  auto don = decompose_orbit(l2.ss, on, 4.0);
  for (std::size_t i = 0; i < don.layer.size(); ++i) {
    CHECK(don.layer.x[i].norm() == 0.0);
    CHECK(don.layer.y[i].norm() == 0.0);
  }
}
