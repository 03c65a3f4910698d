// End-to-end acceptance run: one PASS/FAIL line per criterion, exit code 1 if any fails.
// Optional arguments restrict the run to the listed criterion numbers.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <random>
#include <string>
#include <thread>

#include <fmt/core.h>

#include "slowfast/harness.hpp"

using namespace slowfast;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int jobs() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

struct Pipeline {
  Example ex;
  ConstantsCertificate cert;
  LPConfig cfg;
  LPResult lp;
  DhResult dh;
  std::optional<StraightenedSystem> ss;
  double lp_seconds = 0.0;
};

Pipeline& pipeline(ExampleId id) {
  static std::map<ExampleId, Pipeline> cache;
  auto it = cache.find(id);
  if (it != cache.end()) return it->second;
  Pipeline p{make_example(id), {}, {}, {}, {}, std::nullopt};
  p.cert = build_certificate(p.ex, "auto");
  p.cfg = default_lp_config(p.ex, 0.01, jobs());
  const auto t0 = Clock::now();
  p.lp = lp_solve(p.ex.sys, p.cert, p.cfg);
  p.lp_seconds = seconds_since(t0);
  p.dh = dh_solve(p.ex.sys, p.lp.h, p.cert, p.cfg);
  p.ss = straighten(p.ex.sys, p.lp, p.dh, p.cert);
  return cache.emplace(id, std::move(p)).first->second;
}

const ExampleId all_examples[] = {ExampleId::L1, ExampleId::Q1, ExampleId::L2, ExampleId::VDP, ExampleId::NF1};

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [fail]");
  }
};

double sup_error(const FastField& h, const std::function<Vec(const Vec&)>& exact, const FastNorm& norm) {
  double e = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) e = std::max(e, norm(h.at(i) - exact(h.domain().node(i))));
  return e;
}

Vec uniform_in_box(const GridDomain& dom, double shrink, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec y(dom.dim());
  for (int k = 0; k < dom.dim(); ++k) {
    const double c = 0.5 * (dom.lower()(k) + dom.upper()(k));
    const double r = 0.5 * (dom.upper()(k) - dom.lower()(k)) * shrink;
    y(k) = c + r * (2.0 * u(rng) - 1.0);
  }
  return y;
}

// ---------------------------------------------------------------------------

Outcome exact_fixed_points() {
  Outcome o;
  for (ExampleId id : {ExampleId::L1, ExampleId::Q1}) {
    const Pipeline& p = pipeline(id);
    const double err = sup_error(p.lp.h, p.ex.h_exact, p.ex.sys.norm);
    o.require(err <= p.ex.h_tol && p.lp_seconds <= 30.0,
              fmt::format("{} err {:.2e} (tol {:.0e}) in {:.1f}s", to_string(id), err, p.ex.h_tol, p.lp_seconds));
  }
  return o;
}

Outcome contraction() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (ExampleId id : all_examples) {
    const Pipeline& p = pipeline(id);
    const GridDomain& dom = p.ex.grid;
    const double radius = 0.9 * p.cert.ball_radius();
    const int m = p.ex.sys.m;
    // Long horizon so the truncated tail e^{-mu T} does not mask the half-line ratio.
    LPConfig cfg = p.cfg;
    cfg.horizon = std::max(cfg.resolved_horizon(p.cert), 30.0 / p.cert.mu);
    auto random_sigma = [&] {
      const Vec a = Vec::NullaryExpr(m, [&] { return u(rng); });
      const Vec b = Vec::NullaryExpr(m, [&] { return u(rng); });
      const double freq = 2.0 * u(rng), phase = 3.0 * u(rng);
      FastField s = FastField::sample(dom, [&](const Vec& y) { return Vec(a + b * std::sin(freq * y.sum() + phase)); });
      while (!in_ball(s, p.ex.sys.norm, radius))
        for (std::size_t i = 0; i < s.size(); ++i) s.at(i) *= 0.5;
      return s;
    };
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
      const FastField s1 = random_sigma(), s2 = random_sigma();
      const double d = sup_distance(s1, s2, p.ex.sys.norm);
      if (d == 0.0) continue;
      const double img = sup_distance(lp_map(p.ex.sys, s1, p.cert, cfg), lp_map(p.ex.sys, s2, p.cert, cfg),
                                      p.ex.sys.norm);
      worst = std::max(worst, img / d);
    }
    // The absolute floor only matters when the bound is zero (no y-dependence in the remainder).
    const double bound = 1.05 * p.cert.lp_ratio() + 1e-12;
    o.require(worst <= bound, fmt::format("{} {:.3g} <= {:.3g}", to_string(id), worst, bound));
  }
  return o;
}

Outcome norm_bound() {
  Outcome o;
  for (ExampleId id : {ExampleId::L1, ExampleId::Q1, ExampleId::NF1}) {
    const Pipeline& p = pipeline(id);
    const double hs = sup_norm(p.lp.h, p.ex.sys.norm);
    const double bound = p.cert.h0_bound();
    o.require(1.01 * hs <= bound, fmt::format("{} {:.4g} vs {:.4g}", to_string(id), hs, bound));
  }
  return o;
}

Outcome eps_continuity() {
  Outcome o;
  for (ExampleId id : {ExampleId::L1, ExampleId::Q1}) {
    const auto gaps = eps_gaps(id, {0.1, 0.05, 0.025}, jobs());
    const double r1 = gaps[1] / gaps[0], r2 = gaps[2] / gaps[1];
    const bool ok = r1 >= 0.35 && r1 <= 0.65 && r2 >= 0.35 && r2 <= 0.65;
    o.require(ok, fmt::format("{} ratios {:.3f} {:.3f}", to_string(id), r1, r2));
  }
  return o;
}

Outcome derivatives() {
  Outcome o;
  for (ExampleId id : all_examples) {
    const Pipeline& p = pipeline(id);
    o.require(p.dh.fd_error <= 1e-4, fmt::format("{} Dh {:.1e}", to_string(id), p.dh.fd_error));
  }
  const Pipeline& q = pipeline(ExampleId::Q1);
  const D2hResult d2 = d2h_solve(q.ex.sys, q.lp.h, q.dh.Dh, q.cert, q.cfg);
  double err = 0.0;
  for (std::size_t i = 0; i < d2.D2h.size(); ++i) err = std::max(err, std::abs(d2.D2h.at(i)(0, 0) - 2.0));
  o.require(err <= 1e-3, fmt::format("Q1 D2h-2 {:.1e}", err));
  return o;
}

std::vector<std::pair<Vec, Vec>> queries(const Pipeline& p, int count, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::pair<Vec, Vec>> out;
  out.emplace_back(p.ex.query_xi, p.ex.query_eta);
  while (static_cast<int>(out.size()) < count) {
    Vec xi = Vec::NullaryExpr(p.ex.sys.m, [&] { return 0.5 * u(rng); });
    if (p.ex.sys.norm(xi) < 1e-3) continue;
    out.emplace_back(xi, uniform_in_box(p.ex.grid, 0.5, rng));
  }
  return out;
}

Outcome attraction() {
  Outcome o;
  for (ExampleId id : {ExampleId::Q1, ExampleId::L2}) {
    const Pipeline& p = pipeline(id);
    double worst_rate = INFINITY, worst_r2 = 1.0;
    for (const auto& [xi, eta] : queries(p, 4, 11)) {
      const ReductionResult r = q_along_orbit(*p.ss, xi, eta);
      const SemiconjugacyReport sc = semiconjugacy_residual(*p.ss, r, 10.0);
      const AttractionFit af = attraction_rate_fit(*p.ss, r, 10.0, {}, std::max(1e-11, 10.0 * sc.max_residual));
      if (af.underdetermined) continue;
      worst_rate = std::min(worst_rate, af.full.rate);
      worst_r2 = std::min(worst_r2, af.full.r2);
    }
    const double need = 0.95 * p.ss->mu_prime;
    o.require(worst_rate >= need && worst_r2 >= 0.99,
              fmt::format("{} rate {:.4f} >= {:.4f}, r2 {:.4f}", to_string(id), worst_rate, need, worst_r2));
  }
  return o;
}

Outcome semiconjugacy() {
  Outcome o;
  for (ExampleId id : {ExampleId::L2, ExampleId::Q1}) {
    const Pipeline& p = pipeline(id);
    double worst = 0.0;
    for (const auto& [xi, eta] : queries(p, 4, 17)) {
      const ReductionResult r = q_along_orbit(*p.ss, xi, eta);
      worst = std::max(worst, semiconjugacy_residual(*p.ss, r, 10.0).max_residual);
    }
    o.require(worst <= 1e-5, fmt::format("{} {:.2e}", to_string(id), worst));
  }
  return o;
}

Outcome e_norm() {
  Outcome o;
  for (ExampleId id : all_examples) {
    const Pipeline& p = pipeline(id);
    const double bound = 1.05 * p.ss->e_bound();
    double worst = 0.0;
    for (const auto& [xi, eta] : queries(p, 100, 29)) {
      const ReductionResult r = q_along_orbit(*p.ss, xi, eta);
      worst = std::max(worst, p.ex.sys.norm(r.Q) / p.ex.sys.norm(xi));
    }
    o.require(worst <= bound, fmt::format("{} {:.3g} <= {:.3g}", to_string(id), worst, bound));
  }
  return o;
}

Mat shear(double psi) {
  Mat a(2, 2);
  a << -1.0, psi, 0.0, -1.0;
  return a;
}

Outcome window_lemma() {
  Outcome o;
  const FastNorm norm = FastNorm::euclidean();
  // Frozen bound |e^{A(psi) t}| <= e^{-t/2} (1 + t) <= K e^{-t/2} for psi in [0, 1].
  const double mu = 0.5, K = 2.0 * std::exp(-0.5), eps = 0.25;
  const double l = frozen_coefficient_window(K, mu, eps);
  auto psi = [](double t) { return 0.5 + 0.5 * std::sin(0.5 * t); };

  double drift = 0.0;
  for (double s = 0.0; s <= 40.0; s += 0.05)
    for (double t = s; t <= s + l; t += 0.05) drift = std::max(drift, norm.op(shear(psi(t)) - shear(psi(s))));
  o.require(drift <= eps / K, fmt::format("drift {:.3f} <= eps/K {:.3f} over l {:.3f}", drift, eps / K, l));

  auto proc = make_process([&](double t) { return shear(psi(t)); }, 2, true);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> us(0.0, 20.0), ud(0.0, 15.0);
  const IntegratorConfig integ{0.001};
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double s = us(rng), t = s + ud(rng);
    const double bound = K * std::exp(-(mu - eps) * (t - s));
    worst = std::max(worst, norm.op(process_matrix(proc, t, s, integ)) / bound);
  }
  o.require(worst <= 1.02, fmt::format("max |T|/bound {:.4f}", worst));

  double prev = 0.0;
  bool growing = true;
  for (double nu : {1.0, 2.0, 4.0, 8.0}) {
    auto p = make_process([nu](double) { return shear(-nu); }, 2, true);
    const double k_nu = estimate_process_bound({p}, 20.0, norm).K;
    growing = growing && k_nu > prev;
    prev = k_nu;
  }
  o.require(growing, fmt::format("K(nu) increasing, K(8) {:.3f}", prev));

  const double nu = 7.0;
  Mat rot(2, 2);
  rot << -1.0, -1.0, nu * nu, -1.0;
  auto rp = make_process([rot](double) { return rot; }, 2, true);
  Vec x0(2);
  x0 << 1.0, 0.0;
  const double got = process_apply(rp, M_PI / 2, 0.0, x0, integ).norm();
  const double want = nu * std::exp(-M_PI / 2);
  o.require(std::abs(got - want) <= 0.01 * want, fmt::format("|x(pi/2)| {:.5f} vs {:.5f}", got, want));
  return o;
}

Outcome banach_case() {
  Outcome o;
  const Pipeline& p = pipeline(ExampleId::NF1);
  const FastField h0 = newton_branch(p.ex.sys, p.ex.grid, p.ex.newton_seed);
  const SpectralGap gap = spectral_gap_check(p.ex.sys, h0, 0.5);
  o.require(gap.pass, fmt::format("gap {:.3f} >= 0.5", gap.gap));
  o.require(p.lp.report.converged, fmt::format("lp_solve {} iterations", p.lp.report.iterations));
  const Vec mid = 0.5 * (p.ex.grid.lower() + p.ex.grid.upper());
  const GraphDeviation dev = invariance_residual(p.ex.sys, p.lp.h, mid, 10.0, p.cfg.integ);
  o.require(dev.max_deviation <= 1e-4, fmt::format("invariance {:.1e}", dev.max_deviation));
  const GridStudy st = nf1_grid_study({32, 64, 128}, {5, 9, 17}, p.ex.sys.eps, jobs());
  o.require(st.order >= 1.8, fmt::format("grid order {:.2f}", st.order));
  return o;
}

Outcome equivalence() {
  Outcome o;
  for (ExampleId id : all_examples) {
    const Pipeline& p = pipeline(id);
    const double r = eqv_residual(p.ex.sys, p.lp.h, p.cert, p.cfg);
    FastField shifted = p.lp.h;
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted.at(i).array() += 0.1;
    const double rs = eqv_residual(p.ex.sys, shifted, p.cert, p.cfg);
    o.require(r <= 1e-5 && rs >= 0.05, fmt::format("{} {:.1e}/{:.3f}", to_string(id), r, rs));
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  const std::pair<const char*, Outcome (*)()> criteria[] = {
      {"exact fixed points", exact_fixed_points},
      {"contraction ratio", contraction},
      {"norm bound", norm_bound},
      {"eps continuity", eps_continuity},
      {"derivatives", derivatives},
      {"attraction rate", attraction},
      {"semiconjugacy", semiconjugacy},
      {"E-norm bound", e_norm},
      {"window lemma", window_lemma},
      {"Banach discretization", banach_case},
      {"equivalence residual", equivalence},
  };
  int failed = 0;
  int index = 0;
  for (const auto& [name, fn] : criteria) {
    ++index;
    if (!only.empty() && std::find(only.begin(), only.end(), index) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    failed += o.pass ? 0 : 1;
    fmt::print("criterion {:2d} {} ({}): {} [{:.1f}s]\n", index, o.pass ? "PASS" : "FAIL", name, o.detail,
               seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
