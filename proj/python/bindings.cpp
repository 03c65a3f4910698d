#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "slowfast/harness.hpp"

namespace py = pybind11;
using namespace slowfast;
using nlohmann::json;

namespace {

ExampleParams params(double eps, int grid, int m) {
  ExampleParams p;
  p.eps = eps;
  p.grid = grid;
  p.m = m;
  return p;
}

std::string certify(const std::string& system, double eps, int m, const std::string& source,
                    const std::map<std::string, double>& overrides, unsigned seed) {
  const Example ex = make_example(system, params(eps, 0, m));
  const ConstantsCertificate cert = build_certificate(ex, source, overrides, seed);
  json rows = json::array();
  for (const auto& r : hypothesis_table(cert, &ex.sys))
    rows.push_back({{"name", r.name}, {"condition", r.condition}, {"verdict", to_string(r.verdict)}, {"required", r.required}});
  return json{{"system", to_string(ex.id)}, {"eps", eps}, {"certificate", cert.to_json()}, {"hypotheses", rows},
              {"existence_ok", cert.existence_ok()}}
      .dump();
}

py::dict slow_manifold(const std::string& system, double eps, int grid, int m, int derivative, double dt) {
  const Example ex = make_example(system, params(eps, grid, m));
  const ConstantsCertificate cert = build_certificate(ex, "auto");
  const LPConfig cfg = default_lp_config(ex, dt);
  std::optional<LPResult> h;
  std::optional<DhResult> dh;
  {
    py::gil_scoped_release release;
    h = lp_solve(ex.sys, cert, cfg);
    if (derivative >= 1) dh = dh_solve(ex.sys, h->h, cert, cfg);
  }
  const std::size_t N = ex.grid.size();
  Mat y(N, ex.sys.n), hv(N, ex.sys.m);
  for (std::size_t i = 0; i < N; ++i) {
    y.row(i) = ex.grid.node(i).transpose();
    hv.row(i) = h->h.at(i).transpose();
  }
  py::dict out;
  out["y"] = y;
  out["h"] = hv;
  out["iterations"] = h->report.iterations;
  out["measured_ratio"] = h->report.measured_ratio;
  out["theoretical_ratio"] = h->report.theoretical_ratio;
  out["h_bound"] = cert.h0_bound();
  if (dh) {
    py::list mats;
    for (std::size_t i = 0; i < N; ++i) mats.append(Mat(dh->Dh.at(i)));
    out["Dh"] = mats;
    out["dh_fd_error"] = dh->fd_error;
  }
  return out;
}

py::dict reduce(const std::string& system, const Vec& xi, const Vec& eta, double eps, double t_max) {
  const Example ex = make_example(system, params(eps, 0, 64));
  if (xi.size() != ex.sys.m || eta.size() != ex.sys.n) fail(ErrorCode::usage, "reduce: point has the wrong dimension");
  const ConstantsCertificate cert = build_certificate(ex, "auto");
  std::optional<LPResult> h;
  std::optional<DhResult> dh;
  std::optional<StraightenedSystem> ss;
  std::optional<ReductionResult> r;
  double sc = 0.0;
  {
    py::gil_scoped_release release;
    const LPConfig cfg = default_lp_config(ex);
    h = lp_solve(ex.sys, cert, cfg);
    dh = dh_solve(ex.sys, h->h, cert, cfg);
    ss = straighten(ex.sys, *h, *dh, cert);
    r = q_along_orbit(*ss, xi, eta);
    sc = semiconjugacy_residual(*ss, *r, t_max).max_residual;
  }
  py::dict out;
  out["P"] = r->P;
  out["Q"] = r->Q;
  out["E_ratio"] = r->E_ratio;
  out["e_bound"] = ss->e_bound();
  out["semiconjugacy_residual"] = sc;
  return out;
}

std::string run_scenario_json(const std::string& spec_json) {
  const ScenarioSpec spec = parse_scenario(json::parse(spec_json));
  ScenarioReport rep;
  {
    py::gil_scoped_release release;
    rep = run_scenario(spec);
  }
  return rep.payload.dump();
}

py::dict fit(const std::vector<double>& t, const std::vector<double>& v, double noise_floor) {
  const ExpFit f = fit_exponential(t, v, noise_floor);
  py::dict out;
  out["rate"] = f.rate;
  out["prefactor"] = f.prefactor;
  out["r2"] = f.r2;
  out["flat"] = f.flat;
  return out;
}

}  // namespace

PYBIND11_MODULE(_slowfast, m) {
  m.doc() = "Native core of the slowfast package";

  static py::exception<Error> error(m, "SlowfastError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::tuple args = py::make_tuple(std::string(e.what()), std::string(to_string(e.code())));
      PyErr_SetObject(error.ptr(), args.ptr());
    }
  });

  m.def("systems", [] { return std::vector<std::string>{"L1", "Q1", "L2", "VDP-cut", "NF1"}; });
  m.def("certify_json", &certify, py::arg("system"), py::arg("eps") = 0.1, py::arg("m") = 64,
        py::arg("source") = "auto", py::arg("overrides") = std::map<std::string, double>{}, py::arg("seed") = 1u);
  m.def("slow_manifold", &slow_manifold, py::arg("system"), py::arg("eps") = 0.1, py::arg("grid") = 0,
        py::arg("m") = 64, py::arg("derivative") = 0, py::arg("dt") = 0.01);
  m.def("reduce", &reduce, py::arg("system"), py::arg("xi"), py::arg("eta"), py::arg("eps") = 0.1,
        py::arg("t_max") = 10.0);
  m.def("run_scenario_json", &run_scenario_json, py::arg("spec_json"));
  m.def("fit_exponential", &fit, py::arg("t"), py::arg("values"), py::arg("noise_floor") = 1e-12);
}
