#include "slowfast/fit.hpp"

#include <cmath>

#include "slowfast/error.hpp"

namespace slowfast {

ExpFit fit_exponential(const std::vector<double>& t, const std::vector<double>& value, double noise_floor) {
  if (t.size() != value.size()) fail(ErrorCode::argument, "fit_exponential: sample arrays differ in length");
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (value[i] > noise_floor && std::isfinite(value[i])) {
      xs.push_back(t[i]);
      ys.push_back(std::log(value[i]));
    }
  }
  if (xs.size() < 5) fail(ErrorCode::underdetermined, "fit_exponential: fewer than 5 samples above the noise floor");
  const double k = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= k;
  my /= k;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx <= 0.0) fail(ErrorCode::underdetermined, "fit_exponential: all samples share one time");
  ExpFit f;
  const double slope = sxy / sxx;
  f.rate = -slope;
  f.prefactor = std::exp(my - slope * mx);
  f.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  f.used = xs.size();
  f.flat = std::abs(f.rate) < 1e-8;
  return f;
}

}  // namespace slowfast
