#pragma once

#include <vector>

namespace slowfast {

struct ExpFit {
  double rate = 0.0;       // value ~ prefactor * exp(-rate * t)
  double prefactor = 0.0;
  double r2 = 0.0;
  std::size_t used = 0;    // samples above the noise floor
  bool flat = false;       // |rate| below 1e-8 per unit time
};

/// Least squares on log(value) over the samples above noise_floor. Fewer than five usable
/// samples raise an underdetermined error.
ExpFit fit_exponential(const std::vector<double>& t, const std::vector<double>& value, double noise_floor);

}  // namespace slowfast
