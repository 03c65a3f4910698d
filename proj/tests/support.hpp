#pragma once

#include <cmath>
#include <vector>

#include "slowfast/harness.hpp"

namespace sft {

using slowfast::Mat;
using slowfast::Vec;

inline Vec v1(double a) { return Vec::Constant(1, a); }
inline Mat m1(double a) { return Mat::Constant(1, 1, a); }

/// Scalar system x' = -x + f(y), y' = 0 with derivatives.
template <class Fy, class DFy>
slowfast::FastSlowSystem frozen_scalar(Fy f, DFy df) {
  slowfast::FastSlowSystem s;
  s.name = "frozen";
  s.m = s.n = 1;
  s.F = [f](const Vec& x, const Vec& y) { return Vec(-x + v1(f(y(0)))); };
  s.g = [](const Vec&, const Vec&) { return v1(0.0); };
  s.A0 = [](const Vec&) { return m1(-1.0); };
  s.DF = [df](const Vec&, const Vec& y) {
    Mat r(1, 2);
    r << -1.0, df(y(0));
    return r;
  };
  s.Dg = [](const Vec&, const Vec&) { return Mat(Mat::Zero(1, 2)); };
  return s;
}

/// x' = -x, y' = c (R0 identically zero).
inline slowfast::FastSlowSystem zero_remainder(double c = 0.1) {
  slowfast::FastSlowSystem s;
  s.name = "zero";
  s.m = s.n = 1;
  s.F = [](const Vec& x, const Vec&) { return Vec(-x); };
  s.g = [c](const Vec&, const Vec&) { return v1(c); };
  s.A0 = [](const Vec&) { return m1(-1.0); };
  s.DF = [](const Vec&, const Vec&) {
    Mat r(1, 2);
    r << -1.0, 0.0;
    return r;
  };
  s.Dg = [](const Vec&, const Vec&) { return Mat(Mat::Zero(1, 2)); };
  return s;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - b[i]));
  return e;
}

}  // namespace sft
