#pragma once

#include <doctest.h>

#include <cmath>
#include <random>

#include "perclab/smallmat.hpp"

namespace testing {

using perclab::Mat;
using perclab::Vec;

inline Mat mat2(double a, double b, double c, double d) {
  Mat m(2, 2);
  m << a, b, c, d;
  return m;
}

inline Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

inline Mat random_spd(std::mt19937_64& rng, int n, double floor = 0.2) {
  std::normal_distribution<double> nd;
  Mat a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = nd(rng);
  Mat s = a * a.transpose();
  s += floor * Mat::Identity(n, n);
  return perclab::symmetrize(s);
}

inline Vec random_vec(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::normal_distribution<double> nd;
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * nd(rng);
  return v;
}

inline bool close_rel(double a, double b, double rel, double abs_floor = 1e-12) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

}  // namespace testing
