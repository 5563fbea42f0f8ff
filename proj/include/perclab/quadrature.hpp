#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "perclab/errors.hpp"
#include "perclab/smallmat.hpp"

namespace perclab {

// Probabilists' convention: E f(Z), Z ~ N(0,1), is approximated by sum w_i f(x_i).
struct GaussHermiteRule {
  int order = 0;
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Gauss-Legendre on [-1, 1]; weights sum to 2.
struct GaussLegendreRule {
  int order = 0;
  std::vector<double> nodes;
  std::vector<double> weights;
};

// Rules are computed once per order and cached; references stay valid.
const GaussHermiteRule& gauss_hermite(int order);
const GaussLegendreRule& gauss_legendre(int order);

inline double normal_pdf(double x) { return 0.3989422804014326779 * std::exp(-0.5 * x * x); }
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }

namespace detail {
[[noreturn]] void throw_non_finite(const std::string& where, double x1, double x2);
}

template <typename F>
Mat expect_gaussian_1d(F&& f, const GaussHermiteRule& rule) {
  Mat acc;
  for (int i = 0; i < rule.order; ++i) {
    Mat v = f(rule.nodes[i]);
    if (!v.allFinite()) detail::throw_non_finite("expect_gaussian_1d", rule.nodes[i], 0.0);
    if (i == 0)
      acc = rule.weights[i] * v;
    else
      acc += rule.weights[i] * v;
  }
  return acc;
}

template <typename F>
Mat expect_gaussian_2d(F&& f, const GaussHermiteRule& rule) {
  Mat acc;
  bool first = true;
  Vec xi(2);
  for (int i = 0; i < rule.order; ++i) {
    for (int j = 0; j < rule.order; ++j) {
      xi << rule.nodes[i], rule.nodes[j];
      Mat v = f(xi);
      if (!v.allFinite()) detail::throw_non_finite("expect_gaussian_2d", xi(0), xi(1));
      const double w = rule.weights[i] * rule.weights[j];
      if (first) {
        acc = w * v;
        first = false;
      } else {
        acc += w * v;
      }
    }
  }
  return acc;
}

struct Integral {
  double value = 0.0;
  double err_estimate = 0.0;
  int evaluations = 0;
};

struct Integrate1dOptions {
  double rel_tol = 0.0;
  // Infinite ranges use t = center + scale * sinh(u), |u| <= 6.
  double center = 0.0;
  double scale = 1.0;
  int max_subdivisions = 2000;
};

// Adaptive Gauss-Kronrod (7/15). Stops once the summed error estimate is
// below max(tol, rel_tol * |value|).
Integral integrate_1d(const std::function<double(double)>& f, double lo, double hi, double tol,
                      const Integrate1dOptions& opt = {});

struct McConfig {
  std::int64_t n_samples = 1;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  int threads = 1;
};

struct McResult {
  Mat mean;
  Mat stderr_of_mean;
};

// Chunked Monte Carlo over xi ~ N(0, I_dim). Chunk c draws from stream
// substream(cfg.stream, c), so the result does not depend on cfg.threads.
McResult mc_gaussian(int dim, const std::function<Mat(const Vec&)>& f, const McConfig& cfg);

// A weighted node set for E f(xi), xi ~ N(0, I_dim). Points are stored
// column-wise.
struct NodeSet {
  int dim = 0;
  Eigen::MatrixXd points;
  Eigen::VectorXd weights;

  Eigen::Index size() const { return weights.size(); }
};

NodeSet tensor_gauss_hermite(int dim, int order);

struct GradedRuleConfig {
  int panel_order = 8;
  double ratio = 3.0;
  double radius = 9.0;
  int smooth_order = 80;
};

// Node set for integrands that are smooth except within `width` of the
// given rays (dim 2) or of the origin (dim 1). Panels are graded
// geometrically toward the rays and toward the origin, down to a fraction
// of `width`. With no rays, or a width above the Gaussian scale, this is
// the tensor Gauss-Hermite rule of order smooth_order.
NodeSet graded_gaussian_rule(int dim, const std::vector<Vec>& rays, double width,
                             const GradedRuleConfig& cfg = {});

}  // namespace perclab
