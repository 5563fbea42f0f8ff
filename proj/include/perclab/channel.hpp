#pragma once

#include "perclab/reduction.hpp"
#include "perclab/smallmat.hpp"

namespace perclab {

struct ChannelQuery {
  int y = 1;  // class label in 1..k
  Vec omega;
  Mat V;
};

struct ChannelResult {
  double z = 0.0;  // partition value (Bayes) or Moreau envelope value (ERM)
  Vec g;           // f_out
  Mat dg;          // Jacobian of f_out in omega
};

enum class LossKind { cross_entropy, square };

struct LossSpec {
  LossKind kind = LossKind::cross_entropy;
  int k = 3;

  // Cross-entropy works on reduced logits, square loss on the full k logits.
  int field_dim() const { return kind == LossKind::square ? k : k - 1; }
};

// P(x >= -mu componentwise) for x ~ N(0, sigma); dimension 1 or 2.
double gaussian_orthant(const Vec& mu, const Mat& sigma);

// Orthant probability with gradient and Hessian in mu.
struct OrthantDerivatives {
  double p = 0.0;
  Vec grad;
  Mat hess;
};
// With relative_tail unset, values below 1e-10 keep the absolute accuracy of
// the fast scheme instead of falling back to adaptive quadrature.
OrthantDerivatives gaussian_orthant_derivatives(const Vec& mu, const Mat& sigma, bool relative_tail = true);

// Orthant probability by direct 1D quadrature of phi(t) Phi(.) (reference route).
double gaussian_orthant_by_quadrature(const Vec& mu, const Mat& sigma, double rel_tol = 1e-13);

double zout_bayes(const ChannelQuery& q, const ClassRegionMap& regions);

// g = grad ln Z, dg = Hessian of ln Z. Throws TailError if Z <= 1e-300.
ChannelResult fout_bayes(const ChannelQuery& q, const ClassRegionMap& regions);

// Same as fout_bayes but returns false instead of throwing when Z <= floor.
// Floors of 1e-15 and above use the fast absolute-accuracy orthant path,
// which is adequate wherever the result is weighted by Z.
bool try_fout_bayes(const ChannelQuery& q, const ClassRegionMap& regions, ChannelResult& out,
                    double floor = 1e-300);

struct LossValue {
  double value = 0.0;
  Vec grad;
  Mat hess;
};

LossValue cross_entropy_reduced(const Vec& z, int y);
LossValue square_loss(const Vec& z, int y);
LossValue loss_value(const Vec& z, int y, const LossSpec& loss);

struct ProxResult {
  Vec z;
  Mat jac;
  int iterations = 0;
};

ProxResult prox_loss(int y, const Vec& omega, const Mat& V, const LossSpec& loss);

// g = V^-1 (prox - omega), dg = V^-1 (d prox / d omega - I), z = Moreau envelope.
ChannelResult fout_erm(int y, const Vec& omega, const Mat& V, const LossSpec& loss);

}  // namespace perclab
