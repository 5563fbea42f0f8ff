#pragma once

#include <string>

#include "perclab/reduction.hpp"
#include "perclab/smallmat.hpp"

namespace perclab {

enum class TeacherKind { gaussian, rademacher, atoms };

// Teacher prior in the coordinates the state evolution runs in. For the
// reduced problem: Gaussian with covariance Σ̃, or the exact reduced atom
// list. `atoms` allows arbitrary finite priors (e.g. the classical ±1
// perceptron for k = 2).
struct TeacherPrior {
  TeacherKind kind = TeacherKind::gaussian;
  int k = 3;
  Mat covariance;    // Gaussian covariance; second moment for atom priors
  AtomPrior atoms;   // used unless kind == gaussian

  bool discrete() const { return kind != TeacherKind::gaussian; }
  int dim() const { return static_cast<int>(covariance.rows()); }
  // Q* = E[w wᵀ] of the reduced teacher row.
  const Mat& second_moment() const { return covariance; }
};

TeacherPrior gaussian_teacher(int k);
TeacherPrior rademacher_teacher(int k);
TeacherPrior atom_teacher(int k, const AtomPrior& atoms);
TeacherPrior teacher_from_name(const std::string& name, int k);
std::string teacher_name(const TeacherPrior& t);

struct PriorResult {
  double z = 0.0;
  double log_z = 0.0;
  Vec f;
  Mat df;
};

PriorResult gaussian_denoiser(const Vec& gamma, const Mat& Lambda, const Mat& Sigma);

PriorResult atom_denoiser(const Vec& gamma, const Mat& Lambda, const AtomPrior& prior);

// ERM ridge prior after the zero-temperature rescaling: f = (λC⁻¹ + V̂)⁻¹γ.
// z (and log_z) carry ½γᵀ(λC⁻¹ + V̂)⁻¹γ, the maximized exponent.
PriorResult ridge_denoiser(const Vec& gamma, const Mat& Vhat, double lambda, const Mat& C);

// Bayes denoiser matched to the teacher prior.
PriorResult teacher_denoiser(const Vec& gamma, const Mat& Lambda, const TeacherPrior& teacher);

}  // namespace perclab
