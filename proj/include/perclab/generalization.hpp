#pragma once

#include <cstdint>

#include "perclab/smallmat.hpp"

namespace perclab {

// Reduced fields are lifted to (z, 0) before the argmax; full fields are
// compared directly.
enum class FieldCoords { reduced, full };

struct ErrorEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

struct GenErrorOptions {
  std::int64_t n_samples = 2'000'000;
  std::uint64_t seed = 1;
  int threads = 1;
  FieldCoords coords = FieldCoords::reduced;
};

// P(argmax student field != argmax teacher field) for teacher ν ~ N(0, Q*)
// and student μ | ν ~ N(m Q*⁻¹ ν, q - m Q*⁻¹ mᵀ), m = student x teacher.
ErrorEstimate gen_error_erm(const Mat& m, const Mat& q, const Mat& Qstar, const GenErrorOptions& opt = {});

// Bayes version: μ = q^{1/2}ξ and ν = μ + (Q* - q)^{1/2}η.
ErrorEstimate gen_error_bayes(const Mat& q, const Mat& Qstar, const GenErrorOptions& opt = {});

}  // namespace perclab
