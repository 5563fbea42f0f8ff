#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "perclab/prior.hpp"
#include "perclab/reduction.hpp"
#include "perclab/smallmat.hpp"

namespace perclab {

struct AmpConfig {
  TeacherPrior prior = gaussian_teacher(3);
  int max_iter = 200;
  double tol = 1e-6;
  // Also stop once the mean posterior variance tr(Ĉ_j)/D falls below this:
  // the marginals are then frozen on atoms and further steps only add roundoff.
  double variance_tol = 1e-6;
  double damping = 0.3;
  // Per-sample variances V_ν = Σ_j x²_νj Ĉ_j / d. When unset, the
  // concentrated form V = mean_j Ĉ_j is used for every sample.
  bool exact_variance = true;
};

struct AmpState {
  Eigen::MatrixXd what;   // d x D posterior means
  Eigen::MatrixXd Chat;   // d x D², row-major flattened posterior covariances
  Eigen::MatrixXd g;      // n x D
  Eigen::MatrixXd omega;  // n x D
  Eigen::MatrixXd V;      // n x D², row-major flattened
  int iteration = 0;
};

struct AmpTracePoint {
  int iteration = 0;
  double delta = 0.0;  // ‖ŵ_t - ŵ_{t-1}‖_F / √d
  double mean_variance = 0.0;
  Mat m;               // ŵᵀW̃*/d, empty without a teacher
  Mat q;               // ŵᵀŵ/d
};

struct AmpResult {
  AmpState state;
  std::vector<AmpTracePoint> trace;
  bool converged = false;
  bool aborted = false;
  int regularized_variances = 0;
  std::string diagnostics;
};

// X is n x d with N(0, 1) entries; y holds labels in 1..k with k = prior.k.
// wstar_reduced (d x (k-1)) is only used to record overlaps in the trace.
AmpResult amp_run(const Eigen::MatrixXd& X, const std::vector<int>& y, const AmpConfig& cfg,
                  const Eigen::MatrixXd* wstar_reduced = nullptr);

struct AmpOverlaps {
  Mat m, q;
};

AmpOverlaps amp_overlaps(const Eigen::MatrixXd& what, const Eigen::MatrixXd& wstar_reduced);

}  // namespace perclab
