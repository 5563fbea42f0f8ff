#pragma once

#include <optional>

#include "perclab/channel.hpp"
#include "perclab/prior.hpp"
#include "perclab/quadrature.hpp"
#include "perclab/reduction.hpp"
#include "perclab/smallmat.hpp"

namespace perclab {

// m is student x teacher: m = W_studentᵀ W* / d.
struct OverlapState {
  Mat m, q, V;
  Mat mhat, qhat, Vhat;

  int dim() const { return static_cast<int>(q.rows()); }
};

enum class StudentKind { bayes, erm };
enum class InitKind { uninformed, informed, explicit_state };

struct QuadratureSettings {
  // Order of the tensor Gauss-Hermite rule on the prior side and of the
  // smooth fallback on the channel side.
  int gh_order = 80;
  GradedRuleConfig graded;

  QuadratureSettings refined() const;
};

struct SEConfig {
  double alpha = 1.0;
  TeacherPrior teacher = gaussian_teacher(3);
  StudentKind student = StudentKind::bayes;
  LossSpec loss;
  double lambda = 1.0;
  double damping = 0.5;
  bool auto_damping = true;
  double tol = 0.0;  // 0 selects 1e-9 (Bayes) or 1e-8 (ERM)
  int max_iter = 3000;
  InitKind init = InitKind::uninformed;
  double eps = 1e-3;
  OverlapState init_state;
  QuadratureSettings quad;
  bool compute_free_entropy = true;
};

struct FixedPoint {
  OverlapState state;
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
  std::optional<double> free_entropy;
  bool perfect_recovery = false;
  double final_damping = 0.0;
};

struct BayesStep {
  Mat qhat;
  Mat q;
  bool perfect = false;
};

// Second moment of the teacher fields in the student's coordinates:
// the reduced Q* for Bayes and cross-entropy, I_k for the square loss.
Mat student_teacher_moment(const SEConfig& cfg);

// Ridge metric C of the student regularizer: Σ̃ in reduced coordinates,
// I_k for the square loss.
Mat ridge_metric(const LossSpec& loss);

ClassRegionMap student_regions(const SEConfig& cfg);

// Node set for E_ξ h(Bξ) where h is smeared over sqrt(λmin(Vcond)) around
// the class boundaries.
NodeSet field_rule(const Mat& B, const Mat& Vcond, const ClassRegionMap& regions, const QuadratureSettings& quad);

struct BayesChannelMoments {
  Mat qhat;        // α E Σ_y Z g gᵀ
  double psi_out;  // E Σ_y Z ln Z
};

BayesChannelMoments bayes_channel(const Mat& q, const Mat& Qstar, double alpha, const ClassRegionMap& regions,
                                  const QuadratureSettings& quad);

// q = E[Z_w f_w f_wᵀ] at (q̂^{1/2}ξ, q̂).
Mat bayes_prior_q(const Mat& qhat, const TeacherPrior& teacher, const QuadratureSettings& quad);

// True once λmin(Q* - q) is at roundoff level; the channel is then an
// indicator and the step returns q = Q*.
bool at_perfect_recovery(const Mat& q, const Mat& Qstar);

BayesStep se_step_bayes(const Mat& q, const Mat& Qstar, double alpha, const TeacherPrior& teacher,
                        const QuadratureSettings& quad = {});

OverlapState se_step_erm(const OverlapState& state, double alpha, double lambda, const LossSpec& loss,
                         const TeacherPrior& teacher, const QuadratureSettings& quad = {});

FixedPoint run_fixed_point(const SEConfig& cfg);

double nishimori_residual(const OverlapState& s, const Mat& Qstar);

// Clip q into the order interval [0, Q*]; warns when the violation exceeds 1e-10.
Mat clip_overlap(const Mat& q, const Mat& Qstar);

}  // namespace perclab
