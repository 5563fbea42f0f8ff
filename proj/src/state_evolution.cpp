#include "perclab/state_evolution.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

#include "perclab/free_entropy.hpp"
#include "perclab/log.hpp"

namespace perclab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double default_tol(StudentKind s) { return s == StudentKind::bayes ? 1e-9 : 1e-8; }

double max_singular_value(const Mat& B) { return std::sqrt(std::max(0.0, max_eigenvalue(Mat(B.transpose() * B)))); }

double min_singular_value(const Mat& B) { return std::sqrt(std::max(0.0, min_eigenvalue(Mat(B.transpose() * B)))); }

OverlapState zero_hats(OverlapState s) {
  const int D = s.dim();
  s.mhat = Mat::Zero(D, D);
  s.qhat = Mat::Zero(D, D);
  s.Vhat = Mat::Zero(D, D);
  return s;
}

// Teacher-side class weights and their mean-gradients for the reduced
// argmax channel (Z*, ∇_μ Z*). No division by Z is involved, so the fast
// orthant path is accurate enough.
void teacher_channel(const ClassRegionMap& regions, int y, const Vec& mu, const Mat& Vt, double& p, Vec& grad) {
  const Mat& A = regions.region(y);
  const Mat sigma = symmetrize(Mat(A * Vt * A.transpose()));
  const OrthantDerivatives od = gaussian_orthant_derivatives(Vec(A * mu), sigma, false);
  p = od.p;
  grad = A.transpose() * od.grad;
}

OverlapState prior_update(const Mat& mhat, const Mat& qhat, const Mat& Vhat, double lambda, const Mat& C,
                          const Mat& Qstar) {
  const Mat Aff = inverse_spd(Mat(symmetrize(Mat(lambda * inverse_spd(C) + Vhat))));
  OverlapState s;
  s.m = Aff * mhat * Qstar;
  s.q = symmetrize(Mat(Aff * (mhat * Qstar * mhat.transpose() + qhat) * Aff));
  s.V = Aff;
  s.mhat = mhat;
  s.qhat = qhat;
  s.Vhat = Vhat;
  return s;
}

OverlapState se_step_square(const OverlapState& st, double alpha, double lambda, int k) {
  const Mat I = Mat::Identity(k, k);
  const Mat Qstar = I;
  const ClassRegionMap full = class_regions_full(k);
  Mat T(k, k);
  Mat P = Mat::Zero(k, k);
  for (int c = 1; c <= k; ++c) {
    const Mat& Dc = full.region(c);
    const Mat sigma = symmetrize(Mat(Dc * Qstar * Dc.transpose()));
    const OrthantDerivatives od = gaussian_orthant_derivatives(Vec::Zero(k - 1), sigma);
    T.row(c - 1) = (Qstar * (Dc.transpose() * od.grad)).transpose();
    P(c - 1, c - 1) = od.p;
  }
  if (alpha == 0.0) return prior_update(Mat::Zero(k, k), Mat::Zero(k, k), Mat::Zero(k, k), lambda, I, Qstar);
  const Mat R = inverse_spd(Mat(symmetrize(Mat(I + st.V))));
  const Mat Qinv = inverse_spd(Qstar);
  const Mat mhat = alpha * R * T * Qinv;
  const Mat inner = P - T * Qinv * st.m.transpose() - st.m * Qinv * T.transpose() + st.q;
  const Mat qhat = symmetrize(Mat(alpha * R * inner * R));
  const Mat Vhat = alpha * R;
  return prior_update(mhat, qhat, Vhat, lambda, I, Qstar);
}

OverlapState se_step_cross_entropy(const OverlapState& st, double alpha, double lambda, const LossSpec& loss,
                                   const TeacherPrior& teacher, const QuadratureSettings& quad) {
  const int k = loss.k;
  const int D = k - 1;
  const Mat Qstar = teacher.second_moment();
  const Mat C = reduced_gaussian_covariance(k);
  if (alpha == 0.0) return prior_update(Mat::Zero(D, D), Mat::Zero(D, D), Mat::Zero(D, D), lambda, C, Qstar);
  const ClassRegionMap regions = class_regions(k);
  const double scale = max_abs(Qstar);

  Mat q = st.q;
  if (min_eigenvalue(q) <= 1e-12 * scale) {
    warn("se_step_erm: singular q regularized by 1e-12 I");
    q += 1e-12 * scale * Mat::Identity(D, D);
  }
  const Mat sq = sqrt_spd(q);
  const Mat B = st.m.transpose() * inverse(sq);
  Mat Vt = symmetrize(Mat(Qstar - B * B.transpose()));
  const double vmin = min_eigenvalue(Vt);
  if (vmin < -1e-8 * scale) {
    std::ostringstream os;
    os << "se_step_erm: Q* - mᵀq⁻¹m is not PSD (min eigenvalue " << vmin << ")";
    throw DomainError(os.str());
  }
  if (vmin < 1e-13 * scale) {
    Vt = project_psd(Vt);
    Vt += 1e-13 * scale * Mat::Identity(D, D);
  }

  const NodeSet ns = field_rule(B, Vt, regions, quad);
  Mat mhat = Mat::Zero(D, D), qhat = Mat::Zero(D, D), Vhat = Mat::Zero(D, D);
  Vec xi(D), grad;
  for (Eigen::Index i = 0; i < ns.size(); ++i) {
    xi = ns.points.col(i);
    const double w = ns.weights(i);
    const Vec mu = B * xi;
    const Vec omega = sq * xi;
    for (int y = 1; y <= k; ++y) {
      double p = 0.0;
      teacher_channel(regions, y, mu, Vt, p, grad);
      if (p < 1e-18) continue;
      const ChannelResult r = fout_erm(y, omega, st.V, loss);
      mhat += w * r.g * grad.transpose();
      qhat += (w * p) * r.g * r.g.transpose();
      Vhat -= (w * p) * r.dg;
    }
  }
  mhat *= alpha;
  qhat = symmetrize(Mat(alpha * qhat));
  Vhat = symmetrize(Mat(alpha * Vhat));
  return prior_update(mhat, qhat, Vhat, lambda, C, Qstar);
}

Mat inf_matrix(int D) { return Mat::Constant(D, D, kInf); }

void check_joint_psd(const OverlapState& s, const Mat& Qstar) {
  const int D = s.dim();
  Eigen::MatrixXd J(2 * D, 2 * D);
  J.topLeftCorner(D, D) = Qstar;
  J.topRightCorner(D, D) = s.m.transpose();
  J.bottomLeftCorner(D, D) = s.m;
  J.bottomRightCorner(D, D) = s.q;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (J + J.transpose()), Eigen::EigenvaluesOnly);
  if (es.eigenvalues()(0) < -1e-8) {
    std::ostringstream os;
    os << "fixed point: joint overlap matrix has eigenvalue " << es.eigenvalues()(0);
    warn(os.str());
  }
}

}  // namespace

QuadratureSettings QuadratureSettings::refined() const {
  QuadratureSettings r = *this;
  r.gh_order = std::min(200, 2 * gh_order);
  r.graded.panel_order = std::min(200, 2 * graded.panel_order);
  r.graded.smooth_order = std::min(200, 2 * graded.smooth_order);
  return r;
}

Mat student_teacher_moment(const SEConfig& cfg) {
  if (cfg.student == StudentKind::erm && cfg.loss.kind == LossKind::square) {
    if (cfg.teacher.kind == TeacherKind::atoms)
      throw DomainError("square loss needs a full-k teacher (gaussian or rademacher)");
    return Mat::Identity(cfg.loss.k, cfg.loss.k);
  }
  return cfg.teacher.second_moment();
}

Mat ridge_metric(const LossSpec& loss) {
  if (loss.kind == LossKind::square) return Mat::Identity(loss.k, loss.k);
  return reduced_gaussian_covariance(loss.k);
}

ClassRegionMap student_regions(const SEConfig& cfg) {
  if (cfg.student == StudentKind::erm && cfg.loss.kind == LossKind::square) return class_regions_full(cfg.loss.k);
  return class_regions(cfg.teacher.k);
}

NodeSet field_rule(const Mat& B, const Mat& Vcond, const ClassRegionMap& regions, const QuadratureSettings& quad) {
  const int D = static_cast<int>(B.rows());
  const auto smooth = [&] { return tensor_gauss_hermite(D, quad.graded.smooth_order); };
  if (regions.field_dim != D || D > 2) return smooth();
  const double smax = max_singular_value(B);
  if (!(smax > 0)) return smooth();
  const double width = std::sqrt(std::max(0.0, min_eigenvalue(Vcond))) / smax;
  if (width >= 2.0) return smooth();
  std::vector<Vec> rays = boundary_rays(regions);
  if (D == 2) {
    if (min_singular_value(B) < 1e-8 * smax) return smooth();
    const Mat Binv = inverse(B);
    for (auto& r : rays) {
      r = Binv * r;
      r /= r.norm();
    }
  }
  return graded_gaussian_rule(D, rays, width, quad.graded);
}

BayesChannelMoments bayes_channel(const Mat& q, const Mat& Qstar, double alpha, const ClassRegionMap& regions,
                                  const QuadratureSettings& quad) {
  const int D = static_cast<int>(q.rows());
  const Mat V = symmetrize(Mat(Qstar - q));
  const Mat B = sqrt_spd(q);
  const NodeSet ns = field_rule(B, V, regions, quad);
  Mat acc = Mat::Zero(D, D);
  double psi = 0.0;
  ChannelQuery cq;
  cq.V = V;
  ChannelResult r;
  for (Eigen::Index i = 0; i < ns.size(); ++i) {
    cq.omega = B * ns.points.col(i);
    const double w = ns.weights(i);
    for (int y = 1; y <= regions.k; ++y) {
      cq.y = y;
      if (!try_fout_bayes(cq, regions, r, 1e-15)) continue;
      acc += (w * r.z) * r.g * r.g.transpose();
      psi += w * r.z * std::log(r.z);
    }
  }
  BayesChannelMoments out;
  out.qhat = symmetrize(Mat(alpha * acc));
  out.psi_out = psi;
  return out;
}

Mat bayes_prior_q(const Mat& qhat, const TeacherPrior& teacher, const QuadratureSettings& quad) {
  const Mat& Qstar = teacher.second_moment();
  if (!qhat.allFinite()) return Qstar;
  if (teacher.kind == TeacherKind::gaussian) {
    const Mat& S = teacher.covariance;
    return symmetrize(Mat(S - inverse_spd(Mat(symmetrize(Mat(inverse_spd(S) + qhat))))));
  }
  const int D = teacher.dim();
  const Mat root = sqrt_spd(qhat);
  const NodeSet ns = tensor_gauss_hermite(D, quad.gh_order);
  Mat acc = Mat::Zero(D, D);
  for (const auto& atom : teacher.atoms.atoms) {
    const Vec shift = qhat * atom.point;
    Mat part = Mat::Zero(D, D);
    for (Eigen::Index i = 0; i < ns.size(); ++i) {
      const Vec gamma = shift + root * ns.points.col(i);
      const PriorResult pr = atom_denoiser(gamma, qhat, teacher.atoms);
      part += ns.weights(i) * pr.f * pr.f.transpose();
    }
    acc += atom.weight * part;
  }
  return symmetrize(acc);
}

bool at_perfect_recovery(const Mat& q, const Mat& Qstar) {
  return min_eigenvalue(Mat(symmetrize(Mat(Qstar - q)))) <= 1e-12 * max_abs(Qstar);
}

Mat clip_overlap(const Mat& q, const Mat& Qstar) {
  const double scale = max_abs(Qstar);
  const double lo = min_eigenvalue(q);
  const double hi = min_eigenvalue(Mat(symmetrize(Mat(Qstar - q))));
  if (lo >= 0 && hi >= 0) return q;
  if (lo < -1e-10 * scale || hi < -1e-10 * scale) {
    std::ostringstream os;
    os << "overlap left [0, Q*] (eigenvalues " << lo << ", " << hi << "); projected back";
    warn(os.str());
  }
  Mat c = project_psd(q);
  c = symmetrize(Mat(Qstar - project_psd(Mat(symmetrize(Mat(Qstar - c))))));
  return c;
}

BayesStep se_step_bayes(const Mat& q, const Mat& Qstar, double alpha, const TeacherPrior& teacher,
                        const QuadratureSettings& quad) {
  const int D = static_cast<int>(q.rows());
  if (Qstar.rows() != D || teacher.dim() != D) throw DimensionError("se_step_bayes: dimension mismatch");
  BayesStep out;
  if (teacher.discrete() && at_perfect_recovery(q, Qstar)) {
    out.qhat = inf_matrix(D);
    out.q = Qstar;
    out.perfect = true;
    return out;
  }
  if (alpha == 0.0) {
    out.qhat = Mat::Zero(D, D);
  } else {
    out.qhat = bayes_channel(clip_overlap(q, Qstar), Qstar, alpha, class_regions(teacher.k), quad).qhat;
  }
  out.q = clip_overlap(bayes_prior_q(out.qhat, teacher, quad), Qstar);
  return out;
}

OverlapState se_step_erm(const OverlapState& state, double alpha, double lambda, const LossSpec& loss,
                         const TeacherPrior& teacher, const QuadratureSettings& quad) {
  if (!(lambda > 0)) throw DomainError("se_step_erm: lambda must be positive");
  if (loss.k != teacher.k) throw DimensionError("se_step_erm: loss and teacher disagree on k");
  if (state.dim() != loss.field_dim()) throw DimensionError("se_step_erm: state dimension does not match the loss");
  if (loss.kind == LossKind::square) {
    if (teacher.kind == TeacherKind::atoms) throw DomainError("square loss needs a full-k teacher");
    return se_step_square(state, alpha, lambda, loss.k);
  }
  return se_step_cross_entropy(state, alpha, lambda, loss, teacher, quad);
}

namespace {

class DampingControl {
 public:
  DampingControl(double theta, bool automatic) : theta_(theta), automatic_(automatic) {}

  double theta() const { return theta_; }

  // Oscillation test: after a warm-up, the residual rose in 3 of the last 5
  // steps and is above the best value seen so far.
  void record(double residual) {
    ++steps_;
    best_ = std::min(best_, residual);
    history_.push_back(residual);
    if (history_.size() > 6) history_.pop_front();
    if (!automatic_ || steps_ < 20 || history_.size() < 6 || theta_ >= 0.85) return;
    int increases = 0;
    for (std::size_t i = 1; i < history_.size(); ++i)
      if (history_[i] > history_[i - 1]) ++increases;
    if (increases >= 3 && residual > best_) theta_ = 0.85;
  }

 private:
  double theta_;
  bool automatic_;
  int steps_ = 0;
  double best_ = kInf;
  std::deque<double> history_;
};

FixedPoint run_bayes(const SEConfig& cfg) {
  const TeacherPrior& teacher = cfg.teacher;
  const Mat Qstar = teacher.second_moment();
  const int D = teacher.dim();
  const double tol = cfg.tol > 0 ? cfg.tol : default_tol(cfg.student);
  Mat q;
  switch (cfg.init) {
    case InitKind::uninformed:
      q = cfg.eps * Qstar;
      break;
    case InitKind::informed:
      q = (1.0 - cfg.eps) * Qstar;
      break;
    case InitKind::explicit_state:
      q = cfg.init_state.q;
      break;
  }
  if (q.rows() != D) throw DimensionError("run_fixed_point: initial state has the wrong dimension");
  Mat qhat = Mat::Zero(D, D);
  DampingControl damping(cfg.damping, cfg.auto_damping);
  FixedPoint fp;
  fp.residual = kInf;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    const BayesStep step = se_step_bayes(q, Qstar, cfg.alpha, teacher, cfg.quad);
    fp.iterations = it;
    if (step.perfect) {
      q = Qstar;
      qhat = step.qhat;
      fp.residual = 0.0;
      fp.converged = true;
      fp.perfect_recovery = true;
      break;
    }
    const double r = max_abs(Mat(step.q - q));
    const double theta = damping.theta();
    q = symmetrize(Mat((1.0 - theta) * step.q + theta * q));
    qhat = step.qhat;
    fp.residual = r;
    if (r <= tol) {
      fp.converged = true;
      break;
    }
    damping.record(r);
  }
  fp.final_damping = damping.theta();
  fp.state.q = q;
  fp.state.m = q;
  fp.state.V = symmetrize(Mat(Qstar - q));
  fp.state.qhat = qhat;
  fp.state.mhat = qhat;
  fp.state.Vhat = qhat;
  if (!fp.perfect_recovery && teacher.discrete() && max_abs(Mat(Qstar - q)) < 1e-12 * max_abs(Qstar))
    fp.perfect_recovery = true;
  if (cfg.compute_free_entropy) fp.free_entropy = phi_bayes(q, qhat, cfg.alpha, teacher, cfg.quad);
  return fp;
}

FixedPoint run_erm(const SEConfig& cfg) {
  if (!(cfg.lambda > 0)) throw DomainError("run_fixed_point: lambda must be positive");
  const Mat Qstar = student_teacher_moment(cfg);
  const int D = static_cast<int>(Qstar.rows());
  const double tol = cfg.tol > 0 ? cfg.tol : default_tol(cfg.student);
  OverlapState s;
  switch (cfg.init) {
    case InitKind::uninformed:
      s.m = cfg.eps * Qstar;
      s.q = cfg.eps * Qstar;
      s.V = Qstar;
      break;
    case InitKind::informed:
      s.m = (1.0 - cfg.eps) * Qstar;
      s.q = (1.0 - cfg.eps) * Qstar;
      s.V = cfg.eps * Qstar;
      break;
    case InitKind::explicit_state:
      s = cfg.init_state;
      break;
  }
  if (s.dim() != D || s.m.rows() != D || s.V.rows() != D)
    throw DimensionError("run_fixed_point: initial state has the wrong dimension");
  s = zero_hats(s);
  DampingControl damping(cfg.damping, cfg.auto_damping);
  FixedPoint fp;
  fp.residual = kInf;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    const OverlapState next = se_step_erm(s, cfg.alpha, cfg.lambda, cfg.loss, cfg.teacher, cfg.quad);
    const double r = std::max({max_abs(Mat(next.m - s.m)), max_abs(Mat(next.q - s.q)), max_abs(Mat(next.V - s.V))});
    const double theta = damping.theta();
    s.m = (1.0 - theta) * next.m + theta * s.m;
    s.q = symmetrize(Mat((1.0 - theta) * next.q + theta * s.q));
    s.V = symmetrize(Mat((1.0 - theta) * next.V + theta * s.V));
    s.mhat = next.mhat;
    s.qhat = next.qhat;
    s.Vhat = next.Vhat;
    fp.iterations = it;
    fp.residual = r;
    if (r <= tol) {
      fp.converged = true;
      break;
    }
    damping.record(r);
  }
  fp.final_damping = damping.theta();
  fp.state = s;
  check_joint_psd(s, Qstar);
  return fp;
}

}  // namespace

FixedPoint run_fixed_point(const SEConfig& cfg) {
  if (!(cfg.alpha >= 0) || !std::isfinite(cfg.alpha)) throw DomainError("run_fixed_point: alpha must be >= 0");
  if (!(cfg.damping >= 0 && cfg.damping < 1)) throw DomainError("run_fixed_point: damping must lie in [0, 1)");
  if (!(cfg.eps > 0 && cfg.eps < 1)) throw DomainError("run_fixed_point: eps must lie in (0, 1)");
  if (cfg.tol < 0) throw DomainError("run_fixed_point: tol must be positive");
  return cfg.student == StudentKind::bayes ? run_bayes(cfg) : run_erm(cfg);
}

double nishimori_residual(const OverlapState& s, const Mat& Qstar) {
  return std::max(max_abs(Mat(s.m - s.q)), max_abs(Mat(s.V - (Qstar - s.q))));
}

}  // namespace perclab
