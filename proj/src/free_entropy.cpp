#include "perclab/free_entropy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "perclab/generalization.hpp"
#include "perclab/parallel.hpp"

namespace perclab {

namespace {

double atom_lse_term(const Mat& qhat, const AtomPrior& prior, const QuadratureSettings& quad) {
  const int D = prior.dim();
  const Mat root = sqrt_spd(qhat);
  const NodeSet ns = tensor_gauss_hermite(D, quad.gh_order);
  const std::size_t na = prior.atoms.size();
  std::vector<double> e(na);
  double total = 0.0;
  for (const auto& a : prior.atoms) {
    // Per target atom b: constant part and the ξ-direction q̂^{1/2}Δ.
    std::vector<double> base(na);
    std::vector<Vec> dir(na);
    for (std::size_t b = 0; b < na; ++b) {
      const Vec delta = prior.atoms[b].point - a.point;
      base[b] = std::log(prior.atoms[b].weight) - 0.5 * delta.dot(qhat * delta);
      dir[b] = root * delta;
    }
    double part = 0.0;
    for (Eigen::Index i = 0; i < ns.size(); ++i) {
      const Vec xi = ns.points.col(i);
      double emax = -std::numeric_limits<double>::infinity();
      for (std::size_t b = 0; b < na; ++b) {
        e[b] = base[b] + xi.dot(dir[b]);
        emax = std::max(emax, e[b]);
      }
      double s = 0.0;
      for (std::size_t b = 0; b < na; ++b) s += std::exp(e[b] - emax);
      part += ns.weights(i) * (emax + std::log(s));
    }
    total += a.weight * part;
  }
  return total;
}

}  // namespace

double prior_free_entropy(const Mat& q, const Mat& qhat, const TeacherPrior& teacher, const QuadratureSettings& quad) {
  const Mat& Qstar = teacher.second_moment();
  if (!qhat.allFinite()) {
    if (!teacher.discrete()) throw DomainError("prior_free_entropy: infinite q̂ needs a discrete prior");
    return -teacher.atoms.entropy();
  }
  const double trace_term = 0.5 * (qhat * (Qstar - q)).trace();
  if (teacher.kind == TeacherKind::gaussian) {
    const Mat r = sqrt_spd(teacher.covariance);
    const int D = teacher.dim();
    const Mat M = symmetrize(Mat(Mat::Identity(D, D) + r * qhat * r));
    return trace_term - 0.5 * logdet(M);
  }
  return trace_term + atom_lse_term(qhat, teacher.atoms, quad);
}

double psi_out_bayes(const Mat& q, const Mat& Qstar, const ClassRegionMap& regions, const QuadratureSettings& quad) {
  if (at_perfect_recovery(q, Qstar)) return 0.0;
  return bayes_channel(q, Qstar, 1.0, regions, quad).psi_out;
}

double phi_bayes(const Mat& q, const Mat& qhat, double alpha, const TeacherPrior& teacher,
                 const QuadratureSettings& quad) {
  const Mat& Qstar = teacher.second_moment();
  double out = prior_free_entropy(q, qhat, teacher, quad);
  if (alpha != 0.0) out += alpha * psi_out_bayes(q, Qstar, class_regions(teacher.k), quad);
  return out;
}

ScanPoint evaluate_branches(double alpha, const TeacherPrior& teacher, const ScanOptions& opt) {
  SEConfig cfg;
  cfg.alpha = alpha;
  cfg.teacher = teacher;
  cfg.student = StudentKind::bayes;
  cfg.tol = opt.tol;
  cfg.max_iter = opt.max_iter;
  cfg.eps = opt.eps;
  cfg.quad = opt.quad;
  const Mat& Qstar = teacher.second_moment();

  ScanPoint pt;
  pt.alpha = alpha;
  cfg.init = InitKind::uninformed;
  const FixedPoint unf = run_fixed_point(cfg);
  cfg.init = InitKind::informed;
  const FixedPoint inf = run_fixed_point(cfg);
  pt.phi_uninformed = *unf.free_entropy;
  pt.phi_informed = *inf.free_entropy;
  pt.perfect_uninformed = max_abs(Mat(Qstar - unf.state.q)) < opt.perfect_tol;
  pt.perfect_informed = max_abs(Mat(Qstar - inf.state.q)) < opt.perfect_tol;
  pt.converged = unf.converged && inf.converged;
  if (opt.mc_samples > 0) {
    GenErrorOptions g;
    g.n_samples = opt.mc_samples;
    g.seed = opt.seed;
    g.threads = 1;
    pt.eps_uninformed = gen_error_bayes(unf.state.q, Qstar, g).value;
    pt.eps_informed = gen_error_bayes(inf.state.q, Qstar, g).value;
  }
  return pt;
}

namespace {

constexpr double kTieTolerance = 1e-9;

bool informed_selected(const ScanPoint& p) { return p.phi_informed - p.phi_uninformed >= -kTieTolerance; }

double uninformed_gap(double alpha, const TeacherPrior& teacher, const ScanOptions& opt) {
  SEConfig cfg;
  cfg.alpha = alpha;
  cfg.teacher = teacher;
  cfg.tol = opt.tol;
  cfg.max_iter = opt.max_iter;
  cfg.eps = opt.eps;
  cfg.quad = opt.quad;
  cfg.compute_free_entropy = false;
  const FixedPoint fp = run_fixed_point(cfg);
  return max_abs(Mat(teacher.second_moment() - fp.state.q));
}

}  // namespace

TransitionReport scan_transitions(const TeacherPrior& teacher, const ScanOptions& opt) {
  if (!(opt.alpha_lo < opt.alpha_hi)) throw DomainError("scan_transitions: need alpha_lo < alpha_hi");
  if (!(opt.grid_step > 0) || !(opt.bracket > 0)) throw DomainError("scan_transitions: step and bracket must be positive");
  if (!(opt.alpha_lo > 0)) throw DomainError("scan_transitions: alpha must be positive");
  TransitionReport rep;
  const int n = static_cast<int>(std::floor((opt.alpha_hi - opt.alpha_lo) / opt.grid_step + 1e-9)) + 1;
  rep.curve.resize(static_cast<std::size_t>(n));
  parallel_for(n, opt.threads, [&](int i) {
    rep.curve[static_cast<std::size_t>(i)] = evaluate_branches(opt.alpha_lo + i * opt.grid_step, teacher, opt);
  });
  for (const auto& p : rep.curve) {
    if (!p.converged) {
      std::ostringstream os;
      os << "fixed point did not converge at alpha = " << p.alpha;
      rep.diagnostics.push_back(os.str());
    }
  }
  ScanOptions quiet = opt;
  quiet.mc_samples = 0;

  // α_IT: the free-entropy difference changes sign; the final bracket is
  // refined by linear interpolation of the difference.
  for (std::size_t i = 0; i + 1 < rep.curve.size(); ++i) {
    const ScanPoint& a = rep.curve[i];
    const ScanPoint& b = rep.curve[i + 1];
    if (informed_selected(a) || !informed_selected(b)) continue;
    double lo = a.alpha, hi = b.alpha;
    double dlo = a.phi_informed - a.phi_uninformed, dhi = b.phi_informed - b.phi_uninformed;
    while (hi - lo > opt.bracket) {
      const double mid = 0.5 * (lo + hi);
      const ScanPoint pm = evaluate_branches(mid, teacher, quiet);
      const double d = pm.phi_informed - pm.phi_uninformed;
      if (informed_selected(pm)) {
        hi = mid;
        dhi = d;
      } else {
        lo = mid;
        dlo = d;
      }
    }
    rep.it_bracket[0] = lo;
    rep.it_bracket[1] = hi;
    rep.alpha_it = dhi > dlo ? lo + (hi - lo) * (-dlo) / (dhi - dlo) : 0.5 * (lo + hi);
    rep.alpha_it = std::clamp(rep.alpha_it, lo, hi);
    rep.it_found = true;
    break;
  }
  // α_algo: the uninformed branch starts to reach perfect recovery.
  for (std::size_t i = 0; i + 1 < rep.curve.size(); ++i) {
    if (rep.curve[i].perfect_uninformed || !rep.curve[i + 1].perfect_uninformed) continue;
    double lo = rep.curve[i].alpha, hi = rep.curve[i + 1].alpha;
    while (hi - lo > opt.bracket) {
      const double mid = 0.5 * (lo + hi);
      if (uninformed_gap(mid, teacher, quiet) < opt.perfect_tol)
        hi = mid;
      else
        lo = mid;
    }
    rep.algo_bracket[0] = lo;
    rep.algo_bracket[1] = hi;
    rep.alpha_algo = 0.5 * (lo + hi);
    rep.algo_found = true;
    break;
  }
  if (!rep.it_found) rep.diagnostics.push_back("no free-entropy crossing between the branches on the grid");
  if (!rep.algo_found)
    rep.diagnostics.push_back("uninformed branch never reaches perfect recovery on the grid");
  if (!rep.it_found && !rep.algo_found) rep.diagnostics.push_back("no coexistence region detected");
  return rep;
}

}  // namespace perclab
