#include "perclab/amp.hpp"

#include <cmath>
#include <sstream>

#include "perclab/channel.hpp"
#include "perclab/errors.hpp"
#include "perclab/log.hpp"

namespace perclab {

using Eigen::MatrixXd;

namespace {

Mat unflatten(const MatrixXd& flat, Eigen::Index row, int D) {
  Mat a(D, D);
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) a(i, j) = flat(row, i * D + j);
  return a;
}

void flatten_into(const Mat& a, MatrixXd& flat, Eigen::Index row) {
  const int D = static_cast<int>(a.rows());
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) flat(row, i * D + j) = a(i, j);
}

}  // namespace

AmpOverlaps amp_overlaps(const MatrixXd& what, const MatrixXd& wstar_reduced) {
  if (what.rows() != wstar_reduced.rows()) throw DimensionError("amp_overlaps: row counts differ");
  const double d = static_cast<double>(what.rows());
  AmpOverlaps o;
  o.m = what.transpose() * wstar_reduced / d;
  o.q = what.transpose() * what / d;
  return o;
}

AmpResult amp_run(const MatrixXd& X, const std::vector<int>& y, const AmpConfig& cfg,
                  const MatrixXd* wstar_reduced) {
  const int k = cfg.prior.k;
  const int D = k - 1;
  const Eigen::Index n = X.rows(), d = X.cols();
  if (static_cast<Eigen::Index>(y.size()) != n) throw DimensionError("amp_run: labels and data disagree");
  if (d < 1) throw DimensionError("amp_run: empty design");
  if (wstar_reduced && (wstar_reduced->rows() != d || wstar_reduced->cols() != D))
    throw DimensionError("amp_run: teacher shape mismatch");
  for (int label : y)
    if (label < 1 || label > k) throw DomainError("amp_run: label out of range");
  if (!(cfg.damping >= 0 && cfg.damping < 1)) throw DomainError("amp_run: damping must lie in [0, 1)");

  const ClassRegionMap regions = class_regions(k);
  const double dd = static_cast<double>(d);
  const double sd = std::sqrt(dd);
  const MatrixXd X2 = X.cwiseAbs2();
  const double theta = cfg.damping;

  AmpResult res;
  AmpState& s = res.state;
  const Vec prior_mean = cfg.prior.kind == TeacherKind::gaussian ? Vec(Vec::Zero(D)) : cfg.prior.atoms.mean();
  const Mat prior_cov =
      cfg.prior.kind == TeacherKind::gaussian ? cfg.prior.covariance : cfg.prior.atoms.covariance();
  s.what.resize(d, D);
  s.Chat.resize(d, D * D);
  for (Eigen::Index j = 0; j < d; ++j) {
    s.what.row(j) = prior_mean.transpose();
    flatten_into(prior_cov, s.Chat, j);
  }
  s.g = MatrixXd::Zero(n, D);
  s.omega = MatrixXd::Zero(n, D);
  s.V = MatrixXd::Zero(n, D * D);

  MatrixXd dg(n, D * D);
  MatrixXd g_new(n, D);
  MatrixXd w_new(d, D), C_new(d, D * D);
  for (int t = 1; t <= cfg.max_iter; ++t) {
    if (cfg.exact_variance) {
      s.V.noalias() = X2 * s.Chat / dd;
    } else {
      s.V.rowwise() = s.Chat.colwise().mean();
    }
    s.omega.noalias() = X * s.what / sd;
    for (Eigen::Index nu = 0; nu < n; ++nu) {
      Mat Vn = symmetrize(unflatten(s.V, nu, D));
      if (!is_spd(Vn)) {
        Vn += Mat::Identity(D, D) * (1e-10 + std::max(0.0, -min_eigenvalue(Vn)));
        flatten_into(Vn, s.V, nu);
        ++res.regularized_variances;
      }
      Vec onsager = Vn * s.g.row(nu).transpose();
      s.omega.row(nu) -= onsager.transpose();
    }

    bool failed = false;
    std::string why;
    for (Eigen::Index nu = 0; nu < n && !failed; ++nu) {
      ChannelQuery query;
      query.y = y[static_cast<std::size_t>(nu)];
      query.omega = s.omega.row(nu).transpose();
      query.V = unflatten(s.V, nu, D);
      try {
        const ChannelResult r = fout_bayes(query, regions);
        g_new.row(nu) = r.g.transpose();
        flatten_into(r.dg, dg, nu);
      } catch (const TailError& e) {
        failed = true;
        std::ostringstream os;
        os << "amp_run: channel tail failure at iteration " << t << ", sample " << nu << ": " << e.what();
        why = os.str();
      }
    }
    if (failed) {
      res.aborted = true;
      res.diagnostics = why;
      warn(why);
      break;
    }
    s.g = (1.0 - theta) * g_new + theta * s.g;

    MatrixXd Lambda(d, D * D);
    if (cfg.exact_variance) {
      Lambda.noalias() = -(X2.transpose() * dg) / dd;
    } else {
      Lambda.rowwise() = -(dg.colwise().sum()) / dd;
    }
    MatrixXd gamma = X.transpose() * s.g / sd;
    for (Eigen::Index j = 0; j < d; ++j) {
      const Mat L = symmetrize(unflatten(Lambda, j, D));
      gamma.row(j) += (L * s.what.row(j).transpose()).transpose();
      const PriorResult pr = teacher_denoiser(gamma.row(j).transpose(), L, cfg.prior);
      w_new.row(j) = pr.f.transpose();
      flatten_into(pr.df, C_new, j);
    }

    const double delta = (w_new - s.what).norm() / sd * (1.0 - theta);
    s.what = (1.0 - theta) * w_new + theta * s.what;
    s.Chat = (1.0 - theta) * C_new + theta * s.Chat;
    s.iteration = t;

    AmpTracePoint tp;
    tp.iteration = t;
    tp.delta = delta;
    for (int a = 0; a < D; ++a) tp.mean_variance += s.Chat.col(a * D + a).mean() / D;
    tp.q = s.what.transpose() * s.what / dd;
    if (wstar_reduced) tp.m = s.what.transpose() * (*wstar_reduced) / dd;
    res.trace.push_back(tp);
    if (delta < cfg.tol || tp.mean_variance < cfg.variance_tol) {
      res.converged = true;
      break;
    }
  }
  if (res.regularized_variances > 0)
    warn("amp_run: regularized " + std::to_string(res.regularized_variances) + " non-SPD sample variances");
  if (!res.converged && !res.aborted) res.diagnostics = "amp_run: iteration budget exhausted";
  return res;
}

}  // namespace perclab
