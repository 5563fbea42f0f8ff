#include "perclab/generalization.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include "perclab/errors.hpp"
#include "perclab/parallel.hpp"
#include "perclab/random.hpp"
#include "perclab/reduction.hpp"

namespace perclab {

namespace {

constexpr std::int64_t kChunk = 1 << 14;

int class_of(const double* z, int D, FieldCoords coords) {
  return coords == FieldCoords::reduced ? classify_reduced(z, D + 1) : argmax_class(z, D);
}

// Teacher field = Lt ζ1; student field = M ν + Ls ζ2.
ErrorEstimate mismatch_rate(const Mat& Lt, const Mat& M, const Mat& Ls, const GenErrorOptions& opt) {
  if (opt.n_samples < 1) throw DomainError("gen_error: n_samples must be >= 1");
  const int D = static_cast<int>(Lt.rows());
  const std::int64_t chunks = (opt.n_samples + kChunk - 1) / kChunk;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(chunks), 0);
  parallel_for(static_cast<int>(chunks), opt.threads, [&](int c) {
    Philox rng(opt.seed, substream(0x67656eULL, static_cast<std::uint64_t>(c)));
    const std::int64_t begin = c * kChunk;
    const std::int64_t end = std::min(opt.n_samples, begin + kChunk);
    Vec z1(D), z2(D), nu(D), mu(D);
    std::int64_t wrong = 0;
    for (std::int64_t s = begin; s < end; ++s) {
      for (int i = 0; i < D; ++i) z1(i) = rng.normal();
      for (int i = 0; i < D; ++i) z2(i) = rng.normal();
      nu = Lt * z1;
      mu = M * nu + Ls * z2;
      if (class_of(nu.data(), D, opt.coords) != class_of(mu.data(), D, opt.coords)) ++wrong;
    }
    counts[static_cast<std::size_t>(c)] = wrong;
  });
  std::int64_t total = 0;
  for (auto n : counts) total += n;
  const double n = static_cast<double>(opt.n_samples);
  ErrorEstimate e;
  e.value = static_cast<double>(total) / n;
  e.std_error = std::sqrt(e.value * (1.0 - e.value) / n);
  return e;
}

void check_dims(const Mat& Qstar, const GenErrorOptions& opt) {
  const int D = static_cast<int>(Qstar.rows());
  if (opt.coords == FieldCoords::reduced && (D < 1 || D > 3)) throw DimensionError("gen_error: reduced dim must be 1..3");
  if (opt.coords == FieldCoords::full && (D < 2 || D > 4)) throw DimensionError("gen_error: full dim must be 2..4");
}

}  // namespace

ErrorEstimate gen_error_erm(const Mat& m, const Mat& q, const Mat& Qstar, const GenErrorOptions& opt) {
  check_dims(Qstar, opt);
  const int D = static_cast<int>(Qstar.rows());
  if (m.rows() != D || m.cols() != D || q.rows() != D) throw DimensionError("gen_error_erm: dimension mismatch");
  Eigen::MatrixXd J(2 * D, 2 * D);
  J << Qstar, m.transpose(), m, q;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (J + J.transpose()), Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, J.cwiseAbs().maxCoeff());
  if (es.eigenvalues()(0) < -1e-8 * scale) {
    std::ostringstream os;
    os << "gen_error_erm: joint overlap matrix is not PSD (min eigenvalue " << es.eigenvalues()(0) << ")";
    throw NotSpdError(os.str());
  }
  const Mat M = m * inverse_spd(Qstar);
  const Mat cond = project_psd(Mat(symmetrize(Mat(q - M * m.transpose()))));
  return mismatch_rate(sqrt_spd(Qstar), M, sqrt_spd(cond), opt);
}

ErrorEstimate gen_error_bayes(const Mat& q, const Mat& Qstar, const GenErrorOptions& opt) {
  check_dims(Qstar, opt);
  const int D = static_cast<int>(Qstar.rows());
  if (q.rows() != D) throw DimensionError("gen_error_bayes: dimension mismatch");
  const double scale = max_abs(Qstar);
  if (min_eigenvalue(q) < -1e-8 * scale || min_eigenvalue(Mat(Qstar - q)) < -1e-8 * scale)
    throw NotSpdError("gen_error_bayes: need 0 <= q <= Q*");
  // Sample the student field first: μ = q^{1/2}ζ1, ν = μ + (Q* - q)^{1/2}ζ2.
  // mismatch_rate draws (teacher, student) as (Lt ζ1, M ν + Ls ζ2), so swap roles.
  const Mat Lq = sqrt_spd(project_psd(q));
  const Mat Lr = sqrt_spd(project_psd(Mat(symmetrize(Mat(Qstar - q)))));
  return mismatch_rate(Lq, Mat::Identity(D, D), Lr, opt);
}

}  // namespace perclab
