#include "perclab/erm_sim.hpp"

#include <cmath>
#include <sstream>

#include "perclab/errors.hpp"
#include "perclab/parallel.hpp"
#include "perclab/random.hpp"
#include "perclab/reduction.hpp"

namespace perclab {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd one_hot(const std::vector<int>& y, int k) {
  MatrixXd Y = MatrixXd::Zero(static_cast<Eigen::Index>(y.size()), k);
  for (std::size_t i = 0; i < y.size(); ++i) Y(static_cast<Eigen::Index>(i), y[i] - 1) = 1.0;
  return Y;
}

// Row-wise softmax of the logits.
MatrixXd softmax_rows(const MatrixXd& Z) {
  MatrixXd P(Z.rows(), Z.cols());
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const double m = Z.row(i).maxCoeff();
    P.row(i) = (Z.row(i).array() - m).exp();
    P.row(i) /= P.row(i).sum();
  }
  return P;
}

double cross_entropy_sum(const MatrixXd& Z, const std::vector<int>& y) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const double m = Z.row(i).maxCoeff();
    s += m + std::log((Z.row(i).array() - m).exp().sum()) - Z(i, y[static_cast<std::size_t>(i)] - 1);
  }
  return s;
}

void check_fit_inputs(const Dataset& ds, double lambda) {
  if (!(lambda > 0)) throw DomainError("fit: lambda must be positive");
  if (ds.n() != static_cast<int>(ds.y.size())) throw DimensionError("fit: labels and data disagree");
  for (int y : ds.y)
    if (y < 1 || y > ds.k) throw DomainError("fit: label out of range");
}

}  // namespace

std::vector<int> teacher_labels(const MatrixXd& X, const MatrixXd& Wstar) {
  const MatrixXd Z = X * Wstar;
  std::vector<int> y(static_cast<std::size_t>(X.rows()));
  const int k = static_cast<int>(Wstar.cols());
  Eigen::VectorXd row(k);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    row = Z.row(i).transpose();
    y[static_cast<std::size_t>(i)] = argmax_class(row.data(), k);
  }
  return y;
}

Dataset generate(int d, int n, int k, const std::string& teacher_kind, std::uint64_t seed) {
  if (d < 1 || n < 0) throw DomainError("generate: need d >= 1 and n >= 0");
  if (k < 2) throw DomainError("generate: need k >= 2");
  Dataset ds;
  ds.seed = seed;
  ds.k = k;
  ds.Wstar.resize(d, k);
  Philox wr(seed, 0);
  if (teacher_kind == "gaussian") {
    for (int j = 0; j < d; ++j)
      for (int l = 0; l < k; ++l) ds.Wstar(j, l) = wr.normal();
  } else if (teacher_kind == "rademacher") {
    for (int j = 0; j < d; ++j)
      for (int l = 0; l < k; ++l) ds.Wstar(j, l) = wr.sign();
  } else if (teacher_kind == "binary") {
    if (k != 2) throw DomainError("generate: the binary teacher is defined for k = 2 only");
    for (int j = 0; j < d; ++j) {
      ds.Wstar(j, 0) = wr.sign();
      ds.Wstar(j, 1) = 0.0;
    }
  } else {
    throw DomainError("generate: unknown teacher '" + teacher_kind + "'");
  }
  ds.X.resize(n, d);
  Philox xr(seed, 1);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) ds.X(i, j) = xr.normal();
  ds.y = teacher_labels(ds.X, ds.Wstar);
  return ds;
}

double erm_objective(const Dataset& ds, const MatrixXd& W, double lambda, LossKind loss) {
  const double sd = std::sqrt(static_cast<double>(ds.d()));
  const MatrixXd Z = ds.X * W / sd;
  const double reg = 0.5 * lambda * W.squaredNorm();
  if (loss == LossKind::square) return 0.5 * (Z - one_hot(ds.y, ds.k)).squaredNorm() + reg;
  return cross_entropy_sum(Z, ds.y) + reg;
}

MatrixXd erm_gradient(const Dataset& ds, const MatrixXd& W, double lambda, LossKind loss) {
  const double sd = std::sqrt(static_cast<double>(ds.d()));
  const MatrixXd Z = ds.X * W / sd;
  const MatrixXd Y = one_hot(ds.y, ds.k);
  const MatrixXd R = loss == LossKind::square ? MatrixXd(Z - Y) : MatrixXd(softmax_rows(Z) - Y);
  return ds.X.transpose() * R / sd + lambda * W;
}

ErmSolution fit_square(const Dataset& ds, double lambda) {
  check_fit_inputs(ds, lambda);
  const int n = ds.n(), d = ds.d();
  const double dd = static_cast<double>(d);
  const MatrixXd Y = one_hot(ds.y, ds.k);
  ErmSolution sol;
  if (n >= d) {
    MatrixXd A = ds.X.transpose() * ds.X / dd;
    A.diagonal().array() += lambda;
    Eigen::LLT<MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) throw NotSpdError("fit_square: normal equations are not SPD");
    sol.W = llt.solve(MatrixXd(ds.X.transpose() * Y / std::sqrt(dd)));
  } else {
    MatrixXd G = ds.X * ds.X.transpose() / dd;
    G.diagonal().array() += lambda;
    Eigen::LLT<MatrixXd> llt(G);
    if (llt.info() != Eigen::Success) throw NotSpdError("fit_square: dual system is not SPD");
    sol.W = ds.X.transpose() * llt.solve(Y) / std::sqrt(dd);
  }
  sol.objective = erm_objective(ds, sol.W, lambda, LossKind::square);
  sol.grad_norm = erm_gradient(ds, sol.W, lambda, LossKind::square).norm();
  sol.iterations = 1;
  return sol;
}

ErmSolution fit_cross_entropy(const Dataset& ds, double lambda, double tol) {
  check_fit_inputs(ds, lambda);
  const int n = ds.n(), d = ds.d(), k = ds.k;
  if (tol <= 0) tol = 1e-8 * std::max(1, n);
  const double sd = std::sqrt(static_cast<double>(d));
  const MatrixXd Y = one_hot(ds.y, k);
  MatrixXd W = MatrixXd::Zero(d, k);
  MatrixXd Z = MatrixXd::Zero(n, k);
  double f = cross_entropy_sum(Z, ds.y);
  ErmSolution sol;
  int it = 0;
  for (; it < 200; ++it) {
    const MatrixXd P = softmax_rows(Z);
    const MatrixXd g = ds.X.transpose() * (P - Y) / sd + lambda * W;
    const double gn = g.norm();
    sol.grad_norm = gn;
    if (gn <= tol) break;
    // Hessian-vector product at the current iterate.
    auto hess = [&](const MatrixXd& U) {
      const MatrixXd Zu = ds.X * U / sd;
      MatrixXd S = P.cwiseProduct(Zu);
      const VectorXd rs = S.rowwise().sum();
      S -= P.cwiseProduct(rs.replicate(1, k));
      return MatrixXd(ds.X.transpose() * S / sd + lambda * U);
    };
    // Truncated CG on H s = -g, forcing term min(0.5, sqrt(|g|)).
    const double eta = std::min(0.5, std::sqrt(gn));
    MatrixXd s = MatrixXd::Zero(d, k);
    MatrixXd r = -g;
    MatrixXd p = r;
    double rr = r.squaredNorm();
    for (int cg = 0; cg < 500 && std::sqrt(rr) > eta * gn; ++cg) {
      const MatrixXd Hp = hess(p);
      const double pHp = (p.array() * Hp.array()).sum();
      if (!(pHp > 0)) break;
      const double a = rr / pHp;
      s += a * p;
      r -= a * Hp;
      const double rr_new = r.squaredNorm();
      p = r + (rr_new / rr) * p;
      rr = rr_new;
    }
    const double slope = (g.array() * s.array()).sum();
    const double reg0 = 0.5 * lambda * W.squaredNorm();
    const MatrixXd Zs = ds.X * s / sd;
    double t = 1.0;
    bool accepted = false;
    double f_new = f;
    for (int h = 0; h < 50; ++h) {
      const MatrixXd Wt = W + t * s;
      f_new = cross_entropy_sum(Z + t * Zs, ds.y) + 0.5 * lambda * Wt.squaredNorm();
      if (f_new <= f + reg0 + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    W += t * s;
    Z += t * Zs;
    f = f_new - 0.5 * lambda * W.squaredNorm();
  }
  if (sol.grad_norm > tol) {
    std::ostringstream os;
    os << "fit_cross_entropy: gradient norm " << sol.grad_norm << " above tolerance " << tol << " after " << it
       << " Newton steps";
    throw ConvergenceError(os.str());
  }
  sol.W = W;
  sol.objective = erm_objective(ds, W, lambda, LossKind::cross_entropy);
  sol.iterations = it;
  return sol;
}

EmpiricalOverlaps empirical_overlaps(const MatrixXd& W, const MatrixXd& Wstar, bool reduce) {
  if (W.rows() != Wstar.rows()) throw DimensionError("empirical_overlaps: row counts differ");
  const MatrixXd A = reduce ? reduce_weights(W) : W;
  const MatrixXd B = reduce ? reduce_weights(Wstar) : Wstar;
  if (A.cols() > 4 || B.cols() > 4) throw DimensionError("empirical_overlaps: at most 4 columns");
  const double d = static_cast<double>(W.rows());
  EmpiricalOverlaps o;
  o.m = A.transpose() * B / d;
  o.q = A.transpose() * A / d;
  o.Qstar = B.transpose() * B / d;
  return o;
}

ErrorEstimate test_error(const MatrixXd& W, const MatrixXd& Wstar, std::int64_t n_test, std::uint64_t seed,
                         int threads) {
  if (n_test < 1) throw DomainError("test_error: n_test must be >= 1");
  if (W.rows() != Wstar.rows()) throw DimensionError("test_error: row counts differ");
  const int k = static_cast<int>(Wstar.cols());
  MatrixXd Ws = W;
  if (W.cols() == k - 1) {
    Ws = MatrixXd::Zero(W.rows(), k);
    Ws.leftCols(k - 1) = W;
  } else if (W.cols() != k) {
    throw DimensionError("test_error: student must have k or k-1 columns");
  }
  MatrixXd J(W.rows(), 2 * k);
  J << Wstar, Ws;
  const MatrixXd G = J.transpose() * J / static_cast<double>(W.rows());
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(G);
  const MatrixXd L = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  constexpr std::int64_t chunk = 1 << 14;
  const std::int64_t chunks = (n_test + chunk - 1) / chunk;
  std::vector<std::int64_t> wrong(static_cast<std::size_t>(chunks), 0);
  parallel_for(static_cast<int>(chunks), threads, [&](int c) {
    Philox rng(seed, substream(0x74657374ULL, static_cast<std::uint64_t>(c)));
    const std::int64_t end = std::min(n_test, (c + 1) * chunk);
    VectorXd zeta(2 * k), field(2 * k);
    std::int64_t count = 0;
    for (std::int64_t s = c * chunk; s < end; ++s) {
      for (int i = 0; i < 2 * k; ++i) zeta(i) = rng.normal();
      field.noalias() = L * zeta;
      if (argmax_class(field.data(), k) != argmax_class(field.data() + k, k)) ++count;
    }
    wrong[static_cast<std::size_t>(c)] = count;
  });
  std::int64_t total = 0;
  for (auto w : wrong) total += w;
  ErrorEstimate e;
  e.value = static_cast<double>(total) / static_cast<double>(n_test);
  e.std_error = std::sqrt(e.value * (1.0 - e.value) / static_cast<double>(n_test));
  return e;
}

double empirical_error(const MatrixXd& X, const MatrixXd& W, const MatrixXd& Wstar) {
  const std::vector<int> a = teacher_labels(X, Wstar);
  const std::vector<int> b = teacher_labels(X, W);
  std::int64_t wrong = 0;
  for (std::size_t i = 0; i < a.size(); ++i) wrong += a[i] != b[i];
  return a.empty() ? 0.0 : static_cast<double>(wrong) / static_cast<double>(a.size());
}

}  // namespace perclab
