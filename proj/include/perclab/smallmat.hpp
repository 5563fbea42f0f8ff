#pragma once

// Small dense matrices (at most 4x4) for overlaps, covariances and channel
// queries. Storage is fixed-capacity on the stack; all helpers are free
// functions templated on the scalar type.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "perclab/errors.hpp"

namespace perclab {

template <typename Scalar>
using SmallMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor, 4, 4>;

template <typename Scalar>
using SmallVec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1, Eigen::ColMajor, 4, 1>;

using Mat = SmallMat<double>;
using Vec = SmallVec<double>;

template <typename Scalar = double>
SmallMat<Scalar> identity(int n) {
  return SmallMat<Scalar>::Identity(n, n);
}

template <typename Scalar = double>
SmallMat<Scalar> zeros(int r, int c) {
  return SmallMat<Scalar>::Zero(r, c);
}

template <typename Derived>
auto max_abs(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  return a.size() == 0 ? Scalar(0) : a.cwiseAbs().maxCoeff();
}

template <typename Scalar>
SmallMat<Scalar> symmetrize(const SmallMat<Scalar>& a) {
  return (a + a.transpose()) / Scalar(2);
}

template <typename Scalar>
std::string describe(const SmallMat<Scalar>& a, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << '[';
  for (int i = 0; i < a.rows(); ++i) {
    os << (i ? "; " : "");
    for (int j = 0; j < a.cols(); ++j) os << (j ? ", " : "") << a(i, j);
  }
  os << ']';
  return os.str();
}

template <typename Scalar>
SmallMat<Scalar> matmul(const SmallMat<Scalar>& a, const SmallMat<Scalar>& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  return a * b;
}

template <typename Scalar>
Scalar condition_estimate(const SmallMat<Scalar>& a) {
  Eigen::JacobiSVD<SmallMat<Scalar>> svd(a);
  const auto& s = svd.singularValues();
  if (s(s.size() - 1) == Scalar(0)) return std::numeric_limits<Scalar>::infinity();
  return s(0) / s(s.size() - 1);
}

// Singularity is judged on the determinant normalized by the row norms
// (Hadamard bound), so uniformly small but well-conditioned matrices pass.
template <typename Scalar>
SmallMat<Scalar> inverse(const SmallMat<Scalar>& a) {
  if (a.rows() != a.cols()) throw DimensionError("inverse: matrix is not square");
  const int n = static_cast<int>(a.rows());
  Scalar hadamard(1);
  for (int i = 0; i < n; ++i) hadamard *= a.row(i).norm();
  Eigen::PartialPivLU<SmallMat<Scalar>> lu(a);
  const Scalar det = lu.determinant();
  if (!(hadamard > Scalar(0)) || !(std::abs(det) > Scalar(1e-14) * hadamard))
    throw SingularMatrixError("inverse: singular matrix " + describe(a), condition_estimate(a));
  return lu.inverse();
}

namespace detail {

template <typename Scalar>
bool try_cholesky(const SmallMat<Scalar>& a, SmallMat<Scalar>& l) {
  const int n = static_cast<int>(a.rows());
  Scalar max_diag(0);
  for (int i = 0; i < n; ++i) max_diag = std::max(max_diag, a(i, i));
  if (!(max_diag > Scalar(0))) return false;
  l = SmallMat<Scalar>::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    Scalar d = a(j, j);
    for (int p = 0; p < j; ++p) d -= l(j, p) * l(j, p);
    if (!(d > Scalar(1e-14) * max_diag)) return false;
    l(j, j) = std::sqrt(d);
    for (int i = j + 1; i < n; ++i) {
      Scalar s = a(i, j);
      for (int p = 0; p < j; ++p) s -= l(i, p) * l(j, p);
      l(i, j) = s / l(j, j);
    }
  }
  return true;
}

template <typename Scalar>
void require_symmetric(const SmallMat<Scalar>& a, const char* who) {
  if (a.rows() != a.cols()) throw DimensionError(std::string(who) + ": matrix is not square");
  const Scalar scale = std::max(Scalar(1), max_abs(a));
  if (max_abs(SmallMat<Scalar>(a - a.transpose())) > Scalar(1e-12) * scale)
    throw NotSpdError(std::string(who) + ": matrix is not symmetric " + describe(a));
}

}  // namespace detail

// Lower-triangular L with L Lᵀ = a. A failing pivot triggers one retry
// with a + 1e-12 I before giving up.
template <typename Scalar>
SmallMat<Scalar> cholesky(const SmallMat<Scalar>& a) {
  detail::require_symmetric(a, "cholesky");
  SmallMat<Scalar> l;
  if (detail::try_cholesky(a, l)) return l;
  const SmallMat<Scalar> reg = a + Scalar(1e-12) * SmallMat<Scalar>::Identity(a.rows(), a.cols());
  if (detail::try_cholesky(reg, l)) return l;
  throw NotSpdError("cholesky: matrix is not positive definite " + describe(a));
}

template <typename Scalar>
bool is_spd(const SmallMat<Scalar>& a) {
  if (a.rows() != a.cols()) return false;
  SmallMat<Scalar> l;
  return detail::try_cholesky(SmallMat<Scalar>(symmetrize(a)), l);
}

template <typename Scalar>
Scalar min_eigenvalue(const SmallMat<Scalar>& a) {
  Eigen::SelfAdjointEigenSolver<SmallMat<Scalar>> es(symmetrize(a), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

template <typename Scalar>
Scalar max_eigenvalue(const SmallMat<Scalar>& a) {
  Eigen::SelfAdjointEigenSolver<SmallMat<Scalar>> es(symmetrize(a), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(a.rows() - 1);
}

// Symmetric square root. Eigenvalues down to -1e-12 (relative) are treated
// as zero so boundary points q = Q* are accepted.
template <typename Scalar>
SmallMat<Scalar> sqrt_spd(const SmallMat<Scalar>& a) {
  detail::require_symmetric(a, "sqrt_spd");
  const int n = static_cast<int>(a.rows());
  const Scalar scale = std::max(max_abs(a), std::numeric_limits<Scalar>::min());
  if (n == 1) {
    if (a(0, 0) < -Scalar(1e-12) * scale) throw NotSpdError("sqrt_spd: negative eigenvalue");
    SmallMat<Scalar> s(1, 1);
    s(0, 0) = std::sqrt(std::max(a(0, 0), Scalar(0)));
    return s;
  }
  if (n == 2) {
    const Scalar det = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
    const Scalar tr = a(0, 0) + a(1, 1);
    const bool well_posed = det > Scalar(1e-10) * scale * scale && tr > 0;
    if (well_posed) {
      const Scalar sd = std::sqrt(det);
      const Scalar t = std::sqrt(tr + 2 * sd);
      SmallMat<Scalar> s = (a + sd * SmallMat<Scalar>::Identity(2, 2)) / t;
      return symmetrize(s);
    }
  }
  Eigen::SelfAdjointEigenSolver<SmallMat<Scalar>> es(symmetrize(a));
  SmallVec<Scalar> ev = es.eigenvalues();
  for (int i = 0; i < n; ++i) {
    if (ev(i) < -Scalar(1e-12) * scale) throw NotSpdError("sqrt_spd: negative eigenvalue in " + describe(a));
    ev(i) = std::sqrt(std::max(ev(i), Scalar(0)));
  }
  SmallMat<Scalar> s = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return symmetrize(s);
}

template <typename Scalar>
Scalar logdet(const SmallMat<Scalar>& a) {
  const SmallMat<Scalar> l = cholesky(a);
  Scalar s(0);
  for (int i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
  return 2 * s;
}

// Inverse of an SPD matrix through its Cholesky factor.
template <typename Scalar>
SmallMat<Scalar> inverse_spd(const SmallMat<Scalar>& a) {
  const SmallMat<Scalar> l = cholesky(a);
  const int n = static_cast<int>(a.rows());
  SmallMat<Scalar> linv = l.template triangularView<Eigen::Lower>().solve(SmallMat<Scalar>::Identity(n, n));
  return linv.transpose() * linv;
}

// Projection of a symmetric matrix onto the PSD cone (negative eigenvalues
// set to zero).
template <typename Scalar>
SmallMat<Scalar> project_psd(const SmallMat<Scalar>& a) {
  Eigen::SelfAdjointEigenSolver<SmallMat<Scalar>> es(symmetrize(a));
  SmallVec<Scalar> ev = es.eigenvalues().cwiseMax(Scalar(0));
  SmallMat<Scalar> p = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return symmetrize(p);
}

}  // namespace perclab
