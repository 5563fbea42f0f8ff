#include "perclab/prior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace perclab {

TeacherPrior gaussian_teacher(int k) {
  TeacherPrior t;
  t.kind = TeacherKind::gaussian;
  t.k = k;
  t.covariance = reduced_gaussian_covariance(k);
  return t;
}

TeacherPrior rademacher_teacher(int k) {
  TeacherPrior t;
  t.kind = TeacherKind::rademacher;
  t.k = k;
  t.atoms = reduced_rademacher_prior(k);
  t.covariance = t.atoms.second_moment();
  return t;
}

TeacherPrior atom_teacher(int k, const AtomPrior& atoms) {
  TeacherPrior t;
  t.kind = TeacherKind::atoms;
  t.k = k;
  t.atoms = atoms;
  t.covariance = atoms.second_moment();
  return t;
}

TeacherPrior teacher_from_name(const std::string& name, int k) {
  if (name == "gaussian") return gaussian_teacher(k);
  if (name == "rademacher") return rademacher_teacher(k);
  if (name == "binary") {
    if (k != 2) throw DomainError("the binary (±1) teacher is defined for k = 2 only");
    AtomPrior p;
    p.atoms.push_back({Vec::Constant(1, -1.0), 0.5});
    p.atoms.push_back({Vec::Constant(1, 1.0), 0.5});
    return atom_teacher(2, p);
  }
  throw DomainError("unknown teacher '" + name + "' (expected gaussian, rademacher or binary)");
}

std::string teacher_name(const TeacherPrior& t) {
  switch (t.kind) {
    case TeacherKind::gaussian:
      return "gaussian";
    case TeacherKind::rademacher:
      return "rademacher";
    case TeacherKind::atoms:
      return "binary";
  }
  return "unknown";
}

PriorResult gaussian_denoiser(const Vec& gamma, const Mat& Lambda, const Mat& Sigma) {
  const int n = static_cast<int>(gamma.size());
  if (Lambda.rows() != n || Sigma.rows() != n) throw DimensionError("gaussian_denoiser: dimension mismatch");
  const Mat Sinv = inverse_spd(Sigma);
  const Mat P = symmetrize(Mat(Sinv + Lambda));
  const Mat Pinv = inverse_spd(P);
  PriorResult r;
  r.f = Pinv * gamma;
  r.df = symmetrize(Pinv);
  r.log_z = 0.5 * gamma.dot(r.f) - 0.5 * (logdet(Sigma) + logdet(P));
  r.z = std::exp(r.log_z);
  return r;
}

PriorResult atom_denoiser(const Vec& gamma, const Mat& Lambda, const AtomPrior& prior) {
  const int n = static_cast<int>(gamma.size());
  if (prior.dim() != n || Lambda.rows() != n) throw DimensionError("atom_denoiser: dimension mismatch");
  const std::size_t na = prior.atoms.size();
  double expo[16];
  std::vector<double> expo_heap;
  double* e = expo;
  if (na > 16) {
    expo_heap.resize(na);
    e = expo_heap.data();
  }
  double emax = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < na; ++a) {
    const Vec& w = prior.atoms[a].point;
    e[a] = std::log(prior.atoms[a].weight) - 0.5 * w.dot(Lambda * w) + gamma.dot(w);
    emax = std::max(emax, e[a]);
  }
  double s = 0.0;
  Vec m1 = Vec::Zero(n);
  Mat m2 = Mat::Zero(n, n);
  for (std::size_t a = 0; a < na; ++a) {
    const double p = std::exp(e[a] - emax);
    const Vec& w = prior.atoms[a].point;
    s += p;
    m1 += p * w;
    m2 += p * w * w.transpose();
  }
  PriorResult r;
  r.log_z = emax + std::log(s);
  r.z = std::exp(r.log_z);
  r.f = m1 / s;
  r.df = symmetrize(Mat(m2 / s - r.f * r.f.transpose()));
  return r;
}

PriorResult ridge_denoiser(const Vec& gamma, const Mat& Vhat, double lambda, const Mat& C) {
  if (!(lambda > 0)) throw DomainError("ridge_denoiser: lambda must be positive");
  const Mat A = inverse_spd(Mat(symmetrize(Mat(lambda * inverse_spd(C) + Vhat))));
  PriorResult r;
  r.f = A * gamma;
  r.df = A;
  r.log_z = 0.5 * gamma.dot(r.f);
  r.z = r.log_z;
  return r;
}

PriorResult teacher_denoiser(const Vec& gamma, const Mat& Lambda, const TeacherPrior& teacher) {
  if (teacher.kind == TeacherKind::gaussian) return gaussian_denoiser(gamma, Lambda, teacher.covariance);
  return atom_denoiser(gamma, Lambda, teacher.atoms);
}

}  // namespace perclab
