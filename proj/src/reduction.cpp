#include "perclab/reduction.hpp"

#include <cmath>
#include <map>
#include <string>

namespace perclab {

Vec AtomPrior::mean() const {
  Vec m = Vec::Zero(dim());
  for (const auto& a : atoms) m += a.weight * a.point;
  return m;
}

Mat AtomPrior::second_moment() const {
  Mat s = Mat::Zero(dim(), dim());
  for (const auto& a : atoms) s += a.weight * a.point * a.point.transpose();
  return s;
}

Mat AtomPrior::covariance() const {
  const Vec m = mean();
  return second_moment() - m * m.transpose();
}

double AtomPrior::entropy() const {
  double h = 0.0;
  for (const auto& a : atoms)
    if (a.weight > 0) h -= a.weight * std::log(a.weight);
  return h;
}

Eigen::MatrixXd reduce_weights(const Eigen::MatrixXd& W) {
  const Eigen::Index k = W.cols();
  if (k < 2) throw DomainError("reduce_weights: need at least two classes");
  return W.leftCols(k - 1).colwise() - W.col(k - 1);
}

Mat reduced_gaussian_covariance(int k) {
  if (k < 2 || k > 5) throw DomainError("reduced_gaussian_covariance: k must be in [2, 5]");
  return Mat::Identity(k - 1, k - 1) + Mat::Ones(k - 1, k - 1);
}

AtomPrior reduced_rademacher_prior(int k) {
  if (k != 2 && k != 3) throw DomainError("reduced_rademacher_prior: unsupported k = " + std::to_string(k));
  // Enumerate the 2^k sign patterns of a teacher row and merge equal
  // reductions; counts are exact so the weights are exact dyadic numbers.
  std::map<std::vector<int>, int> counts;
  const int patterns = 1 << k;
  for (int bits = 0; bits < patterns; ++bits) {
    std::vector<int> w(k);
    for (int l = 0; l < k; ++l) w[l] = (bits >> l) & 1 ? 1 : -1;
    std::vector<int> reduced(k - 1);
    for (int h = 0; h < k - 1; ++h) reduced[h] = w[h] - w[k - 1];
    ++counts[reduced];
  }
  AtomPrior prior;
  for (const auto& [point, count] : counts) {
    Vec p(k - 1);
    for (int h = 0; h < k - 1; ++h) p(h) = point[h];
    prior.atoms.push_back({p, static_cast<double>(count) / patterns});
  }
  return prior;
}

ClassRegionMap class_regions(int k) {
  if (k != 2 && k != 3) throw DomainError("class_regions: unsupported k = " + std::to_string(k));
  ClassRegionMap map;
  map.k = k;
  map.field_dim = k - 1;
  if (k == 2) {
    map.A = {Mat::Constant(1, 1, 1.0), Mat::Constant(1, 1, -1.0)};
    return map;
  }
  Mat a1(2, 2), a2(2, 2), a3(2, 2);
  a1 << 1, 0, 1, -1;
  a2 << 0, 1, -1, 1;
  a3 << -1, 0, 0, -1;
  map.A = {a1, a2, a3};
  return map;
}

ClassRegionMap class_regions_full(int k) {
  if (k < 2 || k > 4) throw DomainError("class_regions_full: unsupported k = " + std::to_string(k));
  ClassRegionMap map;
  map.k = k;
  map.field_dim = k;
  for (int y = 0; y < k; ++y) {
    Mat d = Mat::Zero(k - 1, k);
    int row = 0;
    for (int l = 0; l < k; ++l) {
      if (l == y) continue;
      d(row, y) = 1.0;
      d(row, l) = -1.0;
      ++row;
    }
    map.A.push_back(d);
  }
  return map;
}

int argmax_class(const double* z, int k) {
  int best = 0;
  for (int l = 1; l < k; ++l)
    if (z[l] > z[best]) best = l;
  return best + 1;
}

int classify_reduced(const double* z, int k) {
  int best = k - 1;
  double best_value = 0.0;
  for (int l = k - 2; l >= 0; --l) {
    if (z[l] >= best_value) {
      best = l;
      best_value = z[l];
    }
  }
  return best + 1;
}

int classify(const Vec& z, const ClassRegionMap& map) {
  if (z.size() != map.field_dim) throw DimensionError("classify: field dimension mismatch");
  if (map.field_dim == map.k) return argmax_class(z.data(), map.k);
  return classify_reduced(z.data(), map.k);
}

std::vector<Vec> boundary_rays(const ClassRegionMap& map) {
  std::vector<Vec> rays;
  if (map.field_dim == 1) {
    rays.push_back(Vec::Constant(1, 1.0));
  } else if (map.field_dim == 2 && map.k == 3) {
    Vec r(2);
    r << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
    rays.push_back(r);
    r << 0.0, -1.0;
    rays.push_back(r);
    r << -1.0, 0.0;
    rays.push_back(r);
  }
  return rays;
}

}  // namespace perclab
