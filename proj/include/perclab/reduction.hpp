#pragma once

// k -> k-1 reduction: every teacher/student row w is replaced by the
// differences w_h - w_k, which removes the shift redundancy of argmax.

#include <Eigen/Dense>
#include <vector>

#include "perclab/smallmat.hpp"

namespace perclab {

struct Atom {
  Vec point;
  double weight;
};

struct AtomPrior {
  std::vector<Atom> atoms;

  int dim() const { return atoms.empty() ? 0 : static_cast<int>(atoms.front().point.size()); }
  Vec mean() const;
  Mat second_moment() const;
  Mat covariance() const;
  // Shannon entropy of the weights (natural log).
  double entropy() const;
};

// Class y (1-based) owns the cone {z : A_y z > 0}. A_y maps the field space
// (dimension k-1 in reduced coordinates, k in full coordinates) to the k-1
// pairwise margins of class y.
struct ClassRegionMap {
  int k = 0;
  int field_dim = 0;
  std::vector<Mat> A;

  const Mat& region(int y) const { return A.at(static_cast<std::size_t>(y - 1)); }
};

Eigen::MatrixXd reduce_weights(const Eigen::MatrixXd& W);

Mat reduced_gaussian_covariance(int k);

AtomPrior reduced_rademacher_prior(int k = 3);

// Regions for reduced fields (the last logit pinned to zero).
ClassRegionMap class_regions(int k);

// Regions for full k-dimensional logits: A_y = D_y with rows e_y - e_l, l != y.
ClassRegionMap class_regions_full(int k);

// First class whose region contains z; boundary ties go to the lowest index.
int classify(const Vec& z, const ClassRegionMap& map);

// Argmax over the lifted logits (z, 0) for reduced fields, lowest index on ties.
int classify_reduced(const double* z, int k);

// Argmax over k logits, lowest index on ties.
int argmax_class(const double* z, int k);

// Rays (unit vectors in field space) on which class boundaries lie.
std::vector<Vec> boundary_rays(const ClassRegionMap& map);

}  // namespace perclab
