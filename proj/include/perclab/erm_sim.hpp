#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "perclab/channel.hpp"
#include "perclab/generalization.hpp"
#include "perclab/smallmat.hpp"

namespace perclab {

struct Dataset {
  Eigen::MatrixXd X;      // n x d, i.i.d. N(0, 1)
  std::vector<int> y;     // labels in 1..k
  Eigen::MatrixXd Wstar;  // d x k teacher
  std::uint64_t seed = 0;
  int k = 0;

  int n() const { return static_cast<int>(X.rows()); }
  int d() const { return static_cast<int>(X.cols()); }
};

// teacher_kind: "gaussian", "rademacher", or "binary" (k = 2; first column
// ±1, second column zero, so the reduced teacher is the ±1 perceptron).
Dataset generate(int d, int n, int k, const std::string& teacher_kind, std::uint64_t seed);

// Labels argmax_l (W*ᵀx)_l with the lowest index on ties.
std::vector<int> teacher_labels(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Wstar);

struct ErmSolution {
  Eigen::MatrixXd W;  // d x k
  double objective = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
};

// Σ_μ ℓ(Wᵀx_μ/√d, y_μ) + (λ/2)‖W‖²_F on full k logits.
double erm_objective(const Dataset& ds, const Eigen::MatrixXd& W, double lambda, LossKind loss);
Eigen::MatrixXd erm_gradient(const Dataset& ds, const Eigen::MatrixXd& W, double lambda, LossKind loss);

ErmSolution fit_square(const Dataset& ds, double lambda);

// Newton-CG with Armijo backtracking; tol <= 0 selects 1e-8 n.
ErmSolution fit_cross_entropy(const Dataset& ds, double lambda, double tol = 0.0);

struct EmpiricalOverlaps {
  Mat m;      // WᵀW*/d
  Mat q;      // WᵀW/d
  Mat Qstar;  // W*ᵀW*/d
};

EmpiricalOverlaps empirical_overlaps(const Eigen::MatrixXd& W, const Eigen::MatrixXd& Wstar, bool reduce);

// Disagreement rate of argmax(Wᵀx) and argmax(W*ᵀx) on fresh x ~ N(0, I_d).
// The 2k fields are drawn from their exact joint law N(0, [W*, W]ᵀ[W*, W]/d),
// which is the law of the fields of a fresh Gaussian sample. A W with one
// column fewer than W* is treated as reduced and lifted with a zero column.
ErrorEstimate test_error(const Eigen::MatrixXd& W, const Eigen::MatrixXd& Wstar, std::int64_t n_test,
                         std::uint64_t seed, int threads = 1);

// Empirical disagreement on an explicit sample (used to cross-check test_error).
double empirical_error(const Eigen::MatrixXd& X, const Eigen::MatrixXd& W, const Eigen::MatrixXd& Wstar);

}  // namespace perclab
