#pragma once

#include <string>
#include <vector>

#include "perclab/prior.hpp"
#include "perclab/state_evolution.hpp"

namespace perclab {

// Ψ_w(q̂) - ½Tr(q q̂), rearranged so that both terms stay finite as q̂ grows.
double prior_free_entropy(const Mat& q, const Mat& qhat, const TeacherPrior& teacher,
                          const QuadratureSettings& quad = {});

// E_ξ Σ_y Z ln Z at (q^{1/2}ξ, Q* - q).
double psi_out_bayes(const Mat& q, const Mat& Qstar, const ClassRegionMap& regions,
                     const QuadratureSettings& quad = {});

// Φ = -½Tr(q q̂) + Ψ_w(q̂) + α Ψ_out(q).
double phi_bayes(const Mat& q, const Mat& qhat, double alpha, const TeacherPrior& teacher,
                 const QuadratureSettings& quad = {});

struct ScanOptions {
  double alpha_lo = 2.0;
  double alpha_hi = 3.2;
  double grid_step = 0.1;
  double bracket = 0.01;
  double perfect_tol = 1e-4;
  double tol = 1e-9;
  int max_iter = 5000;
  double eps = 1e-3;
  int threads = 1;
  std::int64_t mc_samples = 2'000'000;
  std::uint64_t seed = 1;
  QuadratureSettings quad;
};

struct ScanPoint {
  double alpha = 0.0;
  double phi_uninformed = 0.0;
  double phi_informed = 0.0;
  double eps_uninformed = 0.0;
  double eps_informed = 0.0;
  bool perfect_uninformed = false;
  bool perfect_informed = false;
  bool converged = false;
};

struct TransitionReport {
  bool it_found = false;
  bool algo_found = false;
  double alpha_it = -1.0;
  double alpha_algo = -1.0;
  double it_bracket[2] = {0.0, 0.0};
  double algo_bracket[2] = {0.0, 0.0};
  std::vector<ScanPoint> curve;
  std::vector<std::string> diagnostics;
};

// Both branches at one α: uninformed (q = εQ*) and informed (q = (1-ε)Q*).
ScanPoint evaluate_branches(double alpha, const TeacherPrior& teacher, const ScanOptions& opt);

TransitionReport scan_transitions(const TeacherPrior& teacher, const ScanOptions& opt);

}  // namespace perclab
