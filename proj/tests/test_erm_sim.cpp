#include <doctest.h>

#include <numeric>

#include "helpers.hpp"
#include "perclab/erm_sim.hpp"
#include "perclab/errors.hpp"
#include "perclab/generalization.hpp"
#include <algorithm>
#include <array>

using namespace perclab;
using namespace testing;
using Eigen::MatrixXd;

TEST_SUITE("erm_sim") {
  TEST_CASE("datasets are reproducible") {
    const Dataset a = generate(30, 40, 3, "gaussian", 5), b = generate(30, 40, 3, "gaussian", 5);
    CHECK(a.X == b.X);
    CHECK(a.y == b.y);
    CHECK(a.Wstar == b.Wstar);
    const Dataset c = generate(30, 40, 3, "gaussian", 6);
    CHECK(a.X != c.X);
  }

  TEST_CASE("labels ignore the teacher scale") {
    const Dataset ds = generate(50, 500, 3, "gaussian", 3);
    CHECK(teacher_labels(ds.X, ds.Wstar) == ds.y);
    CHECK(teacher_labels(ds.X, MatrixXd(7.5 * ds.Wstar)) == ds.y);
    // Adding a common column leaves the argmax unchanged.
    MatrixXd shifted = ds.Wstar;
    const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(50, -1, 1);
    shifted.colwise() += v;
    CHECK(teacher_labels(ds.X, shifted) == ds.y);
  }

  TEST_CASE("teacher kinds") {
    const Dataset r = generate(40, 10, 3, "rademacher", 1);
    CHECK(r.Wstar.cwiseAbs().minCoeff() == 1.0);
    const Dataset b = generate(40, 10, 2, "binary", 1);
    CHECK(b.Wstar.col(0).cwiseAbs().minCoeff() == 1.0);
    CHECK(b.Wstar.col(1).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS(generate(40, 10, 3, "binary", 1));
    CHECK_THROWS(generate(40, 10, 3, "laplace", 1));
  }

  TEST_CASE("classes are balanced for a symmetric teacher") {
    const int n = 30000;
    const Dataset ds = generate(200, n, 3, "gaussian", 12);
    std::array<int, 3> counts{};
    for (int y : ds.y) ++counts[y - 1];
    // With a finite teacher the class probabilities deviate from 1/3 by O(1/sqrt(d)).
    for (int c : counts) CHECK(std::abs(c / double(n) - 1.0 / 3.0) < 0.06);
  }

  TEST_CASE("square loss solves the normal equations") {
    for (int n : {30, 120}) {
      const Dataset ds = generate(60, n, 3, "gaussian", 8);
      const ErmSolution s = fit_square(ds, 0.7);
      const MatrixXd grad = erm_gradient(ds, s.W, 0.7, LossKind::square);
      CHECK(grad.norm() < 1e-8);
      CHECK(s.grad_norm < 1e-8);
      CHECK(std::abs(s.objective - erm_objective(ds, s.W, 0.7, LossKind::square)) < 1e-10);
    }
  }

  TEST_CASE("strong regularization shrinks the weights") {
    const Dataset ds = generate(40, 80, 3, "gaussian", 2);
    CHECK(fit_square(ds, 1e9).W.norm() < 1e-6);
    const ErmSolution ce = fit_cross_entropy(ds, 1e9);
    CHECK(ce.W.norm() < 1e-6);
    CHECK(std::abs(ce.objective - 80 * std::log(3.0)) < 1e-4);
  }

  TEST_CASE("cross entropy optimum") {
    const Dataset ds = generate(80, 200, 3, "gaussian", 17);
    const double lambda = 0.1;
    const ErmSolution s = fit_cross_entropy(ds, lambda);
    CHECK(s.grad_norm <= 1e-8 * ds.n());
    CHECK(erm_gradient(ds, s.W, lambda, LossKind::cross_entropy).norm() <= 1e-8 * ds.n());
    const double f0 = s.objective;
    CHECK(f0 < erm_objective(ds, MatrixXd::Zero(80, 3), lambda, LossKind::cross_entropy));
    // Convexity probe: random directions never decrease the objective.
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 5; ++trial) {
      MatrixXd dir(80, 3);
      for (Eigen::Index i = 0; i < dir.size(); ++i) dir(i) = nd(rng);
      for (double h : {1e-3, 1e-1}) {
        CHECK(erm_objective(ds, MatrixXd(s.W + h * dir), lambda, LossKind::cross_entropy) >= f0 - 1e-9);
        CHECK(erm_objective(ds, MatrixXd(s.W - h * dir), lambda, LossKind::cross_entropy) >= f0 - 1e-9);
      }
    }
    // Row order of the data does not matter.
    Dataset perm = ds;
    std::vector<int> idx(ds.n());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int i = 0; i < ds.n(); ++i) {
      perm.X.row(i) = ds.X.row(idx[i]);
      perm.y[i] = ds.y[idx[i]];
    }
    CHECK((fit_cross_entropy(perm, lambda).W - s.W).norm() < 1e-6 * s.W.norm());
  }

  TEST_CASE("cross entropy gradient matches finite differences") {
    const Dataset ds = generate(10, 25, 3, "gaussian", 23);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    MatrixXd W(10, 3);
    for (Eigen::Index i = 0; i < W.size(); ++i) W(i) = nd(rng);
    for (LossKind kind : {LossKind::cross_entropy, LossKind::square}) {
      const MatrixXd g = erm_gradient(ds, W, 0.3, kind);
      for (Eigen::Index i = 0; i < W.size(); i += 4) {
        MatrixXd a = W, b = W;
        a(i) += 1e-6;
        b(i) -= 1e-6;
        const double fd = (erm_objective(ds, a, 0.3, kind) - erm_objective(ds, b, 0.3, kind)) / 2e-6;
        CHECK(std::abs(fd - g(i)) < 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }

  TEST_CASE("empirical overlaps") {
    const Dataset ds = generate(500, 1, 3, "gaussian", 4);
    const EmpiricalOverlaps same = empirical_overlaps(ds.Wstar, ds.Wstar, true);
    CHECK(max_abs(same.m - same.Qstar) < 1e-14);
    CHECK(max_abs(same.q - same.Qstar) < 1e-14);
    CHECK(same.q.rows() == 2);
    const EmpiricalOverlaps full = empirical_overlaps(ds.Wstar, ds.Wstar, false);
    CHECK(full.q.rows() == 3);
    const Dataset big = generate(100000, 1, 3, "gaussian", 4);
    const EmpiricalOverlaps o = empirical_overlaps(big.Wstar, big.Wstar, true);
    CHECK(max_abs(o.Qstar - mat2(2, 1, 1, 2)) < 0.05);
  }

  TEST_CASE("test error examples") {
    const Dataset ds = generate(300, 1, 3, "gaussian", 6);
    CHECK(test_error(ds.Wstar, ds.Wstar, 100000, 1).value == 0.0);
    CHECK(test_error(MatrixXd(3.0 * ds.Wstar), ds.Wstar, 100000, 1).value == 0.0);
    CHECK(test_error(reduce_weights(ds.Wstar), ds.Wstar, 100000, 1).value == 0.0);
    const Dataset other = generate(300, 1, 3, "gaussian", 7);
    const ErrorEstimate e = test_error(other.Wstar, ds.Wstar, 400000, 2);
    const EmpiricalOverlaps o = empirical_overlaps(other.Wstar, ds.Wstar, false);
    GenErrorOptions go;
    go.coords = FieldCoords::full;
    go.n_samples = 400000;
    go.seed = 9;
    const ErrorEstimate th = gen_error_erm(o.m, o.q, o.Qstar, go);
    CHECK(std::abs(e.value - th.value) < 4 * std::hypot(e.std_error, th.std_error));
    CHECK(test_error(other.Wstar, ds.Wstar, 100000, 3, 1).value ==
          test_error(other.Wstar, ds.Wstar, 100000, 3, 4).value);
  }

  TEST_CASE("test error agrees with an explicit fresh sample") {
    const Dataset train = generate(100, 300, 3, "gaussian", 15);
    const ErmSolution s = fit_cross_entropy(train, 1.0);
    const Dataset fresh = generate(100, 200000, 3, "gaussian", 99);
    const double emp = empirical_error(fresh.X, s.W, train.Wstar);
    const ErrorEstimate e = test_error(s.W, train.Wstar, 200000, 4);
    const double se_emp = std::sqrt(emp * (1 - emp) / 200000);
    CHECK(std::abs(emp - e.value) < 4 * std::hypot(se_emp, e.std_error));
  }
}
