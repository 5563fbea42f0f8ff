#include <doctest.h>

#include "helpers.hpp"
#include "perclab/amp.hpp"
#include "perclab/channel.hpp"
#include "perclab/erm_sim.hpp"
#include "perclab/errors.hpp"
#include "perclab/state_evolution.hpp"

using namespace perclab;
using namespace testing;
using Eigen::MatrixXd;

namespace {

AmpConfig config(const TeacherPrior& t) {
  AmpConfig c;
  c.prior = t;
  return c;
}

}  // namespace

TEST_SUITE("amp") {
  TEST_CASE("no data returns the prior mean") {
    for (const TeacherPrior& t : {gaussian_teacher(3), rademacher_teacher(3)}) {
      const MatrixXd X(0, 50);
      AmpConfig c = config(t);
      c.max_iter = 5;
      const AmpResult r = amp_run(X, {}, c);
      CHECK(r.state.what.cwiseAbs().maxCoeff() < 1e-14);
      CHECK(r.converged);
    }
  }

  TEST_CASE("first iterate is the posterior-weighted matched filter") {
    const Dataset ds = generate(60, 90, 3, "gaussian", 4);
    const TeacherPrior t = gaussian_teacher(3);
    AmpConfig c = config(t);
    c.max_iter = 1;
    c.damping = 0.0;
    const AmpResult r = amp_run(ds.X, ds.y, c);
    CHECK(r.state.omega.cwiseAbs().maxCoeff() == 0.0);

    const double d = ds.d();
    const ClassRegionMap regions = class_regions(3);
    MatrixXd g(ds.n(), 2);
    Mat dgsum = Mat::Zero(2, 2);
    std::vector<Mat> dgs;
    for (int nu = 0; nu < ds.n(); ++nu) {
      ChannelQuery q;
      q.y = ds.y[nu];
      q.omega = Vec::Zero(2);
      q.V = ds.X.row(nu).squaredNorm() / d * t.covariance;
      const ChannelResult cr = fout_bayes(q, regions);
      g.row(nu) = cr.g.transpose();
      dgs.push_back(cr.dg);
    }
    const MatrixXd gamma = ds.X.transpose() * g / std::sqrt(d);
    double worst = 0.0;
    for (int j = 0; j < ds.d(); ++j) {
      Mat L = Mat::Zero(2, 2);
      for (int nu = 0; nu < ds.n(); ++nu) L -= ds.X(nu, j) * ds.X(nu, j) / d * dgs[nu];
      const Vec w = (inverse_spd(t.covariance) + symmetrize(L)).inverse() * Vec(gamma.row(j).transpose());
      worst = std::max(worst, (w.transpose() - r.state.what.row(j)).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-10);
  }

  TEST_CASE("runs are deterministic") {
    const Dataset ds = generate(120, 240, 3, "gaussian", 9);
    const AmpConfig c = config(gaussian_teacher(3));
    const AmpResult a = amp_run(ds.X, ds.y, c), b = amp_run(ds.X, ds.y, c);
    CHECK(a.state.what == b.state.what);
    CHECK(a.trace.size() == b.trace.size());
  }

  TEST_CASE("overlap helper") {
    const Dataset ds = generate(400, 1, 3, "gaussian", 2);
    const MatrixXd ws = reduce_weights(ds.Wstar);
    const AmpOverlaps same = amp_overlaps(ws, ws);
    CHECK(max_abs(same.m - same.q) == 0.0);
    const AmpOverlaps zero = amp_overlaps(MatrixXd::Zero(400, 2), ws);
    CHECK(max_abs(zero.m) == 0.0);
    CHECK_THROWS_AS(amp_overlaps(MatrixXd::Zero(10, 2), ws), DimensionError);
  }

  TEST_CASE("independent estimate has overlap of order one over root d") {
    const int d = 10000;
    const Dataset a = generate(d, 1, 3, "gaussian", 21), b = generate(d, 1, 3, "gaussian", 22);
    const AmpOverlaps o = amp_overlaps(reduce_weights(a.Wstar), reduce_weights(b.Wstar));
    // Entries of m have standard deviation about sqrt(2 * 2) / sqrt(d) here.
    CHECK(max_abs(o.m) < 5.0 * 2.0 / std::sqrt(double(d)));
  }

  TEST_CASE("labels are validated") {
    const Dataset ds = generate(20, 10, 3, "gaussian", 1);
    std::vector<int> y = ds.y;
    y[3] = 4;
    CHECK_THROWS_AS(amp_run(ds.X, y, config(gaussian_teacher(3))), DomainError);
  }

  TEST_CASE("tracks state evolution at moderate size") {
    const double alpha = 1.5;
    const int d = 1000;
    const TeacherPrior t = gaussian_teacher(3);
    SEConfig se;
    se.alpha = alpha;
    se.compute_free_entropy = false;
    const FixedPoint fp = run_fixed_point(se);
    REQUIRE(fp.converged);

    const Dataset ds = generate(d, static_cast<int>(alpha * d), 3, "gaussian", 31);
    const MatrixXd ws = reduce_weights(ds.Wstar);
    const AmpResult r = amp_run(ds.X, ds.y, config(t), &ws);
    CHECK(r.converged);
    const AmpOverlaps o = amp_overlaps(r.state.what, ws);
    CHECK(max_abs(o.q - fp.state.q) < 0.08);
    CHECK(max_abs(o.m - fp.state.q) < 0.08);
    // Nishimori: m and q agree at the fixed point.
    CHECK(max_abs(r.trace.back().m - r.trace.back().q) < 0.05);

    AmpConfig approx = config(t);
    approx.exact_variance = false;
    const AmpResult ra = amp_run(ds.X, ds.y, approx, &ws);
    CHECK(max_abs(amp_overlaps(ra.state.what, ws).q - o.q) < 0.02);
  }
}
