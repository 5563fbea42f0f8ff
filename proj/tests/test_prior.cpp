#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "perclab/prior.hpp"
#include "perclab/quadrature.hpp"
#include "perclab/reduction.hpp"

using namespace perclab;
using namespace testing;

namespace {

template <typename Denoiser>
void check_jacobian(Denoiser&& den, const Vec& gamma, double rel) {
  const PriorResult r = den(gamma);
  const int n = static_cast<int>(gamma.size());
  CHECK(max_abs(r.df - r.df.transpose()) < 1e-10 * (1 + max_abs(r.df)));
  const double h = 1e-5;
  for (int i = 0; i < n; ++i) {
    Vec e = Vec::Zero(n);
    e(i) = h;
    const Vec fp = den(gamma + e).f, fm = den(gamma - e).f;
    for (int j = 0; j < n; ++j) CHECK(close_rel(r.df(j, i), (fp(j) - fm(j)) / (2 * h), rel, 1e-9));
  }
}

}  // namespace

TEST_SUITE("prior") {
  TEST_CASE("gaussian denoiser examples") {
    const Mat S = mat2(2, 1, 1, 2);
    const PriorResult a = gaussian_denoiser(vec2(1, 0), Mat::Zero(2, 2), S);
    CHECK(max_abs(a.f - vec2(2, 1)) < 1e-14);
    const PriorResult b = gaussian_denoiser(Vec::Zero(2), Mat::Zero(2, 2), S);
    CHECK(max_abs(b.f) == 0.0);
    CHECK(std::abs(b.z - 1.0) < 1e-14);
    const PriorResult c = gaussian_denoiser(vec2(1, 1), inverse(S), S);
    CHECK(max_abs(c.f - vec2(1.5, 1.5)) < 1e-14);
    CHECK(max_abs(c.df - 0.5 * S) < 1e-14);
    CHECK_THROWS_AS(gaussian_denoiser(vec2(1, 1), -2.0 * inverse(S), S), NotSpdError);
  }

  TEST_CASE("atom denoiser examples") {
    const AtomPrior p = reduced_rademacher_prior(3);
    const PriorResult a = atom_denoiser(Vec::Zero(2), Mat::Zero(2, 2), p);
    CHECK(std::abs(a.z - 1.0) < 1e-14);
    CHECK(max_abs(a.f) < 1e-15);
    CHECK(max_abs(a.df - mat2(2, 1, 1, 2)) < 1e-14);
    CHECK(max_abs(atom_denoiser(vec2(60, 60), Mat::Zero(2, 2), p).f - vec2(2, 2)) < 1e-12);
    CHECK(max_abs(atom_denoiser(vec2(60, 0), Mat::Zero(2, 2), p).f - vec2(2, 1)) < 1e-12);
    // Huge exponents stay finite.
    const PriorResult big = atom_denoiser(vec2(900, 300), 500 * identity<double>(2), p);
    CHECK(big.f.allFinite());
    CHECK(std::isfinite(big.log_z));
  }

  TEST_CASE("atom denoiser matches long double brute force") {
    const AtomPrior p = reduced_rademacher_prior(3);
    std::mt19937_64 rng(6);
    for (int t = 0; t < 50; ++t) {
      const Vec g = random_vec(rng, 2, 3.0);
      const Mat L = random_spd(rng, 2, 0.0);
      const PriorResult r = atom_denoiser(g, L, p);
      long double z = 0, f0 = 0, f1 = 0;
      for (const auto& a : p.atoms) {
        const long double e =
            a.weight * std::exp(static_cast<long double>(-0.5 * a.point.dot(L * a.point) + g.dot(a.point)));
        z += e;
        f0 += e * a.point(0);
        f1 += e * a.point(1);
      }
      CHECK(close_rel(r.z, static_cast<double>(z), 1e-12));
      CHECK(std::abs(r.f(0) - static_cast<double>(f0 / z)) < 1e-12);
      CHECK(std::abs(r.f(1) - static_cast<double>(f1 / z)) < 1e-12);
      // The mean lies in the convex hull of the atoms: the box [-2, 2]² and |f0 - f1| <= 2.
      CHECK(std::abs(r.f(0)) <= 2.0);
      CHECK(std::abs(r.f(0) - r.f(1)) <= 2.0 + 1e-12);
      CHECK(min_eigenvalue(r.df) > -1e-10);
    }
  }

  TEST_CASE("ridge denoiser examples") {
    const Mat S = mat2(2, 1, 1, 2);
    CHECK(max_abs(ridge_denoiser(vec2(1, 2), identity<double>(2), 1e12, S).f) < 1e-10);
    CHECK(max_abs(ridge_denoiser(vec2(1, 2), Mat::Zero(2, 2), 1.0, identity<double>(2)).f - vec2(1, 2)) < 1e-15);
    const Vec ones = Vec::Ones(3);
    const PriorResult r = ridge_denoiser(ones, identity<double>(3), 1.0, identity<double>(3));
    CHECK(max_abs(r.f - 0.5 * ones) < 1e-15);
  }

  TEST_CASE("denoiser Jacobians against finite differences") {
    std::mt19937_64 rng(14);
    const AtomPrior p = reduced_rademacher_prior(3);
    const Mat S = mat2(2, 1, 1, 2);
    for (int t = 0; t < 30; ++t) {
      const Mat L = random_spd(rng, 2, 0.05);
      const Vec g = random_vec(rng, 2, 2.0);
      check_jacobian([&](const Vec& x) { return gaussian_denoiser(x, L, S); }, g, 1e-6);
      check_jacobian([&](const Vec& x) { return atom_denoiser(x, L, p); }, g, 1e-6);
      check_jacobian([&](const Vec& x) { return ridge_denoiser(x, L, 0.3, S); }, g, 1e-6);
    }
  }

  TEST_CASE("teacher measure is normalized") {
    // E_ξ Z_w(q̂^{1/2}ξ, q̂) = 1 for any q̂.
    std::mt19937_64 rng(21);
    const auto& rule = gauss_hermite(60);
    for (const TeacherPrior& t : {gaussian_teacher(3), rademacher_teacher(3)}) {
      for (int trial = 0; trial < 5; ++trial) {
        const Mat qhat = random_spd(rng, 2, 0.05);
        const Mat scaled = qhat * (1.5 / max_eigenvalue(qhat));
        const Mat root = sqrt_spd(scaled);
        // Z_w grows like a Gaussian of variance up to ~6 in ξ, so the rule is dilated: ξ = sη.
        const double sc = 2.5;
        const Mat e = expect_gaussian_2d(
            [&](const Vec& eta) {
              const double log_jac = 2.0 * std::log(sc) - 0.5 * (sc * sc - 1.0) * eta.squaredNorm();
              return Mat::Constant(1, 1, std::exp(log_jac + teacher_denoiser(root * (sc * eta), scaled, t).log_z));
            },
            rule);
        CHECK(std::abs(e(0, 0) - 1.0) < 1e-6);
      }
    }
  }

  TEST_CASE("teacher names") {
    CHECK(teacher_from_name("gaussian", 3).kind == TeacherKind::gaussian);
    CHECK(teacher_from_name("rademacher", 3).discrete());
    const TeacherPrior b = teacher_from_name("binary", 2);
    CHECK(b.atoms.atoms.size() == 2);
    CHECK(b.second_moment()(0, 0) == 1.0);
    CHECK_THROWS_AS(teacher_from_name("binary", 3), DomainError);
    CHECK_THROWS_AS(teacher_from_name("laplace", 3), DomainError);
  }
}
