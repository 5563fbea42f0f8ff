#include "perclab/channel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "perclab/quadrature.hpp"

namespace perclab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Upper bivariate normal probability P(X > h, Y > k), corr(X, Y) = r, by
// the Drezner-Wesolowsky / Genz Gauss-Legendre scheme (~1e-15 absolute).
double bvnu(double h, double k, double r) {
  if (h == kInf || k == kInf) return 0.0;
  if (h == -kInf) return k == -kInf ? 1.0 : normal_cdf(-k);
  if (k == -kInf) return normal_cdf(-h);
  if (r == 0.0) return normal_cdf(-h) * normal_cdf(-k);

  static constexpr double w6[3] = {0.1713244923791705, 0.3607615730481384, 0.4679139345726904};
  static constexpr double x6[3] = {0.9324695142031522, 0.6612093864662647, 0.2386191860831970};
  static constexpr double w12[6] = {0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                                    0.2031674267230659,  0.2334925365383547, 0.2491470458134029};
  static constexpr double x12[6] = {0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                                    0.5873179542866171, 0.3678314989981802, 0.1252334085114692};
  static constexpr double w20[10] = {0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                                     0.08327674157670475, 0.1019301198172404,  0.1181945319615184,
                                     0.1316886384491766,  0.1420961093183821,  0.1491729864726037,
                                     0.1527533871307259};
  static constexpr double x20[10] = {0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                                     0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                                     0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                                     0.07652652113349733};
  const double* w;
  const double* x;
  int n;
  const double ar = std::abs(r);
  if (ar < 0.3) {
    w = w6, x = x6, n = 3;
  } else if (ar < 0.75) {
    w = w12, x = x12, n = 6;
  } else {
    w = w20, x = x20, n = 10;
  }

  double hk = h * k;
  double bvn = 0.0;
  if (ar < 0.925) {
    const double hs = 0.5 * (h * h + k * k);
    const double asr = 0.5 * std::asin(r);
    for (int i = 0; i < n; ++i) {
      for (double xx : {1.0 - x[i], 1.0 + x[i]}) {
        const double sn = std::sin(asr * xx);
        bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      }
    }
    bvn = bvn * asr / kTwoPi + normal_cdf(-h) * normal_cdf(-k);
  } else {
    if (r < 0) {
      k = -k;
      hk = -hk;
    }
    if (ar < 1.0) {
      const double as = 1.0 - r * r;
      double a = std::sqrt(as);
      const double bs = (h - k) * (h - k);
      const double c = (4.0 - hk) / 8.0;
      const double d = (12.0 - hk) / 80.0;
      double asr = -0.5 * (bs / as + hk);
      if (asr > -100.0) bvn = a * std::exp(asr) * (1.0 - c * (bs - as) * (1.0 - d * bs) / 3.0 + c * d * as * as);
      if (hk > -100.0) {
        const double b = std::sqrt(bs);
        const double sp = std::sqrt(kTwoPi) * normal_cdf(-b / a);
        bvn -= std::exp(-0.5 * hk) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
      }
      a *= 0.5;
      double sum = 0.0;
      for (int i = 0; i < n; ++i) {
        for (double xx : {1.0 - x[i], 1.0 + x[i]}) {
          const double xs = (a * xx) * (a * xx);
          asr = -0.5 * (bs / xs + hk);
          if (asr > -100.0) {
            const double sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
            const double rs = std::sqrt(1.0 - xs);
            const double ep = std::exp(-0.5 * hk * xs / ((1.0 + rs) * (1.0 + rs))) / rs;
            sum += w[i] * std::exp(asr) * (sp - ep);
          }
        }
      }
      bvn = (a * sum - bvn) / kTwoPi;
    }
    if (r > 0) {
      bvn += normal_cdf(-std::max(h, k));
    } else if (h >= k) {
      bvn = -bvn;
    } else {
      const double L = h < 0 ? normal_cdf(k) - normal_cdf(h) : normal_cdf(-h) - normal_cdf(-k);
      bvn = L - bvn;
    }
  }
  return std::clamp(bvn, 0.0, 1.0);
}

struct Standardized {
  double a, b, rho, s1, s2;
};

Standardized standardize(const Vec& mu, const Mat& sigma) {
  if (mu.size() != 2 || sigma.rows() != 2 || sigma.cols() != 2)
    throw DimensionError("gaussian_orthant: expected a 2-dimensional query");
  if (!(sigma(0, 0) > 0) || !(sigma(1, 1) > 0) || !(sigma(0, 0) * sigma(1, 1) - sigma(0, 1) * sigma(1, 0) > 0) ||
      std::abs(sigma(0, 1) - sigma(1, 0)) > 1e-12 * std::max(1.0, max_abs(sigma)))
    throw NotSpdError("gaussian_orthant: covariance is not SPD " + describe(sigma));
  Standardized st;
  st.s1 = std::sqrt(sigma(0, 0));
  st.s2 = std::sqrt(sigma(1, 1));
  st.a = mu(0) / st.s1;
  st.b = mu(1) / st.s2;
  st.rho = std::clamp(sigma(0, 1) / (st.s1 * st.s2), -1.0, 1.0);
  return st;
}

// Orthant probability in standardized coordinates: P(Z1 > -a, Z2 > -b).
double orthant_standard(double a, double b, double rho, bool relative_tail) {
  const double p = bvnu(-a, -b, rho);
  if (p >= 1e-10 || !relative_tail) return p;
  if (std::min(a, b) < -37.5) return 0.0;  // below Phi(-37.5) ~ 1e-308
  // Small values: the Gauss-Legendre scheme is only absolutely accurate,
  // so fall back to the relative-accuracy quadrature route.
  Vec mu(2);
  mu << a, b;
  Mat sigma(2, 2);
  sigma << 1.0, rho, rho, 1.0;
  return gaussian_orthant_by_quadrature(mu, sigma);
}

// ln Phi(x) with the asymptotic tail for very negative x.
double log_normal_cdf(double x) {
  if (x > -30.0) return std::log(normal_cdf(x));
  return -0.5 * x * x - std::log(-x) - 0.5 * std::log(kTwoPi);
}

}  // namespace

double gaussian_orthant_by_quadrature(const Vec& mu, const Mat& sigma, double rel_tol) {
  if (mu.size() == 1) {
    if (!(sigma(0, 0) > 0)) throw NotSpdError("gaussian_orthant: variance must be positive");
    return normal_cdf(mu(0) / std::sqrt(sigma(0, 0)));
  }
  const Standardized st = standardize(mu, sigma);
  const double s = std::sqrt(std::max(0.0, 1.0 - st.rho * st.rho));
  if (s < 1e-9) {
    if (st.rho > 0) return normal_cdf(std::min(st.a, st.b));
    return std::max(0.0, normal_cdf(st.b) - normal_cdf(-st.a));
  }
  // Integrate over the component whose lower limit is farther in the tail.
  double a = st.a, b = st.b;
  if (b < a) std::swap(a, b);
  const double lo = -a;
  auto f = [&](double t) { return normal_pdf(t) * normal_cdf((b + st.rho * t) / s); };
  Integrate1dOptions opt;
  opt.rel_tol = rel_tol;
  if (lo > 1.0) {
    opt.center = lo;
    opt.scale = 1.0 / lo;
  }
  return integrate_1d(f, lo, kInf, 1e-300, opt).value;
}

double gaussian_orthant(const Vec& mu, const Mat& sigma) {
  if (mu.size() == 1) {
    if (sigma.rows() != 1 || !(sigma(0, 0) > 0)) throw NotSpdError("gaussian_orthant: variance must be positive");
    return normal_cdf(mu(0) / std::sqrt(sigma(0, 0)));
  }
  const Standardized st = standardize(mu, sigma);
  if (1.0 - std::abs(st.rho) < 1e-14) return gaussian_orthant_by_quadrature(mu, sigma);
  return orthant_standard(st.a, st.b, st.rho, true);
}

OrthantDerivatives gaussian_orthant_derivatives(const Vec& mu, const Mat& sigma, bool relative_tail) {
  OrthantDerivatives out;
  if (mu.size() == 1) {
    if (sigma.rows() != 1 || !(sigma(0, 0) > 0)) throw NotSpdError("gaussian_orthant: variance must be positive");
    const double s = std::sqrt(sigma(0, 0));
    const double a = mu(0) / s;
    const double pdf = normal_pdf(a);
    out.p = normal_cdf(a);
    out.grad = Vec::Constant(1, pdf / s);
    out.hess = Mat::Constant(1, 1, -a * pdf / (s * s));
    return out;
  }
  const Standardized st = standardize(mu, sigma);
  const double s = std::sqrt(std::max(0.0, 1.0 - st.rho * st.rho));
  if (s < 1e-7) throw NotSpdError("gaussian_orthant: correlation too close to +-1 for derivatives");
  const double a = st.a, b = st.b, rho = st.rho;
  out.p = orthant_standard(a, b, rho, relative_tail);
  const double ca = (b - rho * a) / s;
  const double cb = (a - rho * b) / s;
  const double pa = normal_pdf(a) * normal_cdf(ca);
  const double pb = normal_pdf(b) * normal_cdf(cb);
  const double density = normal_pdf(a) * normal_pdf(ca) / s;
  const double paa = -a * pa - rho * density;
  const double pbb = -b * pb - rho * density;
  out.grad.resize(2);
  out.grad << pa / st.s1, pb / st.s2;
  out.hess.resize(2, 2);
  out.hess << paa / (st.s1 * st.s1), density / (st.s1 * st.s2), density / (st.s1 * st.s2), pbb / (st.s2 * st.s2);
  return out;
}

double zout_bayes(const ChannelQuery& q, const ClassRegionMap& regions) {
  if (q.y < 1 || q.y > regions.k) throw DomainError("zout_bayes: label out of range");
  const Mat& A = regions.region(q.y);
  const Vec mu = A * q.omega;
  const Mat sigma = symmetrize(Mat(A * q.V * A.transpose()));
  return gaussian_orthant(mu, sigma);
}

ChannelResult fout_bayes(const ChannelQuery& q, const ClassRegionMap& regions) {
  if (q.y < 1 || q.y > regions.k) throw DomainError("fout_bayes: label out of range");
  const Mat& A = regions.region(q.y);
  const Vec mu = A * q.omega;
  const Mat sigma = symmetrize(Mat(A * q.V * A.transpose()));
  const OrthantDerivatives od = gaussian_orthant_derivatives(mu, sigma);
  if (!(od.p > 1e-300)) {
    double log_z = 0.0;
    for (int i = 0; i < mu.size(); ++i)
      log_z = std::min(log_z, log_normal_cdf(mu(i) / std::sqrt(sigma(i, i))));
    std::ostringstream os;
    os << "fout_bayes: vanishing partition function for class " << q.y << " (ln Z <= " << log_z << ")";
    throw TailError(os.str(), log_z);
  }
  const Vec gmu = od.grad / od.p;
  const Mat hmu = od.hess / od.p - gmu * gmu.transpose();
  ChannelResult r;
  r.z = od.p;
  r.g = A.transpose() * gmu;
  r.dg = symmetrize(Mat(A.transpose() * hmu * A));
  return r;
}

bool try_fout_bayes(const ChannelQuery& q, const ClassRegionMap& regions, ChannelResult& out, double floor) {
  const Mat& A = regions.region(q.y);
  const Vec mu = A * q.omega;
  const Mat sigma = symmetrize(Mat(A * q.V * A.transpose()));
  const OrthantDerivatives od = gaussian_orthant_derivatives(mu, sigma, floor < 1e-15);
  if (!(od.p > floor)) return false;
  const Vec gmu = od.grad / od.p;
  const Mat hmu = od.hess / od.p - gmu * gmu.transpose();
  out.z = od.p;
  out.g = A.transpose() * gmu;
  out.dg = symmetrize(Mat(A.transpose() * hmu * A));
  return true;
}

LossValue cross_entropy_reduced(const Vec& z, int y) {
  const int km1 = static_cast<int>(z.size());
  const int k = km1 + 1;
  if (y < 1 || y > k) throw DomainError("cross_entropy_reduced: label out of range");
  double m = 0.0;
  for (int l = 0; l < km1; ++l) m = std::max(m, z(l));
  double sum = std::exp(-m);
  Vec p(km1);
  for (int l = 0; l < km1; ++l) {
    p(l) = std::exp(z(l) - m);
    sum += p(l);
  }
  p /= sum;
  const double lse = m + std::log(sum);
  LossValue out;
  out.value = lse - (y < k ? z(y - 1) : 0.0);
  out.grad = p;
  if (y < k) out.grad(y - 1) -= 1.0;
  out.hess = Mat(p.asDiagonal()) - p * p.transpose();
  return out;
}

LossValue square_loss(const Vec& z, int y) {
  const int k = static_cast<int>(z.size());
  if (y < 1 || y > k) throw DomainError("square_loss: label out of range");
  Vec r = z;
  r(y - 1) -= 1.0;
  LossValue out;
  out.value = 0.5 * r.squaredNorm();
  out.grad = r;
  out.hess = Mat::Identity(k, k);
  return out;
}

LossValue loss_value(const Vec& z, int y, const LossSpec& loss) {
  if (z.size() != loss.field_dim()) throw DimensionError("loss_value: field dimension mismatch");
  return loss.kind == LossKind::square ? square_loss(z, y) : cross_entropy_reduced(z, y);
}

ProxResult prox_loss(int y, const Vec& omega, const Mat& V, const LossSpec& loss) {
  const int dim = loss.field_dim();
  if (omega.size() != dim || V.rows() != dim || V.cols() != dim)
    throw DimensionError("prox_loss: dimension mismatch");
  if (y < 1 || y > loss.k) throw DomainError("prox_loss: label out of range");
  ProxResult out;
  const Mat I = Mat::Identity(dim, dim);
  if (loss.kind == LossKind::square) {
    Vec e = Vec::Zero(dim);
    e(y - 1) = 1.0;
    const Mat M = inverse(Mat(I + V));
    out.z = M * (omega + V * e);
    out.jac = M;
    return out;
  }
  const Mat Vs = symmetrize(V);
  const Mat Vinv = inverse_spd(Vs);
  auto objective = [&](const Vec& z, double lv) {
    const Vec d = z - omega;
    return 0.5 * d.dot(Vinv * d) + lv;
  };
  Vec z = omega;
  LossValue lv = cross_entropy_reduced(z, y);
  double F = objective(z, lv.value);
  bool converged = false;
  int it = 0;
  for (; it < 100; ++it) {
    const Vec G = Vinv * (z - omega) + lv.grad;
    const Vec R = (z - omega) + Vs * lv.grad;
    if (max_abs(G) <= 1e-12 || max_abs(R) <= 1e-15 * (1.0 + max_abs(z))) {
      converged = true;
      break;
    }
    const Vec step = -inverse(Mat(I + Vs * lv.hess)) * R;
    if (max_abs(step) <= 1e-14 * (1.0 + max_abs(z))) {
      converged = true;
      break;
    }
    const double slope = G.dot(step);
    // Objective changes below this are not resolvable in double precision.
    const double noise = 1e-14 * (1.0 + std::abs(F));
    double t = 1.0;
    Vec trial;
    LossValue tv;
    double Ft = F;
    bool accepted = false;
    for (int h = 0; h < 60; ++h) {
      trial = z + t * step;
      tv = cross_entropy_reduced(trial, y);
      Ft = objective(trial, tv.value);
      if (Ft <= F + 1e-4 * t * slope + noise) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    // Keep halving while it still lowers the objective; this stops the
    // zig-zag across the softmax ridge where curvature changes abruptly.
    while (accepted && t > 1e-12) {
      const Vec half = z + 0.5 * t * step;
      const LossValue hv = cross_entropy_reduced(half, y);
      const double Fh = objective(half, hv.value);
      if (!(Fh < Ft - noise)) break;
      t *= 0.5;
      trial = half;
      tv = hv;
      Ft = Fh;
    }
    if (!accepted) {
      // No representable decrease left: the iterate sits at the roundoff floor.
      converged = true;
      break;
    }
    z = trial;
    lv = tv;
    F = Ft;
  }
  if (!converged) {
    std::ostringstream os;
    os << "prox_loss: Newton did not converge in 100 steps (y = " << y << ", omega = " << describe(Mat(omega), 17)
       << ", V = " << describe(V, 17) << ")";
    throw ConvergenceError(os.str());
  }
  out.z = z;
  out.jac = inverse(Mat(I + Vs * lv.hess));
  out.iterations = it;
  return out;
}

ChannelResult fout_erm(int y, const Vec& omega, const Mat& V, const LossSpec& loss) {
  const ProxResult pr = prox_loss(y, omega, V, loss);
  const LossValue lv = loss_value(pr.z, y, loss);
  const int dim = loss.field_dim();
  ChannelResult r;
  const Vec d = pr.z - omega;
  r.z = 0.5 * d.dot(inverse_spd(V) * d) + lv.value;
  // Stationarity gives V^-1 (z* - omega) = -grad loss(z*), which avoids the
  // cancellation in z* - omega when V is small.
  r.g = -lv.grad;
  // V^-1 (J - I) with J = (I + V H)^-1 equals -(I + H V)^-1 H.
  r.dg = symmetrize(Mat(-inverse(Mat(Mat::Identity(dim, dim) + lv.hess * V)) * lv.hess));
  return r;
}

}  // namespace perclab
