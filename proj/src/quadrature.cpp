#include "perclab/quadrature.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <queue>
#include <sstream>

#include "perclab/parallel.hpp"
#include "perclab/random.hpp"

namespace perclab {

namespace detail {
void throw_non_finite(const std::string& where, double x1, double x2) {
  std::ostringstream os;
  os << where << ": non-finite integrand at node (" << x1 << ", " << x2 << ")";
  throw DomainError(os.str());
}
}  // namespace detail

namespace {

// Golub-Welsch: nodes are eigenvalues of the symmetric Jacobi matrix,
// weights are mu0 times the squared first eigenvector components.
void golub_welsch(int n, const std::function<double(int)>& offdiag, double mu0, std::vector<double>& nodes,
                  std::vector<double>& weights) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) J(i, i - 1) = J(i - 1, i) = offdiag(i);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    nodes[i] = es.eigenvalues()(i);
    const double v = es.eigenvectors()(0, i);
    weights[i] = mu0 * v * v;
  }
  // Both families are symmetric about zero; enforce it exactly.
  for (int i = 0; i < n / 2; ++i) {
    const int j = n - 1 - i;
    const double x = 0.5 * (nodes[j] - nodes[i]);
    const double w = 0.5 * (weights[i] + weights[j]);
    nodes[i] = -x;
    nodes[j] = x;
    weights[i] = weights[j] = w;
  }
  if (n % 2 == 1) nodes[n / 2] = 0.0;
  double total = 0.0;
  for (double w : weights) total += w;
  for (double& w : weights) w *= mu0 / total;
}

std::mutex g_rule_mutex;

}  // namespace

const GaussHermiteRule& gauss_hermite(int order) {
  if (order < 1 || order > 200) throw DomainError("gauss_hermite: order must be in [1, 200]");
  static std::map<int, std::unique_ptr<GaussHermiteRule>> cache;
  std::lock_guard<std::mutex> lock(g_rule_mutex);
  auto& slot = cache[order];
  if (!slot) {
    auto rule = std::make_unique<GaussHermiteRule>();
    rule->order = order;
    golub_welsch(order, [](int i) { return std::sqrt(static_cast<double>(i)); }, 1.0, rule->nodes,
                 rule->weights);
    slot = std::move(rule);
  }
  return *slot;
}

const GaussLegendreRule& gauss_legendre(int order) {
  if (order < 1 || order > 200) throw DomainError("gauss_legendre: order must be in [1, 200]");
  static std::map<int, std::unique_ptr<GaussLegendreRule>> cache;
  std::lock_guard<std::mutex> lock(g_rule_mutex);
  auto& slot = cache[order];
  if (!slot) {
    auto rule = std::make_unique<GaussLegendreRule>();
    rule->order = order;
    golub_welsch(
        order,
        [](int i) {
          const double n = i;
          return n / std::sqrt(4.0 * n * n - 1.0);
        },
        2.0, rule->nodes, rule->weights);
    slot = std::move(rule);
  }
  return *slot;
}

namespace {

constexpr double kXgk[8] = {0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                            0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                            0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                            0.207784955007898467600689403773245, 0.0};
constexpr double kWgk[8] = {0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                            0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                            0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                            0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kWg[4] = {0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                           0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
  double a, b, value, err;
  bool operator<(const Segment& o) const { return err < o.err; }
};

Segment kronrod(const std::function<double(double)>& g, double a, double b, int& evals) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  const double fc = g(c);
  double k = kWgk[7] * fc;
  double gs = kWg[3] * fc;
  for (int i = 0; i < 7; ++i) {
    const double dx = h * kXgk[i];
    const double f1 = g(c - dx);
    const double f2 = g(c + dx);
    k += kWgk[i] * (f1 + f2);
    if (i % 2 == 1) gs += kWg[i / 2] * (f1 + f2);
  }
  evals += 15;
  return {a, b, k * h, std::abs((k - gs) * h)};
}

}  // namespace

Integral integrate_1d(const std::function<double(double)>& f, double lo, double hi, double tol,
                      const Integrate1dOptions& opt) {
  if (!(tol > 0)) throw DomainError("integrate_1d: tol must be positive");
  if (lo == hi) return {};
  if (lo > hi) {
    Integral r = integrate_1d(f, hi, lo, tol, opt);
    r.value = -r.value;
    return r;
  }
  const bool inf_lo = std::isinf(lo);
  const bool inf_hi = std::isinf(hi);
  std::function<double(double)> g;
  double a = lo, b = hi;
  if (inf_lo || inf_hi) {
    const double umax = 6.0;
    a = inf_lo ? -umax : std::clamp(std::asinh((lo - opt.center) / opt.scale), -umax, umax);
    b = inf_hi ? umax : std::clamp(std::asinh((hi - opt.center) / opt.scale), -umax, umax);
    g = [&](double u) { return f(opt.center + opt.scale * std::sinh(u)) * opt.scale * std::cosh(u); };
  } else {
    g = f;
  }
  Integral out;
  std::priority_queue<Segment> heap;
  Segment s = kronrod(g, a, b, out.evaluations);
  double total = s.value, total_err = s.err;
  heap.push(s);
  int splits = 0;
  while (total_err > std::max(tol, opt.rel_tol * std::abs(total))) {
    if (splits++ >= opt.max_subdivisions) {
      std::ostringstream os;
      os << "integrate_1d: no convergence after " << opt.max_subdivisions << " subdivisions (err " << total_err
         << ")";
      throw ConvergenceError(os.str());
    }
    Segment worst = heap.top();
    heap.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    Segment left = kronrod(g, worst.a, mid, out.evaluations);
    Segment right = kronrod(g, mid, worst.b, out.evaluations);
    total += left.value + right.value - worst.value;
    total_err += left.err + right.err - worst.err;
    heap.push(left);
    heap.push(right);
    if (!std::isfinite(total)) throw DomainError("integrate_1d: non-finite integrand");
  }
  // Re-sum to shed the drift of the running updates.
  double v = 0.0, e = 0.0;
  while (!heap.empty()) {
    v += heap.top().value;
    e += heap.top().err;
    heap.pop();
  }
  out.value = v;
  out.err_estimate = e;
  return out;
}

McResult mc_gaussian(int dim, const std::function<Mat(const Vec&)>& f, const McConfig& cfg) {
  if (dim < 1 || dim > 3) throw DomainError("mc_gaussian: dim must be 1, 2 or 3");
  if (cfg.n_samples < 1) throw DomainError("mc_gaussian: n_samples must be at least 1");
  constexpr std::int64_t kChunk = 1 << 14;
  const std::int64_t chunks = (cfg.n_samples + kChunk - 1) / kChunk;
  std::vector<Mat> sums(chunks), squares(chunks);
  parallel_for(static_cast<int>(chunks), cfg.threads, [&](int c) {
    Philox rng(cfg.seed, substream(cfg.stream, static_cast<std::uint64_t>(c)));
    const std::int64_t begin = c * kChunk;
    const std::int64_t end = std::min(cfg.n_samples, begin + kChunk);
    Vec xi(dim);
    for (std::int64_t s = begin; s < end; ++s) {
      for (int i = 0; i < dim; ++i) xi(i) = rng.normal();
      const Mat v = f(xi);
      if (s == begin) {
        sums[c] = v;
        squares[c] = v.cwiseProduct(v);
      } else {
        sums[c] += v;
        squares[c] += v.cwiseProduct(v);
      }
    }
  });
  Mat sum = sums[0], sq = squares[0];
  for (std::int64_t c = 1; c < chunks; ++c) {
    sum += sums[c];
    sq += squares[c];
  }
  const double n = static_cast<double>(cfg.n_samples);
  McResult r;
  r.mean = sum / n;
  if (cfg.n_samples > 1) {
    Mat var = (sq / n - r.mean.cwiseProduct(r.mean)).cwiseMax(0.0) * (n / (n - 1.0));
    r.stderr_of_mean = (var / n).cwiseSqrt();
  } else {
    r.stderr_of_mean = Mat::Zero(r.mean.rows(), r.mean.cols());
  }
  return r;
}

NodeSet tensor_gauss_hermite(int dim, int order) {
  const auto& rule = gauss_hermite(order);
  NodeSet ns;
  ns.dim = dim;
  if (dim == 1) {
    ns.points.resize(1, order);
    ns.weights.resize(order);
    for (int i = 0; i < order; ++i) {
      ns.points(0, i) = rule.nodes[i];
      ns.weights(i) = rule.weights[i];
    }
    return ns;
  }
  if (dim != 2) throw DomainError("tensor_gauss_hermite: dim must be 1 or 2");
  ns.points.resize(2, order * order);
  ns.weights.resize(order * order);
  int idx = 0;
  for (int i = 0; i < order; ++i) {
    for (int j = 0; j < order; ++j) {
      ns.points(0, idx) = rule.nodes[i];
      ns.points(1, idx) = rule.nodes[j];
      ns.weights(idx) = rule.weights[i] * rule.weights[j];
      ++idx;
    }
  }
  return ns;
}

namespace {

// Breakpoints on [a, b] with panel widths growing geometrically from h_min
// at each graded end, capped at h_max.
std::vector<double> graded_breaks(double a, double b, double h_min, double h_max, double ratio, bool grade_a,
                                  bool grade_b) {
  const double len = b - a;
  h_max = std::min(h_max, len);
  std::vector<double> from_a, from_b;
  const double mid = grade_a && grade_b ? a + 0.5 * len : (grade_a ? b : a);
  if (grade_a) {
    double x = a, w = std::min(h_min, h_max);
    while (x + w < mid - 0.25 * w) {
      x += w;
      from_a.push_back(x);
      w = std::min(w * ratio, h_max);
    }
  }
  if (grade_b) {
    double x = b, w = std::min(h_min, h_max);
    while (x - w > mid + 0.25 * w) {
      x -= w;
      from_b.push_back(x);
      w = std::min(w * ratio, h_max);
    }
  }
  std::vector<double> pts{a};
  pts.insert(pts.end(), from_a.begin(), from_a.end());
  if (!grade_a && !grade_b) {
    const int n = std::max(1, static_cast<int>(std::ceil(len / h_max - 1e-12)));
    for (int i = 1; i < n; ++i) pts.push_back(a + len * i / n);
  }
  if (grade_a && grade_b) pts.push_back(mid);
  for (auto it = from_b.rbegin(); it != from_b.rend(); ++it) pts.push_back(*it);
  pts.push_back(b);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

void append_panels(const std::vector<double>& breaks, const GaussLegendreRule& gl, std::vector<double>& x,
                   std::vector<double>& w) {
  for (std::size_t p = 0; p + 1 < breaks.size(); ++p) {
    const double c = 0.5 * (breaks[p] + breaks[p + 1]);
    const double h = 0.5 * (breaks[p + 1] - breaks[p]);
    for (int i = 0; i < gl.order; ++i) {
      x.push_back(c + h * gl.nodes[i]);
      w.push_back(h * gl.weights[i]);
    }
  }
}

}  // namespace

NodeSet graded_gaussian_rule(int dim, const std::vector<Vec>& rays, double width, const GradedRuleConfig& cfg) {
  if (dim != 1 && dim != 2) throw DomainError("graded_gaussian_rule: dim must be 1 or 2");
  if (rays.empty() || !(width < 2.0)) return tensor_gauss_hermite(dim, cfg.smooth_order);
  const auto& gl = gauss_legendre(cfg.panel_order);
  const double R = cfg.radius;
  NodeSet ns;
  ns.dim = dim;
  if (dim == 1) {
    std::vector<double> x, w;
    const auto right = graded_breaks(0.0, R, 0.25 * width, 0.75, cfg.ratio, true, false);
    append_panels(right, gl, x, w);
    const std::size_t half = x.size();
    for (std::size_t i = 0; i < half; ++i) {
      x.push_back(-x[i]);
      w.push_back(w[i]);
    }
    ns.points.resize(1, static_cast<Eigen::Index>(x.size()));
    ns.weights.resize(static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
      ns.points(0, i) = x[i];
      ns.weights(i) = w[i] * normal_pdf(x[i]);
    }
    return ns;
  }
  // Polar coordinates: the radial weight r exp(-r^2/2) / (2 pi) is smooth,
  // and every ray is a single angle.
  std::vector<double> angles;
  for (const auto& r : rays) {
    double t = std::atan2(r(1), r(0));
    if (t < 0) t += 2 * std::numbers::pi;
    angles.push_back(t);
  }
  std::sort(angles.begin(), angles.end());
  const double h_theta = std::min(0.5 * width / R, 0.1);
  std::vector<double> th, wth;
  for (std::size_t i = 0; i < angles.size(); ++i) {
    const double a = angles[i];
    const double b = i + 1 < angles.size() ? angles[i + 1] : angles[0] + 2 * std::numbers::pi;
    if (b - a < 1e-14) continue;
    append_panels(graded_breaks(a, b, h_theta, std::numbers::pi / 8, cfg.ratio, true, true), gl, th, wth);
  }
  std::vector<double> rr, wr;
  append_panels(graded_breaks(0.0, R, std::min(0.25 * width, 0.5), 1.0, cfg.ratio, true, false), gl, rr, wr);
  const Eigen::Index n = static_cast<Eigen::Index>(th.size() * rr.size());
  ns.points.resize(2, n);
  ns.weights.resize(n);
  Eigen::Index idx = 0;
  for (std::size_t i = 0; i < rr.size(); ++i) {
    const double radial = wr[i] * rr[i] * std::exp(-0.5 * rr[i] * rr[i]) / (2 * std::numbers::pi);
    for (std::size_t j = 0; j < th.size(); ++j) {
      ns.points(0, idx) = rr[i] * std::cos(th[j]);
      ns.points(1, idx) = rr[i] * std::sin(th[j]);
      ns.weights(idx) = radial * wth[j];
      ++idx;
    }
  }
  return ns;
}

}  // namespace perclab
