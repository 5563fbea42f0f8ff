#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "perclab/amp.hpp"
#include "perclab/erm_sim.hpp"
#include "perclab/errors.hpp"
#include "perclab/free_entropy.hpp"
#include "perclab/generalization.hpp"
#include "perclab/log.hpp"
#include "perclab/parallel.hpp"
#include "perclab/reduction.hpp"
#include "perclab/state_evolution.hpp"

using namespace perclab;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitNoTransition = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError("bad number '" + s + "' in " + what);
  }
}

// "x", "a,b,c" or "lo:hi:step" (inclusive).
std::vector<double> parse_grid(const std::string& spec, const std::string& what) {
  std::vector<double> out;
  if (spec.find(':') == std::string::npos) {
    for (const auto& item : split(spec, ',')) out.push_back(to_double(item, what));
  } else {
    const auto parts = split(spec, ':');
    if (parts.size() != 3) throw UsageError(what + " grid must be lo:hi:step");
    const double lo = to_double(parts[0], what), hi = to_double(parts[1], what), step = to_double(parts[2], what);
    if (!(step > 0) || hi < lo) throw UsageError(what + " grid needs step > 0 and hi >= lo");
    const int count = static_cast<int>(std::floor((hi - lo) / step + 1e-9)) + 1;
    for (int i = 0; i < count; ++i) out.push_back(lo + i * step);
  }
  if (out.empty()) throw UsageError("empty " + what + " grid");
  return out;
}

// Adds "lo:hi:log[:N]" (N points, default 2 per decade plus one) to parse_grid.
std::vector<double> parse_lambda_grid(const std::string& spec) {
  const auto parts = split(spec, ':');
  if (parts.size() >= 3 && parts[2] == "log") {
    const double lo = to_double(parts[0], "lambda"), hi = to_double(parts[1], "lambda");
    if (!(lo > 0) || !(hi >= lo)) throw UsageError("log lambda grid needs 0 < lo <= hi");
    const double decades = std::log10(hi / lo);
    int count = static_cast<int>(std::lround(2 * decades)) + 1;
    if (parts.size() == 4) count = static_cast<int>(to_double(parts[3], "lambda"));
    if (parts.size() > 4 || count < 1) throw UsageError("lambda grid must be lo:hi:log[:N]");
    std::vector<double> out;
    for (int i = 0; i < count; ++i)
      out.push_back(count == 1 ? lo : lo * std::pow(10.0, decades * i / (count - 1)));
    return out;
  }
  return parse_grid(spec, "lambda");
}

LossKind parse_loss(const std::string& s) {
  if (s == "xent" || s == "cross-entropy") return LossKind::cross_entropy;
  if (s == "square") return LossKind::square;
  throw UsageError("unknown loss '" + s + "' (expected xent or square)");
}

void require_positive_alphas(const std::vector<double>& alphas) {
  for (double a : alphas)
    if (!(a > 0)) throw UsageError("alpha must be > 0 (got " + fmt(a) + ")");
}

std::vector<std::string> matrix_columns(const std::string& name, int rows, int cols) {
  std::vector<std::string> out;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out.push_back(name + "_" + std::to_string(i) + std::to_string(j));
  return out;
}

void append_matrix(std::vector<std::string>& row, const Mat& a) {
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) row.push_back(fmt(a(i, j)));
}

void append_nan(std::vector<std::string>& row, int count) {
  for (int i = 0; i < count; ++i) row.push_back("nan");
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? sep : "") + items[i];
  return s;
}

// Resolved option values of a subcommand, as written to output headers and
// accepted back by --config.
json resolved_config(const CLI::App* sub) {
  json cfg = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    if (opt->get_expected_min() == 0) {
      cfg[name] = opt->count() > 0 && opt->as<bool>();
    } else {
      const auto res = opt->results();
      cfg[name] = res.empty() ? opt->get_default_str() : join(res, " ");
    }
  }
  return cfg;
}

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw UsageError("cannot open output file '" + path + "'");
    }
  }
  std::ostream& os() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

void write_header(std::ostream& os, const CLI::App* sub, const std::string& seeds) {
  os << "# perclab " << PERCLAB_VERSION << "\n";
  os << "# command: " << sub->get_name() << "\n";
  os << "# config: " << resolved_config(sub).dump() << "\n";
  os << "# seeds: " << seeds << "\n";
}

void write_row(std::ostream& os, const std::vector<std::string>& row) { os << join(row, ",") << "\n"; }

struct MeanStd {
  double mean = std::nan("");
  double stderr_ = std::nan("");
  int count = 0;
};

MeanStd mean_stderr(const std::vector<double>& xs) {
  MeanStd r;
  double s = 0.0, s2 = 0.0;
  for (double x : xs)
    if (std::isfinite(x)) {
      s += x;
      ++r.count;
    }
  if (r.count == 0) return r;
  r.mean = s / r.count;
  for (double x : xs)
    if (std::isfinite(x)) s2 += (x - r.mean) * (x - r.mean);
  r.stderr_ = r.count > 1 ? std::sqrt(s2 / (r.count - 1) / r.count) : std::nan("");
  return r;
}

// ---------------------------------------------------------------- se-bayes

struct SeBayesArgs {
  int k = 3;
  std::string teacher = "gaussian";
  std::string alpha;
  std::string init = "uninformed";
  double eps = 1e-3;
  double tol = 0.0;
  int max_iter = 3000;
  double damping = 0.5;
  std::int64_t mc_samples = 2'000'000;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out;
  bool allow_partial = false;
};

int run_se_bayes(const CLI::App* sub, const SeBayesArgs& a) {
  const auto alphas = parse_grid(a.alpha, "alpha");
  require_positive_alphas(alphas);
  if (a.init != "uninformed" && a.init != "informed") throw UsageError("--init must be uninformed or informed");
  const TeacherPrior teacher = teacher_from_name(a.teacher, a.k);
  const int D = a.k - 1;
  struct Row {
    FixedPoint fp;
    ErrorEstimate eps;
    std::string error;
  };
  std::vector<Row> rows(alphas.size());
  parallel_for(static_cast<int>(alphas.size()), a.threads, [&](int i) {
    SEConfig c;
    c.alpha = alphas[i];
    c.teacher = teacher;
    c.student = StudentKind::bayes;
    c.init = a.init == "informed" ? InitKind::informed : InitKind::uninformed;
    c.eps = a.eps;
    c.tol = a.tol;
    c.max_iter = a.max_iter;
    c.damping = a.damping;
    try {
      rows[i].fp = run_fixed_point(c);
      GenErrorOptions go;
      go.n_samples = a.mc_samples;
      go.seed = a.seed;
      rows[i].eps = gen_error_bayes(rows[i].fp.state.q, teacher.second_moment(), go);
    } catch (const Error& e) {
      rows[i].error = e.what();
    }
  });
  Output out(a.out);
  std::ostream& os = out.os();
  write_header(os, sub, std::to_string(a.seed));
  std::vector<std::string> cols = {"alpha"};
  for (const auto& c : matrix_columns("q", D, D)) cols.push_back(c);
  for (const char* c : {"residual", "iterations", "converged", "perfect", "eps_gen", "eps_stderr", "phi"})
    cols.push_back(c);
  write_row(os, cols);
  bool all_ok = true;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const Row& r = rows[i];
    std::vector<std::string> row = {fmt(alphas[i])};
    if (!r.error.empty()) {
      append_nan(row, D * D + 1);
      row.insert(row.end(), {"0", "0", "0", "nan", "nan", "nan"});
      os << "# error at alpha=" << fmt(alphas[i]) << ": " << r.error << "\n";
      all_ok = false;
    } else {
      append_matrix(row, r.fp.state.q);
      row.push_back(fmt(r.fp.residual));
      row.push_back(std::to_string(r.fp.iterations));
      row.push_back(r.fp.converged ? "1" : "0");
      row.push_back(r.fp.perfect_recovery ? "1" : "0");
      row.push_back(fmt(r.eps.value));
      row.push_back(fmt(r.eps.std_error));
      row.push_back(r.fp.free_entropy ? fmt(*r.fp.free_entropy) : "nan");
      all_ok = all_ok && r.fp.converged;
    }
    write_row(os, row);
  }
  if (!all_ok && !a.allow_partial) {
    std::cerr << "perclab: some grid points did not converge (use --allow-partial to accept)\n";
    return kExitFailure;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- se-erm

struct SeErmArgs {
  int k = 3;
  std::string teacher = "gaussian";
  std::string loss = "xent";
  double lambda = 1.0;
  std::string alpha;
  double tol = 0.0;
  int max_iter = 3000;
  double damping = 0.5;
  std::int64_t mc_samples = 2'000'000;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out;
  bool allow_partial = false;
};

SEConfig erm_config(int k, const std::string& teacher, LossKind loss, double lambda, double alpha) {
  SEConfig c;
  c.alpha = alpha;
  c.teacher = teacher_from_name(teacher, k);
  c.student = StudentKind::erm;
  c.loss.kind = loss;
  c.loss.k = k;
  c.lambda = lambda;
  return c;
}

struct ErmTheory {
  FixedPoint fp;
  ErrorEstimate eps;
  std::string error;
};

ErmTheory erm_theory(SEConfig c, std::int64_t mc_samples, std::uint64_t seed) {
  ErmTheory t;
  try {
    t.fp = run_fixed_point(c);
    GenErrorOptions go;
    go.n_samples = mc_samples;
    go.seed = seed;
    go.coords = c.loss.kind == LossKind::square ? FieldCoords::full : FieldCoords::reduced;
    t.eps = gen_error_erm(t.fp.state.m, t.fp.state.q, student_teacher_moment(c), go);
  } catch (const Error& e) {
    t.error = e.what();
  }
  return t;
}

int run_se_erm(const CLI::App* sub, const SeErmArgs& a) {
  const auto alphas = parse_grid(a.alpha, "alpha");
  require_positive_alphas(alphas);
  if (!(a.lambda > 0)) throw UsageError("--lambda must be > 0");
  const LossKind loss = parse_loss(a.loss);
  LossSpec ls;
  ls.kind = loss;
  ls.k = a.k;
  const int D = ls.field_dim();
  std::vector<ErmTheory> rows(alphas.size());
  parallel_for(static_cast<int>(alphas.size()), a.threads, [&](int i) {
    SEConfig c = erm_config(a.k, a.teacher, loss, a.lambda, alphas[i]);
    c.tol = a.tol;
    c.max_iter = a.max_iter;
    c.damping = a.damping;
    rows[i] = erm_theory(c, a.mc_samples, a.seed);
  });
  Output out(a.out);
  std::ostream& os = out.os();
  write_header(os, sub, std::to_string(a.seed));
  std::vector<std::string> cols = {"alpha"};
  for (const char* name : {"m", "q", "V"})
    for (const auto& c : matrix_columns(name, D, D)) cols.push_back(c);
  for (const char* c : {"residual", "iterations", "converged", "eps_gen", "eps_stderr"}) cols.push_back(c);
  write_row(os, cols);
  bool all_ok = true;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const ErmTheory& r = rows[i];
    std::vector<std::string> row = {fmt(alphas[i])};
    if (!r.error.empty()) {
      append_nan(row, 3 * D * D + 1);
      row.insert(row.end(), {"0", "0", "nan", "nan"});
      os << "# error at alpha=" << fmt(alphas[i]) << ": " << r.error << "\n";
      all_ok = false;
    } else {
      append_matrix(row, r.fp.state.m);
      append_matrix(row, r.fp.state.q);
      append_matrix(row, r.fp.state.V);
      row.push_back(fmt(r.fp.residual));
      row.push_back(std::to_string(r.fp.iterations));
      row.push_back(r.fp.converged ? "1" : "0");
      row.push_back(fmt(r.eps.value));
      row.push_back(fmt(r.eps.std_error));
      all_ok = all_ok && r.fp.converged;
    }
    write_row(os, row);
  }
  if (!all_ok && !a.allow_partial) {
    std::cerr << "perclab: some grid points did not converge (use --allow-partial to accept)\n";
    return kExitFailure;
  }
  return kExitOk;
}

// ---------------------------------------------------------- scan-transition

struct ScanArgs {
  int k = 3;
  std::string teacher = "auto";
  double alpha_lo = 0.0;
  double alpha_hi = 0.0;
  double grid_step = 0.1;
  double bracket = 0.01;
  std::int64_t mc_samples = 2'000'000;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out;
};

json transition_json(const TransitionReport& r, const CLI::App* sub, const std::string& teacher, int k) {
  json j;
  j["tool"] = "perclab";
  j["version"] = PERCLAB_VERSION;
  j["command"] = sub->get_name();
  j["config"] = resolved_config(sub);
  j["k"] = k;
  j["teacher"] = teacher;
  j["it_found"] = r.it_found;
  j["algo_found"] = r.algo_found;
  j["alpha_it"] = r.it_found ? json(r.alpha_it) : json(nullptr);
  j["alpha_algo"] = r.algo_found ? json(r.alpha_algo) : json(nullptr);
  j["it_bracket"] = r.it_found ? json::array({r.it_bracket[0], r.it_bracket[1]}) : json(nullptr);
  j["algo_bracket"] = r.algo_found ? json::array({r.algo_bracket[0], r.algo_bracket[1]}) : json(nullptr);
  json curve = json::array();
  for (const auto& p : r.curve) {
    curve.push_back({{"alpha", p.alpha},
                     {"phi_uninformed", p.phi_uninformed},
                     {"phi_informed", p.phi_informed},
                     {"eps_uninformed", p.eps_uninformed},
                     {"eps_informed", p.eps_informed},
                     {"perfect_uninformed", p.perfect_uninformed},
                     {"perfect_informed", p.perfect_informed},
                     {"converged", p.converged}});
  }
  j["curve"] = curve;
  j["diagnostics"] = r.diagnostics;
  return j;
}

int run_scan(const CLI::App* sub, const ScanArgs& a) {
  const std::string teacher_name = a.teacher == "auto" ? (a.k == 2 ? "binary" : "rademacher") : a.teacher;
  const TeacherPrior teacher = teacher_from_name(teacher_name, a.k);
  ScanOptions opt;
  if (a.k == 2) {
    opt.alpha_lo = 1.0;
    opt.alpha_hi = 1.8;
  }
  if (a.alpha_lo > 0) opt.alpha_lo = a.alpha_lo;
  if (a.alpha_hi > 0) opt.alpha_hi = a.alpha_hi;
  if (!(opt.alpha_hi > opt.alpha_lo)) throw UsageError("need 0 < alpha-lo < alpha-hi");
  if (!(a.grid_step > 0) || !(a.bracket > 0)) throw UsageError("grid-step and bracket must be > 0");
  opt.grid_step = a.grid_step;
  opt.bracket = a.bracket;
  opt.mc_samples = a.mc_samples;
  opt.seed = a.seed;
  opt.threads = a.threads;
  const TransitionReport r = scan_transitions(teacher, opt);
  Output out(a.out);
  out.os() << transition_json(r, sub, teacher_name, a.k).dump(2) << "\n";
  if (!r.it_found || !r.algo_found) {
    for (const auto& d : r.diagnostics) std::cerr << "perclab: " << d << "\n";
    return kExitNoTransition;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- amp

struct AmpArgs {
  int k = 3;
  std::string teacher = "gaussian";
  double alpha = 1.0;
  int d = 2000;
  int seeds = 20;
  std::uint64_t seed0 = 0;
  int max_iter = 200;
  double tol = 1e-6;
  double damping = 0.3;
  bool approx_variance = false;
  std::int64_t n_test = 200'000;
  bool no_theory = false;
  std::int64_t mc_samples = 2'000'000;
  std::string trace;
  int threads = 1;
  std::string out;
  bool allow_partial = false;
};

int run_amp(const CLI::App* sub, const AmpArgs& a) {
  if (!(a.alpha > 0)) throw UsageError("alpha must be > 0");
  if (a.d < 1 || a.seeds < 1) throw UsageError("need d >= 1 and seeds >= 1");
  const TeacherPrior prior = teacher_from_name(a.teacher, a.k);
  const int D = a.k - 1;
  const int n = static_cast<int>(std::lround(a.alpha * a.d));
  struct SeedResult {
    AmpResult amp;
    Mat m, q;
    ErrorEstimate err;
    std::string error;
  };
  std::vector<SeedResult> res(static_cast<std::size_t>(a.seeds));
  parallel_for(a.seeds, a.threads, [&](int s) {
    SeedResult& r = res[static_cast<std::size_t>(s)];
    try {
      const std::uint64_t seed = a.seed0 + static_cast<std::uint64_t>(s);
      const Dataset ds = generate(a.d, n, a.k, a.teacher, seed);
      const Eigen::MatrixXd wr = reduce_weights(ds.Wstar);
      AmpConfig cfg;
      cfg.prior = prior;
      cfg.max_iter = a.max_iter;
      cfg.tol = a.tol;
      cfg.damping = a.damping;
      cfg.exact_variance = !a.approx_variance;
      r.amp = amp_run(ds.X, ds.y, cfg, &wr);
      const AmpOverlaps o = amp_overlaps(r.amp.state.what, wr);
      r.m = o.m;
      r.q = o.q;
      r.err = test_error(r.amp.state.what, ds.Wstar, a.n_test, seed);
      if (r.amp.aborted) r.error = r.amp.diagnostics;
    } catch (const Error& e) {
      r.error = e.what();
    }
  });

  std::optional<FixedPoint> theory;
  ErrorEstimate theory_eps;
  if (!a.no_theory) {
    SEConfig c;
    c.alpha = a.alpha;
    c.teacher = prior;
    c.compute_free_entropy = false;
    theory = run_fixed_point(c);
    GenErrorOptions go;
    go.n_samples = a.mc_samples;
    theory_eps = gen_error_bayes(theory->state.q, prior.second_moment(), go);
  }

  Output out(a.out);
  std::ostream& os = out.os();
  write_header(os, sub, std::to_string(a.seed0) + ".." + std::to_string(a.seed0 + a.seeds - 1));
  std::vector<std::string> cols = {"seed", "iterations", "converged"};
  for (const auto& c : matrix_columns("m", D, D)) cols.push_back(c);
  for (const auto& c : matrix_columns("q", D, D)) cols.push_back(c);
  cols.push_back("test_error");
  cols.push_back("test_stderr");
  write_row(os, cols);
  bool all_ok = true;
  std::vector<std::vector<double>> qs(static_cast<std::size_t>(D * D)), ms(static_cast<std::size_t>(D * D));
  std::vector<double> errs;
  for (int s = 0; s < a.seeds; ++s) {
    const SeedResult& r = res[static_cast<std::size_t>(s)];
    std::vector<std::string> row = {std::to_string(a.seed0 + static_cast<std::uint64_t>(s))};
    if (!r.error.empty()) {
      os << "# error at seed " << row[0] << ": " << r.error << "\n";
      all_ok = false;
    }
    if (r.m.size() == 0) {
      row.insert(row.end(), {"0", "0"});
      append_nan(row, 2 * D * D + 2);
    } else {
      row.push_back(std::to_string(r.amp.state.iteration));
      row.push_back(r.amp.converged ? "1" : "0");
      append_matrix(row, r.m);
      append_matrix(row, r.q);
      row.push_back(fmt(r.err.value));
      row.push_back(fmt(r.err.std_error));
      for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) {
          ms[static_cast<std::size_t>(i * D + j)].push_back(r.m(i, j));
          qs[static_cast<std::size_t>(i * D + j)].push_back(r.q(i, j));
        }
      errs.push_back(r.err.value);
      all_ok = all_ok && r.amp.converged;
    }
    write_row(os, row);
  }
  auto summary = [&](const std::string& name, const std::vector<double>& xs, double predicted) {
    const MeanStd ms = mean_stderr(xs);
    os << "# summary " << name << " mean=" << fmt(ms.mean) << " stderr=" << fmt(ms.stderr_);
    if (!a.no_theory) os << " se=" << fmt(predicted);
    os << "\n";
  };
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i * D + j);
      const std::string suffix = "_" + std::to_string(i) + std::to_string(j);
      summary("m" + suffix, ms[idx], theory ? theory->state.q(i, j) : 0.0);
      summary("q" + suffix, qs[idx], theory ? theory->state.q(i, j) : 0.0);
    }
  summary("test_error", errs, theory_eps.value);

  if (!a.trace.empty()) {
    std::ofstream tf(a.trace);
    if (!tf) throw UsageError("cannot open trace file '" + a.trace + "'");
    write_header(tf, sub, std::to_string(a.seed0) + ".." + std::to_string(a.seed0 + a.seeds - 1));
    std::vector<std::string> tcols = {"seed", "iteration", "delta", "mean_variance"};
    for (const auto& c : matrix_columns("m", D, D)) tcols.push_back(c);
    for (const auto& c : matrix_columns("q", D, D)) tcols.push_back(c);
    write_row(tf, tcols);
    for (int s = 0; s < a.seeds; ++s)
      for (const auto& tp : res[static_cast<std::size_t>(s)].amp.trace) {
        std::vector<std::string> row = {std::to_string(a.seed0 + static_cast<std::uint64_t>(s)),
                                        std::to_string(tp.iteration), fmt(tp.delta),
                                        fmt(tp.mean_variance)};
        append_matrix(row, tp.m);
        append_matrix(row, tp.q);
        write_row(tf, row);
      }
  }
  if (!all_ok && !a.allow_partial) {
    std::cerr << "perclab: some seeds failed or did not converge (use --allow-partial to accept)\n";
    return kExitFailure;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- erm-fit

struct ErmFitArgs {
  int k = 3;
  std::string teacher = "gaussian";
  std::string loss = "xent";
  double lambda = 1.0;
  double alpha = 3.0;
  int d = 500;
  int seeds = 50;
  std::uint64_t seed0 = 0;
  std::int64_t n_test = 200'000;
  bool no_theory = false;
  std::int64_t mc_samples = 2'000'000;
  int threads = 1;
  std::string out;
  bool allow_partial = false;
};

struct FitOutcome {
  Mat m, q;
  ErrorEstimate err;
  int iterations = 0;
  double grad_norm = 0.0;
  std::string error;
};

FitOutcome fit_one(int d, double alpha, int k, const std::string& teacher, LossKind loss, double lambda,
                   std::uint64_t seed, std::int64_t n_test) {
  FitOutcome f;
  try {
    const int n = static_cast<int>(std::lround(alpha * d));
    const Dataset ds = generate(d, n, k, teacher, seed);
    const ErmSolution sol = loss == LossKind::square ? fit_square(ds, lambda) : fit_cross_entropy(ds, lambda);
    const EmpiricalOverlaps o = empirical_overlaps(sol.W, ds.Wstar, loss != LossKind::square);
    f.m = o.m;
    f.q = o.q;
    f.iterations = sol.iterations;
    f.grad_norm = sol.grad_norm;
    f.err = test_error(sol.W, ds.Wstar, n_test, seed ^ 0x5eedULL);
  } catch (const Error& e) {
    f.error = e.what();
  }
  return f;
}

int run_erm_fit(const CLI::App* sub, const ErmFitArgs& a) {
  if (!(a.alpha > 0)) throw UsageError("alpha must be > 0");
  if (!(a.lambda > 0)) throw UsageError("--lambda must be > 0");
  if (a.d < 1 || a.seeds < 1) throw UsageError("need d >= 1 and seeds >= 1");
  const LossKind loss = parse_loss(a.loss);
  const int D = loss == LossKind::square ? a.k : a.k - 1;
  std::vector<FitOutcome> res(static_cast<std::size_t>(a.seeds));
  parallel_for(a.seeds, a.threads, [&](int s) {
    res[static_cast<std::size_t>(s)] =
        fit_one(a.d, a.alpha, a.k, a.teacher, loss, a.lambda, a.seed0 + static_cast<std::uint64_t>(s), a.n_test);
  });
  std::optional<ErmTheory> theory;
  if (!a.no_theory) theory = erm_theory(erm_config(a.k, a.teacher, loss, a.lambda, a.alpha), a.mc_samples, 1);

  Output out(a.out);
  std::ostream& os = out.os();
  write_header(os, sub, std::to_string(a.seed0) + ".." + std::to_string(a.seed0 + a.seeds - 1));
  std::vector<std::string> cols = {"seed", "iterations", "grad_norm"};
  for (const auto& c : matrix_columns("m", D, D)) cols.push_back(c);
  for (const auto& c : matrix_columns("q", D, D)) cols.push_back(c);
  cols.push_back("test_error");
  cols.push_back("test_stderr");
  write_row(os, cols);
  bool all_ok = true;
  std::vector<double> errs;
  for (int s = 0; s < a.seeds; ++s) {
    const FitOutcome& f = res[static_cast<std::size_t>(s)];
    std::vector<std::string> row = {std::to_string(a.seed0 + static_cast<std::uint64_t>(s))};
    if (!f.error.empty()) {
      os << "# error at seed " << row[0] << ": " << f.error << "\n";
      row.insert(row.end(), {"0", "nan"});
      append_nan(row, 2 * D * D + 2);
      all_ok = false;
    } else {
      row.push_back(std::to_string(f.iterations));
      row.push_back(fmt(f.grad_norm));
      append_matrix(row, f.m);
      append_matrix(row, f.q);
      row.push_back(fmt(f.err.value));
      row.push_back(fmt(f.err.std_error));
      errs.push_back(f.err.value);
    }
    write_row(os, row);
  }
  const MeanStd ms = mean_stderr(errs);
  os << "# summary test_error mean=" << fmt(ms.mean) << " stderr=" << fmt(ms.stderr_) << " seeds=" << ms.count;
  if (theory) {
    if (!theory->error.empty()) {
      os << " se_error=\"" << theory->error << "\"";
      all_ok = false;
    } else {
      const double combined = std::hypot(ms.stderr_, theory->eps.std_error);
      os << " se=" << fmt(theory->eps.value) << " se_stderr=" << fmt(theory->eps.std_error)
         << " gap_in_stderr=" << fmt(std::abs(ms.mean - theory->eps.value) / combined);
    }
  }
  os << "\n";
  if (!all_ok && !a.allow_partial) {
    std::cerr << "perclab: some fits failed (use --allow-partial to accept)\n";
    return kExitFailure;
  }
  return kExitOk;
}

// ---------------------------------------------------------- learning-curve

struct CurveArgs {
  int k = 3;
  std::string teacher = "gaussian";
  std::string loss = "xent";
  std::string lambda_grid = "1";
  std::string alpha = "3";
  int d = 500;
  int seeds = 10;
  std::uint64_t seed0 = 0;
  std::int64_t n_test = 200'000;
  std::int64_t mc_samples = 2'000'000;
  int threads = 1;
  std::string out;
  bool allow_partial = false;
};

int run_learning_curve(const CLI::App* sub, const CurveArgs& a) {
  const auto alphas = parse_grid(a.alpha, "alpha");
  require_positive_alphas(alphas);
  const auto lambdas = parse_lambda_grid(a.lambda_grid);
  for (double l : lambdas)
    if (!(l > 0)) throw UsageError("lambda must be > 0");
  if (a.seeds < 0 || a.d < 1) throw UsageError("need d >= 1 and seeds >= 0");
  const LossKind loss = parse_loss(a.loss);
  const int points = static_cast<int>(alphas.size() * lambdas.size());
  std::vector<ErmTheory> theory(static_cast<std::size_t>(points));
  parallel_for(points, a.threads, [&](int p) {
    const double alpha = alphas[static_cast<std::size_t>(p) / lambdas.size()];
    const double lambda = lambdas[static_cast<std::size_t>(p) % lambdas.size()];
    theory[static_cast<std::size_t>(p)] =
        erm_theory(erm_config(a.k, a.teacher, loss, lambda, alpha), a.mc_samples, 1);
  });
  const int jobs = points * a.seeds;
  std::vector<FitOutcome> fits(static_cast<std::size_t>(jobs));
  parallel_for(jobs, a.threads, [&](int j) {
    const int p = j / a.seeds, s = j % a.seeds;
    const double alpha = alphas[static_cast<std::size_t>(p) / lambdas.size()];
    const double lambda = lambdas[static_cast<std::size_t>(p) % lambdas.size()];
    fits[static_cast<std::size_t>(j)] =
        fit_one(a.d, alpha, a.k, a.teacher, loss, lambda, a.seed0 + static_cast<std::uint64_t>(s), a.n_test);
  });

  Output out(a.out);
  std::ostream& os = out.os();
  write_header(os, sub,
               a.seeds > 0 ? std::to_string(a.seed0) + ".." + std::to_string(a.seed0 + a.seeds - 1) : "none");
  write_row(os, {"alpha", "lambda", "eps_theory", "eps_theory_stderr", "se_converged", "eps_sim", "eps_sim_stderr",
                 "seeds"});
  bool all_ok = true;
  for (int p = 0; p < points; ++p) {
    const double alpha = alphas[static_cast<std::size_t>(p) / lambdas.size()];
    const double lambda = lambdas[static_cast<std::size_t>(p) % lambdas.size()];
    const ErmTheory& t = theory[static_cast<std::size_t>(p)];
    std::vector<double> errs;
    for (int s = 0; s < a.seeds; ++s) {
      const FitOutcome& f = fits[static_cast<std::size_t>(p * a.seeds + s)];
      if (f.error.empty()) {
        errs.push_back(f.err.value);
      } else {
        os << "# error at alpha=" << fmt(alpha) << " lambda=" << fmt(lambda) << " seed=" << a.seed0 + s << ": "
           << f.error << "\n";
        all_ok = false;
      }
    }
    if (!t.error.empty()) {
      os << "# theory error at alpha=" << fmt(alpha) << " lambda=" << fmt(lambda) << ": " << t.error << "\n";
      all_ok = false;
    } else {
      all_ok = all_ok && t.fp.converged;
    }
    const MeanStd ms = mean_stderr(errs);
    const bool have = t.error.empty();
    write_row(os, {fmt(alpha), fmt(lambda), have ? fmt(t.eps.value) : "nan", have ? fmt(t.eps.std_error) : "nan",
                   have && t.fp.converged ? "1" : "0", fmt(ms.mean), fmt(ms.stderr_), std::to_string(ms.count)});
  }
  if (!all_ok && !a.allow_partial) {
    std::cerr << "perclab: some points failed (use --allow-partial to accept)\n";
    return kExitFailure;
  }
  return kExitOk;
}

// ------------------------------------------------------------------ driver

// Expands "--config FILE" (a JSON object of option names to values, as
// printed in output headers) into flags placed before the explicit ones, so
// explicit flags win under the take-last policy.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> explicit_args;
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file");
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      explicit_args.push_back(args[i]);
    }
  }
  if (config_path.empty() || explicit_args.empty()) return explicit_args;
  std::ifstream in(config_path);
  if (!in) throw UsageError("cannot read config file '" + config_path + "'");
  json cfg;
  try {
    in >> cfg;
  } catch (const json::exception& e) {
    throw UsageError("config file '" + config_path + "' is not valid JSON: " + e.what());
  }
  if (!cfg.is_object()) throw UsageError("config file must hold a JSON object");
  std::vector<std::string> out = {explicit_args.front()};
  for (const auto& [key, value] : cfg.items()) {
    if (value.is_boolean()) {
      out.push_back("--" + key + "=" + (value.get<bool>() ? "true" : "false"));
    } else if (value.is_string()) {
      if (value.get<std::string>().empty()) continue;
      out.push_back("--" + key + "=" + value.get<std::string>());
    } else if (value.is_number()) {
      out.push_back("--" + key + "=" + value.dump());
    } else {
      throw UsageError("config value for '" + key + "' must be a string, number or boolean");
    }
  }
  out.insert(out.end(), explicit_args.begin() + 1, explicit_args.end());
  return out;
}

template <typename Args>
void add_common(CLI::App* sub, Args& a) {
  sub->add_option("--threads", a.threads, "Worker threads (default from PERCLAB_THREADS)");
  sub->add_option("--out", a.out, "Output file (default stdout)");
  sub->add_option("--config", "JSON config file; explicit flags override it");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"perclab: multi-class teacher-student perceptron lab"};
  app.set_version_flag("--version", PERCLAB_VERSION);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  const int threads = default_threads();

  SeBayesArgs sb;
  sb.threads = threads;
  auto* se_bayes = app.add_subcommand("se-bayes", "Bayes-optimal state evolution over an alpha grid (CSV)");
  se_bayes->add_option("--k", sb.k, "Number of classes (2 or 3)");
  se_bayes->add_option("--teacher", sb.teacher, "gaussian, rademacher or binary (k = 2)");
  se_bayes->add_option("--alpha", sb.alpha, "Grid lo:hi:step, list a,b,c or single value")->required();
  se_bayes->add_option("--init", sb.init, "uninformed or informed");
  se_bayes->add_option("--eps", sb.eps, "Initialization offset");
  se_bayes->add_option("--tol", sb.tol, "Convergence tolerance (0 = default)");
  se_bayes->add_option("--max-iter", sb.max_iter);
  se_bayes->add_option("--damping", sb.damping);
  se_bayes->add_option("--mc-samples", sb.mc_samples, "Monte Carlo samples for the error");
  se_bayes->add_option("--seed", sb.seed);
  se_bayes->add_flag("--allow-partial", sb.allow_partial, "Exit 0 even if some points fail");
  add_common(se_bayes, sb);

  SeErmArgs se;
  se.threads = threads;
  auto* se_erm = app.add_subcommand("se-erm", "ERM state evolution over an alpha grid (CSV)");
  se_erm->add_option("--k", se.k);
  se_erm->add_option("--teacher", se.teacher);
  se_erm->add_option("--loss", se.loss, "xent or square");
  se_erm->add_option("--lambda", se.lambda, "Ridge penalty");
  se_erm->add_option("--alpha", se.alpha, "Grid lo:hi:step, list a,b,c or single value")->required();
  se_erm->add_option("--tol", se.tol, "Convergence tolerance (0 = default)");
  se_erm->add_option("--max-iter", se.max_iter);
  se_erm->add_option("--damping", se.damping);
  se_erm->add_option("--mc-samples", se.mc_samples);
  se_erm->add_option("--seed", se.seed);
  se_erm->add_flag("--allow-partial", se.allow_partial);
  add_common(se_erm, se);

  ScanArgs sc;
  sc.threads = threads;
  auto* scan = app.add_subcommand("scan-transition", "Locate alpha_IT and alpha_algo (JSON)");
  scan->add_option("--k", sc.k);
  scan->add_option("--teacher", sc.teacher, "auto (binary for k = 2, rademacher otherwise) or a teacher name");
  scan->add_option("--alpha-lo", sc.alpha_lo, "Grid start (0 = default for k)");
  scan->add_option("--alpha-hi", sc.alpha_hi, "Grid end (0 = default for k)");
  scan->add_option("--grid-step", sc.grid_step);
  scan->add_option("--bracket", sc.bracket, "Bisection bracket width");
  scan->add_option("--mc-samples", sc.mc_samples);
  scan->add_option("--seed", sc.seed);
  add_common(scan, sc);

  AmpArgs am;
  am.threads = threads;
  auto* amp = app.add_subcommand("amp", "Run AMP on synthetic instances (CSV)");
  amp->add_option("--k", am.k);
  amp->add_option("--teacher", am.teacher);
  amp->add_option("--alpha", am.alpha);
  amp->add_option("--d", am.d);
  amp->add_option("--seeds", am.seeds);
  amp->add_option("--seed0", am.seed0);
  amp->add_option("--max-iter", am.max_iter);
  amp->add_option("--tol", am.tol);
  amp->add_option("--damping", am.damping);
  amp->add_flag("--approx-variance", am.approx_variance, "Use V = mean_j C_j for every sample");
  amp->add_option("--n-test", am.n_test);
  amp->add_flag("--no-theory", am.no_theory, "Skip the state evolution prediction");
  amp->add_option("--mc-samples", am.mc_samples);
  amp->add_option("--trace", am.trace, "Write per-iteration overlaps to this file");
  amp->add_flag("--allow-partial", am.allow_partial);
  add_common(amp, am);

  ErmFitArgs ef;
  ef.threads = threads;
  auto* erm_fit = app.add_subcommand("erm-fit", "Fit ERM on synthetic instances (CSV)");
  erm_fit->add_option("--k", ef.k);
  erm_fit->add_option("--teacher", ef.teacher);
  erm_fit->add_option("--loss", ef.loss);
  erm_fit->add_option("--lambda", ef.lambda);
  erm_fit->add_option("--alpha", ef.alpha);
  erm_fit->add_option("--d", ef.d);
  erm_fit->add_option("--seeds", ef.seeds);
  erm_fit->add_option("--seed0", ef.seed0);
  erm_fit->add_option("--n-test", ef.n_test);
  erm_fit->add_flag("--no-theory", ef.no_theory);
  erm_fit->add_option("--mc-samples", ef.mc_samples);
  erm_fit->add_flag("--allow-partial", ef.allow_partial);
  add_common(erm_fit, ef);

  CurveArgs lc;
  lc.threads = threads;
  auto* curve = app.add_subcommand("learning-curve", "Theory and simulation error over alpha and lambda (CSV)");
  curve->add_option("--k", lc.k);
  curve->add_option("--teacher", lc.teacher);
  curve->add_option("--loss", lc.loss);
  curve->add_option("--lambda-grid,--lambda", lc.lambda_grid, "lo:hi:log[:N], lo:hi:step, list or value");
  curve->add_option("--alpha", lc.alpha, "Grid lo:hi:step, list or value");
  curve->add_option("--d", lc.d);
  curve->add_option("--seeds", lc.seeds, "Simulated instances per point (0 = theory only)");
  curve->add_option("--seed0", lc.seed0);
  curve->add_option("--n-test", lc.n_test);
  curve->add_option("--mc-samples", lc.mc_samples);
  curve->add_flag("--allow-partial", lc.allow_partial);
  add_common(curve, lc);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitFailure;
  } catch (const UsageError& e) {
    std::cerr << "perclab: " << e.what() << "\n";
    return kExitFailure;
  }

  try {
    if (*se_bayes) return run_se_bayes(se_bayes, sb);
    if (*se_erm) return run_se_erm(se_erm, se);
    if (*scan) return run_scan(scan, sc);
    if (*amp) return run_amp(amp, am);
    if (*erm_fit) return run_erm_fit(erm_fit, ef);
    if (*curve) return run_learning_curve(curve, lc);
  } catch (const UsageError& e) {
    std::cerr << "perclab: " << e.what() << "\n";
    return kExitFailure;
  } catch (const Error& e) {
    std::cerr << "perclab: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
