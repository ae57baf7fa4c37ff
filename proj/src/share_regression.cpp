#include "misalloc/share_regression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "misalloc/kernels.hpp"
#include "misalloc/rng.hpp"

namespace misalloc {

using kernels::Mat10;
using kernels::Vec10;

double elasticity_at(const GammaVector& g, double k, double l, double m) {
  return g[G0] + g[GK] * k + g[GL] * l + g[GM] * m + g[GKK] * k * k + g[GLL] * l * l +
         g[GMM] * m * m + g[GKL] * k * l + g[GKM] * k * m + g[GLM] * l * m;
}

static Vec10 to_vec(const GammaVector& g) { return Eigen::Map<const Vec10>(g.c.data()); }

static GammaVector to_gamma(const Vec10& v) {
  GammaVector g;
  for (int i = 0; i < 10; ++i) g[i] = v[i];
  return g;
}

static std::size_t count_nonpositive(const EstimationSample& s, const GammaVector& g) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!(elasticity_at(g, s.k[i], s.l[i], s.m[i]) > 0)) ++n;
  return n;
}

static GammaVector ensure_positive(const EstimationSample& s, GammaVector g) {
  for (int it = 0; it < 60 && count_nonpositive(s, g) > 0; ++it) {
    for (int j : {GKK, GLL, GMM}) g[j] = g[j] > 0 ? 2 * g[j] : (g[j] == 0 ? 0.1 : -g[j]);
  }
  std::size_t bad = count_nonpositive(s, g);
  if (bad > 0)
    throw EstimationError("share regression: initial log argument non-positive at " +
                          std::to_string(bad) + " records");
  return g;
}

GammaVector default_share_init(const EstimationSample& s) {
  double ms = 0;
  for (double v : s.s) ms += v;
  ms /= static_cast<double>(s.size());
  GammaVector g;
  g[G0] = std::exp(ms);
  g[GKK] = g[GLL] = g[GMM] = 0.1;
  return ensure_positive(s, g);
}

namespace {

struct Run {
  Vec10 x;
  double f = 0;
  bool converged = false;
  int iterations = 0;
  double grad_norm = 0;
  std::vector<double> trace;
};

Run levenberg_marquardt(const EstimationSample& s, const Vec10& x0, const SolverOptions& o) {
  Run run;
  run.x = x0;
  auto sys = kernels::share_system(s, run.x, o.exec);
  if (sys.nonpositive > 0)
    throw EstimationError("share regression: start has " + std::to_string(sys.nonpositive) +
                          " non-positive log arguments");
  run.f = sys.ssr;
  run.trace.push_back(run.f);
  double lambda = 1e-3;
  const double floor_f = 1e-28 * static_cast<double>(s.size());
  for (int iter = 0; iter < o.max_iter; ++iter) {
    run.iterations = iter;
    run.grad_norm = 2.0 * sys.jtr.cwiseAbs().maxCoeff();
    if (run.grad_norm < o.grad_tol || run.f <= floor_f) {
      run.converged = true;
      return run;
    }
    Vec10 d = sys.jtj.diagonal();
    const double dmax = d.maxCoeff();
    for (int j = 0; j < 10; ++j) d[j] = std::max(d[j], 1e-14 * dmax);
    Vec10 scale = d.cwiseSqrt().cwiseInverse();
    bool accepted = false;
    while (!accepted) {
      Mat10 a = scale.asDiagonal() * sys.jtj * scale.asDiagonal();
      a.diagonal().array() += lambda;  // scaled diagonal is 1, so this is lambda * diag(JtJ)
      Vec10 step = scale.asDiagonal() * a.ldlt().solve(-(scale.asDiagonal() * sys.jtr));
      Vec10 trial = run.x + step;
      auto val = kernels::share_ssr(s, trial, o.exec);
      for (int h = 0; h < 30 && val.nonpositive > 0; ++h) {
        step *= 0.5;
        trial = run.x + step;
        val = kernels::share_ssr(s, trial, o.exec);
      }
      if (val.nonpositive == 0 && std::isfinite(val.ssr) && val.ssr < run.f) {
        const double rel = (run.f - val.ssr) / std::max(run.f, 1e-300);
        run.x = trial;
        run.f = val.ssr;
        run.trace.push_back(run.f);
        lambda = std::max(lambda / 10.0, 1e-12);
        sys = kernels::share_system(s, run.x, o.exec);
        accepted = true;
        if (rel < o.rel_tol) {
          run.iterations = iter + 1;
          run.grad_norm = 2.0 * sys.jtr.cwiseAbs().maxCoeff();
          run.converged = true;
          return run;
        }
      } else {
        lambda *= 10.0;
        if (lambda > 1e16) {
          run.iterations = iter + 1;
          run.grad_norm = 2.0 * sys.jtr.cwiseAbs().maxCoeff();
          run.converged = run.grad_norm < o.grad_tol;
          return run;
        }
      }
    }
  }
  run.iterations = o.max_iter;
  run.grad_norm = 2.0 * sys.jtr.cwiseAbs().maxCoeff();
  return run;
}

EstimationSample subset_firms(const EstimationSample& s, const std::vector<std::size_t>& firms) {
  std::vector<char> keep(s.n_firms, 0);
  for (auto f : firms) keep[f] = 1;
  EstimationSample o;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!keep[s.firm[i]]) continue;
    o.y.push_back(s.y[i]);
    o.k.push_back(s.k[i]);
    o.l.push_back(s.l[i]);
    o.m.push_back(s.m[i]);
    o.s.push_back(s.s[i]);
  }
  o.n_firms = firms.size();
  return o;
}

Run multistart(const EstimationSample& s, const GammaVector& init, const SolverOptions& o) {
  Rng rng = make_rng(o.seed, "share_multistart", 0);
  Run best = levenberg_marquardt(s, to_vec(init), o);
  for (int j = 1; j < o.multistart; ++j) {
    GammaVector g = init;
    for (int i = 0; i < 10; ++i) g[i] *= std::exp(0.5 * std_normal(rng));
    g = ensure_positive(s, g);
    Run r = levenberg_marquardt(s, to_vec(g), o);
    if (r.f < best.f) best = std::move(r);
  }
  return best;
}

}  // namespace

ShareFit fit_share_regression(const EstimationSample& s, std::optional<GammaVector> init,
                              const SolverOptions& opts) {
  if (s.size() < 20) throw ValidationError("share regression needs at least 20 records");
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!std::isfinite(s.s[i]) || !std::isfinite(s.k[i]) || !std::isfinite(s.l[i]) ||
        !std::isfinite(s.m[i]))
      throw ValidationError("share regression: non-finite input at record " + std::to_string(i));

  GammaVector start = init ? ensure_positive(s, *init) : default_share_init(s);
  Run run;
  if (opts.training_subsample && s.n_firms > static_cast<std::size_t>(opts.training_firms)) {
    Rng rng = make_rng(opts.seed, "share_training", 0);
    std::vector<std::size_t> ids(s.n_firms);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    for (std::size_t i = 0; i < static_cast<std::size_t>(opts.training_firms); ++i)
      std::swap(ids[i], ids[i + uniform_index(rng, ids.size() - i)]);
    ids.resize(static_cast<std::size_t>(opts.training_firms));
    auto sub = subset_firms(s, ids);
    Run pre = multistart(sub, start, opts);
    SolverOptions single = opts;
    single.multistart = 1;
    run = multistart(s, ensure_positive(s, to_gamma(pre.x)), single);
  } else {
    run = multistart(s, start, opts);
  }

  ShareFit fit;
  fit.gamma_raw = to_gamma(run.x);
  std::size_t bad = count_nonpositive(s, fit.gamma_raw);
  if (bad > 0)
    throw EstimationError("share regression: log argument non-positive at " +
                          std::to_string(bad) + " records at the final iterate");
  fit.residuals.resize(s.size());
  double sum = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    fit.residuals[i] = std::log(elasticity_at(fit.gamma_raw, s.k[i], s.l[i], s.m[i])) - s.s[i];
    sum += std::exp(fit.residuals[i]);
  }
  fit.E_hat = sum / static_cast<double>(s.size());
  for (int j = 0; j < 10; ++j) fit.gamma[j] = fit.gamma_raw[j] / fit.E_hat;
  fit.objective = run.f;
  fit.converged = run.converged;
  fit.iterations = run.iterations;
  fit.grad_norm = run.grad_norm;
  fit.objective_trace = std::move(run.trace);
  return fit;
}

}  // namespace misalloc
