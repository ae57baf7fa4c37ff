#include "misalloc/event_study.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "misalloc/csv.hpp"
#include "misalloc/inference.hpp"
#include "misalloc/rng.hpp"

namespace misalloc {

namespace {

constexpr double kZ975 = 1.959963984540054;

struct Grid {
  std::vector<std::string> units;
  std::vector<int> times;
  std::vector<char> treated;
  // by [unit][time index]
  std::vector<std::vector<std::optional<double>>> y;
  std::vector<std::vector<std::optional<std::vector<double>>>> x;
};

Grid make_grid(const DidPanel& p) {
  Grid g;
  std::set<std::string> us;
  std::set<int> ts;
  for (const auto& o : p.obs) {
    us.insert(o.unit);
    ts.insert(o.time);
  }
  g.units.assign(us.begin(), us.end());
  g.times.assign(ts.begin(), ts.end());
  g.y.assign(g.units.size(), std::vector<std::optional<double>>(g.times.size()));
  g.x.assign(g.units.size(), std::vector<std::optional<std::vector<double>>>(g.times.size()));
  for (const auto& o : p.obs) {
    const auto u = static_cast<std::size_t>(std::lower_bound(g.units.begin(), g.units.end(), o.unit) - g.units.begin());
    const auto t = static_cast<std::size_t>(std::lower_bound(g.times.begin(), g.times.end(), o.time) - g.times.begin());
    if (g.y[u][t] || g.x[u][t]) throw ValidationError("duplicate DiD observation for " + o.unit);
    g.y[u][t] = o.outcome;
    if (o.covariates.size() == p.covariate_names.size()) g.x[u][t] = o.covariates;
  }
  for (const auto& u : g.units) g.treated.push_back(p.treated_units.count(u) ? 1 : 0);
  return g;
}

struct Pair {
  int base = 0, time = 0;
  std::vector<std::size_t> units;
  std::vector<char> treated;
  std::vector<double> d;
  std::vector<std::vector<double>> x;
  std::size_t n_t = 0, n_c = 0;
};

struct PairFit {
  double att = 0, se = 0;
  std::vector<double> inf, fitted, resid;
};

PairFit fit_pair(const Pair& p, const std::vector<double>& d, bool adjust) {
  const std::size_t n = p.units.size();
  PairFit f;
  f.inf.assign(n, 0.0);
  f.fitted.assign(n, 0.0);
  f.resid.assign(n, 0.0);
  const double nt = static_cast<double>(p.n_t), nc = static_cast<double>(p.n_c);
  if (!adjust) {
    double mt = 0, mc = 0;
    for (std::size_t i = 0; i < n; ++i) (p.treated[i] ? mt : mc) += d[i];
    mt /= nt;
    mc /= nc;
    f.att = mt - mc;
    for (std::size_t i = 0; i < n; ++i) {
      f.fitted[i] = p.treated[i] ? mt : mc;
      f.resid[i] = d[i] - f.fitted[i];
      f.inf[i] = p.treated[i] ? f.resid[i] / nt : -f.resid[i] / nc;
    }
  } else {
    const int k = static_cast<int>(p.x.front().size()) + 1;
    if (p.n_c <= static_cast<std::size_t>(k))
      throw ValidationError("regression adjustment needs more control units than covariates");
    Eigen::MatrixXd zc(static_cast<long>(p.n_c), k);
    Eigen::VectorXd dc(static_cast<long>(p.n_c));
    Eigen::VectorXd zbar_t = Eigen::VectorXd::Zero(k);
    long r = 0;
    auto zrow = [&](std::size_t i) {
      Eigen::VectorXd z(k);
      z[0] = 1;
      for (int j = 1; j < k; ++j) z[j] = p.x[i][static_cast<std::size_t>(j - 1)];
      return z;
    };
    for (std::size_t i = 0; i < n; ++i) {
      if (p.treated[i]) {
        zbar_t += zrow(i);
      } else {
        zc.row(r) = zrow(i).transpose();
        dc[r++] = d[i];
      }
    }
    zbar_t /= nt;
    Eigen::MatrixXd ztz = zc.transpose() * zc;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(ztz);
    if (!lu.isInvertible()) throw ValidationError("regression adjustment: collinear covariates");
    Eigen::MatrixXd ztzi = lu.inverse();
    Eigen::VectorXd b = ztzi * (zc.transpose() * dc);
    double att = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (p.treated[i]) att += d[i] - zrow(i).dot(b);
    att /= nt;
    f.att = att;
    Eigen::VectorXd w = ztzi * zbar_t;
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::VectorXd z = zrow(i);
      const double pred = z.dot(b);
      if (p.treated[i]) {
        f.fitted[i] = pred + att;
        f.resid[i] = d[i] - f.fitted[i];
        f.inf[i] = f.resid[i] / nt;
      } else {
        f.fitted[i] = pred;
        f.resid[i] = d[i] - pred;
        f.inf[i] = -w.dot(z) * f.resid[i];
      }
    }
  }
  double v = 0;
  for (double x : f.inf) v += x * x;
  f.se = std::sqrt(v);
  return f;
}

struct Design {
  Grid grid;
  std::vector<Pair> post, placebo;
  std::size_t dropped = 0;
  std::size_t n_obs = 0;
};

Design make_design(const DidPanel& panel, bool adjust) {
  Design ds;
  ds.grid = make_grid(panel);
  const Grid& g = ds.grid;
  std::size_t nt = 0, nc = 0;
  for (char t : g.treated) (t ? nt : nc) += 1;
  if (nc == 0) throw ValidationError("event study: no never-treated units");
  if (nt == 0) throw ValidationError("event study: no treated units");
  for (const auto& o : panel.obs)
    if (o.outcome) ++ds.n_obs;
  auto tindex = [&](int year) -> long {
    auto it = std::lower_bound(g.times.begin(), g.times.end(), year);
    if (it == g.times.end() || *it != year) return -1;
    return it - g.times.begin();
  };
  auto build = [&](int base, int time) -> std::optional<Pair> {
    long b = tindex(base), t = tindex(time);
    if (b < 0 || t < 0) return std::nullopt;
    Pair p;
    p.base = base;
    p.time = time;
    for (std::size_t u = 0; u < g.units.size(); ++u) {
      const auto& yb = g.y[u][static_cast<std::size_t>(b)];
      const auto& yt = g.y[u][static_cast<std::size_t>(t)];
      if (!yb || !yt) continue;
      if (adjust && !g.x[u][static_cast<std::size_t>(b)]) continue;
      p.units.push_back(u);
      p.treated.push_back(g.treated[u]);
      p.d.push_back(*yt - *yb);
      if (adjust) p.x.push_back(*g.x[u][static_cast<std::size_t>(b)]);
      (g.treated[u] ? p.n_t : p.n_c) += 1;
    }
    if (p.n_t == 0 || p.n_c == 0) return std::nullopt;
    return p;
  };
  const int T0 = panel.treatment_year;
  for (std::size_t i = 0; i < g.times.size(); ++i) {
    const int t = g.times[i];
    if (t >= T0) {
      auto p = build(T0 - 1, t);
      if (p) ds.post.push_back(std::move(*p));
      else ++ds.dropped;
    } else if (t <= T0 - 1 && i > 0) {
      auto p = build(t - 1, t);
      if (p) ds.placebo.push_back(std::move(*p));
      else ++ds.dropped;
    }
  }
  if (ds.post.empty()) throw ValidationError("event study: no post-treatment year with both groups");
  return ds;
}

struct Fits {
  std::vector<PairFit> post, placebo;
  double overall = 0, overall_se = 0;
  std::optional<double> pre, pre_se;
};

// Averages pair estimates and their per-unit influence functions.
std::pair<double, double> aggregate(const std::vector<Pair>& pairs, const std::vector<PairFit>& fits,
                                    std::size_t n_units) {
  std::vector<double> inf(n_units, 0.0);
  double att = 0;
  const double m = static_cast<double>(pairs.size());
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    att += fits[j].att / m;
    for (std::size_t i = 0; i < pairs[j].units.size(); ++i)
      inf[pairs[j].units[i]] += fits[j].inf[i] / m;
  }
  double v = 0;
  for (double x : inf) v += x * x;
  return {att, std::sqrt(v)};
}

Fits fit_all(const Design& ds, const std::vector<std::vector<double>>& post_d,
             const std::vector<std::vector<double>>& pre_d, bool adjust) {
  Fits f;
  for (std::size_t j = 0; j < ds.post.size(); ++j) f.post.push_back(fit_pair(ds.post[j], post_d[j], adjust));
  for (std::size_t j = 0; j < ds.placebo.size(); ++j)
    f.placebo.push_back(fit_pair(ds.placebo[j], pre_d[j], adjust));
  const std::size_t nu = ds.grid.units.size();
  std::tie(f.overall, f.overall_se) = aggregate(ds.post, f.post, nu);
  if (!ds.placebo.empty()) {
    auto [a, s] = aggregate(ds.placebo, f.placebo, nu);
    f.pre = a;
    f.pre_se = s;
  }
  return f;
}

AttResult to_result(const DidPanel& panel, const Design& ds, const Fits& f, bool adjust) {
  AttResult r;
  r.overall = f.overall;
  r.overall_se = f.overall_se;
  r.overall_ci_lo = f.overall - kZ975 * f.overall_se;
  r.overall_ci_hi = f.overall + kZ975 * f.overall_se;
  r.pre = f.pre;
  r.pre_se = f.pre_se;
  auto rows = [&](const std::vector<Pair>& ps, const std::vector<PairFit>& fs) {
    std::vector<YearAtt> out;
    for (std::size_t j = 0; j < ps.size(); ++j) {
      YearAtt y;
      y.time = ps[j].time;
      y.event_time = ps[j].time - panel.treatment_year;
      y.att = fs[j].att;
      y.se = fs[j].se;
      y.ci_lo = y.att - kZ975 * y.se;
      y.ci_hi = y.att + kZ975 * y.se;
      y.n_treated = ps[j].n_t;
      y.n_control = ps[j].n_c;
      out.push_back(y);
    }
    return out;
  };
  r.post = rows(ds.post, f.post);
  r.placebo = rows(ds.placebo, f.placebo);
  r.n_units = ds.grid.units.size();
  r.n_obs = ds.n_obs;
  r.dropped_years = ds.dropped;
  r.covariate_adjusted = adjust;
  return r;
}

std::vector<std::vector<double>> deltas(const std::vector<Pair>& ps) {
  std::vector<std::vector<double>> d;
  for (const auto& p : ps) d.push_back(p.d);
  return d;
}

}  // namespace

AttResult att_group_time(const DidPanel& panel, const AttOptions& opts) {
  const bool adjust = opts.covariates && !panel.covariate_names.empty();
  Design ds = make_design(panel, adjust);
  Fits f = fit_all(ds, deltas(ds.post), deltas(ds.placebo), adjust);
  return to_result(panel, ds, f, adjust);
}

AttResult wild_cluster_bootstrap(const DidPanel& panel, const AttOptions& opts, int n_boot,
                                 std::uint64_t seed, Execution exec) {
  const bool adjust = opts.covariates && !panel.covariate_names.empty();
  Design ds = make_design(panel, adjust);
  if (ds.grid.units.size() < 5) throw ValidationError("wild bootstrap needs at least 5 clusters");
  if (n_boot < 2) throw ValidationError("wild bootstrap needs at least 2 repetitions");
  Fits base = fit_all(ds, deltas(ds.post), deltas(ds.placebo), adjust);
  AttResult r = to_result(panel, ds, base, adjust);

  const std::size_t np = ds.post.size(), nq = ds.placebo.size();
  // Statistic layout: post years, placebo years, overall, pre.
  const std::size_t ns = np + nq + 2;
  std::vector<std::vector<double>> est(static_cast<std::size_t>(n_boot), std::vector<double>(ns));
  std::vector<std::vector<double>> tst(static_cast<std::size_t>(n_boot), std::vector<double>(ns));
  auto tstat = [](double a, double a0, double s) { return s > 0 ? (a - a0) / s : 0.0; };
  auto draw = [&](std::size_t b) {
    Rng rng = make_rng(seed, "wild", b);
    std::vector<double> v(ds.grid.units.size());
    for (auto& x : v) x = (rng() >> 63) ? 1.0 : -1.0;
    auto star = [&](const std::vector<Pair>& ps, const std::vector<PairFit>& fs) {
      std::vector<std::vector<double>> out;
      for (std::size_t j = 0; j < ps.size(); ++j) {
        std::vector<double> d(ps[j].units.size());
        for (std::size_t i = 0; i < d.size(); ++i)
          d[i] = fs[j].fitted[i] + v[ps[j].units[i]] * fs[j].resid[i];
        out.push_back(std::move(d));
      }
      return out;
    };
    Fits f = fit_all(ds, star(ds.post, base.post), star(ds.placebo, base.placebo), adjust);
    auto& e = est[b];
    auto& t = tst[b];
    for (std::size_t j = 0; j < np; ++j) {
      e[j] = f.post[j].att;
      t[j] = tstat(f.post[j].att, base.post[j].att, f.post[j].se);
    }
    for (std::size_t j = 0; j < nq; ++j) {
      e[np + j] = f.placebo[j].att;
      t[np + j] = tstat(f.placebo[j].att, base.placebo[j].att, f.placebo[j].se);
    }
    e[np + nq] = f.overall;
    t[np + nq] = tstat(f.overall, base.overall, f.overall_se);
    e[np + nq + 1] = f.pre.value_or(0.0);
    t[np + nq + 1] = f.pre ? tstat(*f.pre, *base.pre, *f.pre_se) : 0.0;
  };
  if (exec == Execution::Serial) {
    for (std::size_t b = 0; b < static_cast<std::size_t>(n_boot); ++b) draw(b);
  } else {
#pragma omp parallel for schedule(static)
    for (long b = 0; b < n_boot; ++b) draw(static_cast<std::size_t>(b));
  }

  auto summarize = [&](std::size_t j, double att, double analytic_se, double& se, double& lo,
                       double& hi) {
    std::vector<double> e(static_cast<std::size_t>(n_boot)), t(static_cast<std::size_t>(n_boot));
    double m = 0;
    for (std::size_t b = 0; b < e.size(); ++b) {
      e[b] = est[b][j];
      t[b] = tst[b][j];
      m += e[b];
    }
    m /= static_cast<double>(e.size());
    double v = 0;
    for (double x : e) v += (x - m) * (x - m);
    se = std::sqrt(v / static_cast<double>(e.size() - 1));
    std::sort(t.begin(), t.end());
    lo = att - quantile_type7(t, 0.975) * analytic_se;
    hi = att - quantile_type7(t, 0.025) * analytic_se;
  };
  for (std::size_t j = 0; j < np; ++j) {
    auto& y = r.post[j];
    summarize(j, y.att, base.post[j].se, y.se, y.ci_lo, y.ci_hi);
  }
  for (std::size_t j = 0; j < nq; ++j) {
    auto& y = r.placebo[j];
    summarize(np + j, y.att, base.placebo[j].se, y.se, y.ci_lo, y.ci_hi);
  }
  summarize(np + nq, r.overall, base.overall_se, r.overall_se, r.overall_ci_lo, r.overall_ci_hi);
  if (r.pre) {
    double lo, hi, se;
    summarize(np + nq + 1, *r.pre, *base.pre_se, se, lo, hi);
    r.pre_se = se;
  }
  r.inference = "wild cluster bootstrap (Rademacher, " + std::to_string(n_boot) +
                " repetitions, percentile-t)";
  return r;
}

std::string event_study_csv(const AttResult& r) {
  std::ostringstream o;
  o << "event_time,att,se,ci_lo,ci_hi\n";
  std::vector<YearAtt> all = r.placebo;
  all.insert(all.end(), r.post.begin(), r.post.end());
  for (const auto& y : all)
    o << y.event_time << ',' << fmt(y.att) << ',' << fmt(y.se) << ',' << fmt(y.ci_lo) << ','
      << fmt(y.ci_hi) << '\n';
  return o.str();
}

DidPanel did_panel_from_table(const DispersionTable& t, Input x,
                              const std::set<std::string>& treated_countries, int treatment_year,
                              bool with_covariates) {
  DidPanel p;
  p.treatment_year = treatment_year;
  if (with_covariates) p.covariate_names = {"log_vol_nu", "log_hhi"};
  const int j = static_cast<int>(x);
  for (const auto& c : t.cells) {
    DidObs o;
    o.unit = c.country + "|" + c.sector;
    o.time = c.year;
    if (c.var_mp[j] && *c.var_mp[j] > 0) o.outcome = std::log(*c.var_mp[j]);
    if (with_covariates && c.vol_nu && *c.vol_nu > 0)
      o.covariates = {std::log(*c.vol_nu), std::log(c.hhi)};
    if (treated_countries.count(c.country)) p.treated_units.insert(o.unit);
    p.obs.push_back(std::move(o));
  }
  return p;
}

}  // namespace misalloc
