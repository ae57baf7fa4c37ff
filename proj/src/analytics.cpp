#include "misalloc/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include <Eigen/Dense>

#include "misalloc/common.hpp"
#include "misalloc/csv.hpp"
#include "misalloc/optim.hpp"

namespace misalloc {

FeRegressionResult fe_regress(const std::vector<double>& y,
                              const std::vector<std::pair<std::string, std::vector<double>>>& x,
                              const std::vector<std::string>& fe,
                              const std::vector<std::string>& cluster) {
  const std::size_t n0 = y.size();
  if (fe.size() != n0 || cluster.size() != n0) throw ValidationError("fe_regress: size mismatch");
  for (const auto& c : x)
    if (c.second.size() != n0) throw ValidationError("fe_regress: size mismatch in " + c.first);
  if (x.empty()) throw ValidationError("fe_regress: no regressors");

  std::unordered_map<std::string, std::size_t> cell_id;
  std::vector<std::size_t> cell(n0);
  for (std::size_t i = 0; i < n0; ++i)
    cell[i] = cell_id.emplace(fe[i], cell_id.size()).first->second;
  std::vector<std::size_t> count(cell_id.size(), 0);
  for (auto c : cell) ++count[c];

  FeRegressionResult res;
  for (std::size_t i = 0; i < n0; ++i) {
    if (count[cell[i]] >= 2) res.kept.push_back(i);
    else ++res.singletons_dropped;
  }
  if (res.kept.empty()) throw EstimationError("fe_regress: all fixed-effect cells are singletons");
  const std::size_t n = res.kept.size();
  const int p = static_cast<int>(x.size());

  std::vector<double> ysum(cell_id.size(), 0.0);
  Eigen::MatrixXd xsum = Eigen::MatrixXd::Zero(static_cast<long>(cell_id.size()), p);
  for (auto i : res.kept) {
    ysum[cell[i]] += y[i];
    for (int j = 0; j < p; ++j) xsum(static_cast<long>(cell[i]), j) += x[j].second[i];
  }
  Eigen::VectorXd yt(n);
  Eigen::MatrixXd Xt(n, p);
  Eigen::MatrixXd Xraw(n, p);
  std::size_t used_cells = 0;
  for (std::size_t c = 0; c < count.size(); ++c)
    if (count[c] >= 2) ++used_cells;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = res.kept[r];
    const double cn = static_cast<double>(count[cell[i]]);
    yt[static_cast<long>(r)] = y[i] - ysum[cell[i]] / cn;
    for (int j = 0; j < p; ++j) {
      Xraw(static_cast<long>(r), j) = x[j].second[i];
      Xt(static_cast<long>(r), j) = x[j].second[i] - xsum(static_cast<long>(cell[i]), j) / cn;
    }
  }
  for (int j = 0; j < p; ++j) {
    const double raw = Xraw.col(j).norm();
    if (Xt.col(j).norm() <= 1e-10 * std::max(raw, 1e-300))
      throw EstimationError("fe_regress: collinear column (no within-cell variation): " + x[j].first);
  }
  Eigen::VectorXd cn = Xt.colwise().norm();
  Eigen::MatrixXd Xs = Xt * cn.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xs);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    std::string cols;
    for (long j = qr.rank(); j < p; ++j) {
      if (!cols.empty()) cols += ", ";
      cols += x[static_cast<std::size_t>(qr.colsPermutation().indices()[j])].first;
    }
    throw EstimationError("fe_regress: collinear columns: " + cols);
  }
  const std::size_t K = static_cast<std::size_t>(p) + used_cells;
  if (n <= K) throw EstimationError("fe_regress: too few observations for parameters");

  Eigen::MatrixXd XtX = Xt.transpose() * Xt;
  Eigen::MatrixXd XtXi = XtX.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::VectorXd beta = XtXi * (Xt.transpose() * yt);
  Eigen::VectorXd u = yt - Xt * beta;

  std::unordered_map<std::string, std::size_t> cl_id;
  std::vector<Eigen::VectorXd> score;
  for (std::size_t r = 0; r < n; ++r) {
    auto it = cl_id.emplace(cluster[res.kept[r]], cl_id.size());
    if (it.second) score.push_back(Eigen::VectorXd::Zero(p));
    score[it.first->second] += Xt.row(static_cast<long>(r)).transpose() * u[static_cast<long>(r)];
  }
  const double G = static_cast<double>(score.size());
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
  for (const auto& s : score) meat += s * s.transpose();
  const double dn = static_cast<double>(n), dk = static_cast<double>(K);
  const double factor = G > 1 ? G / (G - 1) * (dn - 1) / (dn - dk) : 0.0;
  Eigen::MatrixXd V = factor * XtXi * meat * XtXi;

  double ybar = 0;
  for (auto i : res.kept) ybar += y[i];
  ybar /= dn;
  double tss = 0;
  for (auto i : res.kept) tss += (y[i] - ybar) * (y[i] - ybar);
  const double ssr = u.squaredNorm();
  res.r2 = tss > 0 ? 1 - ssr / tss : 1.0;
  res.r2 = std::min(1.0, std::max(0.0, res.r2));
  res.adj_r2 = 1 - (1 - res.r2) * (dn - 1) / (dn - dk);
  for (int j = 0; j < p; ++j) {
    res.names.push_back(x[j].first);
    res.coef.push_back(beta[j]);
    res.se.push_back(std::sqrt(std::max(0.0, V(j, j))));
  }
  res.n = n;
  res.n_cells = used_cells;
  res.n_clusters = score.size();
  res.residuals.assign(u.data(), u.data() + u.size());
  return res;
}

namespace {

std::optional<double> sample_var(const std::vector<double>& v) {
  if (v.size() < 2) return std::nullopt;
  double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

double sample_cov(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / (n - 1);
}

std::optional<double> opt_sqrt(const std::optional<double>& v) {
  if (!v) return std::nullopt;
  return std::sqrt(*v);
}

}  // namespace

DispersionTable build_dispersion_table(const FirmPanel& panel, const FirmFunctionals& f) {
  if (f.rows.size() != panel.size()) throw ValidationError("functionals do not match panel");
  std::map<std::tuple<std::string, std::string, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < panel.size(); ++i)
    groups[{panel[i].country, panel.sector_cell(i), panel[i].year}].push_back(i);
  DispersionTable t;
  for (const auto& [key, idx] : groups) {
    if (idx.size() < 2) {
      ++t.excluded_cells;
      continue;
    }
    DispersionCell c;
    std::tie(c.country, c.sector, c.year) = key;
    c.n = idx.size();
    std::vector<double> rev;
    std::array<std::vector<double>, 3> mp;
    std::vector<double> nu, dnu, w, e, de;
    for (auto i : idx) {
      const auto& r = f.rows[i];
      rev.push_back(panel[i].output_price * panel[i].Y.value_or(0.0));
      for (int j = 0; j < 3; ++j)
        if (r.log_mp[j]) mp[j].push_back(*r.log_mp[j]);
      nu.push_back(r.nu);
      if (r.dnu) dnu.push_back(*r.dnu);
      if (r.omega_lag && r.eta && r.d_eps) {
        w.push_back(*r.omega_lag);
        e.push_back(*r.eta);
        de.push_back(*r.d_eps);
      }
    }
    for (int j = 0; j < 3; ++j) {
      c.var_mp[j] = sample_var(mp[j]);
      c.sd_mp[j] = opt_sqrt(c.var_mp[j]);
    }
    c.vol_nu = sample_var(dnu);
    c.sd_dnu = opt_sqrt(c.vol_nu);
    c.sd_nu = opt_sqrt(sample_var(nu));
    c.var_omega_lag = sample_var(w);
    c.var_eta = sample_var(e);
    c.var_deps = sample_var(de);
    if (w.size() >= 2) {
      c.cov_omega_eta = sample_cov(w, e);
      c.cov_omega_deps = sample_cov(w, de);
      c.cov_eta_deps = sample_cov(e, de);
    }
    c.revenue = std::accumulate(rev.begin(), rev.end(), 0.0);
    c.hhi = hhi(rev);
    t.cells.push_back(std::move(c));
  }
  std::map<std::pair<std::string, int>, double> total;
  for (const auto& c : t.cells) total[{c.country, c.year}] += c.revenue;
  for (auto& c : t.cells) c.weight = c.revenue / total[{c.country, c.year}];
  return t;
}

std::string dispersion_csv(const DispersionTable& t) {
  std::ostringstream o;
  o << "country,sector,year,n,var_mp_K,var_mp_L,var_mp_M,vol_nu,sd_nu,var_omega_lag,var_eta,"
       "var_deps,cov_omega_eta,cov_omega_deps,cov_eta_deps,hhi,revenue,weight\n";
  for (const auto& c : t.cells) {
    o << csv_field(c.country) << ',' << c.sector << ',' << c.year << ',' << c.n;
    for (const auto& v : c.var_mp) o << ',' << fmt(v);
    o << ',' << fmt(c.vol_nu) << ',' << fmt(c.sd_nu) << ',' << fmt(c.var_omega_lag) << ','
      << fmt(c.var_eta) << ',' << fmt(c.var_deps) << ',' << fmt(c.cov_omega_eta) << ','
      << fmt(c.cov_omega_deps) << ',' << fmt(c.cov_eta_deps) << ',' << fmt(c.hhi) << ','
      << fmt(c.revenue) << ',' << fmt(c.weight) << '\n';
  }
  return o.str();
}

namespace {

template <class Proj>
S2Result s2_generic(const DispersionTable& t, Input x, Proj proj) {
  const int j = static_cast<int>(x);
  double num = 0, den = 0;
  S2Result r;
  for (const auto& c : t.cells) {
    if (!c.var_mp[j]) continue;
    std::optional<double> p = proj(c);
    if (!p) continue;
    const double v = *c.var_mp[j];
    num += (v - *p) * (v - *p);
    den += v * v;
    ++r.n_cells;
  }
  if (r.n_cells == 0) throw ValidationError("S2: no cells with the required statistics");
  if (den == 0) throw ValidationError("S2: marginal-product variances are all zero");
  r.value = 1 - num / den;
  r.uninformative = r.value < 0;
  return r;
}

}  // namespace

S2Result s2_total(const DispersionTable& t, Input x,
                  const std::map<std::string, double>& beta_dev) {
  return s2_generic(t, x, [&](const DispersionCell& c) -> std::optional<double> {
    auto it = beta_dev.find(c.sector);
    if (it == beta_dev.end() || !c.vol_nu) return std::nullopt;
    return it->second * it->second * *c.vol_nu;
  });
}

std::array<S2Result, 3> s2_channels(const DispersionTable& t, Input x, const ChannelBetas& b) {
  std::array<S2Result, 3> out;
  for (int ch = 0; ch < 3; ++ch) {
    out[ch] = s2_generic(t, x, [&](const DispersionCell& c) -> std::optional<double> {
      auto it = b.find(c.sector);
      const std::optional<double>& v =
          ch == 0 ? c.var_omega_lag : (ch == 1 ? c.var_eta : c.var_deps);
      if (it == b.end() || !v) return std::nullopt;
      const double beta = it->second[ch];
      return beta * beta * *v;
    });
  }
  return out;
}

std::array<S2Result, 3> s2_channels_cov(const DispersionTable& t, Input x, const ChannelBetas& b) {
  std::array<S2Result, 3> out;
  for (int ch = 0; ch < 3; ++ch) {
    out[ch] = s2_generic(t, x, [&](const DispersionCell& c) -> std::optional<double> {
      auto it = b.find(c.sector);
      if (it == b.end() || !c.var_omega_lag || !c.cov_omega_eta) return std::nullopt;
      const auto& be = it->second;
      const double var[3] = {*c.var_omega_lag, *c.var_eta, *c.var_deps};
      // cov[a][b] for the channel pair (a, b)
      const double cov01 = *c.cov_omega_eta, cov02 = *c.cov_omega_deps, cov12 = *c.cov_eta_deps;
      const double cov[3][3] = {{0, cov01, cov02}, {cov01, 0, cov12}, {cov02, cov12, 0}};
      double p = be[ch] * be[ch] * var[ch];
      for (int o = 0; o < 3; ++o)
        if (o != ch) p += be[ch] * be[o] * cov[ch][o];
      return p;
    });
  }
  return out;
}

std::map<std::string, FeRegressionResult> sector_regressions(const FirmPanel& panel,
                                                             const FirmFunctionals& f, Input x,
                                                             bool channels) {
  const int j = static_cast<int>(x);
  struct Data {
    std::vector<double> y, a, b, c;
    std::vector<std::string> fe, cl;
  };
  std::map<std::string, Data> by;
  for (std::size_t i = 0; i < panel.size(); ++i) {
    const auto& r = f.rows[i];
    if (!r.log_mp[j]) continue;
    if (channels ? !(r.omega_lag && r.eta && r.d_eps) : !r.dnu) continue;
    auto& d = by[panel.sector_cell(i)];
    d.y.push_back(*r.log_mp[j]);
    if (channels) {
      d.a.push_back(*r.omega_lag);
      d.b.push_back(*r.eta);
      d.c.push_back(*r.d_eps);
    } else {
      d.a.push_back(*r.dnu);
    }
    d.fe.push_back(panel[i].country + "|" + panel.sector_cell(i) + "|" + std::to_string(panel[i].year));
    d.cl.push_back(panel[i].firm_id);
  }
  std::map<std::string, FeRegressionResult> out;
  for (auto& [s, d] : by) {
    std::vector<std::pair<std::string, std::vector<double>>> xs;
    if (channels) {
      xs = {{"omega_lag", d.a}, {"eta", d.b}, {"d_eps", d.c}};
    } else {
      xs = {{"dnu", d.a}};
    }
    try {
      out.emplace(s, fe_regress(d.y, xs, d.fe, d.cl));
    } catch (const EstimationError&) {
      // sector without a usable regression has no beta
    }
  }
  return out;
}

std::map<std::string, double> sector_betas(const FirmPanel& panel, const FirmFunctionals& f,
                                           Input x) {
  std::map<std::string, double> out;
  for (const auto& [s, r] : sector_regressions(panel, f, x, false)) out[s] = r.coef[0];
  return out;
}

ChannelBetas sector_channel_betas(const FirmPanel& panel, const FirmFunctionals& f, Input x) {
  ChannelBetas out;
  for (const auto& [s, r] : sector_regressions(panel, f, x, true))
    out[s] = {r.coef[0], r.coef[1], r.coef[2]};
  return out;
}

double gev_loglik(const std::vector<double>& x, double xi, double sigma, double mu) {
  if (!(sigma > 0)) return -std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(x.size());
  double ll = -n * std::log(sigma);
  if (std::abs(xi) < 1e-6) {
    for (double v : x) {
      const double z = (v - mu) / sigma;
      ll -= z + std::exp(-z);
    }
    return ll;
  }
  for (double v : x) {
    const double t = 1 + xi * (v - mu) / sigma;
    if (!(t > 0)) return -std::numeric_limits<double>::infinity();
    const double lt = std::log(t);
    ll -= (1 + 1 / xi) * lt + std::exp(-lt / xi);
  }
  return ll;
}

std::optional<double> gev_mean(double xi, double sigma, double mu) {
  if (!(xi > 0 && xi < 1)) return std::nullopt;
  return mu + sigma * (std::tgamma(1 - xi) - 1) / xi;
}

double gev_sample(Rng& rng, double xi, double sigma, double mu) {
  double u = uniform01(rng);
  while (u <= 0) u = uniform01(rng);
  const double e = -std::log(u);
  if (std::abs(xi) < 1e-12) return mu - sigma * std::log(e);
  return mu + sigma * (std::pow(e, -xi) - 1) / xi;
}

GevFit fit_gev(const std::vector<double>& samples) {
  if (samples.size() < 50) throw ValidationError("GEV fit needs at least 50 samples");
  std::vector<double> x = samples;
  std::sort(x.begin(), x.end());
  if (x.front() == x.back()) throw ValidationError("GEV fit: degenerate sample (zero variance)");
  // Probability-weighted moments start.
  const double n = static_cast<double>(x.size());
  double b0 = 0, b1 = 0, b2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double di = static_cast<double>(i);
    b0 += x[i];
    b1 += di / (n - 1) * x[i];
    b2 += di * (di - 1) / ((n - 1) * (n - 2)) * x[i];
  }
  b0 /= n;
  b1 /= n;
  b2 /= n;
  const double c = (2 * b1 - b0) / (3 * b2 - b0) - std::log(2.0) / std::log(3.0);
  double kk = 7.8590 * c + 2.9554 * c * c;
  if (std::abs(kk) < 1e-6) kk = 1e-6;
  kk = std::max(-0.9, std::min(0.9, kk));
  double sigma0 = (2 * b1 - b0) * kk / (std::tgamma(1 + kk) * (1 - std::pow(2.0, -kk)));
  if (!(sigma0 > 0)) sigma0 = std::sqrt(6.0 * *sample_var(x)) / 3.14159265358979;
  double mu0 = b0 + sigma0 * (std::tgamma(1 + kk) - 1) / kk;
  double xi0 = -kk;

  auto nll = [&](const Eigen::VectorXd& p) {
    if (p[0] <= -0.99 || p[0] >= 2.0) return std::numeric_limits<double>::infinity();
    return -gev_loglik(x, p[0], std::exp(p[1]), p[2]) / n;
  };
  Eigen::VectorXd p0(3);
  p0 << xi0, std::log(sigma0), mu0;
  if (!std::isfinite(nll(p0))) {
    p0[0] = 0.0;
    p0[2] = b0 - 0.5772 * sigma0;
  }
  auto res = bfgs(nll, p0, 1e-9, 500);
  GevFit fit;
  fit.xi = res.x[0];
  fit.sigma = std::exp(res.x[1]);
  fit.mu = res.x[2];
  fit.loglik = gev_loglik(x, fit.xi, fit.sigma, fit.mu);
  fit.converged = res.converged;
  fit.mean = gev_mean(fit.xi, fit.sigma, fit.mu);
  auto nll_nat = [&](const Eigen::VectorXd& p) { return -gev_loglik(x, p[0], p[1], p[2]); };
  Eigen::VectorXd pn(3);
  pn << fit.xi, fit.sigma, fit.mu;
  Eigen::MatrixXd H = numeric_hessian(nll_nat, pn, 1e-4);
  Eigen::MatrixXd cov = H.inverse();
  fit.se_xi = std::sqrt(std::max(0.0, cov(0, 0)));
  fit.se_sigma = std::sqrt(std::max(0.0, cov(1, 1)));
  fit.se_mu = std::sqrt(std::max(0.0, cov(2, 2)));
  return fit;
}

double hhi(const std::vector<double>& revenues) {
  double total = 0;
  for (double r : revenues) {
    if (r < 0) throw ValidationError("hhi: negative revenue");
    total += r;
  }
  if (!(total > 0)) throw ValidationError("hhi: all revenues are zero");
  double h = 0;
  for (double r : revenues) h += (r / total) * (r / total);
  return h;
}

std::vector<SeriesRow> dispersion_series(const DispersionTable& t, std::optional<int> base_year) {
  if (t.cells.empty()) throw ValidationError("dispersion series: no cells");
  struct Acc {
    std::array<double, 5> num{}, den{};
  };
  std::map<std::pair<std::string, int>, Acc> acc;
  for (const auto& c : t.cells) {
    auto& a = acc[{c.country, c.year}];
    const std::optional<double> stats[5] = {c.sd_mp[0], c.sd_mp[1], c.sd_mp[2], c.sd_nu, c.sd_dnu};
    for (int j = 0; j < 5; ++j)
      if (stats[j]) {
        a.num[j] += c.weight * *stats[j];
        a.den[j] += c.weight;
      }
  }
  std::vector<SeriesRow> rows;
  for (const auto& [key, a] : acc) {
    SeriesRow r;
    r.country = key.first;
    r.year = key.second;
    std::optional<double> v[5];
    for (int j = 0; j < 5; ++j)
      if (a.den[j] > 0) v[j] = a.num[j] / a.den[j];
    r.sd_mp = {v[0], v[1], v[2]};
    r.sd_nu = v[3];
    r.sd_dnu = v[4];
    rows.push_back(r);
  }
  if (base_year) {
    std::map<std::string, const SeriesRow*> base;
    for (const auto& r : rows)
      if (r.year == *base_year) base[r.country] = &r;
    std::vector<SeriesRow> out = rows;
    for (auto& r : out) {
      auto it = base.find(r.country);
      if (it == base.end())
        throw ValidationError("dispersion series: base year " + std::to_string(*base_year) +
                              " missing for " + r.country);
      const SeriesRow& b = *it->second;
      auto norm = [](std::optional<double>& v, const std::optional<double>& bv) {
        if (v && bv && *bv != 0) v = *v / *bv;
        else v.reset();
      };
      for (int j = 0; j < 3; ++j) norm(r.sd_mp[j], b.sd_mp[j]);
      norm(r.sd_nu, b.sd_nu);
      norm(r.sd_dnu, b.sd_dnu);
    }
    return out;
  }
  return rows;
}

std::string series_csv(const std::vector<SeriesRow>& rows) {
  std::ostringstream o;
  o << "country,year,sd_mp_K,sd_mp_L,sd_mp_M,sd_nu,sd_dnu\n";
  for (const auto& r : rows)
    o << csv_field(r.country) << ',' << r.year << ',' << fmt(r.sd_mp[0]) << ','
      << fmt(r.sd_mp[1]) << ',' << fmt(r.sd_mp[2]) << ',' << fmt(r.sd_nu) << ',' << fmt(r.sd_dnu)
      << '\n';
  return o.str();
}

}  // namespace misalloc
