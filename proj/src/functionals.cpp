#include "misalloc/functionals.hpp"

#include <cmath>
#include <sstream>

#include "misalloc/csv.hpp"

namespace misalloc {

std::array<double, 3> elasticities(const GammaVector& g, const AlphaVector& a, double k,
                                   double l, double m) {
  double ek = m * (g[GK] + 2 * g[GKK] * k + g[GKL] * l + 0.5 * g[GKM] * m) - a.k - 2 * a.kk * k -
              a.kl * l;
  double el = m * (g[GL] + 2 * g[GLL] * l + g[GKL] * k + 0.5 * g[GLM] * m) - a.l - 2 * a.ll * l -
              a.kl * k;
  return {ek, el, elasticity_at(g, k, l, m)};
}

FirmFunctionals compute_functionals(const FirmPanel& panel, const ProductionModel& model,
                                    Execution exec) {
  const std::size_t n = panel.size();
  if (model.eps_hat.size() != n || model.omega_hat.size() != n || model.eta_hat.size() != n)
    throw ValidationError("model does not cover every panel record");
  FirmFunctionals out;
  out.rows.resize(n);
  const auto& lag = panel.lag_index();
  auto row = [&](std::size_t i) {
    const auto& r = panel[i];
    if (!r.Y || !r.K || !r.L || !r.M)
      throw ValidationError("record lacking inputs: firm " + r.firm_id);
    FunctionalRow& f = out.rows[i];
    const double k = std::log(*r.K), l = std::log(*r.L), m = std::log(*r.M);
    f.elas = elasticities(model.gamma, model.alpha, k, l, m);
    const double x[3] = {*r.K, *r.L, *r.M};
    for (int j = 0; j < 3; ++j) {
      f.mp[j] = *r.Y / x[j] * f.elas[j];
      if (f.mp[j] > 0) f.log_mp[j] = std::log(f.mp[j]);
    }
    f.omega = model.omega_hat[i];
    f.eps = model.eps_hat[i];
    f.nu = f.omega + f.eps;
    f.eta = model.eta_hat[i];
    if (lag[i] >= 0) {
      const std::size_t j = static_cast<std::size_t>(lag[i]);
      f.omega_lag = model.omega_hat[j];
      f.g_lag = model.delta.mean(*f.omega_lag) - *f.omega_lag;
      f.d_eps = f.eps - model.eps_hat[j];
      f.dnu = f.nu - (model.omega_hat[j] + model.eps_hat[j]);
    }
  };
  if (exec == Execution::Serial) {
    for (std::size_t i = 0; i < n; ++i) row(i);
  } else {
    std::string err;
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(n); ++i) {
      try {
        row(static_cast<std::size_t>(i));
      } catch (const std::exception& e) {
#pragma omp critical
        err = e.what();
      }
    }
    if (!err.empty()) throw ValidationError(err);
  }
  for (const auto& f : out.rows)
    for (int j = 0; j < 3; ++j)
      if (!f.log_mp[j]) ++out.nonpositive_mp[j];
  return out;
}

std::string functionals_csv(const FirmPanel& panel, const FirmFunctionals& f) {
  std::ostringstream o;
  o << "firm_id,year,sector,country,elas_K,elas_L,elas_M,mp_K,mp_L,mp_M,log_mp_K,log_mp_L,"
       "log_mp_M,nu,omega,eps,eta,omega_lag,dnu,d_eps\n";
  for (std::size_t i = 0; i < panel.size(); ++i) {
    const auto& r = panel[i];
    const auto& x = f.rows[i];
    o << csv_field(r.firm_id) << ',' << r.year << ',' << r.sector << ',' << csv_field(r.country);
    for (double v : x.elas) o << ',' << fmt(v);
    for (double v : x.mp) o << ',' << fmt(v);
    for (const auto& v : x.log_mp) o << ',' << fmt(v);
    o << ',' << fmt(x.nu) << ',' << fmt(x.omega) << ',' << fmt(x.eps) << ',' << fmt(x.eta) << ','
      << fmt(x.omega_lag) << ',' << fmt(x.dnu) << ',' << fmt(x.d_eps) << '\n';
  }
  return o.str();
}

ElasticityPartials elasticity_partials(const GammaVector& g, const AlphaVector& a, double k,
                                       double l, double m) {
  ElasticityPartials p;
  auto& d = p.d;
  d[2][0] = g[GK] + 2 * g[GKK] * k + g[GKL] * l + g[GKM] * m;
  d[2][1] = g[GL] + 2 * g[GLL] * l + g[GKL] * k + g[GLM] * m;
  d[2][2] = g[GM] + 2 * g[GMM] * m + g[GKM] * k + g[GLM] * l;
  d[0][0] = 2 * g[GKK] * m - 2 * a.kk;
  d[0][1] = g[GKL] * m - a.kl;
  d[0][2] = d[2][0];
  d[1][0] = g[GKL] * m - a.kl;
  d[1][1] = 2 * g[GLL] * m - 2 * a.ll;
  d[1][2] = d[2][1];
  return p;
}

ElasticityPartials elasticity_partials(const ProductionModel& model, double k, double l,
                                       double m) {
  return elasticity_partials(model.gamma, model.alpha, k, l, m);
}

double markov_prime(const DeltaVector& d, double w) {
  return d[1] + 2 * d[2] * w + 3 * d[3] * w * w;
}

double g_prime(const DeltaVector& d, double w) { return markov_prime(d, w) - 1.0; }

double channel_effect(Input x, Channel theta, const ChannelPoint& pt, const ProductionModel& model,
                      const ChannelInputs& r) {
  if (theta == Channel::ExPost) return 1.0;
  if (x == Input::M) return r.dlogprice;
  const auto e = elasticities(model.gamma, model.alpha, pt.k, pt.l, pt.m);
  const auto P = elasticity_partials(model, pt.k, pt.l, pt.m);
  const int X = static_cast<int>(x);
  if (e[2] == 0 || e[X] == 0)
    throw EstimationError("channel effect: zero elasticity at " + pt.label);
  auto dlog = [&](int input, int var) { return P.d[input][var] / e[input]; };
  const double D = 1 - e[2] - dlog(2, 2);
  if (std::abs(D) < 1e-12)
    throw EstimationError("singularity of the materials fixed-point at " + pt.label);
  const double A = (e[2] + dlog(X, 2)) / D;
  const double own_k = x == Input::K ? 1.0 : 0.0, own_l = x == Input::L ? 1.0 : 0.0;
  const double ck = A * (e[0] + dlog(2, 0)) + e[0] + dlog(X, 0) - own_k;
  const double cl = A * (e[1] + dlog(2, 1)) + e[1] + dlog(X, 1) - own_l;
  const double d_omega = theta == Channel::PastProductivity
                             ? markov_prime(model.delta, pt.omega_lag)
                             : 1.0;
  return ck * r.dk + cl * r.dl - A * r.dlogprice + (1 + A) * d_omega;
}

double aggregate_channel(double d_omega_lag, double d_eta, double d_eps, double gp) {
  if (d_omega_lag == 0 || d_eta == 0 || d_eps == 0 || gp == 0)
    throw ValidationError("aggregate channel: zero component has no reciprocal");
  const double s = gp / d_omega_lag + 1 / d_eta + 1 / d_eps;
  if (s == 0) throw ValidationError("aggregate channel: reciprocals sum to zero");
  return 1 / s;
}

}  // namespace misalloc
