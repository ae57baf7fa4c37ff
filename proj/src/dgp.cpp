#include "misalloc/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <boost/math/tools/roots.hpp>

#include "misalloc/rng.hpp"

namespace misalloc {

double closed_form_constants(double sd) { return std::exp(0.5 * sd * sd); }

double markov_mean(const std::array<double, 4>& d, double w) {
  return d[0] + w * (d[1] + w * (d[2] + w * d[3]));
}

double log_output(const Technology& f, double k, double l, double m) {
  if (auto cd = std::get_if<CobbDouglas>(&f))
    return cd->log_scale + cd->alpha_k * k + cd->alpha_l * l + cd->alpha_m * m;
  const auto& b = std::get<Translog>(f).b;
  return b[0] + b[1] * k + b[2] * l + b[3] * m + b[4] * k * k + b[5] * l * l + b[6] * m * m +
         b[7] * k * l + b[8] * k * m + b[9] * l * m;
}

std::array<double, 3> true_elasticities(const Technology& f, double k, double l, double m) {
  if (auto cd = std::get_if<CobbDouglas>(&f)) return {cd->alpha_k, cd->alpha_l, cd->alpha_m};
  const auto& b = std::get<Translog>(f).b;
  return {b[1] + 2 * b[4] * k + b[7] * l + b[8] * m, b[2] + 2 * b[5] * l + b[7] * k + b[9] * m,
          b[3] + 2 * b[6] * m + b[8] * k + b[9] * l};
}

void validate(const DgpSpec& spec) {
  if (spec.sd_eta < 0 || spec.sd_eps < 0) throw ValidationError("shock sds must be >= 0");
  if (spec.n_firms < 1 || spec.n_years < 1 || spec.burn_in < 0)
    throw ValidationError("n_firms, n_years must be positive and burn_in non-negative");
  const auto& d = spec.markov;
  bool linear = d[2] == 0.0 && d[3] == 0.0;
  if (linear && std::abs(d[1]) >= 1.0) {
    if (spec.sd_eta > 0)
      throw ValidationError("non-stationary Markov process: |delta1| >= 1 with sd_eta > 0");
    if (!spec.omega_init && !spec.omega0_sd)
      throw ValidationError("|delta1| >= 1 requires omega_init or omega0_sd");
  }
  if (spec.prices.material_sd < 0 || spec.prices.wage_sd < 0 || spec.policy.k_sd < 0 ||
      spec.policy.l_sd < 0)
    throw ValidationError("price and policy noise sds must be >= 0");
  if (spec.policy.tau_k <= -1 || spec.policy.tau_l <= -1)
    throw ValidationError("wedges must exceed -1");
  if (auto cd = std::get_if<CobbDouglas>(&spec.technology)) {
    if (!(cd->alpha_m > 0 && cd->alpha_m < 1)) throw ValidationError("alpha_M must lie in (0, 1)");
    if (spec.policy.labor == LaborRule::FlexibleFoc &&
        !(cd->alpha_l > 0 && cd->alpha_l + cd->alpha_m < 1))
      throw ValidationError("flexible labor requires 0 < alpha_L and alpha_L + alpha_M < 1");
  } else if (spec.policy.labor == LaborRule::FlexibleFoc) {
    throw ValidationError("flexible labor is available for Cobb-Douglas technology only");
  }
  if (spec.sectors.empty() || spec.countries.empty())
    throw ValidationError("sectors and countries must be non-empty");
  for (const auto& s : spec.sectors)
    if (s.size() < 3 || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }))
      throw ValidationError("sector codes must have at least 3 digits: " + s);
  if (spec.regime && spec.regime->k_sd_scale < 0) throw ValidationError("k_sd_scale must be >= 0");
}

static double solve_translog_m(const Translog& tl, double k, double l, double omega, double lnE,
                               double lrho, const std::string& where) {
  const auto& b = tl.b;
  auto elas = [&](double m) { return b[3] + 2 * b[6] * m + b[8] * k + b[9] * l; };
  auto h = [&](double m) {
    double e = elas(m);
    if (!(e > 0)) return -std::numeric_limits<double>::infinity();
    return log_output(tl, k, l, m) + omega - m + std::log(e) + lnE - lrho;
  };
  // Start from the Cobb-Douglas guess with the elasticity at m = 0.
  double e0 = std::max(elas(0.0), 0.05);
  double m0 = (std::log(e0) + lnE + log_output(tl, k, l, 0.0) + omega - lrho) / (1.0 - std::min(e0, 0.95));
  for (int i = 0; i < 200 && std::isinf(h(m0)); ++i) m0 -= 0.5;
  double lo = m0, hlo = h(lo);
  for (int i = 1; i <= 200 && !(hlo > 0); ++i) {
    lo -= 0.25 * i;
    hlo = h(lo);
  }
  double prev = m0, hi = m0, hhi = h(hi);
  for (int i = 1; i <= 200 && !(hhi < 0); ++i) {
    prev = hi;
    hi += 0.25 * i;
    hhi = h(hi);
  }
  if (!(hlo > 0) || !(hhi < 0))
    throw EstimationError("translog materials FOC: no bracket at " + where);
  if (std::isinf(hhi)) {
    // h -> -inf at the edge of the positive-elasticity region; find a finite
    // negative point between the last non-negative point and the edge.
    double a = prev, c = hi;
    for (int i = 0; i < 200; ++i) {
      double mid = 0.5 * (a + c), hm = h(mid);
      if (std::isinf(hm)) {
        c = mid;
      } else if (hm < 0) {
        c = mid;
        break;
      } else {
        a = mid;
      }
    }
    if (std::isinf(h(c))) throw EstimationError("translog materials FOC: no bracket at " + where);
    hi = c;
  }
  std::uintmax_t iters = 200;
  auto tol = [](double x, double y) { return std::abs(x - y) < 1e-10; };
  try {
    auto r = boost::math::tools::toms748_solve(h, lo, hi, tol, iters);
    if (iters >= 200) throw EstimationError("translog materials FOC did not converge at " + where);
    return 0.5 * (r.first + r.second);
  } catch (const boost::math::evaluation_error&) {
    throw EstimationError("translog materials FOC did not converge at " + where);
  }
}

FirmYearOutcome solve_firm_year(const DgpSpec& spec, const FirmYearShocks& s,
                                const std::string& where) {
  const auto& pp = spec.prices;
  const auto& pol = spec.policy;
  FirmYearOutcome o;
  const double t = s.t;
  const double lnE = 0.5 * spec.sd_eps * spec.sd_eps;
  o.log_price = pp.price_const + pp.price_trend * t;
  o.log_wage = pp.wage_const + pp.wage_trend * t + pp.wage_sd * s.z_wage;
  o.k = pol.k_const + pol.k_omega * s.omega_lag - std::log1p(pol.tau_k) +
        pol.k_sd * s.k_sd_scale * s.z_k;
  const double lrho_mean = pp.material_const + pp.material_omega * s.omega_lag + pp.material_trend * t;
  o.log_material_price = lrho_mean + pp.material_sd * s.z_material;
  const double mean_omega = markov_mean(spec.markov, s.omega_lag);

  if (pol.labor == LaborRule::Predetermined) {
    o.l = pol.l_const + pol.l_omega * s.omega_lag - std::log1p(pol.tau_l) + pol.l_sd * s.z_l;
  } else {
    const auto& cd = std::get<CobbDouglas>(spec.technology);
    const double am = cd.alpha_m, q = am / (1 - am);
    // ln E[Y | info at t-1] = B + alpha_L/(1-alpha_M) * l
    const double B = (cd.log_scale + cd.alpha_k * o.k + mean_omega) / (1 - am) +
                     q * (std::log(am) + lnE - lrho_mean) +
                     0.5 * spec.sd_eta * spec.sd_eta / ((1 - am) * (1 - am)) +
                     0.5 * q * q * pp.material_sd * pp.material_sd + lnE;
    const double bl = cd.alpha_l / (1 - am);
    o.l = (std::log(cd.alpha_l) + B - o.log_wage - std::log1p(pol.tau_l)) / (1 - bl);
  }

  o.omega = mean_omega + s.eta;
  if (auto cd = std::get_if<CobbDouglas>(&spec.technology)) {
    o.m = (std::log(cd->alpha_m) + lnE + cd->log_scale + cd->alpha_k * o.k + cd->alpha_l * o.l +
           o.omega - o.log_material_price) /
          (1 - cd->alpha_m);
  } else {
    o.m = solve_translog_m(std::get<Translog>(spec.technology), o.k, o.l, o.omega, lnE,
                           o.log_material_price, where);
  }
  o.y = log_output(spec.technology, o.k, o.l, o.m) + o.omega + s.eps;

  auto& tr = o.truth;
  tr.omega = o.omega;
  tr.omega_lag = s.omega_lag;
  tr.eta = s.eta;
  tr.eps = s.eps;
  tr.elas = true_elasticities(spec.technology, o.k, o.l, o.m);
  const double x[3] = {o.k, o.l, o.m};
  for (int j = 0; j < 3; ++j)
    tr.log_mp[j] = tr.elas[j] > 0 ? o.y - x[j] + std::log(tr.elas[j])
                                  : std::numeric_limits<double>::quiet_NaN();
  tr.log_material_price = o.log_material_price;
  tr.log_wage = o.log_wage;
  return o;
}

Simulation simulate(const DgpSpec& spec, Execution exec) {
  validate(spec);
  const auto& d = spec.markov;
  const bool stationary = std::abs(d[1]) < 1.0;
  const double mu0 = spec.omega_init ? *spec.omega_init : (stationary ? d[0] / (1 - d[1]) : 0.0);
  const double sd0 = spec.omega0_sd ? *spec.omega0_sd
                     : (stationary && !spec.omega_init ? spec.sd_eta / std::sqrt(1 - d[1] * d[1]) : 0.0);

  const std::size_t nf = static_cast<std::size_t>(spec.n_firms);
  const std::size_t ny = static_cast<std::size_t>(spec.n_years);
  std::vector<FirmYear> records(nf * ny);
  std::vector<TruthRecord> truth(nf * ny);
  std::vector<std::string> errors(nf);

  auto run_firm = [&](std::size_t f) {
    Rng rng = make_rng(spec.seed, "firm", f);
    char id[32];
    std::snprintf(id, sizeof(id), "F%07zu", f);
    const std::size_t nc = spec.countries.size();
    const std::string& country = spec.countries[f % nc];
    const std::string& sector = spec.sectors[(f / nc) % spec.sectors.size()];
    bool treated = false;
    if (spec.regime)
      treated = std::find(spec.regime->countries.begin(), spec.regime->countries.end(), country) !=
                spec.regime->countries.end();
    double omega = mu0 + sd0 * std_normal(rng);
    for (int t = -spec.burn_in; t < spec.n_years; ++t) {
      FirmYearShocks s;
      s.omega_lag = omega;
      s.z_k = std_normal(rng);
      s.z_l = std_normal(rng);
      s.z_wage = std_normal(rng);
      s.z_material = std_normal(rng);
      s.eta = spec.sd_eta * std_normal(rng);
      s.eps = spec.sd_eps * std_normal(rng);
      s.t = t;
      const int year = spec.first_year + t;
      if (treated && year >= spec.regime->start_year) s.k_sd_scale = spec.regime->k_sd_scale;
      auto o = solve_firm_year(spec, s, std::string(id) + " year " + std::to_string(year));
      omega = o.omega;
      if (t < 0) continue;
      const std::size_t i = f * ny + static_cast<std::size_t>(t);
      FirmYear& r = records[i];
      r.firm_id = id;
      r.year = year;
      r.sector = sector;
      r.country = country;
      r.Y = std::exp(o.y);
      r.K = std::exp(o.k);
      r.L = std::exp(o.l);
      r.M = std::exp(o.m);
      r.output_price = std::exp(o.log_price);
      r.materials_cost = std::exp(o.log_price + o.log_material_price + o.m);
      r.wage_bill = std::exp(o.log_price + o.log_wage + o.l);
      truth[i] = o.truth;
    }
  };

  if (exec == Execution::Serial) {
    for (std::size_t f = 0; f < nf; ++f) run_firm(f);
  } else {
#pragma omp parallel for schedule(dynamic, 8)
    for (long f = 0; f < static_cast<long>(nf); ++f) {
      try {
        run_firm(static_cast<std::size_t>(f));
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(f)] = e.what();
      }
    }
    for (const auto& e : errors)
      if (!e.empty()) throw EstimationError(e);
  }
  Simulation sim;
  sim.panel = FirmPanel(std::move(records), 3);
  sim.truth = std::move(truth);
  return sim;
}

}  // namespace misalloc
