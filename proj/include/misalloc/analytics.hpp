#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "misalloc/functionals.hpp"
#include "misalloc/panel.hpp"
#include "misalloc/rng.hpp"

namespace misalloc {

struct FeRegressionResult {
  std::vector<std::string> names;
  std::vector<double> coef;
  std::vector<double> se;  // cluster-robust by firm
  double r2 = 0, adj_r2 = 0;
  std::size_t n = 0;
  std::size_t n_cells = 0;
  std::size_t singletons_dropped = 0;
  std::size_t n_clusters = 0;
  std::vector<double> residuals;  // for the retained records, in input order
  std::vector<std::size_t> kept;  // input indices retained
  std::string se_note = "cluster-robust, G/(G-1) x (N-1)/(N-K), K = slopes + FE cells";
};

FeRegressionResult fe_regress(const std::vector<double>& y,
                              const std::vector<std::pair<std::string, std::vector<double>>>& x,
                              const std::vector<std::string>& fe,
                              const std::vector<std::string>& cluster);

struct DispersionCell {
  std::string country, sector;
  int year = 0;
  std::size_t n = 0;
  std::array<std::optional<double>, 3> var_mp, sd_mp;
  std::optional<double> vol_nu;  // Var(dnu)
  std::optional<double> sd_nu, sd_dnu;
  std::optional<double> var_omega_lag, var_eta, var_deps;
  std::optional<double> cov_omega_eta, cov_omega_deps, cov_eta_deps;
  double hhi = 1;
  double revenue = 0;
  double weight = 0;  // revenue share within (country, year)
};

struct DispersionTable {
  std::vector<DispersionCell> cells;
  std::size_t excluded_cells = 0;  // cells with fewer than 2 firms
};

DispersionTable build_dispersion_table(const FirmPanel& panel, const FirmFunctionals& f);
std::string dispersion_csv(const DispersionTable& t);

struct S2Result {
  double value = 0;
  bool uninformative = false;  // negative values
  std::size_t n_cells = 0;
};

S2Result s2_total(const DispersionTable& t, Input x, const std::map<std::string, double>& beta_dev);

// Per-sector (beta_omega, beta_eta, beta_deps).
using ChannelBetas = std::map<std::string, std::array<double, 3>>;

std::array<S2Result, 3> s2_channels(const DispersionTable& t, Input x, const ChannelBetas& b);
std::array<S2Result, 3> s2_channels_cov(const DispersionTable& t, Input x, const ChannelBetas& b);

// Per-sector regressions with sector-time (country-sector-time) fixed effects.
std::map<std::string, FeRegressionResult> sector_regressions(const FirmPanel& panel,
                                                             const FirmFunctionals& f, Input x,
                                                             bool channels);
std::map<std::string, double> sector_betas(const FirmPanel& panel, const FirmFunctionals& f,
                                           Input x);
ChannelBetas sector_channel_betas(const FirmPanel& panel, const FirmFunctionals& f, Input x);

struct GevFit {
  double xi = 0, sigma = 1, mu = 0;
  double se_xi = 0, se_sigma = 0, se_mu = 0;
  double loglik = 0;
  std::optional<double> mean;
  bool converged = false;
};

double gev_loglik(const std::vector<double>& x, double xi, double sigma, double mu);
std::optional<double> gev_mean(double xi, double sigma, double mu);
double gev_sample(Rng& rng, double xi, double sigma, double mu);
GevFit fit_gev(const std::vector<double>& samples);

double hhi(const std::vector<double>& revenues);

struct SeriesRow {
  std::string country;
  int year = 0;
  std::array<std::optional<double>, 3> sd_mp;
  std::optional<double> sd_nu, sd_dnu;
};

std::vector<SeriesRow> dispersion_series(const DispersionTable& t,
                                         std::optional<int> base_year = {});
std::string series_csv(const std::vector<SeriesRow>& rows);

}  // namespace misalloc
