#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "misalloc/analytics.hpp"
#include "misalloc/common.hpp"
#include "misalloc/functionals.hpp"

namespace misalloc {

struct DidObs {
  std::string unit;
  int time = 0;
  std::optional<double> outcome;
  std::vector<double> covariates;  // base-period values are taken from this row
};

struct DidPanel {
  std::vector<DidObs> obs;
  std::set<std::string> treated_units;
  int treatment_year = 0;
  std::vector<std::string> covariate_names;
};

struct YearAtt {
  int time = 0;
  int event_time = 0;
  double att = 0, se = 0, ci_lo = 0, ci_hi = 0;
  std::size_t n_treated = 0, n_control = 0;
};

struct AttResult {
  double overall = 0, overall_se = 0, overall_ci_lo = 0, overall_ci_hi = 0;
  std::optional<double> pre, pre_se;
  std::vector<YearAtt> post;      // t >= treatment year, base = treatment_year - 1
  std::vector<YearAtt> placebo;   // pre years, base = t - 1
  std::size_t n_units = 0, n_obs = 0;
  std::size_t dropped_years = 0;
  bool covariate_adjusted = false;
  std::string inference = "analytic (influence function)";
};

struct AttOptions {
  bool covariates = false;
};

AttResult att_group_time(const DidPanel& panel, const AttOptions& opts = {});

AttResult wild_cluster_bootstrap(const DidPanel& panel, const AttOptions& opts, int n_boot = 999,
                                 std::uint64_t seed = 0, Execution exec = Execution::Parallel);

std::string event_study_csv(const AttResult& r);

// Industry cells of a dispersion table as DiD units: unit = country|sector,
// outcome = log Var(mp^X), covariates = log Vol(nu), log HHI.
DidPanel did_panel_from_table(const DispersionTable& t, Input x,
                              const std::set<std::string>& treated_countries, int treatment_year,
                              bool with_covariates);

}  // namespace misalloc
