#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "misalloc/common.hpp"
#include "misalloc/functionals.hpp"
#include "misalloc/gmm.hpp"
#include "misalloc/panel.hpp"

namespace misalloc {

struct BootstrapPlan {
  int n_replicates = 150;
  std::uint64_t seed = 0;
  std::vector<std::string> statistics;
  Execution exec = Execution::Parallel;
};

// Cluster resample of firms; the i-th draw gets the fresh id "b<i>:<orig>".
FirmPanel resample_firms(const FirmPanel& panel, std::uint64_t seed);

using Pipeline = std::function<std::vector<double>(const FirmPanel&, std::uint64_t seed)>;

struct BootstrapResult {
  std::vector<std::string> names;
  std::vector<std::optional<std::vector<double>>> replicates;  // by replicate index
  std::vector<std::string> failures;                          // message per dropped replicate
  int planned = 0, succeeded = 0, dropped = 0;
  std::vector<double> mean, se;
};

BootstrapResult bootstrap_pipeline(const FirmPanel& panel, const BootstrapPlan& plan,
                                   const Pipeline& pipeline);

std::string bootstrap_csv(const BootstrapResult& r);

// Keeps records whose sector starts with one of the prefixes; empty = all.
bool in_subset(const FirmYear& r, const std::vector<std::string>& subset);

double flexible_labor_T(const FirmFunctionals& f, const FirmPanel& panel,
                        const std::vector<std::string>& subset = {});

// Per-firm sums of T_jt = P Y elas_L - wL and record counts.
struct FirmTotals {
  std::vector<double> total;
  std::vector<double> count;
};

FirmTotals labor_totals(const FirmFunctionals& f, const FirmPanel& panel,
                        const std::vector<std::string>& subset = {});

struct Interval {
  double lo = 0, hi = 0;
  bool contains(double x) const { return lo <= x && x <= hi; }
};

struct TestResult {
  double T = 0;
  Interval ci90, ci95, ci99;
  std::size_t n = 0;
  std::vector<double> reject_at;  // significance levels with 0 outside the CI
  std::size_t n_draws = 0;
  int planned = 0, succeeded = 0, dropped = 0;
  std::string quantile_method = "type7";
};

double quantile_type7(const std::vector<double>& sorted, double p);

// Pools stage-2 resample means over the given stage-1 replicates.
TestResult two_stage_ci(double T, std::size_t n, const std::vector<FirmTotals>& stage1,
                        std::size_t stage2_draws, std::uint64_t seed, Execution exec,
                        std::vector<double>* pooled = nullptr);

struct LaborTestOptions {
  std::optional<int> stage2_draws;  // default 15000, or 5000 with a sector subset
  std::vector<std::string> subset;
  EstimationOptions estimation;
};

TestResult two_stage_test_bootstrap(const FirmPanel& panel, const BootstrapPlan& plan,
                                    const LaborTestOptions& opts = {});

// Estimation options for bootstrap replicates: single-start share fit and
// Newton GMM, both warm-started from a full-sample model.
EstimationOptions warm_start_options(const EstimationOptions& base, const ProductionModel& full);

}  // namespace misalloc
