#include "misalloc/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "misalloc/csv.hpp"
#include "misalloc/kernels.hpp"
#include "misalloc/rng.hpp"

namespace misalloc {

FirmPanel resample_firms(const FirmPanel& panel, std::uint64_t seed) {
  Rng rng = make_rng(seed, "resample", 0);
  const auto& firms = panel.firms();
  const std::size_t nf = firms.size();
  std::vector<FirmYear> out;
  out.reserve(panel.size());
  char buf[32];
  for (std::size_t d = 0; d < nf; ++d) {
    const auto& f = firms[uniform_index(rng, nf)];
    std::snprintf(buf, sizeof(buf), "b%07zu:", d);
    for (std::size_t i = f.begin; i < f.end; ++i) {
      FirmYear r = panel[i];
      r.firm_id = buf + r.firm_id;
      out.push_back(std::move(r));
    }
  }
  return FirmPanel(std::move(out), panel.sector_level());
}

namespace {

template <class T, class Fn>
void run_replicates(const FirmPanel& panel, const BootstrapPlan& plan, Fn fn,
                    std::vector<std::optional<T>>& results, std::vector<std::string>& failures) {
  if (plan.n_replicates < 2) throw ValidationError("bootstrap needs at least 2 replicates");
  const std::size_t nr = static_cast<std::size_t>(plan.n_replicates);
  results.assign(nr, std::nullopt);
  failures.assign(nr, std::string());
  auto one = [&](std::size_t r) {
    const std::uint64_t seed = derive_seed(plan.seed, "replicate", r);
    try {
      FirmPanel sample = resample_firms(panel, seed);
      results[r] = fn(sample, seed);
    } catch (const std::exception& e) {
      failures[r] = e.what();
    }
  };
  if (plan.exec == Execution::Serial) {
    for (std::size_t r = 0; r < nr; ++r) one(r);
  } else {
#pragma omp parallel for schedule(dynamic, 1)
    for (long r = 0; r < static_cast<long>(nr); ++r) one(static_cast<std::size_t>(r));
  }
  std::size_t dropped = 0;
  for (const auto& x : results)
    if (!x) ++dropped;
  if (5 * dropped > nr)
    throw EstimationError("bootstrap: " + std::to_string(dropped) + " of " + std::to_string(nr) +
                          " replicates failed");
}

}  // namespace

BootstrapResult bootstrap_pipeline(const FirmPanel& panel, const BootstrapPlan& plan,
                                   const Pipeline& pipeline) {
  BootstrapResult res;
  res.names = plan.statistics;
  run_replicates(panel, plan, pipeline, res.replicates, res.failures);
  res.planned = plan.n_replicates;
  std::size_t width = 0;
  for (const auto& x : res.replicates) {
    if (!x) {
      ++res.dropped;
      continue;
    }
    ++res.succeeded;
    if (width == 0) width = x->size();
    if (x->size() != width) throw EstimationError("bootstrap: inconsistent statistic count");
  }
  res.mean.assign(width, 0.0);
  res.se.assign(width, 0.0);
  for (const auto& x : res.replicates)
    if (x)
      for (std::size_t j = 0; j < width; ++j) res.mean[j] += (*x)[j];
  for (auto& v : res.mean) v /= res.succeeded;
  for (const auto& x : res.replicates)
    if (x)
      for (std::size_t j = 0; j < width; ++j) {
        double d = (*x)[j] - res.mean[j];
        res.se[j] += d * d;
      }
  for (auto& v : res.se) v = res.succeeded > 1 ? std::sqrt(v / (res.succeeded - 1)) : 0.0;
  if (res.names.empty())
    for (std::size_t j = 0; j < width; ++j) res.names.push_back("stat" + std::to_string(j));
  return res;
}

std::string bootstrap_csv(const BootstrapResult& r) {
  std::ostringstream o;
  o << "replicate";
  for (const auto& n : r.names) o << ',' << csv_field(n);
  o << '\n';
  for (std::size_t i = 0; i < r.replicates.size(); ++i) {
    if (!r.replicates[i]) continue;
    o << i;
    for (double v : *r.replicates[i]) o << ',' << fmt(v);
    o << '\n';
  }
  return o.str();
}

bool in_subset(const FirmYear& r, const std::vector<std::string>& subset) {
  if (subset.empty()) return true;
  for (const auto& p : subset)
    if (r.sector.compare(0, p.size(), p) == 0) return true;
  return false;
}

static double labor_term(const FirmYear& r, const FunctionalRow& f) {
  if (!r.Y || !r.wage_bill) throw ValidationError("labor test: missing revenue or wage bill");
  return r.output_price * *r.Y * f.elas[1] - *r.wage_bill;
}

double flexible_labor_T(const FirmFunctionals& f, const FirmPanel& panel,
                        const std::vector<std::string>& subset) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < panel.size(); ++i) {
    if (!in_subset(panel[i], subset)) continue;
    s += labor_term(panel[i], f.rows[i]);
    ++n;
  }
  if (n == 0) throw ValidationError("labor test: empty sample");
  return s / static_cast<double>(n);
}

FirmTotals labor_totals(const FirmFunctionals& f, const FirmPanel& panel,
                        const std::vector<std::string>& subset) {
  FirmTotals t;
  for (const auto& fr : panel.firms()) {
    double s = 0, c = 0;
    for (std::size_t i = fr.begin; i < fr.end; ++i) {
      if (!in_subset(panel[i], subset)) continue;
      s += labor_term(panel[i], f.rows[i]);
      c += 1;
    }
    if (c > 0) {
      t.total.push_back(s);
      t.count.push_back(c);
    }
  }
  return t;
}

double quantile_type7(const std::vector<double>& x, double p) {
  if (x.empty()) throw ValidationError("quantile of empty sample");
  const double h = (static_cast<double>(x.size()) - 1) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= x.size()) return x.back();
  return x[lo] + (h - static_cast<double>(lo)) * (x[lo + 1] - x[lo]);
}

TestResult two_stage_ci(double T, std::size_t n, const std::vector<FirmTotals>& stage1,
                        std::size_t stage2_draws, std::uint64_t seed, Execution exec,
                        std::vector<double>* pooled_out) {
  if (stage1.empty()) throw ValidationError("two-stage bootstrap: no stage-1 replicates");
  std::vector<double> pooled;
  pooled.reserve(stage1.size() * stage2_draws);
  for (std::size_t r = 0; r < stage1.size(); ++r) {
    if (stage1[r].total.empty()) throw ValidationError("two-stage bootstrap: empty replicate");
    auto draws = kernels::stage2_means(stage1[r].total, stage1[r].count, stage2_draws,
                                       derive_seed(seed, "stage2", r), exec);
    pooled.insert(pooled.end(), draws.begin(), draws.end());
  }
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  TestResult res;
  res.T = T;
  res.n = n;
  res.n_draws = pooled.size();
  auto ci = [&](double a) { return Interval{quantile_type7(sorted, a / 2), quantile_type7(sorted, 1 - a / 2)}; };
  res.ci90 = ci(0.10);
  res.ci95 = ci(0.05);
  res.ci99 = ci(0.01);
  if (!res.ci90.contains(0)) res.reject_at.push_back(0.10);
  if (!res.ci95.contains(0)) res.reject_at.push_back(0.05);
  if (!res.ci99.contains(0)) res.reject_at.push_back(0.01);
  if (pooled_out) *pooled_out = std::move(pooled);
  return res;
}

EstimationOptions warm_start_options(const EstimationOptions& base, const ProductionModel& full) {
  EstimationOptions o = base;
  o.share_init = full.gamma_raw;
  o.share.multistart = 1;
  o.share.training_subsample = false;
  o.gmm.init = full.alpha;
  o.gmm.method = OuterMethod::Newton;
  return o;
}

TestResult two_stage_test_bootstrap(const FirmPanel& panel, const BootstrapPlan& plan,
                                    const LaborTestOptions& opts) {
  auto full = estimate(panel, opts.estimation);
  auto func = compute_functionals(panel, full, opts.estimation.share.exec);
  std::size_t n = 0;
  for (const auto& r : panel.records())
    if (in_subset(r, opts.subset)) ++n;
  if (n == 0) throw ValidationError("labor test: subset empties the sample");
  const double T = flexible_labor_T(func, panel, opts.subset);

  EstimationOptions rep = warm_start_options(opts.estimation, full);
  // Parallelism lives at the replicate level; inner kernels are always serial
  // so replicate results do not depend on the plan's execution mode.
  rep.share.exec = Execution::Serial;
  rep.gmm.exec = Execution::Serial;
  std::vector<std::optional<FirmTotals>> results;
  std::vector<std::string> failures;
  run_replicates(
      panel, plan,
      [&](const FirmPanel& sample, std::uint64_t) {
        auto m = estimate(sample, rep);
        auto f = compute_functionals(sample, m, Execution::Serial);
        auto t = labor_totals(f, sample, opts.subset);
        if (t.total.empty()) throw EstimationError("replicate has no firms in subset");
        return t;
      },
      results, failures);
  std::vector<FirmTotals> stage1;
  for (auto& r : results)
    if (r) stage1.push_back(std::move(*r));
  const int draws = opts.stage2_draws ? *opts.stage2_draws : (opts.subset.empty() ? 15000 : 5000);
  if (draws < 1) throw ValidationError("stage-2 draws must be positive");
  auto res = two_stage_ci(T, n, stage1, static_cast<std::size_t>(draws), plan.seed, plan.exec);
  res.planned = plan.n_replicates;
  res.succeeded = static_cast<int>(stage1.size());
  res.dropped = res.planned - res.succeeded;
  return res;
}

}  // namespace misalloc
