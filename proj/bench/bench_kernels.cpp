#include <benchmark/benchmark.h>

#include "misalloc/dgp.hpp"
#include "misalloc/gmm.hpp"
#include "misalloc/kernels.hpp"
#include "misalloc/rng.hpp"
#include "misalloc/share_regression.hpp"

using namespace misalloc;

namespace {

struct Data {
  EstimationSample sample;
  kernels::PairData pairs;
  kernels::Vec10 gamma;
  std::vector<double> totals, counts;
};

const Data& data() {
  static const Data d = [] {
    Data out;
    DgpSpec spec;
    spec.n_firms = 4000;
    spec.n_years = 10;
    out.sample = make_sample(simulate(spec).panel);
    auto fit = fit_share_regression(out.sample);
    for (int i = 0; i < 10; ++i) out.gamma[i] = fit.gamma_raw[i];
    out.pairs = make_pairs(out.sample, build_script_y(out.sample, fit));
    Rng rng = make_rng(3, "bench", 0);
    for (int f = 0; f < 20000; ++f) {
      out.totals.push_back(std_normal(rng) * 10);
      out.counts.push_back(10);
    }
    return out;
  }();
  return d;
}

Execution mode(const benchmark::State& s) { return s.range(0) ? Execution::Parallel : Execution::Serial; }

void BM_ShareSystem(benchmark::State& state) {
  const auto& d = data();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::share_system(d.sample, d.gamma, mode(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(d.sample.size()));
}

void BM_InnerSystem(benchmark::State& state) {
  const auto& d = data();
  const std::array<double, 5> a{-0.3, -0.3, 0, 0, 0};
  for (auto _ : state)
    benchmark::DoNotOptimize(
        kernels::inner_system(d.pairs, a, 3, kernels::Instruments::LaggedOmega, mode(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(d.pairs.size()));
}

void BM_MomentSums(benchmark::State& state) {
  const auto& d = data();
  const std::array<double, 5> a{-0.3, -0.3, 0, 0, 0};
  const std::array<double, 4> delta{0.02, 0.9, 0, 0};
  for (auto _ : state) benchmark::DoNotOptimize(kernels::moment_sums(d.pairs, a, delta, 3, mode(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(d.pairs.size()));
}

void BM_Stage2Means(benchmark::State& state) {
  const auto& d = data();
  for (auto _ : state)
    benchmark::DoNotOptimize(kernels::stage2_means(d.totals, d.counts, 200, 9, mode(state)));
  state.SetItemsProcessed(state.iterations() * 200);
}

}  // namespace

// Arg 0 = serial reference, 1 = OpenMP.
BENCHMARK(BM_ShareSystem)->Arg(0)->Arg(1);
BENCHMARK(BM_InnerSystem)->Arg(0)->Arg(1);
BENCHMARK(BM_MomentSums)->Arg(0)->Arg(1);
BENCHMARK(BM_Stage2Means)->Arg(0)->Arg(1);

BENCHMARK_MAIN();
