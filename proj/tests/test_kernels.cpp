#include <doctest.h>

#include <omp.h>

#include <cmath>

#include "misalloc/dgp.hpp"
#include "misalloc/gmm.hpp"
#include "misalloc/kernels.hpp"
#include "support.hpp"

using namespace misalloc;
using namespace misalloc::kernels;

namespace {

struct Fixture {
  EstimationSample s;
  PairData p;
  Vec10 g;
  std::array<double, 5> alpha{-0.3, -0.3, 0.01, -0.01, 0.005};
  std::array<double, 4> delta{0.02, 0.9, 0.01, -0.002};
  std::vector<double> totals, counts;
  Fixture() {
    s = make_sample(simulate(testing::cd_spec(2000, 10, 31)).panel);
    g.setZero();
    g[0] = 0.4;
    g[3] = 0.01;
    auto fit = fit_share_regression(s);
    p = make_pairs(s, build_script_y(s, fit));
    for (std::size_t i = 0; i < 5000; ++i) {
      counts.push_back(double(1 + i % 7));
      totals.push_back(std::sin(double(i)) * counts.back());
    }
  }
};

const Fixture& fx() {
  static Fixture f;
  return f;
}

bool close(double a, double b) { return std::fabs(a - b) <= 1e-12 * std::max(1.0, std::fabs(b)); }

struct Snapshot {
  ShareSystem sh;
  ShareValue sv;
  InnerSystem in, iv;
  MomentSums ms;
  std::vector<double> st2;
};

Snapshot run(Execution e) {
  const auto& f = fx();
  Snapshot x;
  x.sh = share_system(f.s, f.g, e);
  x.sv = share_ssr(f.s, f.g, e);
  x.in = inner_system(f.p, f.alpha, 3, Instruments::LaggedOmega, e);
  x.iv = inner_system(f.p, f.alpha, 3, Instruments::LaggedScriptY, e);
  x.ms = moment_sums(f.p, f.alpha, f.delta, 3, e);
  x.st2 = stage2_means(f.totals, f.counts, 4000, 77, e);
  return x;
}

}  // namespace

TEST_CASE("fixture spans several reduction blocks") {
  CHECK(fx().s.size() > 4 * kBlock);
  CHECK(fx().p.size() > 4 * kBlock);
}

TEST_CASE("parallel kernels agree with the serial reference") {
  auto a = run(Execution::Serial), b = run(Execution::Parallel);
  for (int i = 0; i < 10; ++i) {
    CHECK(close(b.sh.jtr[i], a.sh.jtr[i]));
    for (int j = 0; j < 10; ++j) CHECK(close(b.sh.jtj(i, j), a.sh.jtj(i, j)));
  }
  CHECK(close(b.sh.ssr, a.sh.ssr));
  CHECK(close(b.sv.ssr, a.sv.ssr));
  CHECK(b.sh.nonpositive == a.sh.nonpositive);
  for (int i = 0; i < 4; ++i) {
    CHECK(close(b.in.b[i], a.in.b[i]));
    CHECK(close(b.iv.b[i], a.iv.b[i]));
    for (int j = 0; j < 4; ++j) CHECK(close(b.in.a(i, j), a.in.a(i, j)));
    CHECK(close(b.ms.omega[std::size_t(i)], a.ms.omega[std::size_t(i)]));
    CHECK(close(b.ms.script_y[std::size_t(i)], a.ms.script_y[std::size_t(i)]));
  }
  for (std::size_t i = 0; i < 5; ++i) CHECK(close(b.ms.kl[i], a.ms.kl[i]));
  REQUIRE(a.st2.size() == b.st2.size());
  for (std::size_t i = 0; i < a.st2.size(); ++i) CHECK(close(b.st2[i], a.st2[i]));
}

TEST_CASE("parallel kernels are bit-identical across thread counts") {
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  auto one = run(Execution::Parallel);
  omp_set_num_threads(8);
  auto eight = run(Execution::Parallel);
  omp_set_num_threads(saved);
  CHECK(one.sh.jtj == eight.sh.jtj);
  CHECK(one.sh.jtr == eight.sh.jtr);
  CHECK(one.sh.ssr == eight.sh.ssr);
  CHECK(one.sv.ssr == eight.sv.ssr);
  CHECK(one.in.a == eight.in.a);
  CHECK(one.in.b == eight.in.b);
  CHECK(one.iv.a == eight.iv.a);
  CHECK(one.ms.kl == eight.ms.kl);
  CHECK(one.ms.omega == eight.ms.omega);
  CHECK(one.ms.script_y == eight.ms.script_y);
  CHECK(one.st2 == eight.st2);
}

TEST_CASE("full estimation is bit-identical across thread counts") {
  auto sample = make_sample(simulate(testing::cd_spec(800, 8, 32)).panel);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  auto a = estimate(sample);
  omp_set_num_threads(8);
  auto b = estimate(sample);
  omp_set_num_threads(saved);
  CHECK(a.alpha.arr() == b.alpha.arr());
  CHECK(a.delta.d == b.delta.d);
  CHECK(a.gamma == b.gamma);
  CHECK(a.eta_hat == b.eta_hat);
}

TEST_CASE("blocked reduction sums exactly what a loop sums") {
  const std::size_t n = 10 * kBlock + 17;
  auto body = [](long& acc, std::size_t i) { acc += static_cast<long>(i % 13); };
  auto comb = [](long& acc, const long& p) { acc += p; };
  long ref = 0;
  for (std::size_t i = 0; i < n; ++i) ref += static_cast<long>(i % 13);
  CHECK(blocked_reduce<long>(n, 0L, body, comb, Execution::Parallel) == ref);
  CHECK(blocked_reduce<long>(n, 0L, body, comb, Execution::Serial) == ref);
  CHECK(blocked_reduce<long>(0, 0L, body, comb, Execution::Parallel) == 0);
}
