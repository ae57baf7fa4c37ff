#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "misalloc/event_study.hpp"
#include "misalloc/rng.hpp"

using namespace misalloc;

namespace {

// Unit and time effects, an effect of `att` on treated units from 2005 on,
// and optional idiosyncratic noise.
DidPanel make_panel(int units, double att, double noise, std::uint64_t seed, int treated = -1) {
  Rng rng = make_rng(seed, "did", 0);
  if (treated < 0) treated = units / 2;
  DidPanel p;
  p.treatment_year = 2005;
  for (int u = 0; u < units; ++u) {
    const std::string id = "u" + std::to_string(u);
    if (u < treated) p.treated_units.insert(id);
    const double fe = std_normal(rng);
    for (int t = 2000; t < 2010; ++t) {
      DidObs o;
      o.unit = id;
      o.time = t;
      o.outcome = fe + 0.1 * (t - 2000) + (u < treated && t >= 2005 ? att : 0.0) +
                  noise * std_normal(rng);
      p.obs.push_back(o);
    }
  }
  return p;
}

double value(const DidPanel& p, const std::string& u, int t) {
  for (const auto& o : p.obs)
    if (o.unit == u && o.time == t) return *o.outcome;
  throw std::runtime_error("missing");
}

}  // namespace

TEST_CASE("a constant shift on treated units is recovered exactly") {
  auto p = make_panel(20, 0.3, 0.0, 1);
  auto r = att_group_time(p);
  CHECK(r.overall == doctest::Approx(0.3).epsilon(1e-12));
  REQUIRE(r.pre);
  CHECK(std::fabs(*r.pre) < 1e-12);
  CHECK(r.post.size() == 5);
  CHECK(r.placebo.size() == 4);
  for (const auto& y : r.post) {
    CHECK(y.att == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(y.se < 1e-12);
  }
  CHECK(r.overall_se < 1e-12);
  CHECK(r.post.front().event_time == 0);
  CHECK(r.placebo.front().event_time == -4);
}

TEST_CASE("adding a constant to every outcome changes nothing") {
  auto p = make_panel(30, 0.2, 0.5, 2);
  auto q = p;
  for (auto& o : q.obs) *o.outcome += 7.0;
  auto a = att_group_time(p), b = att_group_time(q);
  CHECK(a.overall == doctest::Approx(b.overall).epsilon(1e-12));
  CHECK(a.overall_se == doctest::Approx(b.overall_se).epsilon(1e-10));
  CHECK(*a.pre == doctest::Approx(*b.pre).scale(1).epsilon(1e-12));
}

TEST_CASE("per-year ATT is a difference of mean changes") {
  auto p = make_panel(24, 0.1, 0.4, 3, 10);
  auto r = att_group_time(p);
  for (const auto& y : r.post) {
    std::vector<double> dt, dc;
    for (int u = 0; u < 24; ++u) {
      const std::string id = "u" + std::to_string(u);
      const double d = value(p, id, y.time) - value(p, id, 2004);
      (u < 10 ? dt : dc).push_back(d);
    }
    auto mean = [](const std::vector<double>& v) {
      double s = 0;
      for (double x : v) s += x;
      return s / double(v.size());
    };
    const double mt = mean(dt), mc = mean(dc);
    double vt = 0, vc = 0;
    for (double x : dt) vt += (x - mt) * (x - mt);
    for (double x : dc) vc += (x - mc) * (x - mc);
    const double se = std::sqrt(vt / (10.0 * 10.0) + vc / (14.0 * 14.0));
    CHECK(std::fabs(y.att - (mt - mc)) < 1e-12);
    CHECK(std::fabs(y.se - se) < 1e-12);
    CHECK(y.n_treated == 10);
    CHECK(y.n_control == 14);
    CHECK(y.ci_lo == doctest::Approx(y.att - 1.959963984540054 * y.se));
  }
}

TEST_CASE("analytic intervals cover a zero effect at roughly the nominal rate") {
  int covered = 0;
  for (int run = 0; run < 200; ++run) {
    auto r = att_group_time(make_panel(60, 0.0, 1.0, 100 + std::uint64_t(run)));
    covered += std::fabs(r.overall) <= 2 * r.overall_se;
  }
  CHECK(covered >= 180);
}

TEST_CASE("permuting treatment labels under the null centers the estimates on zero") {
  auto p = make_panel(40, 0.0, 1.0, 7);
  Rng rng = make_rng(8, "perm", 0);
  std::vector<std::string> ids;
  for (int u = 0; u < 40; ++u) ids.push_back("u" + std::to_string(u));
  double s = 0, ss = 0;
  const int reps = 300;
  for (int r = 0; r < reps; ++r) {
    for (std::size_t i = ids.size() - 1; i > 0; --i) std::swap(ids[i], ids[uniform_index(rng, i + 1)]);
    auto q = p;
    q.treated_units = std::set<std::string>(ids.begin(), ids.begin() + 20);
    const double a = att_group_time(q).overall;
    s += a;
    ss += a * a;
  }
  const double m = s / reps, sd = std::sqrt(ss / reps - m * m);
  CHECK(std::fabs(m) < 3 * sd / std::sqrt(double(reps)));
}

TEST_CASE("regression adjustment removes covariate-driven trends") {
  DidPanel p;
  p.treatment_year = 2003;
  p.covariate_names = {"x"};
  Rng rng = make_rng(9, "cov", 0);
  for (int u = 0; u < 40; ++u) {
    const std::string id = "u" + std::to_string(u);
    const bool tr = u < 15;
    if (tr) p.treated_units.insert(id);
    const double x = std_normal(rng) + (tr ? 1.0 : 0.0);
    for (int t = 2000; t < 2006; ++t) {
      DidObs o;
      o.unit = id;
      o.time = t;
      o.covariates = {x};
      o.outcome = 0.5 * x * (t - 2000) + (tr && t >= 2003 ? 0.25 : 0.0);
      p.obs.push_back(o);
    }
  }
  auto plain = att_group_time(p);
  auto adj = att_group_time(p, {true});
  CHECK(std::fabs(plain.overall - 0.25) > 0.1);
  CHECK(adj.covariate_adjusted);
  CHECK(adj.overall == doctest::Approx(0.25).epsilon(1e-10));
  CHECK(std::fabs(*adj.pre) < 1e-10);
}

TEST_CASE("wild cluster bootstrap") {
  auto p = make_panel(200, 0.2, 1.0, 11);
  auto an = att_group_time(p);
  auto bs = wild_cluster_bootstrap(p, {}, 999, 5);
  CHECK(bs.overall == an.overall);
  CHECK(std::fabs(bs.overall_se / an.overall_se - 1) < 0.2);
  CHECK(bs.overall_ci_lo < bs.overall);
  CHECK(bs.overall_ci_hi > bs.overall);
  CHECK(bs.inference.find("wild") != std::string::npos);
  auto again = wild_cluster_bootstrap(p, {}, 999, 5, Execution::Serial);
  CHECK(again.overall_se == bs.overall_se);
  CHECK(again.overall_ci_lo == bs.overall_ci_lo);
  auto other = wild_cluster_bootstrap(p, {}, 999, 6);
  CHECK(other.overall_se != bs.overall_se);
}

TEST_CASE("invalid designs") {
  auto few = make_panel(4, 0.1, 1.0, 12);
  CHECK_THROWS_AS(wild_cluster_bootstrap(few, {}, 99, 1), ValidationError);
  auto all = make_panel(10, 0.1, 1.0, 13, 10);
  CHECK_THROWS_AS(att_group_time(all), ValidationError);
  auto none = make_panel(10, 0.1, 1.0, 13, 0);
  CHECK_THROWS_AS(att_group_time(none), ValidationError);
}

TEST_CASE("event-study CSV lists placebo years before post years") {
  auto r = att_group_time(make_panel(20, 0.3, 0.1, 14));
  auto csv = event_study_csv(r);
  CHECK(csv.rfind("event_time,att,se,ci_lo,ci_hi\n", 0) == 0);
  CHECK(csv.find("\n-4,") < csv.find("\n0,"));
}

TEST_CASE("dispersion cells become DiD units") {
  DispersionTable t;
  for (const char* country : {"AA", "BB"})
    for (int y = 2000; y < 2004; ++y) {
      DispersionCell c;
      c.country = country;
      c.sector = "311";
      c.year = y;
      c.var_mp = {2.0, 3.0, 4.0};
      c.vol_nu = 0.5;
      c.hhi = 0.2;
      t.cells.push_back(c);
    }
  auto p = did_panel_from_table(t, Input::L, {"BB"}, 2002, true);
  CHECK(p.treated_units == std::set<std::string>{"BB|311"});
  CHECK(p.obs.size() == 8);
  CHECK(*p.obs[0].outcome == doctest::Approx(std::log(3.0)));
  CHECK(p.covariate_names == std::vector<std::string>{"log_vol_nu", "log_hhi"});
  CHECK(p.obs[0].covariates[1] == doctest::Approx(std::log(0.2)));
}
