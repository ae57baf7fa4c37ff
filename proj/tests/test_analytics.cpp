#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <map>

#include "misalloc/analytics.hpp"
#include "misalloc/dgp.hpp"
#include "misalloc/rng.hpp"
#include "support.hpp"

using namespace misalloc;

namespace {

DispersionCell cell(const std::string& sector, int year, double var_mp, double vol) {
  DispersionCell c;
  c.country = "AA";
  c.sector = sector;
  c.year = year;
  c.n = 10;
  c.var_mp = {var_mp, var_mp, var_mp};
  c.vol_nu = vol;
  c.weight = 1;
  return c;
}

double s2_oracle(const std::vector<double>& v, const std::vector<double>& p) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    num += (v[i] - p[i]) * (v[i] - p[i]);
    den += v[i] * v[i];
  }
  return 1 - num / den;
}

}  // namespace

TEST_CASE("fixed-effect regression: exact slope") {
  std::vector<double> x{1, 2, 3, 4, 5, 6}, y;
  for (std::size_t i = 0; i < x.size(); ++i) y.push_back(2 * x[i] + (i < 3 ? 1.0 : -4.0));
  std::vector<std::string> fe{"a", "a", "a", "b", "b", "b"}, cl{"1", "2", "3", "4", "5", "6"};
  auto r = fe_regress(y, {{"x", x}}, fe, cl);
  CHECK(r.coef[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r.r2 == doctest::Approx(1.0));
  CHECK(r.n_cells == 2);
}

TEST_CASE("fixed-effect regression: regressor constant within cells") {
  std::vector<double> x{1, 1, 2, 2}, y{1, 2, 3, 4};
  std::vector<std::string> fe{"a", "a", "b", "b"}, cl{"1", "2", "3", "4"};
  CHECK_THROWS_AS(fe_regress(y, {{"x", x}}, fe, cl), EstimationError);
}

TEST_CASE("fixed-effect regression matches an explicit dummy regression") {
  Rng rng = make_rng(6, "fe", 0);
  const std::size_t n = 600, cells = 30;
  std::vector<double> x1(n), x2(n), y(n);
  std::vector<std::string> fe(n), cl(n);
  std::vector<std::size_t> cid(n);
  for (std::size_t i = 0; i < n; ++i) {
    cid[i] = i % cells;
    fe[i] = "c" + std::to_string(cid[i]);
    cl[i] = "f" + std::to_string(i / 3);
    x1[i] = std_normal(rng) + 0.1 * double(cid[i]);
    x2[i] = std_normal(rng);
    y[i] = 0.7 * x1[i] - 0.2 * x2[i] + 0.05 * double(cid[i]) + std_normal(rng);
  }
  // singleton cell that must be dropped
  x1.push_back(1);
  x2.push_back(2);
  y.push_back(3);
  fe.push_back("lonely");
  cl.push_back("z");
  auto r = fe_regress(y, {{"x1", x1}, {"x2", x2}}, fe, cl);
  CHECK(r.singletons_dropped == 1);
  CHECK(r.n == n);

  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(long(n), long(2 + cells));
  Eigen::VectorXd Yv(static_cast<long>(n));
  for (std::size_t i = 0; i < n; ++i) {
    X(long(i), 0) = x1[i];
    X(long(i), 1) = x2[i];
    X(long(i), long(2 + cid[i])) = 1;
    Yv[long(i)] = y[i];
  }
  Eigen::MatrixXd XtXi = (X.transpose() * X).inverse();
  Eigen::VectorXd b = XtXi * X.transpose() * Yv;
  Eigen::VectorXd u = Yv - X * b;
  std::map<std::string, Eigen::VectorXd> score;
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = score[cl[i]];
    if (s.size() == 0) s = Eigen::VectorXd::Zero(X.cols());
    s += X.row(long(i)).transpose() * u[long(i)];
  }
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(X.cols(), X.cols());
  for (const auto& [k, s] : score) meat += s * s.transpose();
  const double G = double(score.size()), N = double(n), K = double(X.cols());
  Eigen::MatrixXd V = G / (G - 1) * (N - 1) / (N - K) * XtXi * meat * XtXi;
  CHECK(std::fabs(r.coef[0] - b[0]) < 1e-8);
  CHECK(std::fabs(r.coef[1] - b[1]) < 1e-8);
  CHECK(std::fabs(r.se[0] - std::sqrt(V(0, 0))) < 1e-8);
  CHECK(std::fabs(r.se[1] - std::sqrt(V(1, 1))) < 1e-8);

  std::map<std::string, std::pair<double, int>> means;
  for (std::size_t k = 0; k < r.kept.size(); ++k) {
    auto& m = means[fe[r.kept[k]]];
    m.first += r.residuals[k];
    m.second += 1;
  }
  for (const auto& [c, m] : means) CHECK(std::fabs(m.first / m.second) < 1e-10);
}

TEST_CASE("S2 edge cases") {
  DispersionTable t;
  t.cells = {cell("311", 2000, 2.0, 0.5), cell("312", 2000, 1.0, 4.0)};
  // beta^2 * vol reproduces every variance exactly
  auto exact = s2_total(t, Input::K, {{"311", 2.0}, {"312", 0.5}});
  CHECK(exact.value == doctest::Approx(1.0));
  auto zero = s2_total(t, Input::K, {{"311", 0.0}, {"312", 0.0}});
  CHECK(zero.value == doctest::Approx(0.0));
  auto neg = s2_total(t, Input::K, {{"311", 10.0}, {"312", 10.0}});
  CHECK(neg.uninformative);
  // sectors without a beta are skipped
  auto part = s2_total(t, Input::K, {{"311", 2.0}});
  CHECK(part.n_cells == 1);
  CHECK_THROWS_AS(s2_total(t, Input::K, {}), ValidationError);
}

TEST_CASE("S2 matches the reference formula on random cells") {
  Rng rng = make_rng(7, "s2", 0);
  for (int rep = 0; rep < 50; ++rep) {
    DispersionTable t;
    std::map<std::string, double> beta;
    std::vector<double> v, p;
    for (int s = 0; s < 8; ++s) {
      const std::string sec = std::to_string(300 + s);
      beta[sec] = std_normal(rng);
      for (int y = 0; y < 5; ++y) {
        auto c = cell(sec, 2000 + y, std::exp(std_normal(rng)), std::exp(std_normal(rng)));
        v.push_back(*c.var_mp[1]);
        p.push_back(beta[sec] * beta[sec] * *c.vol_nu);
        t.cells.push_back(c);
      }
    }
    auto r = s2_total(t, Input::L, beta);
    CHECK(std::fabs(r.value - s2_oracle(v, p)) < 1e-12);

    // an exactly explained cell never lowers S2
    auto c = cell("399", 2001, 3.0, 0.75);
    t.cells.push_back(c);
    beta["399"] = 2.0;
    CHECK(s2_total(t, Input::L, beta).value >= r.value);
  }
}

TEST_CASE("channel S2 with zero covariances equals the variance-only version") {
  Rng rng = make_rng(8, "s2c", 0);
  DispersionTable t;
  ChannelBetas b;
  for (int s = 0; s < 4; ++s) {
    const std::string sec = std::to_string(310 + s);
    b[sec] = {std_normal(rng), std_normal(rng), std_normal(rng)};
    for (int y = 0; y < 4; ++y) {
      auto c = cell(sec, 2000 + y, std::exp(std_normal(rng)), 1);
      c.var_omega_lag = std::exp(std_normal(rng));
      c.var_eta = std::exp(std_normal(rng));
      c.var_deps = std::exp(std_normal(rng));
      c.cov_omega_eta = c.cov_omega_deps = c.cov_eta_deps = 0.0;
      t.cells.push_back(c);
    }
  }
  auto a = s2_channels(t, Input::M, b);
  auto c = s2_channels_cov(t, Input::M, b);
  for (int ch = 0; ch < 3; ++ch) CHECK(a[ch].value == doctest::Approx(c[ch].value).epsilon(1e-14));
  // with covariances, each channel picks up beta_c * beta_o * Cov(c, o)
  for (auto& x : t.cells) x.cov_omega_eta = 0.3;
  auto d = s2_channels_cov(t, Input::M, b);
  std::vector<double> v, p;
  for (const auto& x : t.cells) {
    const auto& be = b[x.sector];
    v.push_back(*x.var_mp[2]);
    p.push_back(be[1] * be[1] * *x.var_eta + be[1] * be[0] * 0.3);
  }
  CHECK(d[1].value == doctest::Approx(s2_oracle(v, p)).epsilon(1e-12));
  CHECK(d[2].value == doctest::Approx(c[2].value).epsilon(1e-14));
}

TEST_CASE("dispersion table from estimated data") {
  auto sim = simulate(testing::cd_spec(300, 5, 9));
  auto model = estimate(sim.panel);
  auto f = compute_functionals(sim.panel, model);
  auto t = build_dispersion_table(sim.panel, f);
  std::map<std::pair<std::string, int>, double> w;
  for (const auto& c : t.cells) {
    CHECK(c.n >= 2);
    w[{c.country, c.year}] += c.weight;
    CHECK(c.hhi > 0);
    CHECK(c.hhi <= 1);
  }
  for (const auto& [k, s] : w) CHECK(s == doctest::Approx(1.0));
  auto betas = sector_betas(sim.panel, f, Input::K);
  CHECK(betas.size() == 5);
  auto s2 = s2_total(t, Input::K, betas);
  std::size_t with_vol = 0;
  for (const auto& c : t.cells) with_vol += c.vol_nu.has_value();
  CHECK(with_vol < t.cells.size());  // first-year cells have no growth rates
  CHECK(s2.n_cells == with_vol);
  auto series = dispersion_series(t, 2000);
  for (const auto& r : series)
    if (r.year == 2000) CHECK(*r.sd_mp[0] == doctest::Approx(1.0));
  CHECK(series_csv(series).rfind("country,year", 0) == 0);
}

TEST_CASE("dispersion series is a revenue-weighted mean") {
  DispersionTable t;
  auto a = cell("311", 2000, 4.0, 1), b = cell("312", 2000, 16.0, 1);
  a.sd_mp = {2.0, 2.0, 2.0};
  b.sd_mp = {4.0, 4.0, 4.0};
  a.weight = 0.75;
  b.weight = 0.25;
  t.cells = {a, b};
  auto s = dispersion_series(t);
  REQUIRE(s.size() == 1);
  CHECK(*s[0].sd_mp[0] == doctest::Approx(2.5));
  CHECK_THROWS_AS(dispersion_series(t, 1999), ValidationError);
  CHECK_THROWS_AS(dispersion_series(DispersionTable{}), ValidationError);
}

TEST_CASE("HHI") {
  CHECK(hhi({5}) == 1.0);
  CHECK(hhi({1, 1, 1, 1}) == doctest::Approx(0.25));
  CHECK(hhi({3, 1}) == doctest::Approx(0.625));
  CHECK_THROWS_AS(hhi({0, 0}), ValidationError);
  CHECK_THROWS_AS(hhi({1, -1}), ValidationError);
}

TEST_CASE("GEV implied mean and fitting") {
  auto de = gev_mean(0.098, 1.521, 2.987);
  REQUIRE(de);
  CHECK(std::fabs(*de - 4.03) <= 0.02);
  CHECK_FALSE(gev_mean(1.2, 1, 0).has_value());
  CHECK_THROWS_AS(fit_gev(std::vector<double>(100, 3.0)), ValidationError);
  Rng rng = make_rng(10, "gev", 0);
  std::vector<double> x(100000);
  for (double& v : x) v = gev_sample(rng, 0.2, 1, 0);
  auto fit = fit_gev(x);
  CHECK(fit.converged);
  CHECK(std::fabs(fit.xi - 0.2) <= 0.02);
  CHECK(std::fabs(fit.sigma - 1) <= 0.03);
  CHECK(std::fabs(fit.mu) <= 0.03);
  CHECK(fit.se_xi > 0);
}
