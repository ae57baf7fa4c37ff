#include "misalloc/kernels.hpp"

#include <cmath>

#include "misalloc/rng.hpp"

namespace misalloc::kernels {

ShareSystem share_system(const EstimationSample& s, const Vec10& g, Execution exec) {
  auto body = [&](ShareSystem& acc, std::size_t i) {
    auto bb = share_basis(s.k[i], s.l[i], s.m[i]);
    Vec10 b = Eigen::Map<const Vec10>(bb.data());
    double v = g.dot(b);
    if (!(v > 0.0)) {
      ++acc.nonpositive;
      return;
    }
    double r = s.s[i] - std::log(v);
    Vec10 w = b / v;
    acc.jtj.noalias() += w * w.transpose();
    acc.jtr -= w * r;
    acc.ssr += r * r;
  };
  auto combine = [](ShareSystem& a, const ShareSystem& b) {
    a.jtj += b.jtj;
    a.jtr += b.jtr;
    a.ssr += b.ssr;
    a.nonpositive += b.nonpositive;
  };
  return blocked_reduce(s.size(), ShareSystem{}, body, combine, exec);
}

ShareValue share_ssr(const EstimationSample& s, const Vec10& g, Execution exec) {
  auto body = [&](ShareValue& acc, std::size_t i) {
    auto bb = share_basis(s.k[i], s.l[i], s.m[i]);
    double v = 0.0;
    for (int j = 0; j < 10; ++j) v += g[j] * bb[j];
    if (!(v > 0.0)) {
      ++acc.nonpositive;
      return;
    }
    double r = s.s[i] - std::log(v);
    acc.ssr += r * r;
  };
  auto combine = [](ShareValue& a, const ShareValue& b) {
    a.ssr += b.ssr;
    a.nonpositive += b.nonpositive;
  };
  return blocked_reduce(s.size(), ShareValue{}, body, combine, exec);
}

InnerSystem inner_system(const PairData& p, const std::array<double, 5>& alpha, int degree,
                         Instruments z, Execution exec) {
  const int n = degree + 1;
  auto body = [&](InnerSystem& acc, std::size_t i) {
    double wc = p.y_cur[i] + c_term(alpha, p.k_cur[i], p.l_cur[i]);
    double wl = p.y_lag[i] + c_term(alpha, p.k_lag[i], p.l_lag[i]);
    double x[4] = {1.0, wl, wl * wl, wl * wl * wl};
    double zz[4];
    if (z == Instruments::LaggedOmega) {
      for (int a = 0; a < 4; ++a) zz[a] = x[a];
    } else {
      double yl = p.y_lag[i];
      zz[0] = 1.0; zz[1] = yl; zz[2] = yl * yl; zz[3] = yl * yl * yl;
    }
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) acc.a(r, c) += zz[r] * x[c];
      acc.b[r] += zz[r] * wc;
    }
  };
  auto combine = [](InnerSystem& a, const InnerSystem& b) {
    a.a += b.a;
    a.b += b.b;
  };
  return blocked_reduce(p.size(), InnerSystem{}, body, combine, exec);
}

MomentSums moment_sums(const PairData& p, const std::array<double, 5>& alpha,
                       const std::array<double, 4>& delta, int degree, Execution exec) {
  auto body = [&](MomentSums& acc, std::size_t i) {
    double k = p.k_cur[i], l = p.l_cur[i];
    double wc = p.y_cur[i] + c_term(alpha, k, l);
    double wl = p.y_lag[i] + c_term(alpha, p.k_lag[i], p.l_lag[i]);
    double pw[4] = {1.0, wl, wl * wl, wl * wl * wl};
    double fit = 0.0;
    for (int a = 0; a <= degree; ++a) fit += delta[a] * pw[a];
    double eta = wc - fit;
    acc.kl[0] += eta * k;
    acc.kl[1] += eta * l;
    acc.kl[2] += eta * k * k;
    acc.kl[3] += eta * l * l;
    acc.kl[4] += eta * k * l;
    double yl = p.y_lag[i];
    double py[4] = {1.0, yl, yl * yl, yl * yl * yl};
    for (int a = 0; a < 4; ++a) {
      acc.omega[a] += eta * pw[a];
      acc.script_y[a] += eta * py[a];
    }
  };
  auto combine = [](MomentSums& a, const MomentSums& b) {
    for (int j = 0; j < 5; ++j) a.kl[j] += b.kl[j];
    for (int j = 0; j < 4; ++j) {
      a.omega[j] += b.omega[j];
      a.script_y[j] += b.script_y[j];
    }
  };
  return blocked_reduce(p.size(), MomentSums{}, body, combine, exec);
}

static double stage2_draw(const std::vector<double>& totals, const std::vector<double>& counts,
                          std::uint64_t seed, std::size_t d) {
  Rng rng = make_rng(seed, "stage2", d);
  const std::size_t n = totals.size();
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t f = uniform_index(rng, n);
    num += totals[f];
    den += counts[f];
  }
  return num / den;
}

std::vector<double> stage2_means(const std::vector<double>& totals,
                                 const std::vector<double>& counts, std::size_t draws,
                                 std::uint64_t seed, Execution exec) {
  std::vector<double> out(draws);
  if (exec == Execution::Serial) {
    for (std::size_t d = 0; d < draws; ++d) out[d] = stage2_draw(totals, counts, seed, d);
    return out;
  }
#pragma omp parallel for schedule(static)
  for (long d = 0; d < static_cast<long>(draws); ++d)
    out[static_cast<std::size_t>(d)] =
        stage2_draw(totals, counts, seed, static_cast<std::size_t>(d));
  return out;
}

}  // namespace misalloc::kernels
