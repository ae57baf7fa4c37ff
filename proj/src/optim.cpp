#include "misalloc/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace misalloc {

MinimizeResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0, double step,
                           double xtol, int max_evals) {
  const int n = static_cast<int>(x0.size());
  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> fv(static_cast<std::size_t>(n + 1));
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    double v = f(x);
    return std::isnan(v) ? std::numeric_limits<double>::infinity() : v;
  };
  for (int i = 0; i < n; ++i) pts[static_cast<std::size_t>(i + 1)][i] += step;
  for (int i = 0; i <= n; ++i) fv[static_cast<std::size_t>(i)] = eval(pts[static_cast<std::size_t>(i)]);
  std::vector<int> order(static_cast<std::size_t>(n + 1));
  MinimizeResult res;
  while (true) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return fv[a] < fv[b]; });
    const auto& best = pts[order[0]];
    double spread = 0;
    for (int i = 1; i <= n; ++i)
      spread = std::max(spread, (pts[order[i]] - best).cwiseAbs().maxCoeff());
    if (spread < xtol) {
      res.converged = true;
      break;
    }
    if (evals >= max_evals) break;
    Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) c += pts[order[i]];
    c /= n;
    const int w = order[n];
    Eigen::VectorXd xr = c + (c - pts[w]);
    double fr = eval(xr);
    if (fr < fv[order[0]]) {
      Eigen::VectorXd xe = c + 2.0 * (c - pts[w]);
      double fe = eval(xe);
      if (fe < fr) { pts[w] = xe; fv[w] = fe; } else { pts[w] = xr; fv[w] = fr; }
    } else if (fr < fv[order[n - 1]]) {
      pts[w] = xr;
      fv[w] = fr;
    } else {
      bool outside = fr < fv[w];
      Eigen::VectorXd xc = outside ? Eigen::VectorXd(c + 0.5 * (xr - c))
                                   : Eigen::VectorXd(c + 0.5 * (pts[w] - c));
      double fc = eval(xc);
      if (fc < (outside ? fr : fv[w])) {
        pts[w] = xc;
        fv[w] = fc;
      } else {
        for (int i = 1; i <= n; ++i) {
          auto& p = pts[order[i]];
          p = best + 0.5 * (p - best);
          fv[order[i]] = eval(p);
        }
      }
    }
  }
  int b = static_cast<int>(std::min_element(fv.begin(), fv.end()) - fv.begin());
  res.x = pts[b];
  res.f = fv[b];
  res.evaluations = evals;
  return res;
}

Eigen::VectorXd numeric_gradient(const Objective& f, const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    Eigen::VectorXd a = x, b = x;
    double hi = h * std::max(1.0, std::abs(x[i]));
    a[i] += hi;
    b[i] -= hi;
    g[i] = (f(a) - f(b)) / (2 * hi);
  }
  return g;
}

Eigen::MatrixXd numeric_hessian(const Objective& f, const Eigen::VectorXd& x, double h) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd H(n, n);
  const double f0 = f(x);
  for (int i = 0; i < n; ++i) {
    double hi = h * std::max(1.0, std::abs(x[i]));
    for (int j = i; j < n; ++j) {
      double hj = h * std::max(1.0, std::abs(x[j]));
      if (i == j) {
        Eigen::VectorXd a = x, b = x;
        a[i] += hi;
        b[i] -= hi;
        H(i, i) = (f(a) - 2 * f0 + f(b)) / (hi * hi);
      } else {
        Eigen::VectorXd pp = x, pm = x, mp = x, mm = x;
        pp[i] += hi; pp[j] += hj;
        pm[i] += hi; pm[j] -= hj;
        mp[i] -= hi; mp[j] += hj;
        mm[i] -= hi; mm[j] -= hj;
        H(i, j) = H(j, i) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4 * hi * hj);
      }
    }
  }
  return H;
}

MinimizeResult bfgs(const Objective& f, const Eigen::VectorXd& x0, double gtol, int max_iter) {
  const int n = static_cast<int>(x0.size());
  MinimizeResult res;
  Eigen::VectorXd x = x0;
  double fx = f(x);
  Eigen::VectorXd g = numeric_gradient(f, x, 1e-6);
  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(n, n);
  int it = 0;
  for (; it < max_iter; ++it) {
    if (g.cwiseAbs().maxCoeff() < gtol) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd p = -Hinv * g;
    if (p.dot(g) >= 0) {
      Hinv.setIdentity();
      p = -g;
    }
    double t = 1.0, ft = f(x + p);
    while (!(ft <= fx + 1e-4 * t * p.dot(g)) && t > 1e-12) {
      t *= 0.5;
      ft = f(x + t * p);
    }
    if (t <= 1e-12) {
      res.converged = g.cwiseAbs().maxCoeff() < std::sqrt(gtol);
      break;
    }
    Eigen::VectorXd s = t * p;
    Eigen::VectorXd xn = x + s;
    Eigen::VectorXd gn = numeric_gradient(f, xn, 1e-6);
    Eigen::VectorXd yv = gn - g;
    double sy = s.dot(yv);
    if (sy > 1e-12) {
      double rho = 1.0 / sy;
      Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      Hinv = (I - rho * s * yv.transpose()) * Hinv * (I - rho * yv * s.transpose()) +
             rho * s * s.transpose();
    }
    const double rel = std::abs(fx - ft) / std::max(1.0, std::abs(fx));
    x = xn;
    fx = ft;
    g = gn;
    if (rel < 1e-14) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  res.f = fx;
  res.evaluations = it;
  return res;
}

}  // namespace misalloc
