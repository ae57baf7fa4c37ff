#include "misalloc/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "misalloc/optim.hpp"

namespace misalloc {

double integrate_elasticity(const GammaVector& g, double k, double l, double m) {
  return (g[G0] + g[GK] * k + g[GL] * l + 0.5 * g[GM] * m + g[GKK] * k * k + g[GLL] * l * l +
          g[GMM] / 3.0 * m * m + g[GKL] * k * l + 0.5 * g[GKM] * k * m + 0.5 * g[GLM] * l * m) *
         m;
}

std::vector<double> build_script_y(const EstimationSample& s, const ShareFit& fit) {
  if (fit.residuals.size() != s.size())
    throw ValidationError("share fit does not cover every record");
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    out[i] = s.y[i] - fit.residuals[i] - integrate_elasticity(fit.gamma, s.k[i], s.l[i], s.m[i]);
  return out;
}

kernels::PairData make_pairs(const EstimationSample& s, const std::vector<double>& script_y) {
  kernels::PairData p;
  for (std::size_t i = 0; i < s.size(); ++i) {
    long j = s.lag[i];
    if (j < 0) continue;
    p.y_cur.push_back(script_y[i]);
    p.y_lag.push_back(script_y[static_cast<std::size_t>(j)]);
    p.k_cur.push_back(s.k[i]);
    p.l_cur.push_back(s.l[i]);
    p.k_lag.push_back(s.k[static_cast<std::size_t>(j)]);
    p.l_lag.push_back(s.l[static_cast<std::size_t>(j)]);
    p.index.push_back(i);
  }
  const double n = static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    double k = p.k_cur[i], l = p.l_cur[i], y = p.y_lag[i];
    double z[5] = {k, l, k * k, l * l, k * l};
    for (int a = 0; a < 5; ++a) p.kl_rms[a] += z[a] * z[a];
    double py = 1.0;
    for (int a = 0; a < 4; ++a) {
      p.y_rms[a] += py * py;
      py *= y;
    }
  }
  for (auto& v : p.kl_rms) v = n > 0 ? std::max(std::sqrt(v / n), 1e-300) : 1.0;
  for (auto& v : p.y_rms) v = n > 0 ? std::max(std::sqrt(v / n), 1e-300) : 1.0;
  return p;
}

DeltaVector inner_delta(const kernels::PairData& p, const AlphaVector& a, int degree,
                        kernels::Instruments z, Execution exec) {
  if (degree < 1 || degree > 3) throw ValidationError("Markov polynomial degree must be 1-3");
  auto sys = kernels::inner_system(p, a.arr(), degree, z, exec);
  const int n = degree + 1;
  Eigen::MatrixXd A = sys.a.topLeftCorner(n, n);
  Eigen::VectorXd b = sys.b.head(n);
  // Column equilibration before the rank test.
  Eigen::VectorXd cs(n);
  for (int c = 0; c < n; ++c) cs[c] = std::max(A.col(c).cwiseAbs().maxCoeff(), 1e-300);
  Eigen::MatrixXd As = A * cs.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(As);
  qr.setThreshold(1e-12);
  if (qr.rank() < n) throw EstimationError("rank-deficient inner regression");
  Eigen::VectorXd d = cs.cwiseInverse().asDiagonal() * qr.solve(b);
  DeltaVector out;
  out.degree = degree;
  for (int i = 0; i < n; ++i) out.d[static_cast<std::size_t>(i)] = d[i];
  return out;
}

std::array<double, 9> gmm_moments(const kernels::PairData& p, const AlphaVector& a,
                                  const GmmOptions& o, DeltaVector* delta_out,
                                  std::array<double, 4>* script_y_out) {
  DeltaVector d = inner_delta(p, a, o.degree, o.delta_instruments, o.exec);
  auto ms = kernels::moment_sums(p, a.arr(), d.d, o.degree, o.exec);
  const double n = static_cast<double>(p.size());
  std::array<double, 9> out{};
  for (int j = 0; j < 5; ++j) out[j] = ms.kl[j] / n / p.kl_rms[j];
  std::array<double, 4> sy{};
  for (int j = 0; j < 4; ++j) sy[j] = ms.script_y[j] / n / p.y_rms[j];
  if (o.delta_instruments == kernels::Instruments::LaggedOmega) {
    // Normal equations of the inner regression, scaled by the omega_lag^a rms.
    auto sys = kernels::inner_system(p, a.arr(), 3, kernels::Instruments::LaggedOmega, o.exec);
    for (int j = 0; j < 4; ++j) {
      double scale = std::max(std::sqrt(sys.a(j, j) / n), 1e-300);
      out[5 + j] = j <= o.degree ? ms.omega[j] / n / scale : 0.0;
    }
  } else {
    for (int j = 0; j < 4; ++j) out[5 + j] = j <= o.degree ? sy[j] : 0.0;
  }
  if (delta_out) *delta_out = d;
  if (script_y_out) *script_y_out = sy;
  return out;
}

static int n_free(const GmmOptions& o) {
  if (o.c_order != 1 && o.c_order != 2) throw ValidationError("c_order must be 1 or 2");
  return o.c_order == 1 ? 2 : 5;
}

static Eigen::VectorXd to_eig(const AlphaVector& a, int n) {
  auto arr = a.arr();
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = arr[static_cast<std::size_t>(i)];
  return v;
}

static AlphaVector from_eig(const Eigen::VectorXd& v) {
  std::array<double, 5> a{};
  for (int i = 0; i < v.size(); ++i) a[static_cast<std::size_t>(i)] = v[i];
  return AlphaVector::from(a);
}

static Eigen::VectorXd free_moments(const kernels::PairData& p, const Eigen::VectorXd& x,
                                    const GmmOptions& o) {
  auto m = gmm_moments(p, from_eig(x), o);
  Eigen::VectorXd v(x.size());
  for (int j = 0; j < x.size(); ++j) v[j] = m[static_cast<std::size_t>(j)];
  return v;
}

std::optional<AlphaVector> gmm_root(const kernels::PairData& p, const AlphaVector& start,
                                    const GmmOptions& o) {
  const int n = n_free(o);
  Eigen::VectorXd x = to_eig(start, n), fx;
  try {
    fx = free_moments(p, x, o);
  } catch (const EstimationError&) {
    return std::nullopt;
  }
  for (int it = 0; it < 60; ++it) {
    if (fx.cwiseAbs().maxCoeff() < 1e-14) return from_eig(x);
    Eigen::MatrixXd J(n, n);
    try {
      for (int c = 0; c < n; ++c) {
        double h = 1e-6 * std::max(1.0, std::abs(x[c]));
        Eigen::VectorXd a = x, b = x;
        a[c] += h;
        b[c] -= h;
        J.col(c) = (free_moments(p, a, o) - free_moments(p, b, o)) / (2 * h);
      }
    } catch (const EstimationError&) {
      return std::nullopt;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
    if (!lu.isInvertible()) return std::nullopt;
    Eigen::VectorXd step = -lu.solve(fx);
    double t = 1.0;
    bool moved = false;
    for (int h = 0; h < 40; ++h, t *= 0.5) {
      Eigen::VectorXd xn = x + t * step, fn;
      try {
        fn = free_moments(p, xn, o);
      } catch (const EstimationError&) {
        continue;
      }
      if (fn.norm() < fx.norm()) {
        x = xn;
        fx = fn;
        moved = true;
        break;
      }
    }
    if (!moved) break;
    if ((t * step).cwiseAbs().maxCoeff() < 1e-13) break;
  }
  if (fx.cwiseAbs().maxCoeff() < 1e-9) return from_eig(x);
  return std::nullopt;
}

// Minimizes the concentrated quadratic form of the k/l moments.
static AlphaVector simplex_search(const kernels::PairData& p, const AlphaVector& start,
                                  double step, const GmmOptions& o) {
  auto q = [&](const Eigen::VectorXd& x) {
    try {
      return free_moments(p, x, o).squaredNorm();
    } catch (const EstimationError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  Eigen::VectorXd x0 = to_eig(start, n_free(o));
  for (int r = 0; r < 4; ++r) {
    auto res = nelder_mead(q, x0, step, 1e-10, 3000);
    double moved = (res.x - x0).cwiseAbs().maxCoeff();
    x0 = res.x;
    if (moved < 1e-8) break;
    step = std::max(10 * moved, 1e-4);
  }
  return from_eig(x0);
}

AlphaVector minimize_moment_form(const kernels::PairData& p, const AlphaVector& start,
                                 const GmmOptions& o) {
  return simplex_search(p, start, 0.1, o);
}

GmmFit fit_gmm(const EstimationSample& s, const std::vector<double>& script_y,
               const GmmOptions& o) {
  if (script_y.size() != s.size()) throw ValidationError("script-Y does not cover every record");
  auto p = make_pairs(s, script_y);
  if (p.size() < 10) throw EstimationError("GMM stage needs at least 10 records with a lag");
  GmmFit fit;
  fit.n_pairs = p.size();
  n_free(o);
  AlphaVector alpha = o.init ? *o.init : AlphaVector{};
  if (o.c_order == 1) alpha = AlphaVector{alpha.k, alpha.l, 0, 0, 0};
  bool converged = false;
  int it = 0;
  bool newton_only = o.method == OuterMethod::Newton;
  for (it = 1; it <= o.max_outer; ++it) {
    AlphaVector next;
    if (newton_only) {
      auto r = gmm_root(p, alpha, o);
      if (!r) {
        newton_only = false;
        continue;
      }
      next = *r;
    } else {
      AlphaVector nm = simplex_search(p, alpha, it == 1 ? 0.1 : 1e-3, o);
      auto r = gmm_root(p, nm, o);
      next = r ? *r : nm;
    }
    double diff = (to_eig(next, 5) - to_eig(alpha, 5)).cwiseAbs().maxCoeff();
    alpha = next;
    if (diff < o.alpha_tol) {
      converged = true;
      break;
    }
  }
  fit.alpha = alpha;
  fit.outer_iterations = std::min(it, o.max_outer);
  fit.moments = gmm_moments(p, alpha, o, &fit.delta, &fit.script_y_moments);
  double nrm = 0;
  for (int j = 0; j < 9; ++j)
    if (j < n_free(o) || j >= 5) nrm += fit.moments[j] * fit.moments[j];
  fit.moment_norm = std::sqrt(nrm);
  fit.converged = converged;
  fit.omega.resize(s.size());
  fit.eta.assign(s.size(), std::nullopt);
  for (std::size_t i = 0; i < s.size(); ++i) fit.omega[i] = script_y[i] + alpha.c(s.k[i], s.l[i]);
  for (std::size_t i = 0; i < s.size(); ++i) {
    long j = s.lag[i];
    if (j >= 0) fit.eta[i] = fit.omega[i] - fit.delta.mean(fit.omega[static_cast<std::size_t>(j)]);
  }
  return fit;
}

double m_hat(const std::vector<std::optional<double>>& eta) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& e : eta)
    if (e) {
      s += std::exp(*e);
      ++n;
    }
  if (n == 0) throw ValidationError("m_hat: empty eta series");
  return s / static_cast<double>(n);
}

double m_hat(const std::vector<double>& eta) {
  if (eta.empty()) throw ValidationError("m_hat: empty eta series");
  double s = 0;
  for (double e : eta) s += std::exp(e);
  return s / static_cast<double>(eta.size());
}

ProductionModel estimate(const EstimationSample& s, const EstimationOptions& o) {
  auto share = fit_share_regression(s, o.share_init, o.share);
  auto sy = build_script_y(s, share);
  auto g = fit_gmm(s, sy, o.gmm);
  ProductionModel m;
  m.gamma = share.gamma;
  m.gamma_raw = share.gamma_raw;
  m.alpha = g.alpha;
  m.delta = g.delta;
  m.E_hat = share.E_hat;
  m.M_hat = m_hat(g.eta);
  m.eps_hat = std::move(share.residuals);
  m.omega_hat = std::move(g.omega);
  m.eta_hat = std::move(g.eta);
  m.script_y = std::move(sy);
  m.share_objective = share.objective;
  m.share_converged = share.converged;
  m.share_iterations = share.iterations;
  m.share_grad_norm = share.grad_norm;
  m.gmm_converged = g.converged;
  m.gmm_outer_iterations = g.outer_iterations;
  m.moment_norm = g.moment_norm;
  m.moments = g.moments;
  m.script_y_moments = g.script_y_moments;
  return m;
}

ProductionModel estimate(const FirmPanel& panel, const EstimationOptions& o) {
  return estimate(make_sample(panel), o);
}

std::string model_json(const ProductionModel& m, const EstimationOptions& o) {
  nlohmann::ordered_json j;
  static const char* gnames[10] = {"g0", "gk", "gl", "gm", "gkk", "gll", "gmm", "gkl", "gkm", "glm"};
  nlohmann::ordered_json g, gr;
  for (int i = 0; i < 10; ++i) {
    g[gnames[i]] = m.gamma[i];
    gr[gnames[i]] = m.gamma_raw[i];
  }
  j["gamma"] = g;
  j["gamma_raw"] = gr;
  j["alpha"] = {{"ak", m.alpha.k}, {"al", m.alpha.l}, {"akk", m.alpha.kk},
                {"all", m.alpha.ll}, {"akl", m.alpha.kl}};
  j["delta"] = {{"d0", m.delta.d[0]}, {"d1", m.delta.d[1]}, {"d2", m.delta.d[2]},
                {"d3", m.delta.d[3]}, {"degree", m.delta.degree}};
  j["E_hat"] = m.E_hat;
  j["M_hat"] = m.M_hat;
  j["share_regression"] = {{"objective", m.share_objective},
                           {"converged", m.share_converged},
                           {"iterations", m.share_iterations},
                           {"gradient_inf_norm", m.share_grad_norm},
                           {"rel_tol", o.share.rel_tol},
                           {"grad_tol", o.share.grad_tol},
                           {"max_iter", o.share.max_iter},
                           {"multistart", o.share.multistart}};
  j["gmm"] = {{"converged", m.gmm_converged},
              {"outer_iterations", m.gmm_outer_iterations},
              {"moment_norm", m.moment_norm},
              {"moments", m.moments},
              {"script_y_moments", m.script_y_moments},
              {"alpha_tol", o.gmm.alpha_tol},
              {"max_outer", o.gmm.max_outer},
              {"delta_instruments", o.gmm.delta_instruments == kernels::Instruments::LaggedOmega
                                        ? "lagged_omega"
                                        : "script_y"}};
  j["n_records"] = m.eps_hat.size();
  return j.dump(2) + "\n";
}

}  // namespace misalloc
