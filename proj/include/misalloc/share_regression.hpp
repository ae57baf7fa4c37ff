#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "misalloc/common.hpp"
#include "misalloc/panel.hpp"

namespace misalloc {

// Coefficients in basis order (1, k, l, m, k^2, l^2, m^2, kl, km, lm).
struct GammaVector {
  std::array<double, 10> c{};
  double& operator[](int i) { return c[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return c[static_cast<std::size_t>(i)]; }
  bool operator==(const GammaVector&) const = default;
};

enum GammaIndex { G0 = 0, GK, GL, GM, GKK, GLL, GMM, GKL, GKM, GLM };

double elasticity_at(const GammaVector& g, double k, double l, double m);

struct SolverOptions {
  double rel_tol = 1e-10;
  double grad_tol = 1e-8;
  int max_iter = 500;
  int multistart = 5;
  std::uint64_t seed = 0;
  bool training_subsample = false;
  int training_firms = 500;
  Execution exec = Execution::Parallel;
};

struct ShareFit {
  GammaVector gamma;
  GammaVector gamma_raw;
  double E_hat = 1.0;
  std::vector<double> residuals;  // eps_hat = ln(gamma_raw . basis) - s
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
  double grad_norm = 0.0;
  std::vector<double> objective_trace;  // accepted iterates of the selected start
};

GammaVector default_share_init(const EstimationSample& s);

ShareFit fit_share_regression(const EstimationSample& s, std::optional<GammaVector> init = {},
                              const SolverOptions& opts = {});

}  // namespace misalloc
