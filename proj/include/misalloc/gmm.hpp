#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "misalloc/common.hpp"
#include "misalloc/kernels.hpp"
#include "misalloc/panel.hpp"
#include "misalloc/share_regression.hpp"

namespace misalloc {

// C(k, l) = ak k + al l + akk k^2 + all l^2 + akl kl (no constant).
struct AlphaVector {
  double k = 0, l = 0, kk = 0, ll = 0, kl = 0;
  std::array<double, 5> arr() const { return {k, l, kk, ll, kl}; }
  static AlphaVector from(const std::array<double, 5>& a) { return {a[0], a[1], a[2], a[3], a[4]}; }
  double c(double kx, double lx) const { return kernels::c_term(arr(), kx, lx); }
};

struct DeltaVector {
  std::array<double, 4> d{};
  int degree = 3;
  double operator[](int i) const { return d[static_cast<std::size_t>(i)]; }
  double mean(double w) const { return d[0] + w * (d[1] + w * (d[2] + w * d[3])); }
};

double integrate_elasticity(const GammaVector& g, double k, double l, double m);

std::vector<double> build_script_y(const EstimationSample& s, const ShareFit& fit);

enum class OuterMethod { SimplexNewton, Newton };

struct GmmOptions {
  int degree = 3;
  int c_order = 2;  // 1 restricts C to ak k + al l (two k/l moments)
  int max_outer = 200;
  double alpha_tol = 1e-8;
  kernels::Instruments delta_instruments = kernels::Instruments::LaggedOmega;
  OuterMethod method = OuterMethod::SimplexNewton;
  std::optional<AlphaVector> init;
  Execution exec = Execution::Parallel;
};

struct GmmFit {
  AlphaVector alpha;
  DeltaVector delta;
  std::vector<double> omega;                // omega_hat for every record
  std::vector<std::optional<double>> eta;   // defined where a lag exists
  // Scaled sample moments: five k/l moments, then four delta moments
  // (normal equations of the inner regression, or script-Y moments in IV mode).
  std::array<double, 9> moments{};
  double moment_norm = 0;  // over the moments actually solved
  std::array<double, 4> script_y_moments{};  // diagnostics: E[eta * Y_lag^a] scaled
  bool converged = false;
  int outer_iterations = 0;
  std::size_t n_pairs = 0;
};

kernels::PairData make_pairs(const EstimationSample& s, const std::vector<double>& script_y);

// delta(alpha) from the inner regression.
DeltaVector inner_delta(const kernels::PairData& p, const AlphaVector& a, int degree,
                        kernels::Instruments z, Execution exec);

// Scaled moment vector at alpha with delta concentrated out.
std::array<double, 9> gmm_moments(const kernels::PairData& p, const AlphaVector& a,
                                  const GmmOptions& o, DeltaVector* delta_out = nullptr,
                                  std::array<double, 4>* script_y_out = nullptr);

GmmFit fit_gmm(const EstimationSample& s, const std::vector<double>& script_y,
               const GmmOptions& o = {});

// Solves the five k/l moment equations by damped Newton from a start point.
std::optional<AlphaVector> gmm_root(const kernels::PairData& p, const AlphaVector& start,
                                    const GmmOptions& o);

// Quadratic-form minimization alone (simplex with restarts, no Newton polish).
AlphaVector minimize_moment_form(const kernels::PairData& p, const AlphaVector& start,
                                 const GmmOptions& o);

double m_hat(const std::vector<std::optional<double>>& eta);
double m_hat(const std::vector<double>& eta);

struct EstimationOptions {
  SolverOptions share;
  GmmOptions gmm;
  std::optional<GammaVector> share_init;
};

struct ProductionModel {
  GammaVector gamma;
  GammaVector gamma_raw;
  AlphaVector alpha;
  DeltaVector delta;
  double E_hat = 1;
  double M_hat = 1;
  std::vector<double> eps_hat;
  std::vector<double> omega_hat;
  std::vector<std::optional<double>> eta_hat;
  std::vector<double> script_y;
  // metadata
  double share_objective = 0;
  bool share_converged = false;
  int share_iterations = 0;
  double share_grad_norm = 0;
  bool gmm_converged = false;
  int gmm_outer_iterations = 0;
  double moment_norm = 0;
  std::array<double, 9> moments{};
  std::array<double, 4> script_y_moments{};
};

ProductionModel estimate(const EstimationSample& s, const EstimationOptions& o = {});
ProductionModel estimate(const FirmPanel& panel, const EstimationOptions& o = {});

std::string model_json(const ProductionModel& m, const EstimationOptions& o);

}  // namespace misalloc
