#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "misalloc/common.hpp"
#include "misalloc/panel.hpp"

namespace misalloc {

struct CobbDouglas {
  double log_scale = 0.0;
  double alpha_k = 0.3;
  double alpha_l = 0.3;
  double alpha_m = 0.4;
};

// f = b0 + bk k + bl l + bm m + bkk k^2 + bll l^2 + bmm m^2 + bkl kl + bkm km + blm lm
struct Translog {
  std::array<double, 10> b{0.0, 0.3, 0.3, 0.45, -0.005, -0.005, -0.01, 0.0, 0.005, 0.005};
};

using Technology = std::variant<CobbDouglas, Translog>;

double log_output(const Technology& f, double k, double l, double m);
// Output elasticities (K, L, M).
std::array<double, 3> true_elasticities(const Technology& f, double k, double l, double m);

struct PriceProcess {
  // log(rho/P) = material_const + material_omega*omega_{t-1} + material_trend*t + sd*z
  double material_const = 0.0;
  double material_omega = 0.0;
  double material_trend = 0.0;
  double material_sd = 0.1;
  // log(w/P) = wage_const + wage_trend*t + wage_sd*z
  double wage_const = 0.0;
  double wage_trend = 0.0;
  double wage_sd = 0.1;
  // log P = price_const + price_trend*t
  double price_const = 0.0;
  double price_trend = 0.0;
};

enum class LaborRule { Predetermined, FlexibleFoc };

struct InputPolicy {
  double k_const = 3.0;
  double k_omega = 0.5;
  double k_sd = 0.5;
  double l_const = 2.0;
  double l_omega = 0.5;
  double l_sd = 0.5;
  double tau_k = 0.0;
  double tau_l = 0.0;
  LaborRule labor = LaborRule::Predetermined;
};

// Treated countries draw capital with k_sd scaled by k_sd_scale from start_year on.
struct RegimeShift {
  std::vector<std::string> countries;
  int start_year = 0;
  double k_sd_scale = 1.0;
};

struct DgpSpec {
  Technology technology = CobbDouglas{};
  std::array<double, 4> markov{0.02, 0.9, 0.0, 0.0};
  double sd_eta = 0.1;
  double sd_eps = 0.1;
  PriceProcess prices;
  InputPolicy policy;
  int n_firms = 500;
  int n_years = 10;
  int burn_in = 20;
  int first_year = 2000;
  std::uint64_t seed = 1;
  std::vector<std::string> sectors{"311", "312", "313", "321", "322"};
  std::vector<std::string> countries{"AA"};
  std::optional<RegimeShift> regime;
  std::optional<double> omega_init;
  std::optional<double> omega0_sd;
};

void validate(const DgpSpec& spec);

struct TruthRecord {
  double omega = 0, omega_lag = 0, eta = 0, eps = 0;
  std::array<double, 3> elas{};      // K, L, M
  std::array<double, 3> log_mp{};    // ln((Y/X) elas_X)
  double log_material_price = 0;     // ln(rho/P)
  double log_wage = 0;               // ln(w/P)
};

struct Simulation {
  FirmPanel panel;
  std::vector<TruthRecord> truth;  // aligned with panel records
};

Simulation simulate(const DgpSpec& spec, Execution exec = Execution::Parallel);

double closed_form_constants(double sd);

// One firm-year of the structural model given its shocks. Exposed so tests can
// perturb a single shock and re-solve the materials choice.
struct FirmYearShocks {
  double omega_lag = 0;
  double eta = 0;
  double eps = 0;
  double z_k = 0, z_l = 0, z_wage = 0, z_material = 0;
  int t = 0;  // period index, 0 = first sampled year
  double k_sd_scale = 1.0;
};

struct FirmYearOutcome {
  double k = 0, l = 0, m = 0, y = 0, omega = 0;
  double log_price = 0, log_material_price = 0, log_wage = 0;
  TruthRecord truth;
};

FirmYearOutcome solve_firm_year(const DgpSpec& spec, const FirmYearShocks& s,
                                const std::string& where = "");

double markov_mean(const std::array<double, 4>& delta, double omega_lag);

}  // namespace misalloc
