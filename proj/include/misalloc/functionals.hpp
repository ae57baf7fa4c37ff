#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "misalloc/gmm.hpp"
#include "misalloc/panel.hpp"

namespace misalloc {

enum class Input { K = 0, L = 1, M = 2 };
enum class Channel { PastProductivity, ExAnte, ExPost };

struct FunctionalRow {
  std::array<double, 3> elas{};                  // K, L, M
  std::array<double, 3> mp{};                    // (Y/X) * elas_X
  std::array<std::optional<double>, 3> log_mp;   // defined where mp > 0
  double nu = 0, omega = 0, eps = 0;
  std::optional<double> eta, omega_lag, g_lag, dnu, d_eps;
};

struct FirmFunctionals {
  std::vector<FunctionalRow> rows;
  std::array<std::size_t, 3> nonpositive_mp{};
};

std::array<double, 3> elasticities(const GammaVector& g, const AlphaVector& a, double k,
                                   double l, double m);

FirmFunctionals compute_functionals(const FirmPanel& panel, const ProductionModel& model,
                                    Execution exec = Execution::Parallel);

std::string functionals_csv(const FirmPanel& panel, const FirmFunctionals& f);

// d[X][x] = d elas^X / d x for X, x in {K, L, M} / {k, l, m}.
struct ElasticityPartials {
  std::array<std::array<double, 3>, 3> d{};
};

ElasticityPartials elasticity_partials(const GammaVector& g, const AlphaVector& a, double k,
                                       double l, double m);
ElasticityPartials elasticity_partials(const ProductionModel& model, double k, double l,
                                       double m);

double g_prime(const DeltaVector& delta, double omega_lag);
double markov_prime(const DeltaVector& delta, double omega_lag);

struct ChannelInputs {
  double dk = 0, dl = 0, dlogprice = 0;
};

struct ChannelPoint {
  double k = 0, l = 0, m = 0, omega_lag = 0;
  std::string label;
};

double channel_effect(Input x, Channel theta, const ChannelPoint& point,
                      const ProductionModel& model, const ChannelInputs& responses = {});

double aggregate_channel(double d_omega_lag, double d_eta, double d_eps, double g_prime);

}  // namespace misalloc
