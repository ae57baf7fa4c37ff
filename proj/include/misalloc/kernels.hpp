#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "misalloc/common.hpp"
#include "misalloc/panel.hpp"

namespace misalloc::kernels {

// Records per reduction block. Block partials are combined in block order, so
// parallel reductions are bit-identical for every thread count.
inline constexpr std::size_t kBlock = 2048;

template <class Acc, class Body, class Combine>
Acc blocked_reduce(std::size_t n, const Acc& zero, Body body, Combine combine, Execution exec) {
  if (exec == Execution::Serial) {
    Acc acc = zero;
    for (std::size_t i = 0; i < n; ++i) body(acc, i);
    return acc;
  }
  const long nb = static_cast<long>((n + kBlock - 1) / kBlock);
  std::vector<Acc> parts(static_cast<std::size_t>(nb), zero);
#pragma omp parallel for schedule(static)
  for (long b = 0; b < nb; ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * kBlock;
    const std::size_t hi = std::min(n, lo + kBlock);
    for (std::size_t i = lo; i < hi; ++i) body(parts[static_cast<std::size_t>(b)], i);
  }
  Acc acc = zero;
  for (const auto& p : parts) combine(acc, p);
  return acc;
}

using Vec10 = Eigen::Matrix<double, 10, 1>;
using Mat10 = Eigen::Matrix<double, 10, 10>;

inline std::array<double, 10> share_basis(double k, double l, double m) {
  return {1.0, k, l, m, k * k, l * l, m * m, k * l, k * m, l * m};
}

struct ShareSystem {
  Mat10 jtj = Mat10::Zero();
  Vec10 jtr = Vec10::Zero();
  double ssr = 0.0;
  std::size_t nonpositive = 0;
};

// Residual r = s - ln(g.b); Jacobian rows dr/dg = -b / (g.b).
ShareSystem share_system(const EstimationSample& s, const Vec10& g, Execution exec);

struct ShareValue {
  double ssr = 0.0;
  std::size_t nonpositive = 0;
};
ShareValue share_ssr(const EstimationSample& s, const Vec10& g, Execution exec);

// Consecutive-year pairs used by the GMM stage.
struct PairData {
  std::vector<double> y_cur, y_lag;  // script-Y at t and t-1
  std::vector<double> k_cur, l_cur, k_lag, l_lag;
  std::vector<std::size_t> index;    // record index of t
  std::array<double, 5> kl_rms{};    // instrument scales for the k/l moments
  std::array<double, 4> y_rms{};     // scales of Y_lag^a
  std::size_t size() const { return y_cur.size(); }
};

inline double c_term(const std::array<double, 5>& a, double k, double l) {
  return a[0] * k + a[1] * l + a[2] * k * k + a[3] * l * l + a[4] * k * l;
}

enum class Instruments { LaggedOmega, LaggedScriptY };

struct InnerSystem {
  Eigen::Matrix4d a = Eigen::Matrix4d::Zero();
  Eigen::Vector4d b = Eigen::Vector4d::Zero();
};

// Z'X and Z'omega for the Markov regression omega = sum_a delta_a omega_lag^a,
// with Z = powers of omega_lag (least squares) or of script-Y lag (IV).
InnerSystem inner_system(const PairData& p, const std::array<double, 5>& alpha, int degree,
                         Instruments z, Execution exec);

struct MomentSums {
  std::array<double, 5> kl{};      // sum eta * {k, l, k^2, l^2, kl}
  std::array<double, 4> omega{};   // sum eta * omega_lag^a
  std::array<double, 4> script_y{};// sum eta * Y_lag^a
};

MomentSums moment_sums(const PairData& p, const std::array<double, 5>& alpha,
                       const std::array<double, 4>& delta, int degree, Execution exec);

// Stage-2 resampling: each draw resamples firms with replacement and returns
// sum(totals) / sum(counts). Draw d uses its own derived stream.
std::vector<double> stage2_means(const std::vector<double>& totals,
                                 const std::vector<double>& counts, std::size_t draws,
                                 std::uint64_t seed, Execution exec);

}  // namespace misalloc::kernels
