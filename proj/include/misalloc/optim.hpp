#pragma once

#include <functional>

#include <Eigen/Dense>

namespace misalloc {

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct MinimizeResult {
  Eigen::VectorXd x;
  double f = 0;
  int evaluations = 0;
  bool converged = false;
};

// Nelder-Mead with standard coefficients. Stops when every vertex lies within
// xtol (inf-norm) of the best one, or after max_evals evaluations.
MinimizeResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0, double step,
                           double xtol, int max_evals);

// BFGS with backtracking line search; f may return +inf outside the feasible set.
MinimizeResult bfgs(const Objective& f, const Eigen::VectorXd& x0, double gtol, int max_iter);

Eigen::VectorXd numeric_gradient(const Objective& f, const Eigen::VectorXd& x, double h);
Eigen::MatrixXd numeric_hessian(const Objective& f, const Eigen::VectorXd& x, double h);

}  // namespace misalloc
