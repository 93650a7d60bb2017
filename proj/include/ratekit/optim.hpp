#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace ratekit {

/// Objective to minimize. Writes the gradient when `grad` is non-null.
/// A non-finite return value marks the point as infeasible.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct BfgsOptions {
  int max_iterations = 500;
  double gradient_tol = 1e-8;     // on max|g| / (1 + |f|)
  double max_step = 2.0;          // cap on the infinity norm of a trial step
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
  std::vector<double> trace;  // objective after each accepted step, starting point first
};

/// BFGS with Armijo backtracking; curvature-violating updates are skipped.
BfgsResult minimize_bfgs(const Objective& f, Eigen::VectorXd x0, const BfgsOptions& options = {});

}  // namespace ratekit
