#pragma once

#include <Eigen/Dense>
#include <functional>

namespace qelab::fit {

struct FitOptions {
  int max_iterations = 200;
  double cost_rel_tol = 1e-10;  // relative cost decrease treated as converged
  double gradient_tol = 1e-14;  // infinity norm of J^T r, relative to cost scale
  double initial_lambda = 1e-3;
  double lambda_increase = 10.0;
  double lambda_decrease = 0.1;
  double lambda_min = 1e-12;
  double lambda_max = 1e14;
};

struct FitResult {
  Eigen::VectorXd params;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
  Eigen::MatrixXd normal_matrix; // J^T J at the solution
  int residual_count = 0;
};

/// Callback filling the residual vector (and, when jacobian is non-null,
/// the residual_count x param_count Jacobian) at the given parameters.
using ResidualFn =
    std::function<void(const Eigen::VectorXd &params, Eigen::VectorXd &residuals,
                       Eigen::MatrixXd *jacobian)>;

/// Damped least squares (Levenberg-Marquardt with Marquardt diagonal
/// scaling). Steps are accepted only when they reduce the cost
/// sum(r_i^2), so the final cost never exceeds the initial cost.
/// Termination: relative cost decrease below cost_rel_tol on an accepted
/// step, a vanishing gradient, or the damping factor saturating at
/// lambda_max (no downhill direction left). Hitting max_iterations leaves
/// converged == false; callers decide whether that is an error.
FitResult levenberg_marquardt(const ResidualFn &fn, Eigen::VectorXd start,
                              const FitOptions &options = {});

/// Per-parameter standard errors from the local quadratic model:
/// sqrt(diag((J^T J)^-1) * final_cost / (m - p)).
Eigen::VectorXd standard_errors(const FitResult &result);

} // namespace qelab::fit
