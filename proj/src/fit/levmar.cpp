#include "qelab/fit/levmar.hpp"

#include <cmath>
#include <limits>

namespace qelab::fit {

namespace {

double cost_of(const Eigen::VectorXd &r) { return r.squaredNorm(); }

bool finite(double x) { return std::isfinite(x); }

} // namespace

FitResult levenberg_marquardt(const ResidualFn &fn, Eigen::VectorXd start,
                              const FitOptions &options) {
  const int p = static_cast<int>(start.size());

  Eigen::VectorXd params = std::move(start);
  Eigen::VectorXd residuals;
  Eigen::MatrixXd jacobian;
  fn(params, residuals, &jacobian);
  const int m = static_cast<int>(residuals.size());

  FitResult result;
  result.residual_count = m;
  result.initial_cost = cost_of(residuals);

  double cost = result.initial_cost;
  double lambda = options.initial_lambda;

  Eigen::MatrixXd jtj = jacobian.transpose() * jacobian;
  Eigen::VectorXd gradient = jacobian.transpose() * residuals;

  int iteration = 0;
  bool converged = false;
  while (iteration < options.max_iterations) {
    ++iteration;

    // Gradient already flat: nothing to gain.
    double grad_scale = std::max(cost, 1.0);
    if (gradient.lpNorm<Eigen::Infinity>() <= options.gradient_tol * grad_scale) {
      converged = true;
      break;
    }

    // Marquardt scaling with a floor so zero diagonal entries stay regularized.
    Eigen::VectorXd diag = jtj.diagonal();
    double diag_floor =
        std::max(diag.maxCoeff(), 1.0) * std::numeric_limits<double>::epsilon();
    for (int i = 0; i < p; ++i)
      diag[i] = std::max(diag[i], diag_floor);

    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd damped = jtj;
      damped.diagonal() += lambda * diag;
      Eigen::VectorXd step = damped.ldlt().solve(-gradient);

      Eigen::VectorXd trial_params = params + step;
      Eigen::VectorXd trial_residuals;
      fn(trial_params, trial_residuals, nullptr);
      double trial_cost = cost_of(trial_residuals);

      if (finite(trial_cost) && trial_cost < cost) {
        accepted = true;
        double decrease = cost - trial_cost;
        params = std::move(trial_params);
        fn(params, residuals, &jacobian);
        cost = cost_of(residuals);
        jtj = jacobian.transpose() * jacobian;
        gradient = jacobian.transpose() * residuals;
        lambda = std::max(lambda * options.lambda_decrease, options.lambda_min);
        if (decrease <= options.cost_rel_tol * std::max(cost, 0.0) ||
            cost == 0.0) {
          converged = true;
        }
      } else {
        lambda *= options.lambda_increase;
        if (lambda > options.lambda_max) {
          // Cannot find a downhill step at any damping: local minimum.
          converged = true;
          break;
        }
      }
    }
    if (converged)
      break;
  }

  result.params = params;
  result.final_cost = cost;
  result.iterations = iteration;
  result.converged = converged;
  result.normal_matrix = jtj;
  return result;
}

Eigen::VectorXd standard_errors(const FitResult &result) {
  const int p = static_cast<int>(result.params.size());
  Eigen::VectorXd errors = Eigen::VectorXd::Constant(
      p, std::numeric_limits<double>::quiet_NaN());
  int dof = result.residual_count - p;
  if (dof <= 0)
    return errors;
  Eigen::MatrixXd cov = result.normal_matrix.completeOrthogonalDecomposition()
                            .pseudoInverse() *
                        (result.final_cost / dof);
  for (int i = 0; i < p; ++i)
    errors[i] = cov(i, i) > 0.0 ? std::sqrt(cov(i, i)) : 0.0;
  return errors;
}

} // namespace qelab::fit
