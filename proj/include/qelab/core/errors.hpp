#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace qelab {

/// Input violates an operation's preconditions (bad dimensions, missing
/// channel, out-of-domain parameter, unparsable file content).
class InvalidInput : public std::runtime_error {
public:
  explicit InvalidInput(const std::string &what) : std::runtime_error(what) {}
};

/// Input is structurally valid but carries no usable information for the
/// requested analysis (flat histogram, zero side-peak area, empty batch).
class DegenerateData : public std::runtime_error {
public:
  explicit DegenerateData(const std::string &what) : std::runtime_error(what) {}
};

/// A damped least-squares fit ran out of iterations. Carries the best
/// parameter vector seen so that callers can inspect or report it.
class FitNotConverged : public std::runtime_error {
public:
  FitNotConverged(const std::string &what, std::vector<double> best,
                  double cost)
      : std::runtime_error(what), best_params(std::move(best)),
        best_cost(cost) {}

  std::vector<double> best_params;
  double best_cost = 0.0;
};

} // namespace qelab
