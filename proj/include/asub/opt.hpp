#pragma once

#include <functional>

#include "asub/types.hpp"

namespace asub {

struct BoxOptResult {
  VectorXd x;
  double f = 0.0;
  int iters = 0;
  bool converged = false;
};

// Objective: returns f(x) and fills grad. May throw NumericalError; the
// optimizer treats that point as +inf.
using BoxObjective = std::function<double(const VectorXd&, VectorXd&)>;

// Projected-gradient descent with Barzilai-Borwein steps and Armijo
// backtracking on the box [lo, hi]. Minimizes.
BoxOptResult box_minimize(const BoxObjective& fn, VectorXd x0, const VectorXd& lo,
                          const VectorXd& hi, int max_iter = 100, double gtol = 1e-8);

}  // namespace asub
