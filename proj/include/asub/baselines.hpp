#pragma once

#include <cstdint>
#include <functional>

#include "asub/asm_core.hpp"
#include "asub/types.hpp"

namespace asub {

// Forward difference with shared base point; coordinates that would leave the
// unit box flip to a backward difference. Adds m+1 to *eval_count when given.
VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double h,
                     long* eval_count = nullptr);

// Gradient source with a running tally of raw objective evaluations. A
// finite-difference gradient charges m+1 evaluations; an analytic one charges
// none (it never calls f).
struct GradientOracle {
  enum class Kind { Analytic, ForwardFD };
  Kind kind = Kind::ForwardFD;
  int m = 0;
  std::function<double(const VectorXd&)> f;
  std::function<VectorXd(const VectorXd&)> grad;  // required for Analytic
  double fd_step = 1e-4;
  long eval_count = 0;

  double value(const VectorXd& x);
  VectorXd gradient(const VectorXd& x);
};

// Plain Monte Carlo second-moment estimate: (1/M)·Σ ∇f(x_i)∇f(x_i)ᵀ over
// uniform draws. Deterministic given the seed.
CEstimate mc_estimate_C(GradientOracle& oracle, int M, uint64_t seed);

// Direction of the global least-squares slope (intercept fitted, dropped).
Subspace ols_direction(const Dataset& data);

// Local-linear slopes on k-nearest-neighbor patches (self included),
// aggregated as the mean outer product. Degenerate patches are skipped and
// counted.
CEstimate local_linear_C(const Dataset& data, int k_neighbors, int* n_skipped = nullptr);

}  // namespace asub
