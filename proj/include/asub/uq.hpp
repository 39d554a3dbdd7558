#pragma once

#include <cstdint>
#include <vector>

#include "asub/gp.hpp"
#include "asub/types.hpp"

namespace asub {

// Draw hyperparameter settings from the Gaussian posterior approximation
// (log coordinates ordered as pack_log), rejecting draws outside the given
// log-space box. A draw that exhausts 100 attempts raises UQError.
std::vector<KernelSpec> sample_hypers(const HyperPosterior& post, int n_draws,
                                      const VectorXd& log_lo, const VectorXd& log_hi,
                                      uint64_t seed);

struct EigenIntervals {
  std::vector<double> levels;  // ascending
  MatrixXd lo, hi;             // one row per level, one column per eigenvalue index
  VectorXd point;              // plug-in eigenvalues at the fitted hyperparameters
  MatrixXd draw_eigvals;       // kept draws × m, each row sorted descending
  int n_draws = 0;             // kept draws
  int n_skipped = 0;           // draws dropped due to numerical failure
};

// Re-estimate C under each drawn hyperparameter setting (same data), match
// eigenvalues by sorted position, and report central quantile intervals per
// level. More than 10% failed draws raises UQError.
EigenIntervals eigen_intervals(const GPModel& model, const std::vector<KernelSpec>& draws,
                               const std::vector<double>& levels, uint64_t seed);

}  // namespace asub
