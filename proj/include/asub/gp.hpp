#pragma once

#include <cstdint>
#include <vector>

#include "asub/types.hpp"

namespace asub {

// Fitted (or fixed-hyperparameter) GP regression model. Immutable once built;
// refitting produces a new model.
struct GPModel {
  KernelSpec spec;
  Dataset data;
  MatrixXd chol;    // lower-triangular L with L·Lᵀ = K_n (nugget + extra jitter)
  VectorXd alpha;   // K_n⁻¹ y
  double jitter_added = 0.0;  // extra diagonal added beyond spec.nugget

  int n() const { return static_cast<int>(data.X.rows()); }
  int m() const { return spec.dim(); }
};

// n×n Gram matrix: k(x_i, x_j) + nugget·δ_ij.
MatrixXd build_gram(const KernelSpec& spec, const MatrixXd& X);

// Cholesky with jitter escalation (×10 per retry, capped at 1e-4·variance).
// Returns the factor and the extra diagonal that was needed.
MatrixXd chol_factor(const MatrixXd& K, double variance, double* jitter_out);

GPModel make_model(KernelSpec spec, Dataset data);
// Data-free model (n = 0); grad_posterior on it returns the prior gradient law.
GPModel prior_model(KernelSpec spec, int m);

// Log marginal likelihood: -½ yᵀK⁻¹y - ½ log|K| - (n/2) log 2π.
double log_likelihood(const KernelSpec& spec, const Dataset& data);

// Hyperparameter vector in log space: [log l_1..m, log σ², (log τ²)].
VectorXd pack_log(const KernelSpec& spec, bool include_nugget);
KernelSpec unpack_log(const VectorXd& theta, KernelFamily family, bool include_nugget,
                      double pinned_nugget);
// Default box bounds in log space; var_y is the sample variance of the data.
void default_log_bounds(int m, double var_y, bool noiseless, VectorXd& lo, VectorXd& hi);

struct FitOptions {
  int n_restarts = 10;
  uint64_t seed = 0;
  bool noiseless = false;  // pin τ² = 1e-8 and drop it from the search
  int max_iter = 100;
  VectorXd log_lo, log_hi;  // empty → defaults
  VectorXd warm_start;      // optional extra start (log space)
};

GPModel fit(const Dataset& data, KernelFamily family, const FitOptions& opt = {});

// Negative log likelihood and its gradient in log-parameter space.
// Used by fit(); exposed for the Laplace machinery and tests.
double nll(const KernelSpec& spec, const Dataset& data);
double nll_grad(const KernelSpec& spec, const Dataset& data, bool include_nugget,
                VectorXd& grad);

struct Prediction {
  double mean = 0.0;
  double var = 0.0;  // latent variance k(x,x) - kᵀK⁻¹k, clipped at 0 (no nugget)
};
Prediction predict(const GPModel& model, const VectorXd& x);

struct GradPosterior {
  VectorXd mu;   // posterior mean gradient
  MatrixXd cov;  // posterior gradient covariance, symmetrized, PSD-clipped
};
GradPosterior grad_posterior(const GPModel& model, const VectorXd& x);

struct HyperPosterior {
  KernelSpec mle;
  MatrixXd cov;   // over log parameters, ordered as pack_log
  bool nugget_fixed = false;
  bool clipped = false;    // negative curvature directions clipped to zero
  bool singular = false;   // pseudo-inverse used
  bool grad_warning = false;  // likelihood gradient not ~0 (e.g. bound-pinned MLE)
};

// Gaussian approximation to the hyperparameter posterior: inverse of the
// negated central-FD Hessian (h = 1e-4) of the log likelihood at the MLE.
HyperPosterior laplace_cov(const GPModel& model, const VectorXd& log_lo,
                           const VectorXd& log_hi, bool nugget_fixed);

}  // namespace asub
