#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "asub/asm_core.hpp"
#include "asub/gp.hpp"
#include "asub/types.hpp"

namespace asub {

// One-step update coefficients at a candidate point: the change of the C
// estimate after observing y at xtilde decomposes as
//   ΔC = alpha + Z·B + Z²·Gamma,  Z ~ N(0,1) under the current posterior.
// All coefficient matrices are symmetric in (i,j); assembled once per
// unordered pair and mirrored.
struct AcqCoeffs {
  MatrixXd alpha, B, Gamma;
  std::vector<MatrixXd> dB, dGamma;  // per coordinate d: ∂/∂xtilde_d (empty w/o grads)
  VectorXd xtilde;
  double sigma2n = 0.0;  // predictive variance at xtilde (nugget included)
  VectorXd g;            // -K⁻¹k / sigma2n
  // pieces reused when the point is appended to the design (pair-indexed, i ≤ j)
  VectorXd k;                   // covariance vector k(xtilde)
  double mean = 0.0;            // posterior mean at xtilde
  std::vector<VectorXd> wa_p;   // wa[r] = w_entry(X_r, xtilde; i, j)
  std::vector<VectorXd> wb_p;   // wb[r] = w_entry(xtilde, X_r; i, j)
  std::vector<double> w1_p;     // w_entry(xtilde, xtilde; i, j)
};

enum class AcqCriterion { Trace, Var1, Var2 };
const char* criterion_name(AcqCriterion c);

AcqCoeffs coeffs(const GPModel& model, const WTensor& W, const VectorXd& xtilde,
                 bool with_grads = true);

double acq_value(const AcqCoeffs& c, AcqCriterion criterion);
VectorXd acq_grad(const AcqCoeffs& c, AcqCriterion criterion);

struct OptAcqResult {
  VectorXd xtilde;
  double value = 0.0;
  AcqCoeffs coeffs;  // at the returned point (with gradients)
};

// Screen an LHS candidate set (default 100·m points), then run bounded local
// ascent from the best n_local candidates; deterministic given seed.
OptAcqResult optimize_acq(const GPModel& model, const WTensor& W, AcqCriterion criterion,
                          int n_candidates, int n_local, uint64_t seed);

// Inverse of the bordered gram [[K, k],[kᵀ, σ²+τ²]] from K⁻¹, k and the
// predictive variance s2n at the new point.
MatrixXd partitioned_inverse_extend(const MatrixXd& Kinv, const VectorXd& k, double s2n);

struct StepRecord {
  int index = 0;  // design size after this step
  VectorXd xtilde;
  double acq_value = 0.0;  // NaN for the random arm
  double y = 0.0;
  VectorXd eigvals;
  double subspace_error = 0.0;  // NaN when no reference subspace given
};

struct RunRecord {
  MatrixXd X0;  // initial design
  VectorXd y0;
  VectorXd initial_eigvals;
  double initial_error = 0.0;
  std::vector<StepRecord> steps;  // indices n0+1 .. budget
  std::string config;             // caller-provided snapshot
};

struct AbortWithPartialRecord : Error {
  RunRecord partial;
  AbortWithPartialRecord(const std::string& msg, RunRecord rec)
      : Error(msg), partial(std::move(rec)) {}
};

struct SeqOptions {
  int m = 0;
  KernelFamily family = KernelFamily::Gaussian;
  int n0 = 10;
  int budget = 30;
  bool random_arm = false;  // uniform candidate draws instead of acquisition
  AcqCriterion criterion = AcqCriterion::Var2;
  int refit_every = 1;    // full refit cadence; frozen-hyper updates in between
  int n_candidates = 0;   // 0 → 100·m
  int n_local = 5;
  int restarts = 10;       // initial fit
  int warm_restarts = 3;   // refits (plus the warm start itself)
  bool noiseless_fit = true;
  uint64_t seed = 0;
  const Subspace* reference = nullptr;
  int r = 1;
  std::string config_note;
};

// Sequential design loop: initial LHS of size n0, then one acquisition /
// observation per step until the evaluation budget is exhausted.
RunRecord run_sequential(const std::function<double(const VectorXd&)>& f,
                         const SeqOptions& opt);

}  // namespace asub
