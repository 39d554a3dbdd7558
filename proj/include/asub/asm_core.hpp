#pragma once

#include <cstdint>
#include <vector>

#include "asub/gp.hpp"
#include "asub/types.hpp"

namespace asub {

// m×m array of n×n matrices: block (i,j) holds ∫ κ_i(x)ᵀκ_j(x) dx over the
// unit cube, with the kernel-variance factor applied once. Row index = the
// argument that appears first in κ.
struct WTensor {
  int m = 0, n = 0;
  std::vector<MatrixXd> blocks;  // row-major (i,j)

  const MatrixXd& operator()(int i, int j) const { return blocks[i * m + j]; }
  MatrixXd& at(int i, int j) { return blocks[i * m + j]; }
};

// Single entry of block (i,j): the m-fold product of 1-D integrals for the
// point pair (xa, xb), xa in the row role. Slow path used by tests and
// incremental bordering.
double w_entry(const KernelSpec& spec, const VectorXd& xa, const VectorXd& xb, int i, int j);

WTensor build_W(const GPModel& model);

// Integrated coincident-point second-derivative kernel: diagonal m×m.
MatrixXd build_E(const KernelSpec& spec);

struct CEstimate {
  MatrixXd C;        // symmetrized
  VectorXd eigvals;  // descending, clipped at 0
  MatrixXd eigvecs;  // columns aligned with eigvals
  int n = 0;
  KernelSpec spec;
};

CEstimate estimate_C(const GPModel& model, const WTensor& W);
// Same quantity computed from an externally maintained inverse + alpha;
// used by the incremental sequential path.
CEstimate estimate_C_from(const KernelSpec& spec, const MatrixXd& Kinv, const VectorXd& alpha,
                          const WTensor& W);
// Symmetrize + eigendecompose an externally assembled C (e.g. MC estimates).
CEstimate finalize_C(MatrixXd C, int n, KernelSpec spec);

// First two closed-form terms (prior minus data correction) with i=j summed:
// the integrated posterior gradient variance. Non-increasing as noiseless
// data accumulates.
double integrated_grad_var_trace(const GPModel& model, const WTensor& W);

struct Subspace {
  MatrixXd U;  // m×r, orthonormal columns
  int r = 0;
};

Subspace subspace(const CEstimate& C, int r);
// sin of the first principal angle: ‖Uᵀ·complement(Uhat)‖₂ ∈ [0,1]
double subspace_distance(const Subspace& U, const Subspace& Uhat);
// advisory cut-off: argmax of consecutive log-eigenvalue gaps (1-based count)
int suggest_r(const VectorXd& eigvals);

// Gradient cross-covariance of the Mahalanobis-form kernel
// σ² exp(-½‖A(x1-x2)‖²) between points x1, x2.
MatrixXd mahalanobis_grad_cov(const MatrixXd& A, double sigma2, const VectorXd& x1,
                              const VectorXd& x2);
// Empirical mean of n_draws outer products of gradients drawn from the prior
// gradient law of that kernel at a point.
MatrixXd mom_check(const MatrixXd& A, double sigma2, int n_draws, uint64_t seed);

}  // namespace asub
