#include "asub/asm_core.hpp"

#include <cmath>

#include "asub/kernels.hpp"
#include "asub/rng.hpp"

namespace asub {

double w_entry(const KernelSpec& spec, const VectorXd& xa, const VectorXd& xb, int i, int j) {
  const int m = spec.dim();
  if (xa.size() != m || xb.size() != m || i < 0 || i >= m || j < 0 || j >= m)
    throw InvalidInput("w_entry: bad arguments");
  double v = spec.variance * spec.variance;
  for (int l = 0; l < m; ++l) {
    const double ls = spec.lengthscales(l);
    if (i == j) {
      v *= (l == i) ? integral_w_ii(spec.family, ls, xa(l), xb(l))
                    : integral_I(spec.family, ls, xa(l), xb(l));
    } else if (l == i) {
      v *= integral_w_ij(spec.family, ls, xa(l), xb(l));
    } else if (l == j) {
      v *= integral_w_ij(spec.family, ls, xb(l), xa(l));
    } else {
      v *= integral_I(spec.family, ls, xa(l), xb(l));
    }
  }
  return v;
}

WTensor build_W(const GPModel& model) {
  const int n = model.n(), m = model.m();
  const KernelSpec& spec = model.spec;
  WTensor W;
  W.m = m;
  W.n = n;
  W.blocks.assign(static_cast<size_t>(m) * m, MatrixXd(n, n));
  if (n == 0) {
    for (auto& b : W.blocks) b.resize(0, 0);
    return W;
  }

  // per-coordinate 1-D tables; wij is orientation-sensitive so stored full
  std::vector<MatrixXd> tI(m), tii(m), tij(m);
  for (int d = 0; d < m; ++d) {
    tI[d].resize(n, n);
    tii[d].resize(n, n);
    tij[d].resize(n, n);
    const double l = spec.lengthscales(d);
    for (int r = 0; r < n; ++r) {
      for (int s = 0; s <= r; ++s) {
        OneDimVals v = onedim_all(spec.family, l, model.data.X(r, d), model.data.X(s, d));
        tI[d](r, s) = tI[d](s, r) = v.I;
        tii[d](r, s) = tii[d](s, r) = v.wii;
        tij[d](r, s) = v.wij_ab;
        tij[d](s, r) = v.wij_ba;
      }
    }
  }

  const double s4 = spec.variance * spec.variance;
  for (int i = 0; i < m; ++i) {
    for (int j = i; j < m; ++j) {
      MatrixXd& B = W.at(i, j);
      for (int r = 0; r < n; ++r) {
        for (int s = 0; s < n; ++s) {
          double v = s4;
          for (int l = 0; l < m; ++l) {
            if (i == j) {
              v *= (l == i) ? tii[l](r, s) : tI[l](r, s);
            } else if (l == i) {
              v *= tij[l](r, s);
            } else if (l == j) {
              v *= tij[l](s, r);
            } else {
              v *= tI[l](r, s);
            }
          }
          B(r, s) = v;
        }
      }
      if (j != i) W.at(j, i) = B.transpose();
    }
  }
  for (const auto& b : W.blocks)
    if (!b.allFinite()) throw NumericalError("build_W: non-finite block");
  return W;
}

MatrixXd build_E(const KernelSpec& spec) {
  const int m = spec.dim();
  MatrixXd E = MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) E(i, i) = kernel_cross_d2(spec, i, i);
  return E;
}

CEstimate finalize_C(MatrixXd C, int n, KernelSpec spec) {
  if (!C.allFinite()) throw NumericalError("C estimate has non-finite entries");
  CEstimate out;
  out.C = 0.5 * (C + C.transpose());
  out.n = n;
  out.spec = std::move(spec);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(out.C);
  const int m = static_cast<int>(C.rows());
  out.eigvals.resize(m);
  out.eigvecs.resize(m, m);
  for (int k = 0; k < m; ++k) {  // ascending → descending
    out.eigvals(k) = std::max(0.0, eig.eigenvalues()(m - 1 - k));
    out.eigvecs.col(k) = eig.eigenvectors().col(m - 1 - k);
  }
  return out;
}

CEstimate estimate_C_from(const KernelSpec& spec, const MatrixXd& Kinv, const VectorXd& alpha,
                          const WTensor& W) {
  const int m = W.m, n = W.n;
  MatrixXd E = build_E(spec);
  MatrixXd C(m, m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      double v = (i == j) ? E(i, i) : 0.0;
      if (n > 0) {
        const MatrixXd& Wij = W(i, j);
        v -= (Kinv.array() * Wij.array()).sum();
        v += alpha.dot(Wij * alpha);
      }
      C(i, j) = v;
    }
  }
  return finalize_C(std::move(C), n, spec);
}

CEstimate estimate_C(const GPModel& model, const WTensor& W) {
  if (W.m != model.m() || W.n != model.n())
    throw InvalidInput("estimate_C: W/model shape mismatch");
  MatrixXd Kinv;
  if (model.n() > 0) {
    Kinv = MatrixXd::Identity(model.n(), model.n());
    model.chol.triangularView<Eigen::Lower>().solveInPlace(Kinv);
    model.chol.triangularView<Eigen::Lower>().transpose().solveInPlace(Kinv);
  }
  return estimate_C_from(model.spec, Kinv, model.alpha, W);
}

double integrated_grad_var_trace(const GPModel& model, const WTensor& W) {
  const int m = model.m();
  MatrixXd E = build_E(model.spec);
  double t = E.trace();
  if (model.n() == 0) return t;
  MatrixXd Kinv = MatrixXd::Identity(model.n(), model.n());
  model.chol.triangularView<Eigen::Lower>().solveInPlace(Kinv);
  model.chol.triangularView<Eigen::Lower>().transpose().solveInPlace(Kinv);
  for (int i = 0; i < m; ++i) t -= (Kinv.array() * W(i, i).array()).sum();
  return t;
}

Subspace subspace(const CEstimate& C, int r) {
  const int m = static_cast<int>(C.C.rows());
  if (r < 1 || r >= m) throw InvalidInput("subspace: r must satisfy 1 <= r < m");
  Subspace s;
  s.U = C.eigvecs.leftCols(r);
  s.r = r;
  return s;
}

double subspace_distance(const Subspace& U, const Subspace& Uhat) {
  const int m = static_cast<int>(U.U.rows());
  if (Uhat.U.rows() != m) throw InvalidInput("subspace_distance: ambient dimension mismatch");
  const int rh = static_cast<int>(Uhat.U.cols());
  if (rh >= m) return 0.0;  // complement is empty
  Eigen::HouseholderQR<MatrixXd> qr(Uhat.U);
  MatrixXd Q = qr.householderQ();
  MatrixXd comp = Q.rightCols(m - rh);
  MatrixXd P = U.U.transpose() * comp;
  double s = P.jacobiSvd().singularValues()(0);
  return std::min(1.0, std::max(0.0, s));
}

int suggest_r(const VectorXd& eigvals) {
  const int m = static_cast<int>(eigvals.size());
  if (m < 2) return 1;
  int best = 1;
  double best_gap = -1.0;
  for (int k = 0; k + 1 < m; ++k) {
    double a = std::log(std::max(eigvals(k), 1e-300));
    double b = std::log(std::max(eigvals(k + 1), 1e-300));
    if (a - b > best_gap) {
      best_gap = a - b;
      best = k + 1;
    }
  }
  return best;
}

MatrixXd mahalanobis_grad_cov(const MatrixXd& A, double sigma2, const VectorXd& x1,
                              const VectorXd& x2) {
  const int m = static_cast<int>(A.cols());
  if (x1.size() != m || x2.size() != m)
    throw InvalidInput("mahalanobis_grad_cov: dimension mismatch");
  VectorXd d = x1 - x2;
  VectorXd Ad = A * d;
  MatrixXd AtA = A.transpose() * A;
  VectorXd w = A.transpose() * Ad;  // AᵀA d
  return sigma2 * std::exp(-0.5 * Ad.squaredNorm()) * (AtA - w * w.transpose());
}

MatrixXd mom_check(const MatrixXd& A, double sigma2, int n_draws, uint64_t seed) {
  if (n_draws < 1) throw InvalidInput("mom_check: n_draws must be positive");
  const int m = static_cast<int>(A.cols());
  VectorXd x0 = VectorXd::Constant(m, 0.5);
  MatrixXd cov = mahalanobis_grad_cov(A, sigma2, x0, x0);
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
  VectorXd scale = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  MatrixXd F = eig.eigenvectors() * scale.asDiagonal();  // F Fᵀ = cov
  Rng rng(mix_seed(seed, 0x300));
  MatrixXd acc = MatrixXd::Zero(m, m);
  VectorXd z(m);
  for (int t = 0; t < n_draws; ++t) {
    for (int i = 0; i < m; ++i) z(i) = rng.normal();
    VectorXd g = F * z;
    acc.selfadjointView<Eigen::Lower>().rankUpdate(g);
  }
  MatrixXd out = MatrixXd(acc.selfadjointView<Eigen::Lower>()) / n_draws;
  return out;
}

}  // namespace asub
