#include "asub/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/QR>

#include "asub/rng.hpp"

namespace asub {
namespace {

// least-squares fit of y on [1, X]; returns the slope part, or throws when
// the augmented design is rank deficient
VectorXd ls_slope(const MatrixXd& X, const VectorXd& y) {
  const int n = static_cast<int>(X.rows());
  const int m = static_cast<int>(X.cols());
  MatrixXd A(n, m + 1);
  A.col(0).setOnes();
  A.rightCols(m) = X;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (qr.rank() < m + 1) throw NumericalError("rank-deficient regression design");
  const VectorXd coef = qr.solve(y);
  return coef.tail(m);
}

}  // namespace

VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double h,
                     long* eval_count) {
  const int m = static_cast<int>(x.size());
  if (!(h > 0)) throw InvalidInput("finite-difference step must be positive");
  const double base = f(x);
  long used = 1;
  if (!std::isfinite(base)) throw NumericalError("objective returned a non-finite value");
  VectorXd g(m);
  VectorXd xs = x;
  for (int d = 0; d < m; ++d) {
    const double sign = (x[d] + h > 1.0) ? -1.0 : 1.0;  // flip at the upper face
    xs[d] = x[d] + sign * h;
    const double fd = f(xs);
    ++used;
    if (!std::isfinite(fd)) throw NumericalError("objective returned a non-finite value");
    g[d] = sign * (fd - base) / h;
    xs[d] = x[d];
  }
  if (eval_count != nullptr) *eval_count += used;
  return g;
}

double GradientOracle::value(const VectorXd& x) {
  ++eval_count;
  const double v = f(x);
  if (!std::isfinite(v)) throw NumericalError("objective returned a non-finite value");
  return v;
}

VectorXd GradientOracle::gradient(const VectorXd& x) {
  if (x.size() != m) throw InvalidInput("gradient point dimension mismatch");
  if (kind == Kind::Analytic) {
    if (!grad) throw InvalidInput("analytic oracle has no gradient function");
    VectorXd g = grad(x);
    if (!g.allFinite()) throw NumericalError("gradient returned a non-finite value");
    return g;
  }
  return fd_gradient(f, x, fd_step, &eval_count);
}

CEstimate mc_estimate_C(GradientOracle& oracle, int M, uint64_t seed) {
  if (M < 1) throw InvalidInput("Monte Carlo needs at least one sample");
  if (oracle.m < 1) throw InvalidInput("oracle dimension not set");
  const int m = oracle.m;
  Rng rng(mix_seed(seed, 0x3C));
  MatrixXd C = MatrixXd::Zero(m, m);
  VectorXd x(m);
  for (int i = 0; i < M; ++i) {
    for (int d = 0; d < m; ++d) x[d] = rng.uniform();
    const VectorXd g = oracle.gradient(x);
    C.selfadjointView<Eigen::Lower>().rankUpdate(g, 1.0);
  }
  C = C.selfadjointView<Eigen::Lower>();
  C /= M;
  KernelSpec tag;
  tag.family = KernelFamily::Gaussian;
  tag.lengthscales = VectorXd::Ones(m);
  return finalize_C(std::move(C), 0, std::move(tag));
}

Subspace ols_direction(const Dataset& data) {
  data.validate();
  const int n = data.n(), m = data.m();
  if (n < m + 1) throw InvalidInput("global linear fit needs at least m+1 points");
  VectorXd slope = ls_slope(data.X, data.y);
  const double scale = std::max(1.0, data.y.cwiseAbs().maxCoeff());
  if (slope.cwiseAbs().maxCoeff() <= 1e-13 * scale)
    throw NumericalError("zero regression slope has no direction");
  Subspace out;
  out.U = slope.normalized();
  out.r = 1;
  return out;
}

CEstimate local_linear_C(const Dataset& data, int k_neighbors, int* n_skipped) {
  data.validate();
  const int n = data.n(), m = data.m();
  if (k_neighbors < m + 1) throw InvalidInput("local linear fit needs at least m+1 neighbors");
  if (k_neighbors > n) throw InvalidInput("more neighbors requested than data points");

  MatrixXd C = MatrixXd::Zero(m, m);
  int used = 0, skipped = 0;
  std::vector<std::pair<double, int>> dist(n);
  MatrixXd Xk(k_neighbors, m);
  VectorXd yk(k_neighbors);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j)
      dist[j] = {(data.X.row(j) - data.X.row(i)).squaredNorm(), j};
    std::partial_sort(dist.begin(), dist.begin() + k_neighbors, dist.end());
    for (int t = 0; t < k_neighbors; ++t) {
      Xk.row(t) = data.X.row(dist[t].second);
      yk[t] = data.y[dist[t].second];
    }
    try {
      const VectorXd b = ls_slope(Xk, yk);
      C.selfadjointView<Eigen::Lower>().rankUpdate(b, 1.0);
      ++used;
    } catch (const NumericalError&) {
      ++skipped;
    }
  }
  if (n_skipped != nullptr) *n_skipped = skipped;
  if (used == 0) throw NumericalError("every local neighborhood was degenerate");
  C = C.selfadjointView<Eigen::Lower>();
  C /= used;
  KernelSpec tag;
  tag.family = KernelFamily::Gaussian;
  tag.lengthscales = VectorXd::Ones(m);
  return finalize_C(std::move(C), 0, std::move(tag));
}

}  // namespace asub
