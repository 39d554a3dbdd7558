#include "asub/benchfns.hpp"

#include <cmath>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "asub/gp.hpp"

namespace asub {

MatrixXd lhs(int n, int m, Rng& rng) {
  if (n < 1 || m < 1) throw InvalidInput("lhs needs positive dimensions");
  MatrixXd X(n, m);
  std::vector<int> perm(n);
  for (int d = 0; d < m; ++d) {
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
    // one point per stratum: (i - u)/n with u ~ U(0,1), strata shuffled per column
    for (int i = 0; i < n; ++i) X(i, d) = (perm[i] + 1 - rng.uniform()) / n;
  }
  return X;
}

VectorXd gp_sample(const KernelSpec& spec, const MatrixXd& X, Rng& rng) {
  const int n = static_cast<int>(X.rows());
  if (spec.variance == 0.0) return VectorXd::Zero(n);  // degenerate prior: a.s. zero
  spec.validate();
  MatrixXd K = build_gram(spec, X);
  K.diagonal().array() += 1e-10 * spec.variance;
  Eigen::LLT<MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) throw NumericalError("prior gram not positive definite");
  VectorXd z(n);
  for (int i = 0; i < n; ++i) z[i] = rng.normal();
  return llt.matrixL() * z;
}

VectorXd mahalanobis_joint_sample(const MatrixXd& A, double sigma2, Rng& rng) {
  if (A.rows() < 1 || A.cols() < 1) throw InvalidInput("empty metric factor");
  if (sigma2 <= 0) throw InvalidInput("variance must be positive");
  const int m = static_cast<int>(A.cols());
  // at a single point the value/gradient cross-covariance vanishes, so the two
  // blocks factor: value ~ N(0, σ²), gradient ~ N(0, σ² AᵀA)
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(MatrixXd(A.transpose() * A));
  if (es.info() != Eigen::Success) throw NumericalError("metric eigendecomposition failed");
  MatrixXd F = es.eigenvectors() *
               es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  VectorXd out(m + 1);
  out[0] = std::sqrt(sigma2) * rng.normal();
  VectorXd z(m);
  for (int d = 0; d < m; ++d) z[d] = rng.normal();
  out.tail(m) = std::sqrt(sigma2) * (F * z);
  return out;
}

std::function<double(const VectorXd&)> with_noise(std::function<double(const VectorXd&)> f,
                                                  double sd, uint64_t seed) {
  if (sd < 0) throw InvalidInput("noise sd must be non-negative");
  if (sd == 0) return f;
  auto rng = std::make_shared<Rng>(mix_seed(seed, 0x9015E));
  return [f = std::move(f), sd, rng](const VectorXd& x) { return f(x) + sd * rng->normal(); };
}

double testfun_2d(const VectorXd& x) {
  if (x.size() != 2) throw InvalidInput("testfun_2d is two-dimensional");
  return 0.1 * std::sin(20.0 * x[0]) - 4.0 * x[1] * x[1];
}

VectorXd testfun_2d_grad(const VectorXd& x) {
  if (x.size() != 2) throw InvalidInput("testfun_2d is two-dimensional");
  VectorXd g(2);
  g[0] = 2.0 * std::cos(20.0 * x[0]);
  g[1] = -8.0 * x[1];
  return g;
}

MatrixXd testfun_2d_C() {
  // entrywise integrals of (∇f)(∇f)ᵀ over the unit square, in closed form
  MatrixXd C(2, 2);
  C(0, 0) = 2.0 + std::sin(40.0) / 20.0;
  C(0, 1) = C(1, 0) = (std::sin(20.0) / 10.0) * (-4.0);
  C(1, 1) = 64.0 / 3.0;
  return C;
}

Benchmark testfun_2d_benchmark() {
  Benchmark b;
  b.name = "testfun2d";
  b.m = 2;
  b.f = [](const VectorXd& x) { return testfun_2d(x); };
  b.grad = [](const VectorXd& x) { return testfun_2d_grad(x); };
  b.noise_sd = 0.0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(testfun_2d_C());
  b.true_subspace = es.eigenvectors().col(1);  // top eigenvector
  b.true_r = 1;
  return b;
}

double rank1_quadratic(const VectorXd& a1, const VectorXd& x) {
  if (a1.size() != x.size()) throw InvalidInput("rank1_quadratic dimension mismatch");
  const double t = a1.dot(x);
  return t * t;
}

VectorXd rank1_quadratic_grad(const VectorXd& a1, const VectorXd& x) {
  if (a1.size() != x.size()) throw InvalidInput("rank1_quadratic dimension mismatch");
  return VectorXd(2.0 * a1.dot(x) * a1);
}

Benchmark rank1_benchmark(int m, uint64_t seed) {
  if (m < 2) throw InvalidInput("rank1 benchmark needs m >= 2");
  Rng rng(mix_seed(seed, 0xA1));
  VectorXd a(m);
  for (int d = 0; d < m; ++d) a[d] = rng.normal();
  Benchmark b;
  b.name = "rank1";
  b.m = m;
  b.f = [a](const VectorXd& x) { return rank1_quadratic(a, x); };
  b.grad = [a](const VectorXd& x) { return rank1_quadratic_grad(a, x); };
  b.noise_sd = 5e-5;
  b.true_subspace = a.normalized();
  b.true_r = 1;
  return b;
}

namespace {

// scale u in [0,1] to [lo, hi]
inline double sc(double u, double lo, double hi) { return lo + u * (hi - lo); }

}  // namespace

double wing_weight(const VectorXd& x) {
  if (x.size() != 10) throw InvalidInput("wing_weight is ten-dimensional");
  for (int d = 0; d < 10; ++d)
    if (x[d] < -1e-9 || x[d] > 1 + 1e-9) throw InvalidInput("wing_weight input outside [0,1]^10");
  const double deg = M_PI / 180.0;
  const double Sw = sc(x[0], 150, 200);
  const double Wfw = sc(x[1], 220, 300);
  const double A = sc(x[2], 6, 10);
  const double Lam = sc(x[3], -10 * deg, 10 * deg);
  const double q = sc(x[4], 16, 45);
  const double lam = sc(x[5], 0.5, 1.0);
  const double tc = sc(x[6], 0.08, 0.18);
  const double Nz = sc(x[7], 2.5, 6.0);
  const double Wdg = sc(x[8], 1700, 2500);
  const double Wp = sc(x[9], 0.025, 0.08);
  const double cl = std::cos(Lam);
  return 0.036 * std::pow(Sw, 0.758) * std::pow(Wfw, 0.0035) * std::pow(A / (cl * cl), 0.6) *
             std::pow(q, 0.006) * std::pow(lam, 0.04) * std::pow(100.0 * tc / cl, -0.3) *
             std::pow(Nz * Wdg, 0.49) +
         Sw * Wp;
}

Benchmark wing_weight_benchmark() {
  Benchmark b;
  b.name = "wing";
  b.m = 10;
  b.f = [](const VectorXd& x) { return wing_weight(x); };
  b.noise_sd = 0.0;
  b.true_r = 1;
  return b;
}

Benchmark covid_standin() {
  // fixed planted basis: orthonormalized columns of a seed-pinned draw
  const int m = 7, r = 3;
  Rng rng(mix_seed(0xC0F1D, 7));
  MatrixXd raw(m, r);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < r; ++j) raw(i, j) = rng.normal();
  Eigen::HouseholderQR<MatrixXd> qr(raw);
  MatrixXd A = qr.householderQ() * MatrixXd::Identity(m, r);
  // fix column signs for reproducibility across Eigen versions
  for (int j = 0; j < r; ++j)
    if (A(0, j) < 0) A.col(j) = -A.col(j);

  Benchmark b;
  b.name = "covid";
  b.m = m;
  b.true_subspace = A;
  b.true_r = r;
  b.noise_sd = 0.0;
  b.f = [A](const VectorXd& x) {
    if (x.size() != 7) throw InvalidInput("covid benchmark is seven-dimensional");
    const VectorXd t = A.transpose() * (x - VectorXd::Constant(7, 0.5));
    return std::sin(3.0 * t[0]) + 2.0 * t[1] * t[1] + 0.8 * t[1] * t[2] + 0.6 * t[2] * t[2] +
           0.5 * t[0] * t[2];
  };
  b.grad = [A](const VectorXd& x) {
    if (x.size() != 7) throw InvalidInput("covid benchmark is seven-dimensional");
    const VectorXd t = A.transpose() * (x - VectorXd::Constant(7, 0.5));
    VectorXd gt(3);
    gt[0] = 3.0 * std::cos(3.0 * t[0]) + 0.5 * t[2];
    gt[1] = 4.0 * t[1] + 0.8 * t[2];
    gt[2] = 0.8 * t[1] + 1.2 * t[2] + 0.5 * t[0];
    return VectorXd(A * gt);
  };
  return b;
}

Benchmark make_benchmark(const std::string& name, int m, uint64_t seed) {
  if (name == "testfun2d") return testfun_2d_benchmark();
  if (name == "rank1") return rank1_benchmark(m, seed);
  if (name == "wing") return wing_weight_benchmark();
  if (name == "covid") return covid_standin();
  throw InvalidInput("unknown benchmark: " + name);
}

}  // namespace asub
