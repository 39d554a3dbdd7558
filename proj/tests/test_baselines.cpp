#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numeric>
#include <vector>

#include "asub/baselines.hpp"
#include "asub/benchfns.hpp"
#include "asub/rng.hpp"
#include "doctest.h"

using namespace asub;

namespace {

double angle_deg(const VectorXd& u, const VectorXd& v) {
  const double c = std::min(1.0, std::abs(u.normalized().dot(v.normalized())));
  return std::acos(c) * 180.0 / M_PI;
}

}  // namespace

TEST_CASE("fd_gradient: exact cases, boundary flip, eval accounting") {
  long evals = 0;
  const VectorXd x0 = VectorXd::Constant(3, 0.4);
  const VectorXd gc = fd_gradient([](const VectorXd&) { return 7.5; }, x0, 1e-4, &evals);
  CHECK(gc.cwiseAbs().maxCoeff() == 0.0);
  CHECK(evals == 4);

  const VectorXd gl = fd_gradient([](const VectorXd& x) { return x.sum(); }, x0, 1e-4);
  CHECK((gl - VectorXd::Ones(3)).cwiseAbs().maxCoeff() <= 1e-10);

  // boundary coordinate: forward step would leave the box; flipped difference
  // still recovers the slope of a linear function exactly
  VectorXd xb(2);
  xb << 1.0, 0.5;
  const VectorXd gb =
      fd_gradient([](const VectorXd& x) { return 2.0 * x[0] - 3.0 * x[1]; }, xb, 1e-4);
  CHECK(gb[0] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(gb[1] == doctest::Approx(-3.0).epsilon(1e-9));

  CHECK_THROWS_AS(
      fd_gradient([](const VectorXd&) { return std::numeric_limits<double>::quiet_NaN(); }, x0,
                  1e-4),
      NumericalError);
  CHECK_THROWS_AS(fd_gradient([](const VectorXd&) { return 0.0; }, x0, 0.0), InvalidInput);
}

TEST_CASE("fd_gradient error on a curved target is first order in the step") {
  const Benchmark bench = rank1_benchmark(3, 7);
  Rng rng(12);
  VectorXd x(3);
  for (int d = 0; d < 3; ++d) x[d] = 0.2 + 0.5 * rng.uniform();
  const VectorXd exact = bench.grad(x);

  const double h0 = 1e-4;
  const VectorXd g0 = fd_gradient(bench.f, x, h0);
  // forward-difference bias per coordinate is h·a_d² for this quadratic
  CHECK((g0 - exact).cwiseAbs().maxCoeff() < 10.0 * h0);

  std::vector<double> hs{1e-2, 1e-3, 1e-4}, errs;
  for (double h : hs) errs.push_back((fd_gradient(bench.f, x, h) - exact).norm());
  for (size_t k = 0; k + 1 < hs.size(); ++k) {
    const double slope = std::log(errs[k] / errs[k + 1]) / std::log(hs[k] / hs[k + 1]);
    CHECK(slope >= 0.8);
    CHECK(slope <= 1.2);
  }
}

TEST_CASE("GradientOracle: evaluation accounting per kind") {
  const Benchmark bench = rank1_benchmark(4, 21);
  GradientOracle fd;
  fd.kind = GradientOracle::Kind::ForwardFD;
  fd.m = 4;
  fd.f = bench.f;
  fd.fd_step = 1e-4;
  const VectorXd x = VectorXd::Constant(4, 0.3);
  fd.value(x);
  CHECK(fd.eval_count == 1);
  fd.gradient(x);
  CHECK(fd.eval_count == 1 + 5);
  fd.gradient(x);
  CHECK(fd.eval_count == 1 + 10);

  GradientOracle an;
  an.kind = GradientOracle::Kind::Analytic;
  an.m = 4;
  an.f = bench.f;
  an.grad = bench.grad;
  const VectorXd g = an.gradient(x);
  CHECK(an.eval_count == 0);
  CHECK((g - bench.grad(x)).norm() == 0.0);

  GradientOracle broken;
  broken.kind = GradientOracle::Kind::Analytic;
  broken.m = 4;
  broken.f = bench.f;
  CHECK_THROWS_AS(broken.gradient(x), InvalidInput);
  CHECK_THROWS_AS(an.gradient(VectorXd::Zero(2)), InvalidInput);
}

TEST_CASE("mc_estimate_C: analytic gradients nail a one-direction target") {
  const Benchmark bench = rank1_benchmark(5, 33);
  GradientOracle an;
  an.kind = GradientOracle::Kind::Analytic;
  an.m = 5;
  an.f = bench.f;
  an.grad = bench.grad;

  const CEstimate est = mc_estimate_C(an, 50, 3);
  Subspace truth{bench.true_subspace, 1};
  Subspace got{est.eigvecs.col(0), 1};
  CHECK(subspace_distance(truth, got) < 1e-10);
  CHECK(est.eigvals[1] <= 1e-12 * est.eigvals[0]);
  CHECK(an.eval_count == 0);

  // forward differences on noisy observations lose that accuracy
  GradientOracle fd;
  fd.kind = GradientOracle::Kind::ForwardFD;
  fd.m = 5;
  fd.f = with_noise(bench.f, 5e-5, 99);
  fd.fd_step = 1e-4;
  const CEstimate noisy = mc_estimate_C(fd, 50, 3);
  Subspace got2{noisy.eigvecs.col(0), 1};
  CHECK(subspace_distance(truth, got2) > 1e-4);
  CHECK(fd.eval_count == 50 * 6);
}

TEST_CASE("mc_estimate_C: M=1 is a single outer product; seeds reproduce") {
  const Benchmark bench = rank1_benchmark(3, 41);
  GradientOracle an;
  an.kind = GradientOracle::Kind::Analytic;
  an.m = 3;
  an.f = bench.f;
  an.grad = bench.grad;
  const CEstimate one = mc_estimate_C(an, 1, 17);

  Rng rng(mix_seed(17, 0x3C));  // replay the sampler's stream
  VectorXd x(3);
  for (int d = 0; d < 3; ++d) x[d] = rng.uniform();
  const VectorXd g = bench.grad(x);
  CHECK((one.C - g * g.transpose()).cwiseAbs().maxCoeff() <= 1e-14);

  const CEstimate a = mc_estimate_C(an, 40, 5);
  const CEstimate b = mc_estimate_C(an, 40, 5);
  CHECK((a.C - b.C).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(mc_estimate_C(an, 0, 5), InvalidInput);
}

TEST_CASE("mc_estimate_C converges at the Monte Carlo rate on a smooth target") {
  Benchmark bench = testfun_2d_benchmark();
  GradientOracle an;
  an.kind = GradientOracle::Kind::Analytic;
  an.m = 2;
  an.f = bench.f;
  an.grad = bench.grad;
  const MatrixXd truth = testfun_2d_C();
  double s1 = 0, s2 = 0;
  for (int rep = 0; rep < 16; ++rep) {
    s1 += (mc_estimate_C(an, 10000, 900 + 2 * rep).C - truth).squaredNorm();
    s2 += (mc_estimate_C(an, 40000, 901 + 2 * rep).C - truth).squaredNorm();
  }
  // root-mean-square error over repetitions; quadrupling the sample count
  // should halve it
  const double ratio = std::sqrt(s1 / s2);
  CHECK(ratio > 1.4);
  CHECK(ratio < 2.8);
}

TEST_CASE("ols_direction: exact, noisy, and degenerate designs") {
  Rng rng(61);
  const int n = 200, m = 3;
  Dataset data;
  data.X = lhs(n, m, rng);
  data.y = 3.0 * data.X.col(0);
  const Subspace s = ols_direction(data);
  CHECK(std::abs(s.U.col(0)[0]) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(s.U.col(0)[1]) <= 1e-12);

  VectorXd a(m);
  a << 0.6, -0.64, 0.48;
  a.normalize();
  VectorXd y2(n);
  for (int i = 0; i < n; ++i) y2[i] = a.dot(data.X.row(i)) + 0.01 * rng.normal();
  Dataset noisy{data.X, y2};
  CHECK(angle_deg(ols_direction(noisy).U.col(0), a) < 5.0);

  Dataset constant{data.X, VectorXd::Constant(n, 4.2)};
  CHECK_THROWS_AS(ols_direction(constant), NumericalError);

  Dataset tiny{data.X.topRows(3), data.y.head(3)};
  CHECK_THROWS_AS(ols_direction(tiny), InvalidInput);

  Dataset dup = data;
  dup.X.col(2) = dup.X.col(0);  // collinear columns
  CHECK_THROWS_AS(ols_direction(dup), NumericalError);

  // row order must not matter
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  Dataset shuf;
  shuf.X.resize(n, m);
  shuf.y.resize(n);
  for (int i = 0; i < n; ++i) {
    shuf.X.row(i) = noisy.X.row(perm[i]);
    shuf.y[i] = noisy.y[perm[i]];
  }
  CHECK((ols_direction(shuf).U - ols_direction(noisy).U).cwiseAbs().maxCoeff() <= 1e-11);
}

TEST_CASE("local_linear_C: linear data, curved data, and the k=n limit") {
  Rng rng(71);
  const int n = 200, m = 3;
  Dataset data;
  data.X = lhs(n, m, rng);
  VectorXd b(m);
  b << 2.0, -1.0, 0.5;
  data.y = data.X * b;

  const CEstimate lin = local_linear_C(data, 3 * m);
  CHECK(lin.eigvals[1] <= 1e-16 * lin.eigvals[0]);
  CHECK(angle_deg(lin.eigvecs.col(0), b) < 1e-6);

  const Benchmark bench = rank1_benchmark(m, 12);
  VectorXd yq(n);
  for (int i = 0; i < n; ++i) yq[i] = bench.f(data.X.row(i).transpose());
  Dataset curved{data.X, yq};
  const CEstimate ll = local_linear_C(curved, 3 * m);
  Subspace truth{bench.true_subspace, 1};
  Subspace got{ll.eigvecs.col(0), 1};
  CHECK(subspace_distance(truth, got) < 0.2);

  // one global neighborhood reduces to the plain least-squares outer product
  const CEstimate full = local_linear_C(curved, n);
  MatrixXd A(n, m + 1);
  A.col(0).setOnes();
  A.rightCols(m) = curved.X;
  const VectorXd coef = A.colPivHouseholderQr().solve(curved.y);
  const VectorXd slope = coef.tail(m);
  CHECK((full.C - slope * slope.transpose()).cwiseAbs().maxCoeff() <= 1e-12);

  CHECK_THROWS_AS(local_linear_C(curved, m), InvalidInput);
  CHECK_THROWS_AS(local_linear_C(curved, n + 1), InvalidInput);
}

TEST_CASE("local_linear_C: degenerate patches are skipped and counted") {
  const int m = 2;
  MatrixXd X(8, m);
  X << 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1,  // four coincident points
      0.9, 0.2, 0.2, 0.9, 0.8, 0.8, 0.5, 0.5;
  VectorXd y(8);
  y << 1, 1, 1, 1, 2, 3, 4, 5;
  Dataset data{X, y};
  int skipped = -1;
  const CEstimate est = local_linear_C(data, 3, &skipped);
  CHECK(skipped >= 4);  // the coincident cluster cannot support a plane
  CHECK(est.C.allFinite());
}

TEST_CASE("local_linear_C is invariant to row order on tie-free data") {
  Rng rng(81);
  const int n = 60, m = 2;
  Dataset data;
  data.X = lhs(n, m, rng);
  data.y = VectorXd(n);
  for (int i = 0; i < n; ++i)
    data.y[i] = std::sin(3.0 * data.X(i, 0)) + data.X(i, 1) * data.X(i, 1);
  const CEstimate base = local_linear_C(data, 3 * m);

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
  Dataset shuf;
  shuf.X.resize(n, m);
  shuf.y.resize(n);
  for (int i = 0; i < n; ++i) {
    shuf.X.row(i) = data.X.row(perm[i]);
    shuf.y[i] = data.y[perm[i]];
  }
  const CEstimate other = local_linear_C(shuf, 3 * m);
  CHECK((base.C - other.C).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, base.C.norm()));
}
