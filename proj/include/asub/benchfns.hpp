#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "asub/rng.hpp"
#include "asub/types.hpp"

namespace asub {

// Latin hypercube on [0,1]^m: jittered strata, one independent permutation per
// column.
MatrixXd lhs(int n, int m, Rng& rng);

// Draw one function-value vector from the prior at the given points (small
// jitter added for factorization).
VectorXd gp_sample(const KernelSpec& spec, const MatrixXd& X, Rng& rng);

// Joint (value, gradient) draw at one point under the anisotropic squared-
// exponential prior with metric AᵀA: value ~ N(0, σ²), gradient ~ N(0, σ²AᵀA),
// independent of each other at a coincident point. Returns a vector of length
// m + 1 with the value first.
VectorXd mahalanobis_joint_sample(const MatrixXd& A, double sigma2, Rng& rng);

// Wrap an objective with additive iid N(0, sd²) observation noise; the noise
// stream is deterministic in call order.
std::function<double(const VectorXd&)> with_noise(std::function<double(const VectorXd&)> f,
                                                  double sd, uint64_t seed);

struct Benchmark {
  std::string name;
  int m = 0;
  std::function<double(const VectorXd&)> f;       // noiseless objective on [0,1]^m
  std::function<VectorXd(const VectorXd&)> grad;  // analytic gradient (may be empty)
  double noise_sd = 0.0;                          // suggested observation noise
  MatrixXd true_subspace;                         // m×r reference basis, empty when unknown
  int true_r = 0;
};

// 2-D test function 0.1·sin(20·x1) − 4·x2², its gradient, and the exact
// gradient second-moment matrix over the unit square.
double testfun_2d(const VectorXd& x);
VectorXd testfun_2d_grad(const VectorXd& x);
MatrixXd testfun_2d_C();

// f(x) = (a1ᵀx)²: the gradient 2(a1ᵀx)·a1 lies in span(a1) everywhere.
double rank1_quadratic(const VectorXd& a1, const VectorXd& x);
VectorXd rank1_quadratic_grad(const VectorXd& a1, const VectorXd& x);
// benchmark instance with a1 drawn iid standard normal from the seed
Benchmark rank1_benchmark(int m, uint64_t seed);

// Ten-variable wing-weight formula; inputs in [0,1]^10 are rescaled to the
// usual physical ranges internally.
double wing_weight(const VectorXd& x);
Benchmark wing_weight_benchmark();

// Seven-variable surrogate with a planted three-dimensional active subspace
// and an analytic gradient confined to it.
Benchmark covid_standin();

Benchmark testfun_2d_benchmark();

// Lookup by name: "testfun2d", "rank1", "wing", "covid". The seed only
// affects benchmarks with randomized structure (rank1).
Benchmark make_benchmark(const std::string& name, int m, uint64_t seed);

}  // namespace asub
