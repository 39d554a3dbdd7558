#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace asub {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class KernelFamily { Gaussian, Matern32, Matern52 };

const char* family_name(KernelFamily f);
KernelFamily family_from_name(const std::string& s);

// Separable stationary kernel: k(x,x') = variance * prod_d rho((x_d-x'_d)/...; lengthscales[d]).
// The nugget is observation-noise variance, added to the Gram diagonal only.
struct KernelSpec {
  KernelFamily family = KernelFamily::Gaussian;
  VectorXd lengthscales;
  double variance = 1.0;
  double nugget = 0.0;

  int dim() const { return static_cast<int>(lengthscales.size()); }
  void validate() const;
};

struct Dataset {
  MatrixXd X;   // n x m, rows in [0,1]^m
  VectorXd y;   // n

  int n() const { return static_cast<int>(X.rows()); }
  int m() const { return static_cast<int>(X.cols()); }
  void validate() const;
};

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidInput : Error { using Error::Error; };
struct NumericalError : Error { using Error::Error; };
struct FitError : Error { using Error::Error; };
struct DegenerateCandidate : Error { using Error::Error; };
struct DesignSaturated : Error { using Error::Error; };
struct UQError : Error { using Error::Error; };

}  // namespace asub
