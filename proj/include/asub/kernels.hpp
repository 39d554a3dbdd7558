#pragma once

#include "asub/types.hpp"

namespace asub {

// 1-D unit-variance correlation rho(u) and its derivatives in the lag u.
double corr(KernelFamily f, double u, double l);
double corr_d1(KernelFamily f, double u, double l);
double corr_d2(KernelFamily f, double u, double l);

double kernel_eval(const KernelSpec& spec, const VectorXd& x, const VectorXd& x2);
// d k(x, x2) / d x_i
double kernel_dx(const KernelSpec& spec, const VectorXd& x, const VectorXd& x2, int i);
// d^2 k(x, x') / dx_i dx'_j at x = x'
double kernel_cross_d2(const KernelSpec& spec, int i, int j);

// kappa(x): m x n matrix whose (i, r) entry is d k(x, X_r) / d x_i
MatrixXd kernel_dx_all(const KernelSpec& spec, const VectorXd& x, const MatrixXd& X);

enum class IntegralKind { I_dd, w_ii, w_ij };

// Closed-form unit-variance integrals over x in [0,1]:
//   I_dd(a,b) = int rho(x-a) rho(x-b) dx          (symmetric)
//   w_ii(a,b) = int rho'(x-a) rho'(x-b) dx        (symmetric)
//   w_ij(a,b) = int rho'(x-a) rho(x-b) dx         (NOT symmetric)
double integral_I(KernelFamily f, double l, double a, double b);
double integral_w_ii(KernelFamily f, double l, double a, double b);
double integral_w_ij(KernelFamily f, double l, double a, double b);

struct Grad2 {
  double da = 0.0;
  double db = 0.0;
};
Grad2 integral_grads(KernelFamily f, double l, double a, double b, IntegralKind which);

// Adaptive-quadrature path for the same integrals; the cross-check authority.
double integral_quadrature(KernelFamily f, double l, double a, double b, IntegralKind which);

// All four values needed per coordinate pair during W assembly.
struct OneDimVals {
  double I = 0.0;
  double wij_ab = 0.0;  // w_ij(a, b)
  double wij_ba = 0.0;  // w_ij(b, a)
  double wii = 0.0;
};
OneDimVals onedim_all(KernelFamily f, double l, double a, double b);

// int rho''(x-a) rho'(x-b) dx; d(w_ii)/da = -vria(a,b)
double integral_vria(KernelFamily f, double l, double a, double b);
// rho'(1-a) rho(1-b) - rho'(-a) rho(-b); d(w_ij)/da = w_ii(a,b) - this
double wij_boundary_term(KernelFamily f, double l, double a, double b);

}  // namespace asub
