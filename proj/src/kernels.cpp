#include "asub/kernels.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace asub {

namespace {
constexpr double kSq3 = 1.7320508075688772;
constexpr double kSq5 = 2.23606797749979;
}  // namespace

const char* family_name(KernelFamily f) {
  switch (f) {
    case KernelFamily::Gaussian: return "gaussian";
    case KernelFamily::Matern32: return "matern32";
    case KernelFamily::Matern52: return "matern52";
  }
  return "?";
}

KernelFamily family_from_name(const std::string& s) {
  if (s == "gaussian" || s == "g") return KernelFamily::Gaussian;
  if (s == "matern32" || s == "m32") return KernelFamily::Matern32;
  if (s == "matern52" || s == "m52") return KernelFamily::Matern52;
  throw InvalidInput("unknown kernel family: " + s);
}

void KernelSpec::validate() const {
  if (lengthscales.size() < 1) throw InvalidInput("kernel needs at least one lengthscale");
  if ((lengthscales.array() <= 0.0).any()) throw InvalidInput("lengthscales must be positive");
  if (!(variance > 0.0)) throw InvalidInput("variance must be positive");
  if (nugget < 0.0) throw InvalidInput("nugget must be non-negative");
}

void Dataset::validate() const {
  if (X.rows() != y.size()) throw InvalidInput("X rows and y length differ");
  if (X.rows() < 1) throw InvalidInput("empty dataset");
  if ((X.array() < -1e-12).any() || (X.array() > 1.0 + 1e-12).any())
    throw InvalidInput("design points must lie in [0,1]^m");
}

double corr(KernelFamily f, double u, double l) {
  switch (f) {
    case KernelFamily::Gaussian:
      return std::exp(-u * u / (2.0 * l * l));
    case KernelFamily::Matern32: {
      double a = kSq3 * std::abs(u) / l;
      return (1.0 + a) * std::exp(-a);
    }
    case KernelFamily::Matern52: {
      double a = kSq5 * std::abs(u) / l;
      return (1.0 + a + a * a / 3.0) * std::exp(-a);
    }
  }
  return 0.0;
}

double corr_d1(KernelFamily f, double u, double l) {
  switch (f) {
    case KernelFamily::Gaussian:
      return -(u / (l * l)) * std::exp(-u * u / (2.0 * l * l));
    case KernelFamily::Matern32:
      return -(3.0 * u / (l * l)) * std::exp(-kSq3 * std::abs(u) / l);
    case KernelFamily::Matern52: {
      double a = kSq5 * std::abs(u) / l;
      return -(5.0 * u / (3.0 * l * l)) * (1.0 + a) * std::exp(-a);
    }
  }
  return 0.0;
}

double corr_d2(KernelFamily f, double u, double l) {
  switch (f) {
    case KernelFamily::Gaussian: {
      double l2 = l * l;
      return (u * u / (l2 * l2) - 1.0 / l2) * std::exp(-u * u / (2.0 * l2));
    }
    case KernelFamily::Matern32: {
      double a = kSq3 * std::abs(u) / l;
      return (3.0 / (l * l)) * (a - 1.0) * std::exp(-a);
    }
    case KernelFamily::Matern52: {
      double a = kSq5 * std::abs(u) / l;
      return -(5.0 / (3.0 * l * l)) * (1.0 + a - a * a) * std::exp(-a);
    }
  }
  return 0.0;
}

double kernel_eval(const KernelSpec& spec, const VectorXd& x, const VectorXd& x2) {
  if (x.size() != spec.dim() || x2.size() != spec.dim())
    throw InvalidInput("kernel_eval: dimension mismatch");
  double v = spec.variance;
  for (int d = 0; d < spec.dim(); ++d) v *= corr(spec.family, x[d] - x2[d], spec.lengthscales[d]);
  return v;
}

double kernel_dx(const KernelSpec& spec, const VectorXd& x, const VectorXd& x2, int i) {
  if (i < 0 || i >= spec.dim()) throw InvalidInput("kernel_dx: coordinate out of range");
  if (x.size() != spec.dim() || x2.size() != spec.dim())
    throw InvalidInput("kernel_dx: dimension mismatch");
  double v = spec.variance;
  for (int d = 0; d < spec.dim(); ++d) {
    double u = x[d] - x2[d];
    v *= (d == i) ? corr_d1(spec.family, u, spec.lengthscales[d])
                  : corr(spec.family, u, spec.lengthscales[d]);
  }
  return v;
}

double kernel_cross_d2(const KernelSpec& spec, int i, int j) {
  if (i != j) return 0.0;
  double l = spec.lengthscales[i];
  switch (spec.family) {
    case KernelFamily::Gaussian: return spec.variance / (l * l);
    case KernelFamily::Matern32: return 3.0 * spec.variance / (l * l);
    case KernelFamily::Matern52: return (5.0 / 3.0) * spec.variance / (l * l);
  }
  return 0.0;
}

MatrixXd kernel_dx_all(const KernelSpec& spec, const VectorXd& x, const MatrixXd& X) {
  const int m = spec.dim(), n = static_cast<int>(X.rows());
  MatrixXd out(m, n);
  VectorXd base(m);
  for (int r = 0; r < n; ++r) {
    for (int d = 0; d < m; ++d) base[d] = corr(spec.family, x[d] - X(r, d), spec.lengthscales[d]);
    for (int i = 0; i < m; ++i) {
      double v = spec.variance * corr_d1(spec.family, x[i] - X(r, i), spec.lengthscales[i]);
      for (int d = 0; d < m; ++d)
        if (d != i) v *= base[d];
      out(i, r) = v;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian closed forms via truncated-Gaussian moments.
// M_k = int_0^1 (x-mu)^k exp(-(x-mu)^2/l^2) dx with mu = (a+b)/2.
// ---------------------------------------------------------------------------
namespace {

struct GaussMoments {
  double m0, m1, m2, m3;
};

GaussMoments gauss_moments(double a, double b, double l) {
  const double mu = 0.5 * (a + b);
  const double A = -mu, B = 1.0 - mu;
  const double il2 = 1.0 / (l * l);
  const double eA = std::exp(-A * A * il2), eB = std::exp(-B * B * il2);
  GaussMoments M;
  M.m0 = 0.5 * l * std::sqrt(M_PI) * (std::erf(B / l) - std::erf(A / l));
  M.m1 = -0.5 * l * l * (eB - eA);
  M.m2 = -0.5 * l * l * (B * eB - A * eA) + 0.5 * l * l * M.m0;
  M.m3 = -0.5 * l * l * (B * B * eB - A * A * eA) + l * l * M.m1;
  return M;
}

double gauss_I(double a, double b, double l) {
  double d = a - b;
  return std::exp(-d * d / (4.0 * l * l)) * gauss_moments(a, b, l).m0;
}

double gauss_wij(double a, double b, double l) {
  double d = a - b;
  GaussMoments M = gauss_moments(a, b, l);
  return std::exp(-d * d / (4.0 * l * l)) * (-1.0 / (l * l)) * (M.m1 - 0.5 * d * M.m0);
}

double gauss_wii(double a, double b, double l) {
  double d = a - b;
  GaussMoments M = gauss_moments(a, b, l);
  return std::exp(-d * d / (4.0 * l * l)) / (l * l * l * l) * (M.m2 - 0.25 * d * d * M.m0);
}

double gauss_vria(double a, double b, double l) {
  double d = a - b;
  GaussMoments M = gauss_moments(a, b, l);
  double l2 = l * l, l4 = l2 * l2;
  double poly = (M.m3 - 0.5 * d * M.m2 - 0.25 * d * d * M.m1 + 0.125 * d * d * d * M.m0) / l4 -
                M.m1 / l2 - 0.5 * d * M.m0 / l2;
  return std::exp(-d * d / (4.0 * l2)) * (-poly / l2);
}

// ---------------------------------------------------------------------------
// Matern closed forms: exact piecewise integration of poly(t)*exp(s*t).
// On each subinterval between breakpoints {0, a, b, 1}, each factor is a
// polynomial in |x-arg| times exp(-c|x-arg|); exponential prefactors are kept
// <= 1 by centering at the piece start, and pieces where the joint rate is
// positive are integrated right-to-left so nothing overflows.
// ---------------------------------------------------------------------------
enum FactorType { kRho = 0, kDRho = 1, kDDRho = 2 };

constexpr int kMaxDeg = 2;           // per-factor polynomial degree
constexpr int kProdDeg = 2 * kMaxDeg;  // product degree
using Poly = std::array<double, kProdDeg + 1>;

// coefficients of the u>0 branch P(v) with factor(u>0) = P(u) e^{-c u}
void branch_poly(KernelFamily f, FactorType t, double l, Poly& P, double& c) {
  P.fill(0.0);
  double l2 = l * l;
  if (f == KernelFamily::Matern32) {
    c = kSq3 / l;
    switch (t) {
      case kRho: P[0] = 1.0; P[1] = c; break;
      case kDRho: P[1] = -3.0 / l2; break;
      case kDDRho: P[0] = -3.0 / l2; P[1] = 3.0 * c / l2; break;
    }
  } else {  // Matern52
    c = kSq5 / l;
    double q = 5.0 / (3.0 * l2);
    switch (t) {
      case kRho: P[0] = 1.0; P[1] = c; P[2] = c * c / 3.0; break;
      case kDRho: P[1] = -q; P[2] = -q * c; break;
      case kDDRho: P[0] = -q; P[1] = -q * c; P[2] = q * c * c; break;
    }
  }
}

// coefficients of P(alpha + beta*t) in t (beta = +-1)
Poly compose_affine(const Poly& P, double alpha, double beta) {
  Poly out{};
  out.fill(0.0);
  for (int k = kMaxDeg; k >= 0; --k) {
    // out = out*(alpha + beta t) + P[k]
    Poly nxt{};
    nxt.fill(0.0);
    for (int j = 0; j <= kProdDeg; ++j) {
      nxt[j] += alpha * out[j];
      if (j + 1 <= kProdDeg) nxt[j + 1] += beta * out[j];
    }
    nxt[0] += P[k];
    out = nxt;
  }
  return out;
}

struct PieceFactor {
  Poly poly;       // polynomial in local t
  double rate;     // signed exponential rate
  double logc0;    // log of the prefactor at t=0 (always <= 0)
  double sign;     // odd-branch sign flip
};

PieceFactor factor_on_piece(KernelFamily f, FactorType t, double l, double arg, double p) {
  Poly P;
  double c;
  branch_poly(f, t, l, P, c);
  PieceFactor out;
  if (p >= arg) {  // x - arg >= 0 on the piece
    double alpha = p - arg;
    out.poly = compose_affine(P, alpha, +1.0);
    out.rate = -c;
    out.logc0 = -c * alpha;
    out.sign = 1.0;
  } else {  // piece entirely left of arg
    double alpha = arg - p;
    out.poly = compose_affine(P, alpha, -1.0);
    out.rate = +c;
    out.logc0 = -c * alpha;
    out.sign = (t == kDRho) ? -1.0 : 1.0;
  }
  return out;
}

// E_k = int_0^h t^k e^{st} dt for s <= 0, k = 0..kmax
void exp_moments_nonpos(double s, double h, int kmax, double* E) {
  if (s == 0.0) {
    double hk = h;
    for (int k = 0; k <= kmax; ++k) {
      E[k] = hk / (k + 1);
      hk *= h;
    }
    return;
  }
  if (std::abs(s * h) < 0.5) {
    // series: h^{k+1} sum_j (sh)^j / (j! (k+j+1))
    double sh = s * h;
    for (int k = 0; k <= kmax; ++k) {
      double x = 1.0, fac = 1.0, tot = 0.0;
      for (int j = 0; j < 60; ++j) {
        double contrib = x / (fac * (k + j + 1));
        tot += contrib;
        if (std::abs(contrib) < 1e-18 * std::abs(tot) && j > 2) break;
        x *= sh;
        fac *= (j + 1);
      }
      E[k] = std::pow(h, k + 1) * tot;
    }
    return;
  }
  double esh = std::exp(s * h);
  E[0] = (esh - 1.0) / s;
  double hk = h;
  for (int k = 1; k <= kmax; ++k) {
    E[k] = (hk * esh - k * E[k - 1]) / s;
    hk *= h;
  }
}

double binom(int n, int k) {
  double r = 1.0;
  for (int j = 1; j <= k; ++j) r = r * (n - k + j) / j;
  return r;
}

double matern_integrate(KernelFamily f, FactorType t1, double arg1, FactorType t2, double arg2,
                        double l) {
  std::array<double, 4> brks{0.0, 1.0, std::clamp(arg1, 0.0, 1.0), std::clamp(arg2, 0.0, 1.0)};
  std::sort(brks.begin(), brks.end());
  double total = 0.0;
  for (int piece = 0; piece + 1 < 4; ++piece) {
    double p = brks[piece], q = brks[piece + 1];
    double h = q - p;
    if (h <= 0.0) continue;
    PieceFactor f1 = factor_on_piece(f, t1, l, arg1, p);
    PieceFactor f2 = factor_on_piece(f, t2, l, arg2, p);
    Poly prod{};
    prod.fill(0.0);
    for (int i = 0; i <= kMaxDeg; ++i)
      for (int j = 0; j <= kMaxDeg; ++j) prod[i + j] += f1.poly[i] * f2.poly[j];
    double s = f1.rate + f2.rate;
    double E[kProdDeg + 1];
    double piece_val = 0.0;
    if (s > 0.0) {
      // integrate right-to-left: int t^k e^{st} = e^{sh} sum_j C(k,j) h^{k-j} (-1)^j E_j(-s)
      exp_moments_nonpos(-s, h, kProdDeg, E);
      double pref = std::exp(f1.logc0 + f2.logc0 + s * h);  // <= 1
      for (int k = 0; k <= kProdDeg; ++k) {
        if (prod[k] == 0.0) continue;
        double acc = 0.0, hk = std::pow(h, k);
        for (int j = 0; j <= k; ++j) {
          acc += binom(k, j) * hk * ((j % 2) ? -1.0 : 1.0) * E[j];
          hk /= h > 0 ? h : 1.0;
        }
        piece_val += prod[k] * acc;
      }
      piece_val *= pref;
    } else {
      exp_moments_nonpos(s, h, kProdDeg, E);
      double pref = std::exp(f1.logc0 + f2.logc0);
      for (int k = 0; k <= kProdDeg; ++k) piece_val += prod[k] * E[k];
      piece_val *= pref;
    }
    total += f1.sign * f2.sign * piece_val;
  }
  return total;
}

}  // namespace

double integral_I(KernelFamily f, double l, double a, double b) {
  if (f == KernelFamily::Gaussian) return gauss_I(a, b, l);
  return matern_integrate(f, kRho, a, kRho, b, l);
}

double integral_w_ii(KernelFamily f, double l, double a, double b) {
  if (f == KernelFamily::Gaussian) return gauss_wii(a, b, l);
  return matern_integrate(f, kDRho, a, kDRho, b, l);
}

double integral_w_ij(KernelFamily f, double l, double a, double b) {
  if (f == KernelFamily::Gaussian) return gauss_wij(a, b, l);
  return matern_integrate(f, kDRho, a, kRho, b, l);
}

double integral_vria(KernelFamily f, double l, double a, double b) {
  if (f == KernelFamily::Gaussian) return gauss_vria(a, b, l);
  return matern_integrate(f, kDDRho, a, kDRho, b, l);
}

double wij_boundary_term(KernelFamily f, double l, double a, double b) {
  return corr_d1(f, 1.0 - a, l) * corr(f, 1.0 - b, l) - corr_d1(f, -a, l) * corr(f, -b, l);
}

OneDimVals onedim_all(KernelFamily f, double l, double a, double b) {
  OneDimVals v;
  if (f == KernelFamily::Gaussian) {
    double d = a - b;
    GaussMoments M = gauss_moments(a, b, l);
    double pref = std::exp(-d * d / (4.0 * l * l));
    double il2 = 1.0 / (l * l);
    v.I = pref * M.m0;
    v.wij_ab = pref * (-il2) * (M.m1 - 0.5 * d * M.m0);
    v.wij_ba = pref * (-il2) * (M.m1 + 0.5 * d * M.m0);
    v.wii = pref * il2 * il2 * (M.m2 - 0.25 * d * d * M.m0);
    return v;
  }
  v.I = matern_integrate(f, kRho, a, kRho, b, l);
  v.wij_ab = matern_integrate(f, kDRho, a, kRho, b, l);
  v.wij_ba = matern_integrate(f, kDRho, b, kRho, a, l);
  v.wii = matern_integrate(f, kDRho, a, kDRho, b, l);
  return v;
}

Grad2 integral_grads(KernelFamily f, double l, double a, double b, IntegralKind which) {
  Grad2 g;
  switch (which) {
    case IntegralKind::I_dd:
      g.da = -integral_w_ij(f, l, a, b);
      g.db = -integral_w_ij(f, l, b, a);
      break;
    case IntegralKind::w_ij:
      g.da = integral_w_ii(f, l, a, b) - wij_boundary_term(f, l, a, b);
      g.db = -integral_w_ii(f, l, a, b);
      break;
    case IntegralKind::w_ii:
      g.da = -integral_vria(f, l, a, b);
      g.db = -integral_vria(f, l, b, a);
      break;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Adaptive Simpson cross-check path.
// ---------------------------------------------------------------------------
namespace {

template <typename F>
double simpson_rec(const F& fn, double lo, double hi, double flo, double fmid, double fhi,
                   double whole, double tol, int depth) {
  double mid = 0.5 * (lo + hi);
  double lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
  double flm = fn(lm), frm = fn(rm);
  double left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid);
  double right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi);
  if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return simpson_rec(fn, lo, mid, flo, flm, fmid, left, tol * 0.5, depth - 1) +
         simpson_rec(fn, mid, hi, fmid, frm, fhi, right, tol * 0.5, depth - 1);
}

template <typename F>
double adaptive_simpson(const F& fn, double lo, double hi, double tol) {
  double mid = 0.5 * (lo + hi);
  double flo = fn(lo), fmid = fn(mid), fhi = fn(hi);
  double whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
  return simpson_rec(fn, lo, hi, flo, fmid, fhi, whole, tol, 48);
}

}  // namespace

double integral_quadrature(KernelFamily f, double l, double a, double b, IntegralKind which) {
  auto integrand = [&](double x) {
    switch (which) {
      case IntegralKind::I_dd: return corr(f, x - a, l) * corr(f, x - b, l);
      case IntegralKind::w_ii: return corr_d1(f, x - a, l) * corr_d1(f, x - b, l);
      case IntegralKind::w_ij: return corr_d1(f, x - a, l) * corr(f, x - b, l);
    }
    return 0.0;
  };
  // split at the kink locations so the Matern families stay smooth per segment
  std::array<double, 4> brks{0.0, 1.0, std::clamp(a, 0.0, 1.0), std::clamp(b, 0.0, 1.0)};
  std::sort(brks.begin(), brks.end());
  double total = 0.0;
  for (int i = 0; i + 1 < 4; ++i)
    if (brks[i + 1] > brks[i] + 1e-15)
      total += adaptive_simpson(integrand, brks[i], brks[i + 1], 1e-13);
  return total;
}

}  // namespace asub
