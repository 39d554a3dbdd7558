#include "asub/sequential.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "asub/benchfns.hpp"
#include "asub/kernels.hpp"
#include "asub/opt.hpp"
#include "asub/rng.hpp"

namespace asub {
namespace {

constexpr double kDegenFrac = 1e-12;  // s2n below this fraction of sigma2 is degenerate

inline int pair_count(int m) { return m * (m + 1) / 2; }
inline int pair_id(int i, int j, int m) {  // requires i <= j
  return i * m - i * (i - 1) / 2 + (j - i);
}

// 1-D integral values for every (coordinate, data point) pair against a fixed
// candidate, plus the candidate-vs-itself values. Orientation suffixes: Xx has
// the data point first, xX the candidate first.
struct Tables {
  MatrixXd I, wij_Xx, wij_xX, wii;      // m×n
  VectorXd I_self, wij_self, wii_self;  // per coordinate
  MatrixXd vria_xX, bt_xX;              // gradient extras, m×n
  VectorXd vria_self, bt_self;
  bool with_grads = false;
};

Tables build_tables(const KernelSpec& spec, const MatrixXd& X, const VectorXd& xt,
                    bool with_grads) {
  const int n = static_cast<int>(X.rows());
  const int m = static_cast<int>(X.cols());
  Tables T;
  T.with_grads = with_grads;
  T.I.resize(m, n);
  T.wij_Xx.resize(m, n);
  T.wij_xX.resize(m, n);
  T.wii.resize(m, n);
  T.I_self.resize(m);
  T.wij_self.resize(m);
  T.wii_self.resize(m);
  if (with_grads) {
    T.vria_xX.resize(m, n);
    T.bt_xX.resize(m, n);
    T.vria_self.resize(m);
    T.bt_self.resize(m);
  }
  for (int d = 0; d < m; ++d) {
    const double l = spec.lengthscales[d];
    for (int r = 0; r < n; ++r) {
      const OneDimVals v = onedim_all(spec.family, l, X(r, d), xt[d]);
      T.I(d, r) = v.I;
      T.wij_Xx(d, r) = v.wij_ab;
      T.wij_xX(d, r) = v.wij_ba;
      T.wii(d, r) = v.wii;
      if (with_grads) {
        T.vria_xX(d, r) = integral_vria(spec.family, l, xt[d], X(r, d));
        T.bt_xX(d, r) = wij_boundary_term(spec.family, l, xt[d], X(r, d));
      }
    }
    const OneDimVals s = onedim_all(spec.family, l, xt[d], xt[d]);
    T.I_self[d] = s.I;
    T.wij_self[d] = s.wij_ab;
    T.wii_self[d] = s.wii;
    if (with_grads) {
      T.vria_self[d] = integral_vria(spec.family, l, xt[d], xt[d]);
      T.bt_self[d] = wij_boundary_term(spec.family, l, xt[d], xt[d]);
    }
  }
  return T;
}

// Factor of w_entry(X_r, xt; i, j) at coordinate d, and of w_entry(xt, X_r).
inline double fac_wa(const Tables& T, int i, int j, int d, int r) {
  if (i == j) return d == i ? T.wii(d, r) : T.I(d, r);
  if (d == i) return T.wij_Xx(d, r);
  if (d == j) return T.wij_xX(d, r);
  return T.I(d, r);
}
inline double fac_wb(const Tables& T, int i, int j, int d, int r) {
  if (i == j) return d == i ? T.wii(d, r) : T.I(d, r);
  if (d == i) return T.wij_xX(d, r);
  if (d == j) return T.wij_Xx(d, r);
  return T.I(d, r);
}
inline double fac_w1(const Tables& T, int i, int j, int d) {
  if (i == j) return d == i ? T.wii_self[d] : T.I_self[d];
  if (d == i || d == j) return T.wij_self[d];
  return T.I_self[d];
}
// d/d(xt_d) of the same factors; the candidate sits in the second argument of
// the wa pair, the first of the wb pair, and both for the self entry.
inline double dfac_wa(const Tables& T, int i, int j, int d, int r) {
  if (i == j) return d == i ? -T.vria_xX(d, r) : -T.wij_xX(d, r);
  if (d == i) return -T.wii(d, r);
  if (d == j) return T.wii(d, r) - T.bt_xX(d, r);
  return -T.wij_xX(d, r);
}
inline double dfac_wb(const Tables& T, int i, int j, int d, int r) {
  if (i == j) return d == i ? -T.vria_xX(d, r) : -T.wij_xX(d, r);
  if (d == i) return T.wii(d, r) - T.bt_xX(d, r);
  if (d == j) return -T.wii(d, r);
  return -T.wij_xX(d, r);
}
inline double dfac_w1(const Tables& T, int i, int j, int d) {
  if (i == j) return d == i ? -2.0 * T.vria_self[d] : -2.0 * T.wij_self[d];
  if (d == i || d == j) return -T.bt_self[d];
  return -2.0 * T.wij_self[d];
}

// Shared state for repeated coefficient evaluations against one design.
struct Engine {
  KernelSpec spec;
  MatrixXd X;  // n×m
  MatrixXd Kinv;
  VectorXd alpha;           // K⁻¹y
  const WTensor* W = nullptr;
  std::vector<VectorXd> wv, wtv;  // per pair i<=j: W(i,j)·alpha and W(i,j)ᵀ·alpha

  int n() const { return static_cast<int>(X.rows()); }
  int m() const { return static_cast<int>(X.cols()); }

  void rebuild_caches() {
    const int mm = m();
    wv.assign(pair_count(mm), VectorXd());
    wtv.assign(pair_count(mm), VectorXd());
    for (int i = 0; i < mm; ++i)
      for (int j = i; j < mm; ++j) {
        const MatrixXd& blk = (*W)(i, j);
        const int p = pair_id(i, j, mm);
        wv[p] = blk * alpha;
        wtv[p] = blk.transpose() * alpha;
      }
  }
};

VectorXd cov_vector(const KernelSpec& spec, const MatrixXd& X, const VectorXd& xt) {
  const int n = static_cast<int>(X.rows());
  const int m = static_cast<int>(X.cols());
  VectorXd k(n);
  for (int r = 0; r < n; ++r) {
    double p = 1.0;
    for (int d = 0; d < m; ++d) p *= corr(spec.family, X(r, d) - xt[d], spec.lengthscales[d]);
    k[r] = spec.variance * p;
  }
  return k;
}

VectorXd checked_point(const VectorXd& xt, int m) {
  if (xt.size() != m) throw InvalidInput("candidate dimension mismatch");
  VectorXd x = xt;
  for (int d = 0; d < m; ++d) {
    if (!std::isfinite(x[d]) || x[d] < -1e-9 || x[d] > 1.0 + 1e-9)
      throw InvalidInput("candidate outside the unit cube");
    x[d] = std::min(1.0, std::max(0.0, x[d]));
  }
  return x;
}

AcqCoeffs coeffs_engine(const Engine& e, const VectorXd& xtilde, bool with_grads) {
  const int n = e.n(), m = e.m();
  AcqCoeffs out;
  out.xtilde = checked_point(xtilde, m);
  const VectorXd& xt = out.xtilde;
  const double s2 = e.spec.variance;

  out.k = cov_vector(e.spec, e.X, xt);
  const VectorXd z = e.Kinv * out.k;
  out.sigma2n = s2 + e.spec.nugget - out.k.dot(z);
  if (!(out.sigma2n > kDegenFrac * s2))
    throw DegenerateCandidate("predictive variance vanishes at candidate");
  const double sn = std::sqrt(out.sigma2n);
  out.mean = e.alpha.dot(out.k);
  out.g = -z / out.sigma2n;

  const Tables T = build_tables(e.spec, e.X, xt, with_grads);
  const double s4 = s2 * s2;
  const int np = pair_count(m);
  out.wa_p.assign(np, VectorXd(n));
  out.wb_p.assign(np, VectorXd(n));
  out.w1_p.assign(np, 0.0);
  out.alpha.resize(m, m);
  out.B.resize(m, m);
  out.Gamma.resize(m, m);

  MatrixXd kappa, KiKp;
  VectorXd ds2n, dsn;
  if (with_grads) {
    out.dB.assign(m, MatrixXd(m, m));
    out.dGamma.assign(m, MatrixXd(m, m));
    kappa = kernel_dx_all(e.spec, xt, e.X);       // m×n
    KiKp = e.Kinv * kappa.transpose();            // col d = K⁻¹·κ_d
    ds2n = -2.0 * (kappa * z);
    dsn = ds2n / (2.0 * sn);
  }

  std::vector<double> fa(m), fb(m), f1(m);
  std::vector<double> pre_a(m + 1), suf_a(m + 1), pre_b(m + 1), suf_b(m + 1);
  for (int i = 0; i < m; ++i)
    for (int j = i; j < m; ++j) {
      const int p = pair_id(i, j, m);
      VectorXd& wa = out.wa_p[p];
      VectorXd& wb = out.wb_p[p];
      for (int r = 0; r < n; ++r) {
        double pa = 1.0, pb = 1.0;
        for (int d = 0; d < m; ++d) {
          pa *= fac_wa(T, i, j, d, r);
          pb *= fac_wb(T, i, j, d, r);
        }
        wa[r] = s4 * pa;
        wb[r] = s4 * pb;
      }
      double p1 = 1.0;
      for (int d = 0; d < m; ++d) p1 *= fac_w1(T, i, j, d);
      const double w1 = s4 * p1;
      out.w1_p[p] = w1;

      const MatrixXd& blk = (*e.W)(i, j);
      const VectorXd Wz = blk * z;
      const double quad = z.dot(Wz);
      const VectorXd swab = wa + wb;
      const double Sz = swab.dot(z);
      const double alv = swab.dot(e.alpha);
      const double bsum = (e.wv[p] + e.wtv[p]).dot(z);

      const double A = -swab.dot(out.g) - (w1 + quad) / out.sigma2n;
      const double Bv = (alv - bsum) / sn;
      const double Gv = (w1 + quad - Sz) / out.sigma2n;
      out.alpha(i, j) = out.alpha(j, i) = A;
      out.B(i, j) = out.B(j, i) = Bv;
      out.Gamma(i, j) = out.Gamma(j, i) = Gv;

      if (with_grads) {
        const VectorXd WWz = Wz + blk.transpose() * z;
        // dots of d(wa+wb)/d(xt_d) against alpha and z, via prefix/suffix
        // products of the per-coordinate factors (no division)
        VectorXd dsw_al = VectorXd::Zero(m), dsw_z = VectorXd::Zero(m);
        for (int r = 0; r < n; ++r) {
          for (int l = 0; l < m; ++l) {
            fa[l] = fac_wa(T, i, j, l, r);
            fb[l] = fac_wb(T, i, j, l, r);
          }
          pre_a[0] = pre_b[0] = 1.0;
          for (int l = 0; l < m; ++l) {
            pre_a[l + 1] = pre_a[l] * fa[l];
            pre_b[l + 1] = pre_b[l] * fb[l];
          }
          suf_a[m] = suf_b[m] = 1.0;
          for (int l = m - 1; l >= 0; --l) {
            suf_a[l] = suf_a[l + 1] * fa[l];
            suf_b[l] = suf_b[l + 1] * fb[l];
          }
          for (int d = 0; d < m; ++d) {
            const double dwa = s4 * pre_a[d] * dfac_wa(T, i, j, d, r) * suf_a[d + 1];
            const double dwb = s4 * pre_b[d] * dfac_wb(T, i, j, d, r) * suf_b[d + 1];
            dsw_al[d] += (dwa + dwb) * e.alpha[r];
            dsw_z[d] += (dwa + dwb) * z[r];
          }
        }
        for (int l = 0; l < m; ++l) f1[l] = fac_w1(T, i, j, l);
        for (int d = 0; d < m; ++d) {
          double p1pre = 1.0, p1suf = 1.0;
          for (int l = 0; l < d; ++l) p1pre *= f1[l];
          for (int l = d + 1; l < m; ++l) p1suf *= f1[l];
          const double dw1 = s4 * p1pre * dfac_w1(T, i, j, d) * p1suf;

          const double dquad = KiKp.col(d).dot(WWz);
          const double dNb = dsw_al[d] - (e.wv[p] + e.wtv[p]).dot(KiKp.col(d));
          const double dNg = dw1 + dquad - dsw_z[d] - swab.dot(KiKp.col(d));
          const double dBv = (dNb - Bv * dsn[d]) / sn;
          const double dGv = (dNg - Gv * ds2n[d]) / out.sigma2n;
          out.dB[d](i, j) = out.dB[d](j, i) = dBv;
          out.dGamma[d](i, j) = out.dGamma[d](j, i) = dGv;
        }
      }
    }
  return out;
}

Engine engine_from_model(const GPModel& model, const WTensor& W) {
  Engine e;
  e.spec = model.spec;
  e.X = model.data.X;
  const int n = e.n();
  e.Kinv = MatrixXd::Identity(n, n);
  model.chol.triangularView<Eigen::Lower>().solveInPlace(e.Kinv);
  model.chol.transpose().triangularView<Eigen::Upper>().solveInPlace(e.Kinv);
  e.alpha = model.alpha;
  e.W = &W;
  e.rebuild_caches();
  return e;
}

struct ScreenResult {
  std::vector<int> order;   // valid candidate indices, best first
  std::vector<double> value;  // per candidate (NaN for degenerate)
  MatrixXd cand;            // n_cand × m
  int n_degenerate = 0;
};

ScreenResult screen_candidates(const Engine& e, AcqCriterion crit, int n_cand, Rng& rng) {
  const int n = e.n(), m = e.m();
  const double s2 = e.spec.variance;
  ScreenResult sr;
  sr.cand = lhs(n_cand, m, rng);
  sr.value.assign(n_cand, std::numeric_limits<double>::quiet_NaN());

  MatrixXd Kall(n, n_cand);
  for (int c = 0; c < n_cand; ++c) Kall.col(c) = cov_vector(e.spec, e.X, sr.cand.row(c).transpose());
  const MatrixXd Z = e.Kinv * Kall;
  VectorXd s2n_all(n_cand);
  for (int c = 0; c < n_cand; ++c)
    s2n_all[c] = s2 + e.spec.nugget - Kall.col(c).dot(Z.col(c));

  const int np = pair_count(m);
  const double s4 = s2 * s2;
  // per-pair quadratic forms and data-side sums for every candidate, batched
  MatrixXd quadP(np, n_cand), bsumP(np, n_cand);
  for (int i = 0; i < m; ++i)
    for (int j = i; j < m; ++j) {
      const int p = pair_id(i, j, m);
      const MatrixXd WZ = (*e.W)(i, j) * Z;
      quadP.row(p) = (Z.array() * WZ.array()).colwise().sum().matrix();
      bsumP.row(p) = (e.wv[p] + e.wtv[p]).transpose() * Z;
    }

  MatrixXd B(m, m), G(m, m);
  for (int c = 0; c < n_cand; ++c) {
    const double s2n = s2n_all[c];
    if (!(s2n > kDegenFrac * s2)) {
      ++sr.n_degenerate;
      continue;
    }
    const double sn = std::sqrt(s2n);
    const VectorXd xt = sr.cand.row(c).transpose();
    const Tables T = build_tables(e.spec, e.X, xt, false);
    for (int i = 0; i < m; ++i)
      for (int j = i; j < m; ++j) {
        const int p = pair_id(i, j, m);
        double alv = 0, Sz = 0;
        for (int r = 0; r < n; ++r) {
          double pa = 1.0, pb = 1.0;
          for (int d = 0; d < m; ++d) {
            pa *= fac_wa(T, i, j, d, r);
            pb *= fac_wb(T, i, j, d, r);
          }
          const double sw = s4 * (pa + pb);
          alv += sw * e.alpha[r];
          Sz += sw * Z(r, c);
        }
        double p1 = 1.0;
        for (int d = 0; d < m; ++d) p1 *= fac_w1(T, i, j, d);
        const double w1 = s4 * p1;
        const double Bv = (alv - bsumP(p, c)) / sn;
        const double Gv = (w1 + quadP(p, c) - Sz) / s2n;
        B(i, j) = B(j, i) = Bv;
        G(i, j) = G(j, i) = Gv;
      }
    AcqCoeffs tmp;
    tmp.B = B;
    tmp.Gamma = G;
    sr.value[c] = acq_value(tmp, crit);
  }

  sr.order.reserve(n_cand);
  for (int c = 0; c < n_cand; ++c)
    if (std::isfinite(sr.value[c])) sr.order.push_back(c);
  std::stable_sort(sr.order.begin(), sr.order.end(),
                   [&](int a, int b) { return sr.value[a] > sr.value[b]; });
  return sr;
}

OptAcqResult optimize_engine(const Engine& e, AcqCriterion crit, int n_cand, int n_local,
                             uint64_t seed) {
  const int m = e.m();
  if (n_cand <= 0) n_cand = 100 * m;
  n_local = std::max(0, std::min(n_local, n_cand));
  Rng rng(mix_seed(seed, 0xAC9));
  ScreenResult sr = screen_candidates(e, crit, n_cand, rng);
  if (sr.order.empty())
    throw DesignSaturated("every candidate has vanishing predictive variance");

  VectorXd best_x = sr.cand.row(sr.order[0]).transpose();
  double best_v = sr.value[sr.order[0]];

  const VectorXd lo = VectorXd::Zero(m), hi = VectorXd::Ones(m);
  BoxObjective obj = [&](const VectorXd& x, VectorXd& grad) -> double {
    const AcqCoeffs cc = coeffs_engine(e, x, true);
    grad = -acq_grad(cc, crit);
    return -acq_value(cc, crit);
  };
  const int n_starts = std::min<int>(n_local, static_cast<int>(sr.order.size()));
  for (int t = 0; t < n_starts; ++t) {
    const VectorXd x0 = sr.cand.row(sr.order[t]).transpose();
    const BoxOptResult res = box_minimize(obj, x0, lo, hi, 50, 1e-6);
    if (std::isfinite(res.f) && -res.f > best_v) {
      best_v = -res.f;
      best_x = res.x;
    }
  }

  OptAcqResult out;
  out.coeffs = coeffs_engine(e, best_x, true);
  out.xtilde = out.coeffs.xtilde;
  out.value = acq_value(out.coeffs, crit);
  return out;
}

}  // namespace

const char* criterion_name(AcqCriterion c) {
  switch (c) {
    case AcqCriterion::Trace: return "trace";
    case AcqCriterion::Var1: return "var1";
    case AcqCriterion::Var2: return "var2";
  }
  return "?";
}

AcqCoeffs coeffs(const GPModel& model, const WTensor& W, const VectorXd& xtilde, bool with_grads) {
  if (W.m != model.m() || W.n != model.n()) throw InvalidInput("W tensor shape mismatch");
  Engine e = engine_from_model(model, W);
  return coeffs_engine(e, xtilde, with_grads);
}

double acq_value(const AcqCoeffs& c, AcqCriterion criterion) {
  switch (criterion) {
    case AcqCriterion::Trace: {
      const double b = c.B.diagonal().array().square().sum();
      const double g = c.Gamma.diagonal().array().square().sum();
      return b + 2.0 * g;
    }
    case AcqCriterion::Var1: {
      const MatrixXd M =
          (c.B.array() * c.B.array() + 2.0 * c.Gamma.array() * c.Gamma.array()).matrix();
      return M.squaredNorm();
    }
    case AcqCriterion::Var2: {
      const MatrixXd N = c.B * c.B + 2.0 * (c.Gamma * c.Gamma);
      return N.squaredNorm();
    }
  }
  throw InvalidInput("unknown acquisition criterion");
}

VectorXd acq_grad(const AcqCoeffs& c, AcqCriterion criterion) {
  const int m = static_cast<int>(c.B.rows());
  if (static_cast<int>(c.dB.size()) != m)
    throw InvalidInput("coefficients were computed without gradients");
  VectorXd g(m);
  switch (criterion) {
    case AcqCriterion::Trace: {
      for (int d = 0; d < m; ++d) {
        double s = 0;
        for (int i = 0; i < m; ++i)
          s += 2.0 * c.B(i, i) * c.dB[d](i, i) + 4.0 * c.Gamma(i, i) * c.dGamma[d](i, i);
        g[d] = s;
      }
      return g;
    }
    case AcqCriterion::Var1: {
      const MatrixXd M =
          (c.B.array() * c.B.array() + 2.0 * c.Gamma.array() * c.Gamma.array()).matrix();
      for (int d = 0; d < m; ++d) {
        const MatrixXd dM = (2.0 * c.B.array() * c.dB[d].array() +
                             4.0 * c.Gamma.array() * c.dGamma[d].array())
                                .matrix();
        g[d] = 2.0 * (M.array() * dM.array()).sum();
      }
      return g;
    }
    case AcqCriterion::Var2: {
      const MatrixXd N = c.B * c.B + 2.0 * (c.Gamma * c.Gamma);
      for (int d = 0; d < m; ++d) {
        const MatrixXd dN = c.dB[d] * c.B + c.B * c.dB[d] +
                            2.0 * (c.dGamma[d] * c.Gamma + c.Gamma * c.dGamma[d]);
        g[d] = 2.0 * (N.array() * dN.array()).sum();
      }
      return g;
    }
  }
  throw InvalidInput("unknown acquisition criterion");
}

OptAcqResult optimize_acq(const GPModel& model, const WTensor& W, AcqCriterion criterion,
                          int n_candidates, int n_local, uint64_t seed) {
  if (W.m != model.m() || W.n != model.n()) throw InvalidInput("W tensor shape mismatch");
  Engine e = engine_from_model(model, W);
  return optimize_engine(e, criterion, n_candidates, n_local, seed);
}

MatrixXd partitioned_inverse_extend(const MatrixXd& Kinv, const VectorXd& k, double s2n) {
  const int n = static_cast<int>(Kinv.rows());
  if (Kinv.cols() != n || k.size() != n) throw InvalidInput("inverse extension shape mismatch");
  if (!(s2n > 0)) throw NumericalError("non-positive predictive variance in inverse extension");
  const VectorXd z = Kinv * k;
  MatrixXd out(n + 1, n + 1);
  out.topLeftCorner(n, n) = Kinv + (z * z.transpose()) / s2n;
  out.topRightCorner(n, 1) = -z / s2n;
  out.bottomLeftCorner(1, n) = out.topRightCorner(n, 1).transpose();
  out(n, n) = 1.0 / s2n;
  return out;
}

namespace {

// Append the chosen point: bordered W blocks, partitioned inverse, new alpha.
void append_point(Engine& e, WTensor& W, const AcqCoeffs& cc, VectorXd& y, double y_new) {
  const int n = e.n(), m = e.m();
  WTensor W2;
  W2.m = m;
  W2.n = n + 1;
  W2.blocks.assign(static_cast<size_t>(m) * m, MatrixXd());
  for (int i = 0; i < m; ++i)
    for (int j = i; j < m; ++j) {
      const int p = pair_id(i, j, m);
      MatrixXd& blk = W2.at(i, j);
      blk.resize(n + 1, n + 1);
      blk.topLeftCorner(n, n) = W(i, j);
      blk.topRightCorner(n, 1) = cc.wa_p[p];
      blk.bottomLeftCorner(1, n) = cc.wb_p[p].transpose();
      blk(n, n) = cc.w1_p[p];
      if (j != i) W2.at(j, i) = blk.transpose();
    }
  W = std::move(W2);

  e.Kinv = partitioned_inverse_extend(e.Kinv, cc.k, cc.sigma2n);
  e.X.conservativeResize(n + 1, Eigen::NoChange);
  e.X.row(n) = cc.xtilde.transpose();
  y.conservativeResize(n + 1);
  y[n] = y_new;
  e.alpha = e.Kinv * y;
  e.W = &W;
  e.rebuild_caches();
}

double record_error(const SeqOptions& opt, const CEstimate& est) {
  if (opt.reference == nullptr) return std::numeric_limits<double>::quiet_NaN();
  if (opt.r >= est.spec.dim()) return 0.0;
  return subspace_distance(*opt.reference, subspace(est, opt.r));
}

}  // namespace

RunRecord run_sequential(const std::function<double(const VectorXd&)>& f, const SeqOptions& opt) {
  if (opt.m < 1) throw InvalidInput("dimension must be positive");
  if (opt.n0 < 2) throw InvalidInput("initial design needs at least 2 points");
  if (opt.budget < opt.n0) throw InvalidInput("budget smaller than initial design");
  if (opt.refit_every < 1) throw InvalidInput("refit cadence must be >= 1");
  if (opt.reference != nullptr && (opt.r < 1 || opt.r > opt.m))
    throw InvalidInput("reference rank out of range");

  RunRecord rec;
  rec.config = opt.config_note;

  Rng design_rng(mix_seed(opt.seed, 1));
  rec.X0 = lhs(opt.n0, opt.m, design_rng);
  rec.y0 = VectorXd::Constant(opt.n0, std::numeric_limits<double>::quiet_NaN());
  for (int i = 0; i < opt.n0; ++i) {
    const double v = f(rec.X0.row(i).transpose());
    if (!std::isfinite(v))
      throw AbortWithPartialRecord("objective returned a non-finite value on the initial design",
                                   rec);
    rec.y0[i] = v;
  }

  auto fit_model = [&](const MatrixXd& X, const VectorXd& y, int step,
                       const KernelSpec* warm) -> GPModel {
    Dataset data{X, y};
    FitOptions fo;
    fo.noiseless = opt.noiseless_fit;
    fo.seed = mix_seed(opt.seed, 4, static_cast<uint64_t>(step));
    if (warm != nullptr) {
      fo.n_restarts = opt.warm_restarts;
      fo.warm_start = pack_log(*warm, !opt.noiseless_fit);
    } else {
      fo.n_restarts = opt.restarts;
    }
    return fit(data, opt.family, fo);
  };

  Engine e;
  WTensor W;
  VectorXd y;
  try {
    GPModel model = fit_model(rec.X0, rec.y0, 0, nullptr);
    W = build_W(model);
    e = engine_from_model(model, W);
    e.W = &W;  // engine_from_model bound the argument; keep the loop-local tensor
    y = rec.y0;
    const CEstimate init = estimate_C(model, W);
    rec.initial_eigvals = init.eigvals;
    rec.initial_error = record_error(opt, init);
  } catch (const AbortWithPartialRecord&) {
    throw;
  } catch (const Error& err) {
    throw AbortWithPartialRecord(std::string("initial fit failed: ") + err.what(), rec);
  }

  Rng random_rng(mix_seed(opt.seed, 3));
  const int n_cand = opt.n_candidates > 0 ? opt.n_candidates : 100 * opt.m;

  for (int idx = opt.n0 + 1; idx <= opt.budget; ++idx) {
    const int step_i = idx - opt.n0 - 1;
    try {
      if (step_i > 0 && step_i % opt.refit_every == 0) {
        const KernelSpec warm = e.spec;
        GPModel model = fit_model(e.X, y, step_i, &warm);
        W = build_W(model);
        e = engine_from_model(model, W);
        e.W = &W;
      }

      AcqCoeffs chosen;
      double aval = std::numeric_limits<double>::quiet_NaN();
      if (opt.random_arm) {
        bool ok = false;
        for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
          VectorXd x(opt.m);
          for (int d = 0; d < opt.m; ++d) x[d] = random_rng.uniform();
          try {
            chosen = coeffs_engine(e, x, false);
            ok = true;
          } catch (const DegenerateCandidate&) {
          }
        }
        if (!ok) throw DesignSaturated("random draws all landed on degenerate candidates");
      } else {
        OptAcqResult res = optimize_engine(e, opt.criterion, n_cand, opt.n_local,
                                           mix_seed(opt.seed, 2, static_cast<uint64_t>(idx)));
        chosen = std::move(res.coeffs);
        aval = res.value;
      }

      const double y_new = f(chosen.xtilde);
      if (!std::isfinite(y_new))
        throw AbortWithPartialRecord("objective returned a non-finite value", rec);

      append_point(e, W, chosen, y, y_new);
      const CEstimate est = estimate_C_from(e.spec, e.Kinv, e.alpha, W);

      StepRecord sr;
      sr.index = idx;
      sr.xtilde = chosen.xtilde;
      sr.acq_value = aval;
      sr.y = y_new;
      sr.eigvals = est.eigvals;
      sr.subspace_error = record_error(opt, est);
      rec.steps.push_back(std::move(sr));
    } catch (const AbortWithPartialRecord&) {
      throw;
    } catch (const Error& err) {
      throw AbortWithPartialRecord(std::string("step ") + std::to_string(idx) +
                                       " failed: " + err.what(),
                                   rec);
    }
  }
  return rec;
}

}  // namespace asub
