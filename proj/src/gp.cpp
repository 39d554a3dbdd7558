#include "asub/gp.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "asub/kernels.hpp"
#include "asub/opt.hpp"
#include "asub/rng.hpp"

namespace asub {

namespace {

constexpr double kPinnedNugget = 1e-8;
constexpr double kLogTwoPi = 1.8378770664093454836;

void require_finite(const MatrixXd& A, const char* what) {
  if (!A.allFinite()) throw NumericalError(std::string(what) + ": non-finite entries");
}

}  // namespace

MatrixXd build_gram(const KernelSpec& spec, const MatrixXd& X) {
  spec.validate();
  const int n = static_cast<int>(X.rows());
  if (X.cols() != spec.dim()) throw InvalidInput("build_gram: X/spec dimension mismatch");
  MatrixXd K(n, n);
  for (int i = 0; i < n; ++i) {
    K(i, i) = spec.variance + spec.nugget;
    for (int j = 0; j < i; ++j) {
      double v = kernel_eval(spec, X.row(i).transpose(), X.row(j).transpose());
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  require_finite(K, "build_gram");
  return K;
}

MatrixXd chol_factor(const MatrixXd& K, double variance, double* jitter_out) {
  const int n = static_cast<int>(K.rows());
  double jitter = 0.0;
  MatrixXd A = K;
  for (;;) {
    Eigen::LLT<MatrixXd> llt(A);
    if (llt.info() == Eigen::Success) {
      if (jitter_out) *jitter_out = jitter;
      return llt.matrixL();
    }
    jitter = (jitter == 0.0) ? 1e-10 * variance : 10.0 * jitter;
    if (jitter > 1e-4 * variance)
      throw NumericalError("cholesky failed even with maximal jitter");
    A = K + jitter * MatrixXd::Identity(n, n);
  }
}

GPModel make_model(KernelSpec spec, Dataset data) {
  spec.validate();
  data.validate();
  if (data.m() != spec.dim()) throw InvalidInput("make_model: dimension mismatch");
  GPModel mod;
  mod.spec = std::move(spec);
  mod.data = std::move(data);
  MatrixXd K = build_gram(mod.spec, mod.data.X);
  mod.chol = chol_factor(K, mod.spec.variance, &mod.jitter_added);
  mod.alpha = mod.chol.triangularView<Eigen::Lower>().solve(mod.data.y);
  mod.chol.triangularView<Eigen::Lower>().transpose().solveInPlace(mod.alpha);
  return mod;
}

GPModel prior_model(KernelSpec spec, int m) {
  spec.validate();
  if (spec.dim() != m) throw InvalidInput("prior_model: dimension mismatch");
  GPModel mod;
  mod.spec = std::move(spec);
  mod.data.X = MatrixXd(0, m);
  mod.data.y = VectorXd(0);
  mod.chol = MatrixXd(0, 0);
  mod.alpha = VectorXd(0);
  return mod;
}

double log_likelihood(const KernelSpec& spec, const Dataset& data) {
  data.validate();
  const int n = data.n();
  MatrixXd K = build_gram(spec, data.X);
  Eigen::LLT<MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) throw NumericalError("log_likelihood: cholesky failed");
  MatrixXd L = llt.matrixL();
  VectorXd a = L.triangularView<Eigen::Lower>().solve(data.y);
  double logdet = 2.0 * L.diagonal().array().log().sum();
  return -0.5 * a.squaredNorm() - 0.5 * logdet - 0.5 * n * kLogTwoPi;
}

VectorXd pack_log(const KernelSpec& spec, bool include_nugget) {
  const int m = spec.dim();
  VectorXd t(m + 1 + (include_nugget ? 1 : 0));
  for (int d = 0; d < m; ++d) t(d) = std::log(spec.lengthscales(d));
  t(m) = std::log(spec.variance);
  if (include_nugget) t(m + 1) = std::log(spec.nugget);
  return t;
}

KernelSpec unpack_log(const VectorXd& theta, KernelFamily family, bool include_nugget,
                      double pinned_nugget) {
  const int m = static_cast<int>(theta.size()) - 1 - (include_nugget ? 1 : 0);
  if (m < 1) throw InvalidInput("unpack_log: parameter vector too short");
  KernelSpec spec;
  spec.family = family;
  spec.lengthscales = theta.head(m).array().exp();
  spec.variance = std::exp(theta(m));
  spec.nugget = include_nugget ? std::exp(theta(m + 1)) : pinned_nugget;
  return spec;
}

void default_log_bounds(int m, double var_y, bool noiseless, VectorXd& lo, VectorXd& hi) {
  var_y = std::max(var_y, 1e-12);
  const int p = m + 1 + (noiseless ? 0 : 1);
  lo.resize(p);
  hi.resize(p);
  for (int d = 0; d < m; ++d) {
    lo(d) = std::log(1e-2);
    hi(d) = std::log(2.0);
  }
  lo(m) = std::log(1e-6 * var_y);
  hi(m) = std::log(1e2 * var_y);
  if (!noiseless) {
    lo(m + 1) = std::log(1e-8);
    hi(m + 1) = std::log(std::max(var_y, 1e-7));
  }
}

namespace {

// Cached per-dimension lag matrices so likelihood evaluations during a fit are
// dense array expressions instead of n²·m scalar kernel calls.
struct FitWs {
  KernelFamily fam = KernelFamily::Gaussian;
  int n = 0, m = 0;
  std::vector<Eigen::ArrayXXd> absu, u2;
  VectorXd y;

  FitWs(KernelFamily f, const MatrixXd& X, const VectorXd& yy)
      : fam(f), n(static_cast<int>(X.rows())), m(static_cast<int>(X.cols())), y(yy) {
    absu.reserve(m);
    u2.reserve(m);
    for (int d = 0; d < m; ++d) {
      Eigen::ArrayXXd U(n, n);
      for (int r = 0; r < n; ++r)
        for (int s = 0; s < n; ++s) U(r, s) = X(r, d) - X(s, d);
      absu.push_back(U.abs());
      u2.push_back(U.square());
    }
  }

  // correlation matrix and d/d(log l) matrix for one coordinate
  void factor(int d, double l, Eigen::ArrayXXd& R, Eigen::ArrayXXd* D) const {
    switch (fam) {
      case KernelFamily::Gaussian: {
        R = (-u2[d] / (2.0 * l * l)).exp();
        if (D) *D = R * u2[d] / (l * l);
        break;
      }
      case KernelFamily::Matern32: {
        const double c = std::sqrt(3.0) / l;
        Eigen::ArrayXXd E = (-c * absu[d]).exp();
        R = (1.0 + c * absu[d]) * E;
        if (D) *D = (3.0 / (l * l)) * u2[d] * E;
        break;
      }
      case KernelFamily::Matern52: {
        const double c = std::sqrt(5.0) / l;
        Eigen::ArrayXXd E = (-c * absu[d]).exp();
        R = (1.0 + c * absu[d] + (c * c / 3.0) * u2[d]) * E;
        if (D) *D = (c * c / 3.0) * u2[d] * (1.0 + c * absu[d]) * E;
        break;
      }
    }
  }

  // NLL and gradient over theta = [log l.., log σ², (log τ²)]
  double eval(const VectorXd& theta, bool include_nugget, double pinned_nugget,
              VectorXd* grad) const {
    KernelSpec spec = unpack_log(theta, fam, include_nugget, pinned_nugget);
    std::vector<Eigen::ArrayXXd> R(m), D;
    if (grad) D.resize(m);
    Eigen::ArrayXXd P = Eigen::ArrayXXd::Ones(n, n);
    for (int d = 0; d < m; ++d) {
      factor(d, spec.lengthscales(d), R[d], grad ? &D[d] : nullptr);
      P *= R[d];
    }
    MatrixXd K = spec.variance * P.matrix();
    K.diagonal().array() += spec.nugget;
    if (!K.allFinite()) throw NumericalError("nll: non-finite gram");
    Eigen::LLT<MatrixXd> llt(K);
    if (llt.info() != Eigen::Success) throw NumericalError("nll: cholesky failed");
    MatrixXd L = llt.matrixL();
    VectorXd a = L.triangularView<Eigen::Lower>().solve(y);
    double logdet = 2.0 * L.diagonal().array().log().sum();
    double value = 0.5 * a.squaredNorm() + 0.5 * logdet + 0.5 * n * kLogTwoPi;
    if (!grad) return value;

    VectorXd alpha = a;
    L.triangularView<Eigen::Lower>().transpose().solveInPlace(alpha);
    MatrixXd Kinv = MatrixXd::Identity(n, n);
    llt.solveInPlace(Kinv);
    const double tr_kinv = Kinv.trace();
    const double a2 = alpha.squaredNorm();
    const int p = static_cast<int>(theta.size());
    grad->resize(p);

    // prefix/suffix products so each Q_d = Π_{l≠d} R_l costs O(n²)
    std::vector<Eigen::ArrayXXd> pre(m + 1), suf(m + 1);
    pre[0] = Eigen::ArrayXXd::Ones(n, n);
    for (int d = 0; d < m; ++d) pre[d + 1] = pre[d] * R[d];
    suf[m] = Eigen::ArrayXXd::Ones(n, n);
    for (int d = m - 1; d >= 0; --d) suf[d] = suf[d + 1] * R[d];
    for (int d = 0; d < m; ++d) {
      Eigen::ArrayXXd dK = spec.variance * D[d] * pre[d] * suf[d + 1];
      double tr = (Kinv.array() * dK).sum();
      double quad = alpha.dot(dK.matrix() * alpha);
      (*grad)(d) = 0.5 * (tr - quad);
    }
    // d/d log σ²: dK = K - τ² I;  αᵀ(K-τ²I)α = αᵀy - τ²‖α‖²
    (*grad)(m) = 0.5 * ((n - spec.nugget * tr_kinv) - (alpha.dot(y) - spec.nugget * a2));
    if (include_nugget) (*grad)(m + 1) = 0.5 * spec.nugget * (tr_kinv - a2);
    return value;
  }
};

// one LHS draw per restart, per parameter
MatrixXd lhs_starts(int n, int p, const VectorXd& lo, const VectorXd& hi, Rng& rng) {
  MatrixXd S(n, p);
  std::vector<int> perm(n);
  for (int d = 0; d < p; ++d) {
    for (int i = 0; i < n; ++i) perm[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
    for (int i = 0; i < n; ++i) {
      double u = (perm[i] + rng.uniform()) / n;
      S(i, d) = lo(d) + (hi(d) - lo(d)) * u;
    }
  }
  return S;
}

}  // namespace

double nll(const KernelSpec& spec, const Dataset& data) {
  return -log_likelihood(spec, data);
}

double nll_grad(const KernelSpec& spec, const Dataset& data, bool include_nugget,
                VectorXd& grad) {
  FitWs ws(spec.family, data.X, data.y);
  return ws.eval(pack_log(spec, include_nugget), include_nugget, spec.nugget, &grad);
}

GPModel fit(const Dataset& data, KernelFamily family, const FitOptions& opt) {
  data.validate();
  const int n = data.n(), m = data.m();
  if (n < m + 2)
    std::fprintf(stderr, "[gp] warning: fitting %d points in %d dimensions (< m+2)\n", n, m);
  double mean = data.y.mean();
  double var_y = (data.y.array() - mean).square().sum() / std::max(1, n);
  VectorXd lo = opt.log_lo, hi = opt.log_hi;
  if (lo.size() == 0 || hi.size() == 0) default_log_bounds(m, var_y, opt.noiseless, lo, hi);
  const int p = static_cast<int>(lo.size());
  if (hi.size() != p || p != m + 1 + (opt.noiseless ? 0 : 1))
    throw InvalidInput("fit: bad bounds length");

  FitWs ws(family, data.X, data.y);
  BoxObjective obj = [&](const VectorXd& t, VectorXd& g) {
    return ws.eval(t, !opt.noiseless, kPinnedNugget, &g);
  };

  Rng rng(mix_seed(opt.seed, 0xF17));
  MatrixXd starts = lhs_starts(std::max(1, opt.n_restarts), p, lo, hi, rng);
  int total = static_cast<int>(starts.rows());
  std::vector<VectorXd> x0s;
  for (int s = 0; s < total; ++s) x0s.push_back(starts.row(s).transpose());
  if (opt.warm_start.size() == p) {
    VectorXd w = opt.warm_start.cwiseMax(lo).cwiseMin(hi);
    x0s.insert(x0s.begin(), w);
  }

  double best_f = std::numeric_limits<double>::infinity();
  VectorXd best_x;
  int failures = 0;
  for (const VectorXd& x0 : x0s) {
    try {
      BoxOptResult r = box_minimize(obj, x0, lo, hi, opt.max_iter, 1e-6);
      if (std::isfinite(r.f) && r.f < best_f) {
        best_f = r.f;
        best_x = r.x;
      }
      if (!std::isfinite(r.f)) ++failures;
    } catch (const Error&) {
      ++failures;
    }
  }
  if (!std::isfinite(best_f) || best_x.size() == 0)
    throw FitError("fit: all " + std::to_string(x0s.size()) + " restarts failed (" +
                   std::to_string(failures) + " hard failures)");
  KernelSpec spec = unpack_log(best_x, family, !opt.noiseless, kPinnedNugget);
  return make_model(std::move(spec), data);
}

Prediction predict(const GPModel& model, const VectorXd& x) {
  const int n = model.n();
  Prediction out;
  if (n == 0) {
    out.mean = 0.0;
    out.var = model.spec.variance;
    return out;
  }
  VectorXd k(n);
  for (int r = 0; r < n; ++r)
    k(r) = kernel_eval(model.spec, x, model.data.X.row(r).transpose());
  out.mean = k.dot(model.alpha);
  VectorXd v = model.chol.triangularView<Eigen::Lower>().solve(k);
  out.var = std::max(0.0, model.spec.variance - v.squaredNorm());
  return out;
}

GradPosterior grad_posterior(const GPModel& model, const VectorXd& x) {
  const int m = model.m(), n = model.n();
  if (x.size() != m) throw InvalidInput("grad_posterior: dimension mismatch");
  GradPosterior out;
  MatrixXd prior = MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) prior(i, i) = kernel_cross_d2(model.spec, i, i);
  if (n == 0) {
    out.mu = VectorXd::Zero(m);
    out.cov = prior;
    return out;
  }
  MatrixXd kappa = kernel_dx_all(model.spec, x, model.data.X);  // m×n
  out.mu = kappa * model.alpha;
  MatrixXd V = model.chol.triangularView<Eigen::Lower>().solve(kappa.transpose());  // n×m
  MatrixXd cov = prior - V.transpose() * V;
  cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
  VectorXd ev = eig.eigenvalues().cwiseMax(0.0);
  out.cov = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

HyperPosterior laplace_cov(const GPModel& model, const VectorXd& log_lo,
                           const VectorXd& log_hi, bool nugget_fixed) {
  const double h = 1e-4;
  HyperPosterior out;
  out.mle = model.spec;
  out.nugget_fixed = nugget_fixed;
  VectorXd t0 = pack_log(model.spec, !nugget_fixed);
  const int p = static_cast<int>(t0.size());
  if (log_lo.size() != p || log_hi.size() != p)
    throw InvalidInput("laplace_cov: bounds length mismatch");

  FitWs ws(model.spec.family, model.data.X, model.data.y);
  auto f = [&](const VectorXd& t) {
    return -ws.eval(t, !nugget_fixed, model.spec.nugget, nullptr);  // log-likelihood
  };

  VectorXd g(p);
  ws.eval(t0, !nugget_fixed, model.spec.nugget, &g);
  bool on_bound = false;
  for (int i = 0; i < p; ++i)
    if (t0(i) <= log_lo(i) + 1e-9 || t0(i) >= log_hi(i) - 1e-9) on_bound = true;
  out.grad_warning = (g.lpNorm<Eigen::Infinity>() > 1e-3) || on_bound;

  const double f0 = f(t0);
  MatrixXd H(p, p);
  VectorXd e = VectorXd::Zero(p);
  for (int i = 0; i < p; ++i) {
    e.setZero();
    e(i) = h;
    H(i, i) = (f(t0 + e) - 2.0 * f0 + f(t0 - e)) / (h * h);
  }
  VectorXd e2 = VectorXd::Zero(p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < i; ++j) {
      e.setZero();
      e2.setZero();
      e(i) = h;
      e2(j) = h;
      double v = (f(t0 + e + e2) - f(t0 + e - e2) - f(t0 - e + e2) + f(t0 - e - e2)) /
                 (4.0 * h * h);
      H(i, j) = v;
      H(j, i) = v;
    }
  }
  MatrixXd neg = -0.5 * (H + H.transpose());  // curvature of the NLL
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(neg);
  VectorXd ev = eig.eigenvalues();
  double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  VectorXd inv(p);
  for (int i = 0; i < p; ++i) {
    if (ev(i) > 1e-12 * scale) {
      inv(i) = 1.0 / ev(i);
    } else {
      inv(i) = 0.0;
      out.singular = true;
      if (ev(i) < -1e-12 * scale) out.clipped = true;
    }
  }
  out.cov = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

}  // namespace asub
