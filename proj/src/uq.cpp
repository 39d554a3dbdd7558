#include "asub/uq.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include "asub/asm_core.hpp"
#include "asub/rng.hpp"

namespace asub {
namespace {

// linear-interpolation quantile of a sorted vector, p in [0,1]
double quantile_sorted(const std::vector<double>& v, double p) {
  const int k = static_cast<int>(v.size());
  if (k == 1) return v[0];
  const double h = p * (k - 1);
  const int i = std::min(k - 2, static_cast<int>(std::floor(h)));
  const double w = h - i;
  return v[i] * (1.0 - w) + v[i + 1] * w;
}

}  // namespace

std::vector<KernelSpec> sample_hypers(const HyperPosterior& post, int n_draws,
                                      const VectorXd& log_lo, const VectorXd& log_hi,
                                      uint64_t seed) {
  if (n_draws < 1) throw InvalidInput("need at least one hyperparameter draw");
  const bool with_nugget = !post.nugget_fixed;
  const VectorXd theta0 = pack_log(post.mle, with_nugget);
  const int p = static_cast<int>(theta0.size());
  if (post.cov.rows() != p || post.cov.cols() != p)
    throw InvalidInput("posterior covariance dimension mismatch");
  if (log_lo.size() != p || log_hi.size() != p)
    throw InvalidInput("bounds dimension mismatch");
  if ((log_hi.array() < log_lo.array()).any()) throw InvalidInput("empty bounds box");

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (post.cov + post.cov.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError("posterior covariance eigensolve failed");
  const VectorXd scale = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const MatrixXd F = es.eigenvectors() * scale.asDiagonal();

  Rng rng(mix_seed(seed, 0x09A1));
  std::vector<KernelSpec> out;
  out.reserve(n_draws);
  VectorXd z(p), theta(p);
  for (int s = 0; s < n_draws; ++s) {
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      for (int i = 0; i < p; ++i) z[i] = rng.normal();
      theta = theta0 + F * z;
      ok = (theta.array() >= log_lo.array() - 1e-12).all() &&
           (theta.array() <= log_hi.array() + 1e-12).all();
    }
    if (!ok)
      throw UQError("hyperparameter draw rejected 100 times; covariance too wide for bounds");
    theta = theta.cwiseMax(log_lo).cwiseMin(log_hi);
    out.push_back(unpack_log(theta, post.mle.family, with_nugget, post.mle.nugget));
  }
  return out;
}

EigenIntervals eigen_intervals(const GPModel& model, const std::vector<KernelSpec>& draws,
                               const std::vector<double>& levels, uint64_t /*seed*/) {
  if (draws.empty()) throw InvalidInput("no hyperparameter draws given");
  if (levels.empty()) throw InvalidInput("no coverage levels given");
  for (double l : levels)
    if (!(l > 0.0 && l < 1.0)) throw InvalidInput("coverage levels must lie in (0,1)");
  const int m = model.m();

  EigenIntervals out;
  out.levels = levels;
  std::sort(out.levels.begin(), out.levels.end());
  out.point = estimate_C(model, build_W(model)).eigvals;

  std::vector<VectorXd> rows;
  rows.reserve(draws.size());
  for (const KernelSpec& spec : draws) {
    try {
      const GPModel ms = make_model(spec, model.data);
      rows.push_back(estimate_C(ms, build_W(ms)).eigvals);
    } catch (const Error&) {
      ++out.n_skipped;
    }
  }
  if (rows.empty()) throw UQError("every hyperparameter draw failed numerically");
  if (out.n_skipped * 10 > static_cast<int>(draws.size()))
    throw UQError("more than 10% of hyperparameter draws failed numerically");

  out.n_draws = static_cast<int>(rows.size());
  out.draw_eigvals.resize(out.n_draws, m);
  for (int s = 0; s < out.n_draws; ++s) out.draw_eigvals.row(s) = rows[s].transpose();

  const int nl = static_cast<int>(out.levels.size());
  out.lo.resize(nl, m);
  out.hi.resize(nl, m);
  std::vector<double> col(out.n_draws);
  for (int k = 0; k < m; ++k) {
    for (int s = 0; s < out.n_draws; ++s) col[s] = out.draw_eigvals(s, k);
    std::sort(col.begin(), col.end());
    for (int li = 0; li < nl; ++li) {
      const double tail = (1.0 - out.levels[li]) / 2.0;
      out.lo(li, k) = quantile_sorted(col, tail);
      out.hi(li, k) = quantile_sorted(col, 1.0 - tail);
    }
  }
  return out;
}

}  // namespace asub
