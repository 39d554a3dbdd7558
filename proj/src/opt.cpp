#include "asub/opt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace asub {

namespace {

VectorXd project(const VectorXd& x, const VectorXd& lo, const VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

double eval_or_inf(const BoxObjective& fn, const VectorXd& x, VectorXd& g) {
  try {
    double f = fn(x, g);
    if (!std::isfinite(f)) return std::numeric_limits<double>::infinity();
    return f;
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace

BoxOptResult box_minimize(const BoxObjective& fn, VectorXd x0, const VectorXd& lo,
                          const VectorXd& hi, int max_iter, double gtol) {
  const int p = static_cast<int>(x0.size());
  BoxOptResult res;
  VectorXd x = project(x0, lo, hi);
  VectorXd g(p), gnew(p);
  double f = eval_or_inf(fn, x, g);
  if (!std::isfinite(f)) {
    res.x = x;
    res.f = f;
    return res;
  }
  double step = 1.0;
  VectorXd xprev = x, gprev = g;
  for (int it = 0; it < max_iter; ++it) {
    res.iters = it + 1;
    VectorXd pg = x - project(x - g, lo, hi);  // projected-gradient residual
    if (pg.lpNorm<Eigen::Infinity>() <= gtol * std::max(1.0, std::abs(f))) {
      res.converged = true;
      break;
    }
    if (it > 0) {
      VectorXd sx = x - xprev, sg = g - gprev;
      double num = sx.dot(sx), den = sx.dot(sg);
      step = (den > 1e-300) ? num / den : step * 2.0;
      step = std::clamp(step, 1e-12, 1e12);
    }
    xprev = x;
    gprev = g;
    // Armijo backtracking on the projected step
    double t = step;
    bool moved = false;
    for (int bt = 0; bt < 40; ++bt) {
      VectorXd xc = project(x - t * g, lo, hi);
      VectorXd d = xc - x;
      if (d.lpNorm<Eigen::Infinity>() < 1e-15) break;
      double fc = eval_or_inf(fn, xc, gnew);
      if (fc <= f + 1e-4 * g.dot(d)) {
        x = xc;
        f = fc;
        g = gnew;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) break;
  }
  res.x = x;
  res.f = f;
  return res;
}

}  // namespace asub
