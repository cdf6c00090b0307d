#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>

namespace corrmap {

struct MinimizeOptions {
  int max_iterations = 200;
  double gradient_tolerance = 1e-6;
  double value_tolerance = 1e-11;
};

struct MinimizeResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

/// Objective returning f(x) and writing grad f(x). Non-finite values are
/// treated as infeasible by the line search.
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

/// Projected BFGS on a box [lower, upper]. Variables sitting on a bound with
/// the gradient pointing outward are held fixed for the iteration; the
/// inverse-Hessian approximation is updated only on positive curvature.
inline MinimizeResult minimize_box_bfgs(const Objective& f, Eigen::VectorXd x0,
                                        const Eigen::VectorXd& lower,
                                        const Eigen::VectorXd& upper,
                                        const MinimizeOptions& opt = {}) {
  const Eigen::Index n = x0.size();
  auto project = [&](Eigen::VectorXd v) { return v.cwiseMax(lower).cwiseMin(upper).eval(); };

  MinimizeResult res;
  res.x = project(std::move(x0));
  Eigen::VectorXd g(n);
  res.value = f(res.x, g);
  if (!std::isfinite(res.value) || !g.allFinite()) return res;

  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    Eigen::VectorXd free_mask = Eigen::VectorXd::Ones(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double span = 1e-12 * (1.0 + std::abs(res.x[i]));
      if ((res.x[i] <= lower[i] + span && g[i] > 0) || (res.x[i] >= upper[i] - span && g[i] < 0))
        free_mask[i] = 0;
    }
    const Eigen::VectorXd pg = g.cwiseProduct(free_mask);
    if (pg.lpNorm<Eigen::Infinity>() < opt.gradient_tolerance) {
      res.converged = true;
      break;
    }

    Eigen::VectorXd d = -(H * pg).cwiseProduct(free_mask);
    if (d.dot(pg) >= 0) {
      H.setIdentity();
      d = -pg;
    }
    // Keep the first trial step within a unit box in log space.
    const double dmax = d.lpNorm<Eigen::Infinity>();
    if (dmax > 2.0) d *= 2.0 / dmax;

    double step = 1.0;
    Eigen::VectorXd x_new, g_new(n);
    double f_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int ls = 0; ls < 50; ++ls, step *= 0.5) {
      x_new = project(res.x + step * d);
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && g_new.allFinite() &&
          f_new <= res.value + 1e-4 * g.dot(x_new - res.x)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (H.isIdentity()) break;
      H.setIdentity();
      continue;
    }

    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    const double change = res.value - f_new;
    res.x = x_new;
    res.value = f_new;
    g = g_new;
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    if (change < opt.value_tolerance * (1.0 + std::abs(res.value))) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace corrmap
