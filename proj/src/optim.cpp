#include "ratekit/optim.hpp"

#include <cmath>

#include "ratekit/errors.hpp"

namespace ratekit {

namespace {

double scaled_gradient(const Eigen::VectorXd& g, double f) { return g.lpNorm<Eigen::Infinity>() / (1.0 + std::abs(f)); }

}  // namespace

BfgsResult minimize_bfgs(const Objective& f, Eigen::VectorXd x0, const BfgsOptions& opt) {
  const Eigen::Index n = x0.size();
  BfgsResult res;
  res.x = std::move(x0);
  res.gradient.resize(n);
  res.value = f(res.x, &res.gradient);
  res.evaluations = 1;
  if (!std::isfinite(res.value) || !res.gradient.allFinite()) {
    throw NumericalError("objective is not finite at the starting point");
  }
  res.trace.push_back(res.value);

  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;
  Eigen::VectorXd g_new(n), x_new(n);
  int stalls = 0;
  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    if (scaled_gradient(res.gradient, res.value) <= opt.gradient_tol) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      return res;
    }
    Eigen::VectorXd dir = -h * res.gradient;
    double slope = dir.dot(res.gradient);
    if (!(slope < 0.0)) {
      h.setIdentity();
      scaled = false;
      dir = -res.gradient;
      slope = dir.dot(res.gradient);
    }
    const double big = dir.lpNorm<Eigen::Infinity>();
    double step = big > opt.max_step ? opt.max_step / big : 1.0;

    double f_new = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + step * dir;
      f_new = f(x_new, &g_new);
      ++res.evaluations;
      if (std::isfinite(f_new) && g_new.allFinite() && f_new <= res.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      h.setIdentity();
      scaled = false;
      if (++stalls >= 2) {
        // No decrease is representable along the gradient either; accept if nearly stationary.
        res.converged = scaled_gradient(res.gradient, res.value) <= 1e3 * opt.gradient_tol;
        res.message = "line search failed";
        return res;
      }
      continue;
    }
    stalls = 0;

    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g_new - res.gradient;
    const double decrease = res.value - f_new;
    res.x = x_new;
    res.value = f_new;
    res.gradient = g_new;
    res.trace.push_back(f_new);

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        h *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = h * y;
      h += (rho * rho * y.dot(hy) + rho) * s * s.transpose() - rho * (hy * s.transpose() + s * hy.transpose());
    }
    if (decrease <= 1e-15 * (1.0 + std::abs(res.value)) && s.lpNorm<Eigen::Infinity>() <= 1e-12) {
      res.converged = scaled_gradient(res.gradient, res.value) <= 1e3 * opt.gradient_tol;
      res.message = "no further progress";
      return res;
    }
  }
  res.converged = scaled_gradient(res.gradient, res.value) <= opt.gradient_tol;
  res.message = res.converged ? "gradient tolerance reached" : "iteration limit reached";
  return res;
}

}  // namespace ratekit
