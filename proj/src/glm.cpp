#include "ratekit/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ratekit/detail/nb_terms.hpp"
#include "ratekit/distributions.hpp"
#include "ratekit/errors.hpp"
#include "ratekit/numeric.hpp"

namespace ratekit {

std::string_view to_string(Family f) { return f == Family::poisson ? "poisson" : "negbin"; }

Eigen::MatrixXd GlmFit::covariance() const {
  const Eigen::Index p = beta.size();
  const Eigen::Index free = (family == Family::negbin && !alpha_on_boundary) ? p + 1 : p;
  if (observed_information.rows() < free) return Eigen::MatrixXd::Constant(free, free, std::nan(""));
  const Eigen::MatrixXd info = observed_information.topLeftCorner(free, free);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  if (ldlt.info() != Eigen::Success) return Eigen::MatrixXd::Constant(free, free, std::nan(""));
  return ldlt.solve(Eigen::MatrixXd::Identity(free, free));
}

namespace {

struct Evaluation {
  double loglik = 0.0;
  Eigen::VectorXd grad;  // beta block, then alpha when with_alpha
  Eigen::MatrixXd hess;
};

// NB (or Poisson at alpha = 0) log-likelihood with derivatives in (beta[, alpha]).
Evaluation evaluate(const FlatPanel& fp, const Eigen::VectorXd& beta, double alpha, bool with_alpha,
                    bool with_hessian) {
  const Eigen::Index p = fp.num_covariates();
  const Eigen::Index dim = with_alpha ? p + 1 : p;
  Evaluation ev;
  ev.grad = Eigen::VectorXd::Zero(dim);
  if (with_hessian) ev.hess = Eigen::MatrixXd::Zero(dim, dim);
  CompensatedSum ll;
  const Eigen::VectorXd eta = fp.x * beta;
  for (std::size_t c = 0; c < fp.num_cells(); ++c) {
    const auto row = static_cast<Eigen::Index>(c);
    const int n = fp.counts[c];
    const double log_mu = eta[row];
    const double mu = std::exp(log_mu);
    const double s = 1.0 + alpha * mu;
    ll += detail::nb_count_constant(n, alpha) + detail::nb_kernel(n, mu, log_mu, alpha);
    const double resid = (n - mu) / s;
    ev.grad.head(p) += resid * fp.x.row(row).transpose();
    detail::CountSums sums;
    if (with_alpha) {
      sums = detail::nb_count_sums(n, alpha);
      ev.grad[p] += detail::nb_alpha_score(n, mu, alpha, sums);
    }
    if (with_hessian) {
      const double w = mu * (1.0 + alpha * n) / (s * s);
      ev.hess.topLeftCorner(p, p).noalias() -= w * fp.x.row(row).transpose() * fp.x.row(row);
      if (with_alpha) {
        const Eigen::VectorXd cross = -(mu * (n - mu) / (s * s)) * fp.x.row(row).transpose();
        ev.hess.block(0, p, p, 1) += cross;
        ev.hess.block(p, 0, 1, p) += cross.transpose();
        ev.hess(p, p) += detail::nb_alpha_curvature(n, mu, alpha, sums);
      }
    }
  }
  ev.loglik = ll.value();
  return ev;
}

double total_count(const FlatPanel& fp) {
  double s = 0.0;
  for (int n : fp.counts) s += n;
  return s;
}

void require_full_rank(const FlatPanel& fp) {
  if (fp.num_cells() == 0) throw EstimationError("panel has no observations");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(fp.x);
  if (qr.rank() < fp.num_covariates()) {
    throw EstimationError("design matrix is rank deficient (rank " + std::to_string(qr.rank()) + " < " +
                          std::to_string(fp.num_covariates()) + ")");
  }
}

double gradient_tolerance(const GlmOptions& opt, double loglik, double sum_counts) {
  return opt.gradient_tol * std::min(1.0 + std::abs(loglik), std::max(1.0, sum_counts));
}

Eigen::VectorXd starting_beta(const FlatPanel& fp) {
  Eigen::VectorXd z(static_cast<Eigen::Index>(fp.num_cells()));
  for (std::size_t c = 0; c < fp.num_cells(); ++c) z[static_cast<Eigen::Index>(c)] = std::log(fp.counts[c] + 0.5);
  return fp.x.colPivHouseholderQr().solve(z);
}

// Newton-Raphson on beta with alpha held fixed; step halving keeps the log-likelihood monotone.
GlmFit newton_beta(const FlatPanel& fp, Eigen::VectorXd beta, double alpha, const GlmOptions& opt) {
  GlmFit fit;
  fit.family = alpha > 0.0 ? Family::negbin : Family::poisson;
  fit.alpha = alpha;
  const double sum_n = total_count(fp);
  Evaluation ev = evaluate(fp, beta, alpha, false, true);
  int it = 0;
  bool converged = false;
  while (it < opt.max_iterations) {
    ++it;
    Eigen::LLT<Eigen::MatrixXd> llt(-ev.hess);
    if (llt.info() != Eigen::Success) break;
    const Eigen::VectorXd step = llt.solve(ev.grad);
    double t = 1.0;
    Evaluation next;
    bool improved = false;
    for (int halving = 0; halving < 50; ++halving, t *= 0.5) {
      next = evaluate(fp, beta + t * step, alpha, false, true);
      if (std::isfinite(next.loglik) && next.loglik >= ev.loglik - 1e-13 * std::abs(ev.loglik)) {
        improved = true;
        break;
      }
    }
    if (!improved) break;
    const double change = std::abs(next.loglik - ev.loglik);
    beta += t * step;
    ev = std::move(next);
    const double gmax = ev.grad.cwiseAbs().maxCoeff();
    if (change <= opt.rel_loglik_tol * (1.0 + std::abs(ev.loglik)) &&
        gmax <= gradient_tolerance(opt, ev.loglik, sum_n)) {
      converged = true;
      break;
    }
  }
  fit.beta = beta;
  fit.loglik = ev.loglik;
  fit.iterations = it;
  fit.gradient_max_norm = ev.grad.cwiseAbs().maxCoeff();
  fit.converged = converged || fit.gradient_max_norm <= gradient_tolerance(opt, ev.loglik, sum_n);
  fit.observed_information = -ev.hess;
  if (fit.converged && beta.cwiseAbs().maxCoeff() > 30.0) {
    fit.converged = false;
    fit.note = "coefficients diverging; likely separation or all-zero cells";
  }
  return fit;
}

}  // namespace

LoglikGradient nb_loglik_and_gradient(const ClaimPanel& panel, const Eigen::VectorXd& beta, double alpha) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw DomainError("alpha must be finite and nonnegative");
  if (static_cast<std::size_t>(beta.size()) != panel.num_covariates()) throw DomainError("coefficient length mismatch");
  const FlatPanel fp(panel);
  auto ev = evaluate(fp, beta, alpha < kPoissonAlphaCutoff ? 0.0 : alpha, true, false);
  return {ev.loglik, std::move(ev.grad)};
}

Eigen::MatrixXd nb_loglik_hessian(const ClaimPanel& panel, const Eigen::VectorXd& beta, double alpha) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw DomainError("alpha must be finite and nonnegative");
  if (static_cast<std::size_t>(beta.size()) != panel.num_covariates()) throw DomainError("coefficient length mismatch");
  const FlatPanel fp(panel);
  return evaluate(fp, beta, alpha < kPoissonAlphaCutoff ? 0.0 : alpha, true, true).hess;
}

GlmFit fit_poisson_glm(const ClaimPanel& panel, const GlmOptions& options) {
  const FlatPanel fp(panel);
  require_full_rank(fp);
  if (total_count(fp) == 0.0) {
    GlmFit fit;
    fit.family = Family::poisson;
    fit.beta = Eigen::VectorXd::Zero(fp.num_covariates());
    fit.loglik = evaluate(fp, fit.beta, 0.0, false, false).loglik;
    fit.converged = false;
    fit.note = "all counts are zero; the maximum likelihood estimate does not exist";
    fit.observed_information = Eigen::MatrixXd::Zero(fp.num_covariates(), fp.num_covariates());
    return fit;
  }
  return newton_beta(fp, starting_beta(fp), 0.0, options);
}

GlmFit fit_nb_glm_fixed_alpha(const ClaimPanel& panel, double alpha, const GlmOptions& options) {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw DomainError("alpha must be finite and nonnegative");
  const FlatPanel fp(panel);
  require_full_rank(fp);
  if (alpha < kPoissonAlphaCutoff) alpha = 0.0;
  GlmFit fit = newton_beta(fp, starting_beta(fp), alpha, options);
  fit.family = Family::negbin;
  return fit;
}

GlmFit fit_nb_glm(const ClaimPanel& panel, const GlmOptions& options) {
  const FlatPanel fp(panel);
  require_full_rank(fp);
  const Eigen::Index p = fp.num_covariates();
  const double sum_n = total_count(fp);

  GlmFit pois = sum_n > 0.0 ? newton_beta(fp, starting_beta(fp), 0.0, options) : fit_poisson_glm(panel, options);
  if (!pois.converged) {
    pois.family = Family::negbin;
    pois.alpha_on_boundary = true;
    return pois;
  }

  // Boundary candidate: alpha = 0 with the Poisson coefficients.
  const Evaluation at_zero = evaluate(fp, pois.beta, 0.0, true, true);
  GlmFit boundary = pois;
  boundary.family = Family::negbin;
  boundary.alpha = 0.0;
  boundary.alpha_on_boundary = true;
  boundary.observed_information = -at_zero.hess;
  boundary.gradient_max_norm = at_zero.grad.head(p).cwiseAbs().maxCoeff();
  const double boundary_score = at_zero.grad[p];

  // Interior search: Newton in (beta, log alpha) from a moment start.
  double num = 0.0, den = 0.0;
  {
    const Eigen::VectorXd eta = fp.x * pois.beta;
    for (std::size_t c = 0; c < fp.num_cells(); ++c) {
      const double mu = std::exp(eta[static_cast<Eigen::Index>(c)]);
      const double r = fp.counts[c] - mu;
      num += r * r - fp.counts[c];
      den += mu * mu;
    }
  }
  double alpha = std::clamp(num > 0.0 ? num / den : 0.05, 0.01, 5.0);
  Eigen::VectorXd beta = pois.beta;
  const double log_floor = std::log(kPoissonAlphaCutoff);

  Evaluation ev = evaluate(fp, beta, alpha, true, true);
  int it = 0;
  bool converged = false;
  bool hit_floor = false;
  auto accept = [&](const Eigen::VectorXd& b, double a, Evaluation& out) {
    out = evaluate(fp, b, a, true, true);
    return std::isfinite(out.loglik) && out.loglik >= ev.loglik - 1e-13 * std::abs(ev.loglik);
  };

  while (it < options.max_iterations) {
    ++it;
    // gradient and Hessian in (beta, phi = log alpha)
    Eigen::VectorXd g = ev.grad;
    g[p] *= alpha;
    Eigen::MatrixXd h = ev.hess;
    h.block(0, p, p, 1) *= alpha;
    h.block(p, 0, 1, p) *= alpha;
    h(p, p) = alpha * alpha * ev.hess(p, p) + alpha * ev.grad[p];

    const double before = ev.loglik;
    Evaluation next;
    bool moved = false;
    Eigen::LLT<Eigen::MatrixXd> llt(-h);
    if (llt.info() == Eigen::Success) {
      Eigen::VectorXd step = llt.solve(g);
      if (std::abs(step[p]) > 5.0) step *= 5.0 / std::abs(step[p]);
      double t = 1.0;
      for (int halving = 0; halving < 50; ++halving, t *= 0.5) {
        const double phi = std::log(alpha) + t * step[p];
        if (accept(beta + t * step.head(p), std::exp(std::max(phi, log_floor)), next)) {
          beta += t * step.head(p);
          alpha = std::exp(std::max(phi, log_floor));
          moved = true;
          break;
        }
      }
    }
    if (moved) {
      ev = std::move(next);
    } else {
      // alternating profile updates: beta at fixed alpha, then log alpha at fixed beta
      Eigen::LLT<Eigen::MatrixXd> lb(-ev.hess.topLeftCorner(p, p));
      if (lb.info() == Eigen::Success) {
        const Eigen::VectorXd sb = lb.solve(ev.grad.head(p));
        double t = 1.0;
        for (int halving = 0; halving < 50; ++halving, t *= 0.5) {
          if (accept(beta + t * sb, alpha, next)) {
            beta += t * sb;
            ev = std::move(next);
            moved = true;
            break;
          }
        }
      }
      const double gphi = alpha * ev.grad[p];
      const double hphi = alpha * alpha * ev.hess(p, p) + gphi;
      double sphi = hphi < 0.0 ? -gphi / hphi : (gphi > 0.0 ? 1.0 : -1.0);
      sphi = std::clamp(sphi, -5.0, 5.0);
      double t = 1.0;
      for (int halving = 0; halving < 50; ++halving, t *= 0.5) {
        const double a = std::exp(std::max(std::log(alpha) + t * sphi, log_floor));
        if (accept(beta, a, next)) {
          alpha = a;
          ev = std::move(next);
          moved = true;
          break;
        }
      }
      if (!moved) break;
    }
    if (alpha <= kPoissonAlphaCutoff * 1.0000001) {
      hit_floor = true;
      break;
    }
    const double change = std::abs(ev.loglik - before);
    const double gmax = ev.grad.cwiseAbs().maxCoeff();
    if (change <= options.rel_loglik_tol * (1.0 + std::abs(ev.loglik)) &&
        gmax <= gradient_tolerance(options, ev.loglik, sum_n)) {
      converged = true;
      break;
    }
  }

  GlmFit interior;
  interior.family = Family::negbin;
  interior.beta = beta;
  interior.alpha = alpha;
  interior.loglik = ev.loglik;
  interior.iterations = it;
  interior.gradient_max_norm = ev.grad.cwiseAbs().maxCoeff();
  interior.converged = converged || interior.gradient_max_norm <= gradient_tolerance(options, ev.loglik, sum_n);
  interior.observed_information = -ev.hess;

  if (hit_floor || !(interior.loglik > boundary.loglik)) {
    boundary.iterations = pois.iterations + it;
    if (boundary_score > 0.0) {
      boundary.note = "dispersion estimate collapsed to the boundary despite a positive boundary score";
      boundary.converged = false;
    } else {
      boundary.note = "dispersion estimate at the boundary alpha = 0";
    }
    return boundary;
  }
  interior.iterations += pois.iterations;
  return interior;
}

}  // namespace ratekit
