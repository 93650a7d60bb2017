#include "ratekit/random_effects.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "ratekit/detail/nb_terms.hpp"
#include "ratekit/errors.hpp"
#include "ratekit/numeric.hpp"
#include "ratekit/optim.hpp"

namespace ratekit {

namespace {

constexpr double kExactZero = 1e-14;  // sigma2 at or below this uses the degenerate branch
constexpr double kSnap = 1e-9;        // fitted variances below this are reported as 0
constexpr double kGaussHermiteRate = 5.0;  // gamma mixing switches to Gauss-Hermite above this tail rate
constexpr double kTailDrop = 45.0;         // log-integrand drop at the ends of the trapezoid rule
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

// e^x - 1 - x without cancellation near 0.
double expm1_minus_x(double x) {
  if (std::abs(x) < 1e-2) {
    double term = x * x / 2.0, acc = 0.0;
    for (int k = 3; k <= 10; ++k) {
      acc += term;
      term *= x / k;
    }
    return acc;
  }
  return std::expm1(x) - x;
}

// lgamma(r) - ((r - 1/2) log r - r + log(2 pi)/2)
double stirling_remainder(double r) {
  if (r >= 10.0) {
    const double i = 1.0 / r, i2 = i * i;
    return i * (1.0 / 12 - i2 * (1.0 / 360 - i2 * (1.0 / 1260 - i2 * (1.0 / 1680 - i2 / 1188))));
  }
  return log_gamma(r) - ((r - 0.5) * std::log(r) - r + kHalfLog2Pi);
}

// log r - digamma(r)
double log_minus_digamma(double r) {
  if (r >= 10.0) {
    const double i = 1.0 / r, i2 = i * i;
    return 0.5 * i + i2 * (1.0 / 12 - i2 * (1.0 / 120 - i2 * (1.0 / 252 - i2 / 240)));
  }
  return std::log(r) - digamma(r);
}

// Log density of eta = log theta for the mean-one mixing laws.
struct Prior {
  MixingKind kind;
  double s2;
  double r = 0.0;
  double log_norm = 0.0;
  double dr_const = 0.0;

  Prior(MixingKind k, double param) : kind(k), s2(param) {
    if (kind == MixingKind::gamma_mean_one) {
      r = 1.0 / s2;
      log_norm = 0.5 * std::log(r) - kHalfLog2Pi - stirling_remainder(r);
      dr_const = log_minus_digamma(r);
    } else {
      log_norm = -0.5 * std::log(2.0 * std::numbers::pi * s2);
    }
  }
  double logp(double eta) const {
    if (kind == MixingKind::gamma_mean_one) return log_norm - r * expm1_minus_x(eta);
    const double d = eta + 0.5 * s2;
    return log_norm - d * d / (2.0 * s2);
  }
  double d1(double eta) const {
    if (kind == MixingKind::gamma_mean_one) return -r * std::expm1(eta);
    return -(eta + 0.5 * s2) / s2;
  }
  double d2(double eta) const {
    if (kind == MixingKind::gamma_mean_one) return -r * std::exp(eta);
    return -1.0 / s2;
  }
  // d logp / d Var(theta), gamma only
  double dvar(double eta) const { return -r * r * (dr_const - expm1_minus_x(eta)); }
};

// (log1p(x) - x/(1+x)) / alpha^2 given L = log1p(x), x = alpha mu.
double nb_g_from_log(double alpha, double mu, double x, double L) {
  if (x < detail::kSeriesCutoff) return detail::nb_g(alpha, mu);
  return (L - x / (1.0 + x)) / (alpha * alpha);
}

std::string describe(const std::string& id, double alpha, double sigma2) {
  std::ostringstream os;
  os << "policy '" << id << "' (alpha = " << alpha << ", sigma2 = " << sigma2 << ")";
  return os.str();
}

}  // namespace

MarginalLikelihood::MarginalLikelihood(const ClaimPanel& panel, Family conditional, MixingKind re_dist,
                                       const QuadratureOptions& options)
    : panel_(panel),
      flat_(panel),
      conditional_(conditional),
      re_dist_(re_dist),
      rule_(gauss_hermite(options.nodes)) {
  if (re_dist == MixingKind::degenerate_one) throw DomainError("random-effect distribution must be gamma or lognormal");
  closed_form_ = conditional == Family::poisson && re_dist == MixingKind::gamma_mean_one && !options.force_quadrature;
  const std::size_t cells = flat_.num_cells();
  log_lambda_.resize(cells);
  lambda_.resize(cells);
  count_const_.resize(cells);
  count_first_.resize(cells);
  modes_.assign(flat_.num_policies(), 0.0);
  mode_valid_.assign(flat_.num_policies(), 0);
}

Eigen::Index MarginalLikelihood::num_parameters() const {
  return flat_.num_covariates() + (conditional_ == Family::negbin ? 2 : 1);
}

void MarginalLikelihood::prepare(const Eigen::VectorXd& beta, double alpha) {
  if (beta.size() != flat_.num_covariates()) throw DomainError("coefficient length mismatch");
  const Eigen::VectorXd eta = flat_.x * beta;
  for (std::size_t c = 0; c < flat_.num_cells(); ++c) {
    log_lambda_[c] = eta[static_cast<Eigen::Index>(c)];
    lambda_[c] = std::exp(log_lambda_[c]);
  }
  if (alpha != prepared_alpha_) {
    for (std::size_t c = 0; c < flat_.num_cells(); ++c) {
      const int n = flat_.counts[c];
      count_const_[c] = detail::nb_count_constant(n, alpha);
      count_first_[c] = detail::nb_count_sums(n, alpha).first;
    }
    prepared_alpha_ = alpha;
  }
}

double MarginalLikelihood::loglik(const Eigen::VectorXd& beta, double alpha, double sigma2) {
  return evaluate(beta, alpha, sigma2, nullptr);
}

double MarginalLikelihood::loglik_and_gradient(const Eigen::VectorXd& beta, double alpha, double sigma2,
                                               Eigen::VectorXd& gradient) {
  gradient.resize(num_parameters());
  return evaluate(beta, alpha, sigma2, &gradient);
}

double MarginalLikelihood::evaluate(const Eigen::VectorXd& beta, double alpha, double sigma2, Eigen::VectorXd* grad) {
  if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) throw DomainError("sigma2 must be finite and nonnegative");
  if (conditional_ == Family::poisson) {
    alpha = 0.0;
  } else if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw DomainError("alpha must be finite and nonnegative");
  }
  if (!beta.allFinite()) throw DomainError("coefficients must be finite");
  prepare(beta, alpha);

  const Eigen::Index p = flat_.num_covariates();
  const bool negbin = conditional_ == Family::negbin;
  const Eigen::Index ia = p, is = negbin ? p + 1 : p;
  if (grad) grad->setZero(num_parameters());
  Eigen::VectorXd cell_weight;  // d loglik / d log lambda_it
  if (grad) cell_weight.setZero(static_cast<Eigen::Index>(flat_.num_cells()));

  const bool degenerate = sigma2 <= kExactZero;
  const Prior prior(re_dist_, degenerate ? 1.0 : sigma2);
  const std::size_t nodes = rule_.nodes.size();
  std::vector<double> terms(nodes), node_eta(nodes), node_d1(nodes), node_d2(nodes), node_ascore(nodes);
  std::vector<double> node_offset(nodes), node_logw(nodes);
  std::vector<double> resid;

  CompensatedSum total;
  CompensatedSum g_alpha, g_sigma;
  for (std::size_t i = 0; i < flat_.num_policies(); ++i) {
    const std::size_t b = flat_.offsets[i], e = flat_.offsets[i + 1];
    const std::size_t ncell = e - b;
    double S = 0.0, Lam = 0.0, K = 0.0;
    for (std::size_t c = b; c < e; ++c) {
      S += flat_.counts[c];
      Lam += lambda_[c];
      K += flat_.counts[c] * log_lambda_[c] + count_const_[c];
    }
    if (!std::isfinite(Lam) || !std::isfinite(K)) return -std::numeric_limits<double>::infinity();

    // Data part D(eta) = sum_t log f(N_it | lambda_it e^eta) and its eta-derivatives.
    // With `cells` set, also per-cell residuals (d/d log mu) and the alpha score.
    auto data = [&](double eta, double& d1, double& d2, double* cells, double* ascore) {
      if (!negbin || alpha == 0.0) {
        const double m = std::exp(eta);
        d1 = S - Lam * m;
        d2 = -Lam * m;
        if (cells) {
          double a = 0.0;
          for (std::size_t c = b; c < e; ++c) {
            const double mu = lambda_[c] * m;
            const int n = flat_.counts[c];
            cells[c - b] = n - mu;
            if (ascore) a += count_first_[c] + 0.5 * mu * mu - n * mu;
          }
          if (ascore) *ascore = a;
        }
        return K + S * eta - Lam * m;
      }
      const double m = std::exp(eta);
      double val = K + S * eta, s1 = 0.0, s2 = 0.0, a = 0.0;
      for (std::size_t c = b; c < e; ++c) {
        const double mu = lambda_[c] * m;
        const int n = flat_.counts[c];
        const double x = alpha * mu;
        const double L = std::log1p(x);
        const double q = 1.0 + x;
        val -= (n + 1.0 / alpha) * L;
        const double r = (n - mu) / q;
        s1 += r;
        s2 -= mu * (1.0 + alpha * n) / (q * q);
        if (cells) cells[c - b] = r;
        if (ascore) a += count_first_[c] + nb_g_from_log(alpha, mu, x, L) - n * mu / q;
      }
      d1 = s1;
      d2 = s2;
      if (ascore) *ascore = a;
      return val;
    };

    if (degenerate) {
      double d1 = 0.0, d2 = 0.0, asc = 0.0;
      resid.resize(ncell);
      const double val = data(0.0, d1, d2, grad ? resid.data() : nullptr, (grad && negbin) ? &asc : nullptr);
      total += val;
      if (grad) {
        for (std::size_t c = b; c < e; ++c) cell_weight[static_cast<Eigen::Index>(c)] = resid[c - b];
        if (negbin) g_alpha += asc;
        g_sigma += 0.5 * (d2 + d1 * d1 - d1);
      }
      continue;
    }

    if (closed_form_) {
      const double r = prior.r;
      CompensatedSum acc;
      double dr_sum = 0.0;
      const int s_int = static_cast<int>(S);
      for (int j = 0; j < s_int; ++j) {
        acc += std::log1p((j - Lam) / (r + Lam));
        if (grad) dr_sum += (Lam - j) / ((r + j) * (r + Lam));
      }
      acc += -r * std::log1p(Lam / r);
      total += K + acc.value();
      if (grad) {
        const double shrink = (r + S) / (r + Lam);
        for (std::size_t c = b; c < e; ++c) {
          cell_weight[static_cast<Eigen::Index>(c)] = flat_.counts[c] - lambda_[c] * shrink;
        }
        g_sigma += -r * r * dr_sum + detail::nb_g(sigma2, Lam);
      }
      continue;
    }

    // Posterior mode of eta by damped Newton.
    auto h_at = [&](double eta, double& h1, double& h2) {
      double d1, d2;
      const double v = data(eta, d1, d2, nullptr, nullptr) + prior.logp(eta);
      h1 = d1 + prior.d1(eta);
      h2 = d2 + prior.d2(eta);
      return v;
    };
    double mode = mode_valid_[i] ? modes_[i] : (re_dist_ == MixingKind::lognormal_mean_one ? -0.5 * sigma2 : 0.0);
    double h1 = 0.0, h2 = 0.0;
    double hv = h_at(mode, h1, h2);
    bool found = false;
    for (int it = 0; it < 200; ++it) {
      double step = -h1 / h2;
      step = std::clamp(step, -1.0, 1.0);
      if (std::abs(step) <= 1e-12 * (1.0 + std::abs(mode))) {
        found = true;
        break;
      }
      double n1 = 0.0, n2 = 0.0, nv = 0.0, cand = mode;
      for (int ls = 0; ls < 60; ++ls) {
        cand = mode + step;
        nv = h_at(cand, n1, n2);
        if (std::isfinite(nv) && nv >= hv - 1e-13 * std::abs(hv)) break;
        step *= 0.5;
      }
      const bool tiny = std::abs(cand - mode) <= 1e-12 * (1.0 + std::abs(mode));
      mode = cand;
      hv = nv;
      h1 = n1;
      h2 = n2;
      if (tiny) {
        found = true;
        break;
      }
    }
    if (!found || !std::isfinite(hv) || !(h2 < 0.0)) {
      mode_valid_[i] = 0;
      throw NumericalError("posterior mode search failed for " + describe(panel_.policy(i).id, alpha, sigma2));
    }
    modes_[i] = mode;
    mode_valid_[i] = 1;
    const double sd = 1.0 / std::sqrt(-h2);
    const double tail_rate = prior.r + S;  // gamma only: left-tail decay rate of the integrand in eta
    if (re_dist_ == MixingKind::lognormal_mean_one || nodes == 1 || tail_rate >= kGaussHermiteRate) {
      const double scale = std::sqrt(2.0) * sd;
      for (std::size_t j = 0; j < nodes; ++j) {
        node_offset[j] = scale * rule_.nodes[j];
        node_logw[j] = rule_.log_weight_plus_square[j] + std::log(scale);
      }
    } else {
      // Gamma mixing with a small tail rate: log theta then has a long exponential left tail that
      // Gauss-Hermite resolves poorly. Trapezoid rule in t with eta = mode + c (t - e^{-t} + 1),
      // which decays double-exponentially on the left.
      const double c = std::min(sd, 1.0);
      // distance from the mode at which the log integrand has dropped by kTailDrop
      auto reach = [&](double dir) {
        double g1, g2, lo = 0.0, hi = c;
        for (int it = 0; it < 80 && hv - h_at(mode + dir * hi, g1, g2) < kTailDrop; ++it) {
          lo = hi;
          hi *= 2.0;
        }
        for (int it = 0; it < 8; ++it) {
          const double mid = 0.5 * (lo + hi);
          (hv - h_at(mode + dir * mid, g1, g2) < kTailDrop ? lo : hi) = mid;
        }
        return std::max(hi, c);
      };
      const double reach_left = reach(-1.0), reach_right = reach(1.0);
      // solve c (e^s + s - 1) = reach_left for s = -t_left, and c (t - e^{-t} + 1) = reach_right
      double sl = std::log1p(reach_left / c);
      for (int it = 0; it < 60; ++it) sl -= (std::expm1(sl) + sl - reach_left / c) / (std::exp(sl) + 1.0);
      double tr = reach_right / c;
      for (int it = 0; it < 60; ++it) tr -= (tr - std::exp(-tr) + 1.0 - reach_right / c) / (1.0 + std::exp(-tr));
      const double tl = -std::max(sl, 0.5), t_hi = std::max(tr, 0.5);
      const double h = (t_hi - tl) / static_cast<double>(nodes - 1);
      for (std::size_t j = 0; j < nodes; ++j) {
        const double t = tl + h * static_cast<double>(j);
        node_offset[j] = c * (t + 1.0 - std::exp(-t));
        node_logw[j] = std::log(h * c * (1.0 + std::exp(-t)));
      }
    }

    if (grad) resid.resize(nodes * ncell);
    for (std::size_t j = 0; j < nodes; ++j) {
      const double eta = mode + node_offset[j];
      double d1 = 0.0, d2 = 0.0, asc = 0.0;
      const double val = data(eta, d1, d2, grad ? resid.data() + j * ncell : nullptr, (grad && negbin) ? &asc : nullptr);
      terms[j] = node_logw[j] + val + prior.logp(eta);
      if (std::isnan(terms[j]) || terms[j] == std::numeric_limits<double>::infinity()) {
        std::ostringstream os;
        os << "non-finite quadrature term at node " << j << " (eta = " << eta << ", mode = " << mode
           << ", sd = " << sd << ") for " << describe(panel_.policy(i).id, alpha, sigma2);
        throw NumericalError(os.str());
      }
      node_eta[j] = eta;
      node_d1[j] = d1;
      node_d2[j] = d2;
      node_ascore[j] = asc;
    }
    const double lse = log_sum_exp(terms);
    if (!std::isfinite(lse)) throw NumericalError("quadrature sum vanished for " + describe(panel_.policy(i).id, alpha, sigma2));
    total += lse;
    if (grad) {
      double ga = 0.0, gs = 0.0;
      for (std::size_t j = 0; j < nodes; ++j) {
        const double w = std::exp(terms[j] - lse);
        if (w == 0.0) continue;
        for (std::size_t c = 0; c < ncell; ++c) cell_weight[static_cast<Eigen::Index>(b + c)] += w * resid[j * ncell + c];
        ga += w * node_ascore[j];
        if (re_dist_ == MixingKind::lognormal_mean_one) {
          // d/d sigma2 of the N(-sigma2/2, sigma2) density is (p'' + p')/2; integrate by parts.
          gs += w * 0.5 * (node_d2[j] + node_d1[j] * node_d1[j] - node_d1[j]);
        } else {
          gs += w * prior.dvar(node_eta[j]);
        }
      }
      if (negbin) g_alpha += ga;
      g_sigma += gs;
    }
  }
  if (grad) {
    grad->head(p) = flat_.x.transpose() * cell_weight;
    if (negbin) (*grad)[ia] = g_alpha.value();
    (*grad)[is] = g_sigma.value();
  }
  return total.value();
}

double marginal_loglik(const ClaimPanel& panel, Family conditional, MixingKind re_dist, const Eigen::VectorXd& beta,
                       double alpha, double sigma2, const QuadratureOptions& options) {
  MarginalLikelihood ml(panel, conditional, re_dist, options);
  return ml.loglik(beta, alpha, sigma2);
}

namespace {

// Between-period covariance estimate of Var(theta):
//   sum_i sum_{t != t'} (N_it - l_it)(N_it' - l_it') / sum_i sum_{t != t'} l_it l_it'.
double moment_var_theta(const ClaimPanel& panel, const Eigen::VectorXd& beta) {
  const CellValues lam = linear_predictor(panel, beta);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < panel.num_policies(); ++i) {
    const auto& rec = panel.policy(i);
    double r = 0.0, r2 = 0.0, l = 0.0, l2 = 0.0;
    for (std::size_t t = 0; t < rec.periods.size(); ++t) {
      const double d = rec.periods[t].count - lam[i][t];
      r += d;
      r2 += d * d;
      l += lam[i][t];
      l2 += lam[i][t] * lam[i][t];
    }
    num += r * r - r2;
    den += l * l - l2;
  }
  return den > 0.0 ? num / den : 0.1;
}

}  // namespace

ReFit fit_shared_re(const ClaimPanel& panel, Family conditional, MixingKind re_dist, const ReFitOptions& options) {
  if (re_dist == MixingKind::degenerate_one) throw DomainError("random-effect distribution must be gamma or lognormal");
  const bool negbin = conditional == Family::negbin;
  const GlmFit glm = negbin ? fit_nb_glm(panel) : fit_poisson_glm(panel);
  if (!glm.beta.allFinite()) throw EstimationError("starting fit failed: " + glm.note);

  MarginalLikelihood ml(panel, conditional, re_dist, options.quadrature);
  const Eigen::Index p = glm.beta.size();
  const Eigen::Index npar = ml.num_parameters();
  const Eigen::Index ia = p, is = negbin ? p + 1 : p;

  const double v0 = std::clamp(moment_var_theta(panel, glm.beta), 0.01, 2.0);
  const double s0 = re_dist == MixingKind::lognormal_mean_one ? std::clamp(std::log1p(v0), 0.01, 2.0) : v0;
  const double a0 = negbin ? std::clamp((glm.alpha - v0) / (1.0 + v0), 0.01, 5.0) : 0.0;

  // z = (beta, sqrt(alpha), sqrt(sigma2)); the square maps keep 0 reachable.
  Eigen::VectorXd z(npar);
  z.head(p) = glm.beta;
  if (negbin) z[ia] = std::sqrt(a0);
  z[is] = std::sqrt(s0);

  Eigen::VectorXd g_nat(npar);
  const Objective objective = [&](const Eigen::VectorXd& zz, Eigen::VectorXd* g) {
    const double alpha = negbin ? zz[ia] * zz[ia] : 0.0;
    const double sigma2 = zz[is] * zz[is];
    double ll;
    try {
      ll = ml.loglik_and_gradient(zz.head(p), alpha, sigma2, g_nat);
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    } catch (const DomainError&) {
      return std::numeric_limits<double>::infinity();
    }
    if (g) {
      *g = -g_nat;
      if (negbin) (*g)[ia] *= 2.0 * zz[ia];
      (*g)[is] *= 2.0 * zz[is];
    }
    return -ll;
  };

  BfgsOptions bopt;
  bopt.max_iterations = options.max_iterations;
  bopt.gradient_tol = options.gradient_tol;
  bopt.max_step = 1.0;
  const BfgsResult opt = minimize_bfgs(objective, z, bopt);

  ReFit fit;
  fit.conditional = conditional;
  fit.re_dist = re_dist;
  fit.quadrature_nodes = ml.closed_form() ? 0 : ml.nodes();
  fit.iterations = opt.iterations;
  fit.beta = opt.x.head(p);
  fit.alpha = negbin ? opt.x[ia] * opt.x[ia] : 0.0;
  fit.sigma2 = opt.x[is] * opt.x[is];
  fit.loglik = -opt.value;
  fit.converged = opt.converged;
  if (!opt.converged) fit.note = "optimizer: " + opt.message;
  if (fit.alpha < kSnap) fit.alpha = 0.0;
  if (fit.sigma2 < kSnap) fit.sigma2 = 0.0;
  if (fit.alpha == 0.0 || fit.sigma2 == 0.0) fit.loglik = ml.loglik(fit.beta, fit.alpha, fit.sigma2);

  if (glm.converged && glm.loglik > fit.loglik) {
    fit.beta = glm.beta;
    fit.alpha = negbin ? glm.alpha : 0.0;
    fit.sigma2 = 0.0;
    fit.loglik = ml.loglik(fit.beta, fit.alpha, 0.0);
    fit.converged = true;
    fit.note.clear();
  }
  fit.sigma2_on_boundary = fit.sigma2 == 0.0;

  Eigen::VectorXd g(npar);
  ml.loglik_and_gradient(fit.beta, fit.alpha, fit.sigma2, g);
  std::vector<Eigen::Index> free;
  for (Eigen::Index k = 0; k < p; ++k) free.push_back(k);
  if (negbin && fit.alpha > 0.0) free.push_back(ia);
  if (fit.sigma2 > 0.0) free.push_back(is);
  double gmax = 0.0;
  for (Eigen::Index k : free) gmax = std::max(gmax, std::abs(g[k]));
  fit.gradient_max_norm = gmax;

  if (options.compute_covariance) {
    const auto nf = static_cast<Eigen::Index>(free.size());
    Eigen::VectorXd theta(npar);
    theta.head(p) = fit.beta;
    if (negbin) theta[ia] = fit.alpha;
    theta[is] = fit.sigma2;
    auto grad_at = [&](const Eigen::VectorXd& th) {
      Eigen::VectorXd gg(npar);
      ml.loglik_and_gradient(th.head(p), negbin ? th[ia] : 0.0, th[is], gg);
      return gg;
    };
    Eigen::MatrixXd hess(nf, nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      const Eigen::Index k = free[static_cast<std::size_t>(a)];
      double h = 1e-5 * std::max(1.0, std::abs(theta[k]));
      if (k >= p) h = std::min(h, 0.5 * theta[k]);
      Eigen::VectorXd up = theta, dn = theta;
      up[k] += h;
      dn[k] -= h;
      const Eigen::VectorXd diff = (grad_at(up) - grad_at(dn)) / (2.0 * h);
      for (Eigen::Index b = 0; b < nf; ++b) hess(b, a) = diff[free[static_cast<std::size_t>(b)]];
    }
    const Eigen::MatrixXd info = -0.5 * (hess + hess.transpose());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && (ldlt.vectorD().array() > 0.0).all()) {
      fit.covariance = ldlt.solve(Eigen::MatrixXd::Identity(nf, nf));
    } else {
      if (!fit.note.empty()) fit.note += "; ";
      fit.note += "observed information is not positive definite";
    }
  }
  return fit;
}

}  // namespace ratekit
