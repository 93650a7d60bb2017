#include "ratekit/score_tests.hpp"

#include <cmath>

#include "ratekit/errors.hpp"
#include "ratekit/numeric.hpp"

namespace ratekit {

double ScoreTestResult::critical_value(double level) const {
  if (!(level > 0.0 && level < 1.0)) throw DomainError("test level must lie in (0, 1)");
  return normal_quantile(1.0 - level);
}

bool ScoreTestResult::rejects(double level) const { return statistic >= critical_value(level); }

ScoreTestResult pinquet_statistic(const ClaimPanel& panel, const CellValues& lambda_hat) {
  if (lambda_hat.size() != panel.num_policies()) throw DomainError("fitted rates do not match the panel");
  ScoreTestResult res;
  res.test = "pinquet";
  res.per_policy_contributions.reserve(panel.num_policies());
  CompensatedSum num, den;
  for (std::size_t i = 0; i < panel.num_policies(); ++i) {
    const auto& rec = panel.policy(i);
    if (lambda_hat[i].size() != rec.periods.size()) throw DomainError("fitted rates do not match policy '" + rec.id + "'");
    double resid = 0.0, counts = 0.0, rates = 0.0;
    for (std::size_t t = 0; t < rec.periods.size(); ++t) {
      const double l = lambda_hat[i][t];
      if (!(l > 0.0) || !std::isfinite(l)) throw DomainError("fitted rates must be finite and positive");
      resid += rec.periods[t].count - l;
      counts += rec.periods[t].count;
      rates += l;
    }
    const double c = resid * resid - counts;
    res.per_policy_contributions.push_back(c);
    num += c;
    den += rates * rates;
  }
  const double d2 = 2.0 * den.value();
  if (!(d2 > 0.0)) throw DomainError("Pinquet denominator is zero");
  res.numerator = num.value();
  res.denominator = std::sqrt(d2);
  res.statistic = res.numerator / res.denominator;
  res.p_value_one_sided = normal_upper_tail(res.statistic);
  return res;
}

double nb_score_contribution(const PolicyRecord& record, const Eigen::VectorXd& beta_hat, double alpha_hat) {
  if (!(alpha_hat >= 0.0) || !std::isfinite(alpha_hat)) throw DomainError("alpha must be finite and nonnegative");
  double u = 0.0, c = 0.0;
  for (const auto& obs : record.periods) {
    if (obs.covariates.size() != static_cast<std::size_t>(beta_hat.size())) throw DomainError("coefficient length mismatch");
    double eta = 0.0;
    for (std::size_t j = 0; j < obs.covariates.size(); ++j) eta += obs.covariates[j] * beta_hat[static_cast<Eigen::Index>(j)];
    const double l = std::exp(eta);
    const double n = obs.count;
    const double s = 1.0 + alpha_hat * l;
    u += (n - l) / s;
    // (N s^2 - a^2 N l^2 - a l^2) / s^2 == N - a l^2 (1 + a N) / s^2
    c += n - alpha_hat * l * l * (1.0 + alpha_hat * n) / (s * s);
  }
  return 0.5 * (u * u - c);
}

namespace {

// E[(d l / d alpha)^2] for one NB(l, a) cell:
//   a^-4 ( sum_{j>=0} (1/a + j)^-2 P(N >= j+1) - a l / (l + 1/a) )
// evaluated as a^-2 ( sum_j P(N > j) / (1 + a j)^2 - l / (1 + a l) ).
double alpha_information_cell(double l, double a, const InfoOptions& opt, long& terms) {
  const double log_ratio = std::log(l / (1.0 + a * l));
  double log_pmf = -std::log1p(a * l) / a;
  CompensatedSum cdf, series;
  long j = 0;
  for (;; ++j) {
    if (j >= opt.max_series_terms) {
      throw NumericalError("alpha-information series did not reach tail " + std::to_string(opt.tail_tolerance) +
                           " within " + std::to_string(opt.max_series_terms) + " terms (lambda = " +
                           std::to_string(l) + ", alpha = " + std::to_string(a) + ")");
    }
    cdf += std::exp(log_pmf);
    const double survival = 1.0 - cdf.value();  // P(N >= j + 1)
    if (survival < opt.tail_tolerance) break;
    const double q = 1.0 + a * j;
    series += survival / (q * q);
    log_pmf += log_ratio + std::log1p(a * j) - std::log(j + 1.0);
  }
  terms = j + 1;
  return (series.value() - l / (1.0 + a * l)) / (a * a);
}

}  // namespace

InfoComponents nb_information_components(const ClaimPanel& panel, const Eigen::VectorXd& beta_hat, double alpha_hat,
                                         const InfoOptions& options) {
  if (!(alpha_hat > 0.0) || !std::isfinite(alpha_hat)) {
    throw DomainError("information components require an interior dispersion estimate alpha > 0");
  }
  const Eigen::Index p = beta_hat.size();
  if (static_cast<std::size_t>(p) != panel.num_covariates()) throw DomainError("coefficient length mismatch");
  const double a = alpha_hat;

  CompensatedSum i_ss, i_sa, i_aa;
  Eigen::MatrixXd xtwx = Eigen::MatrixXd::Zero(p, p);
  long max_terms = 0;
  Eigen::VectorXd x(p);
  for (const auto& rec : panel.policies()) {
    double diag = 0.0, w_sum = 0.0, w_sq = 0.0, cross = 0.0;
    for (const auto& obs : rec.periods) {
      for (Eigen::Index j = 0; j < p; ++j) x[j] = obs.covariates[static_cast<std::size_t>(j)];
      const double l = std::exp(x.dot(beta_hat));
      const double s = 1.0 + a * l;
      // lambda (1 + a lambda) / (1 + a lambda)^2 simplified to lambda / (1 + a lambda)
      const double w = l / s;
      diag += 2.0 * l * l * (1.0 + a) / (s * s);
      w_sum += w;
      w_sq += w * w;
      cross += l * l / (s * s);
      xtwx.noalias() += w * x * x.transpose();
      long terms = 0;
      i_aa += alpha_information_cell(l, a, options, terms);
      max_terms = std::max(max_terms, terms);
    }
    // sum_{t<t'} w_t w_t' = ((sum w)^2 - sum w^2) / 2
    i_ss += 0.25 * (diag + 2.0 * (w_sum * w_sum - w_sq));
    i_sa += 0.5 * cross;
  }

  InfoComponents info;
  info.i_ss = i_ss.value();
  info.i_sw = Eigen::VectorXd::Zero(p + 1);
  info.i_sw[p] = i_sa.value();
  info.i_ww = Eigen::MatrixXd::Zero(p + 1, p + 1);
  info.i_ww.topLeftCorner(p, p) = xtwx;
  info.i_ww(p, p) = i_aa.value();
  info.series_terms = max_terms;

  Eigen::LDLT<Eigen::MatrixXd> ldlt(info.i_ww);
  if (ldlt.info() != Eigen::Success || !(info.i_ww(p, p) > 0.0)) {
    throw NumericalError("information matrix for (beta, alpha) is not positive definite");
  }
  info.effective_variance = info.i_ss - info.i_sw.dot(ldlt.solve(info.i_sw));
  return info;
}

ScoreTestResult nb_score_test(const ClaimPanel& panel, const GlmFit& fit, const InfoOptions& options) {
  if (fit.family != Family::negbin) throw DomainError("NB score test needs a negative binomial fit");
  if (!fit.converged) throw EstimationError("NB score test needs a converged fit" + (fit.note.empty() ? "" : ": " + fit.note));
  if (fit.alpha_on_boundary || fit.alpha <= 0.0) {
    ScoreTestResult res = pinquet_statistic(panel, linear_predictor(panel, fit.beta));
    res.test = "nb-score";
    res.boundary_fallback = true;
    return res;
  }
  ScoreTestResult res;
  res.test = "nb-score";
  CompensatedSum total;
  res.per_policy_contributions.reserve(panel.num_policies());
  for (const auto& rec : panel.policies()) {
    const double t = nb_score_contribution(rec, fit.beta, fit.alpha);
    res.per_policy_contributions.push_back(t);
    total += t;
  }
  InfoComponents info = nb_information_components(panel, fit.beta, fit.alpha, options);
  if (!(info.effective_variance > 0.0)) {
    throw NumericalError("effective variance of the NB score is not positive (" +
                         std::to_string(info.effective_variance) + ")");
  }
  res.numerator = total.value();
  res.denominator = std::sqrt(info.effective_variance);
  res.statistic = res.numerator / res.denominator;
  res.p_value_one_sided = normal_upper_tail(res.statistic);
  res.info = std::move(info);
  return res;
}

BmExistenceReport bm_existence_report(const ClaimPanel& panel, double level) {
  BmExistenceReport rep;
  rep.level = level;
  rep.poisson_fit = fit_poisson_glm(panel);
  if (!rep.poisson_fit.converged) throw EstimationError("Poisson fit did not converge: " + rep.poisson_fit.note);
  rep.pinquet = pinquet_statistic(panel, linear_predictor(panel, rep.poisson_fit.beta));
  rep.nb_fit = fit_nb_glm(panel);
  rep.nb_score = nb_score_test(panel, rep.nb_fit);
  rep.pinquet_rejects = rep.pinquet.rejects(level);
  rep.nb_rejects = rep.nb_score.rejects(level);
  rep.disagreement = rep.pinquet_rejects && !rep.nb_rejects;
  return rep;
}

}  // namespace ratekit
