#include "ratekit/credibility.hpp"

#include <cmath>

#include "ratekit/errors.hpp"
#include "ratekit/numeric.hpp"

namespace ratekit {

std::string_view to_string(CredibilityModel m) {
  switch (m) {
    case CredibilityModel::poisson_re: return "poisson-re";
    case CredibilityModel::nb_re: return "nb-re";
    case CredibilityModel::nb_re_saturated: return "nb-re-saturated";
  }
  return "?";
}

CredibilityModel credibility_model_from_string(std::string_view name) {
  if (name == "poisson-re") return CredibilityModel::poisson_re;
  if (name == "nb-re") return CredibilityModel::nb_re;
  if (name == "nb-re-saturated") return CredibilityModel::nb_re_saturated;
  throw DomainError("unknown credibility model '" + std::string(name) + "'");
}

namespace {

void check_inputs(CredibilityModel model, double lambda, double alpha, double b) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DomainError("lambda must be finite and positive");
  if (model != CredibilityModel::poisson_re && (!(alpha >= 0.0) || !std::isfinite(alpha))) {
    throw DomainError("alpha must be finite and nonnegative");
  }
  if (model == CredibilityModel::nb_re_saturated && (!(b >= 0.0) || !std::isfinite(b))) {
    throw DomainError("saturated variance b must be finite and nonnegative");
  }
}

// coefficient of mu^2 E[theta^2] in nu
double process_excess(CredibilityModel model, double alpha, double b) {
  switch (model) {
    case CredibilityModel::poisson_re: return 0.0;
    case CredibilityModel::nb_re: return alpha;
    case CredibilityModel::nb_re_saturated: return alpha * (1.0 + b) + b;
  }
  return 0.0;
}

}  // namespace

StructuralParams structural_params(CredibilityModel model, double lambda, double sigma2, double alpha, double b) {
  if (!(sigma2 >= 0.0) || !std::isfinite(sigma2)) throw DomainError("sigma2 must be finite and nonnegative");
  check_inputs(model, lambda, alpha, b);
  StructuralParams s;
  s.mu = lambda * std::exp(0.5 * sigma2);
  s.a = s.mu * s.mu * std::expm1(sigma2);
  s.nu = s.mu + process_excess(model, alpha, b) * s.mu * s.mu * std::exp(sigma2);
  return s;
}

StructuralParams structural_params_mean_one(CredibilityModel model, double mean_rate, const MixingDist& shared,
                                            double alpha, double b) {
  if (!(shared.parameter() >= 0.0)) throw DomainError("mixing variance must be nonnegative");
  check_inputs(model, mean_rate, alpha, b);
  const double v = shared.theta_variance();
  StructuralParams s;
  s.mu = mean_rate;
  s.a = s.mu * s.mu * v;
  s.nu = s.mu + process_excess(model, alpha, b) * s.mu * s.mu * (1.0 + v);
  return s;
}

double buhlmann_factor(int periods, const StructuralParams& s) {
  if (periods < 1) throw DomainError("number of periods must be at least 1");
  if (s.a == 0.0) return 0.0;
  if (!(s.a > 0.0) || !(s.nu > 0.0)) throw DomainError("structural parameters must be positive");
  return periods / (s.nu / s.a + periods);
}

double buhlmann_predict(double z, double sample_mean, double mu) {
  if (!(z >= 0.0 && z <= 1.0)) throw DomainError("credibility factor must lie in [0, 1]");
  return z * sample_mean + (1.0 - z) * mu;
}

double bm_coefficient(double a_gamma, std::span<const int> counts, std::span<const double> lambdas) {
  if (!(a_gamma > 0.0)) throw DomainError("gamma shape must be positive");
  if (counts.size() != lambdas.size()) throw DomainError("counts and rates differ in length");
  double n = 0.0, l = 0.0;
  for (std::size_t t = 0; t < counts.size(); ++t) {
    n += counts[t];
    l += lambdas[t];
  }
  return (a_gamma + n) / (a_gamma + l);
}

CredibilityModel credibility_model_for(const ReFit& fit) {
  return fit.conditional == Family::negbin ? CredibilityModel::nb_re : CredibilityModel::poisson_re;
}

namespace {

struct PolicySummary {
  double mean_rate = 0.0;
  double sample_mean = 0.0;
  bool varies = false;
};

PolicySummary summarize(const std::vector<PeriodObservation>& periods, const std::vector<double>& lambda,
                        std::size_t used) {
  PolicySummary s;
  double lo = lambda[0], hi = lambda[0], n = 0.0, l = 0.0;
  for (std::size_t t = 0; t < used; ++t) {
    n += periods[t].count;
    l += lambda[t];
    lo = std::min(lo, lambda[t]);
    hi = std::max(hi, lambda[t]);
  }
  s.mean_rate = l / used;
  s.sample_mean = n / used;
  s.varies = hi - lo > 1e-9 * hi;
  return s;
}

}  // namespace

CredibilityReport credibility_report(const ClaimPanel& panel, const ReFit& fit) {
  const CellValues lambda = linear_predictor(panel, fit.beta);
  const CredibilityModel model = credibility_model_for(fit);
  const MixingDist mixing = fit.mixing();
  const bool with_bm = fit.conditional == Family::poisson && fit.re_dist == MixingKind::gamma_mean_one;
  CredibilityReport rep;
  rep.rows.reserve(panel.num_policies());
  for (std::size_t i = 0; i < panel.num_policies(); ++i) {
    const auto& rec = panel.policy(i);
    const PolicySummary ps = summarize(rec.periods, lambda[i], rec.periods.size());
    CredibilityRow row;
    row.id = rec.id;
    row.periods = static_cast<int>(rec.periods.size());
    row.sample_mean = ps.sample_mean;
    row.structural = structural_params_mean_one(model, ps.mean_rate, mixing, fit.alpha, 0.0);
    row.z = buhlmann_factor(row.periods, row.structural);
    row.prediction = buhlmann_predict(row.z, row.sample_mean, row.structural.mu);
    row.lambda_varies = ps.varies;
    if (with_bm) {
      if (fit.sigma2 == 0.0) {
        row.bm_coefficient = 1.0;  // degenerate-prior limit
      } else {
        std::vector<int> counts;
        for (const auto& o : rec.periods) counts.push_back(o.count);
        row.bm_coefficient = bm_coefficient(1.0 / fit.sigma2, counts, lambda[i]);
      }
    }
    rep.lambda_varies = rep.lambda_varies || ps.varies;
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

std::string_view to_string(MseTarget t) { return t == MseTarget::buhlmann ? "buhlmann" : "rate"; }

PredictiveMse empirical_predictive_mse(const ClaimPanel& panel, const ReFit& fit, MseTarget target) {
  for (const auto& rec : panel.policies()) {
    if (rec.periods.size() < 2) {
      throw DomainError("policy '" + rec.id + "' has a single period; a held-out period needs at least two");
    }
  }
  const CellValues lambda = linear_predictor(panel, fit.beta);
  const CredibilityModel model = credibility_model_for(fit);
  const MixingDist mixing = fit.mixing();
  PredictiveMse out;
  CompensatedSum sse;
  for (std::size_t i = 0; i < panel.num_policies(); ++i) {
    const auto& rec = panel.policy(i);
    const std::size_t train = rec.periods.size() - 1;
    double pred;
    if (target == MseTarget::rate) {
      pred = lambda[i][train - 1];
    } else {
      const PolicySummary ps = summarize(rec.periods, lambda[i], train);
      const StructuralParams s = structural_params_mean_one(model, ps.mean_rate, mixing, fit.alpha, 0.0);
      pred = buhlmann_predict(buhlmann_factor(static_cast<int>(train), s), ps.sample_mean, s.mu);
    }
    const int realized = rec.periods[train].count;
    const double err = realized - pred;
    sse += err * err;
    out.predictions.push_back(pred);
    out.realized.push_back(realized);
  }
  out.policies = panel.num_policies();
  out.mse = sse.value() / static_cast<double>(out.policies);
  return out;
}

}  // namespace ratekit
