#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ratekit/distributions.hpp"
#include "ratekit/panel.hpp"
#include "ratekit/random_effects.hpp"

namespace ratekit {

/// Collective mean, expected process variance, variance of hypothetical means.
struct StructuralParams {
  double mu = 0.0;
  double nu = 0.0;
  double a = 0.0;
};

enum class CredibilityModel { poisson_re, nb_re, nb_re_saturated };

std::string_view to_string(CredibilityModel m);
CredibilityModel credibility_model_from_string(std::string_view name);

/// Closed forms with theta_i ~ Lognormal(0, sigma2):
///   mu = lambda exp(sigma2/2), a = mu^2 (exp(sigma2) - 1),
///   nu = mu + (alpha (1 + b) + b) mu^2 exp(sigma2).
/// b is Var(theta_it) of the saturated effect (nb_re_saturated only); poisson_re uses alpha = b = 0.
StructuralParams structural_params(CredibilityModel model, double lambda, double sigma2, double alpha, double b);

/// The same moments for a mean-one shared effect with E[theta] = 1, Var(theta) = v:
///   mu = mean_rate, a = mu^2 v, nu = mu + (alpha (1 + b) + b) mu^2 (1 + v).
StructuralParams structural_params_mean_one(CredibilityModel model, double mean_rate, const MixingDist& shared,
                                            double alpha, double b);

/// Z = T / (nu/a + T); 0 when a = 0.
double buhlmann_factor(int periods, const StructuralParams& s);

/// Z * mean + (1 - Z) * mu.
double buhlmann_predict(double z, double sample_mean, double mu);

/// Posterior mean of theta under Gamma(a, a) mixing: (a + sum N) / (a + sum lambda).
double bm_coefficient(double a_gamma, std::span<const int> counts, std::span<const double> lambdas);

struct CredibilityRow {
  std::string id;
  int periods = 0;
  double sample_mean = 0.0;
  StructuralParams structural;
  double z = 0.0;
  double prediction = 0.0;
  std::optional<double> bm_coefficient;
  bool lambda_varies = false;  // per-period rates differ; the structural forms use their average
};

struct CredibilityReport {
  std::vector<CredibilityRow> rows;
  bool lambda_varies = false;
};

CredibilityModel credibility_model_for(const ReFit& fit);

/// One row per policy from a shared-random-effect fit, using every period of the panel.
CredibilityReport credibility_report(const ClaimPanel& panel, const ReFit& fit);

enum class MseTarget {
  buhlmann,  // (N_iT - P_i)^2 with P_i from the first T_i - 1 periods
  rate,      // (N_iT - lambda_{i,T-1})^2, the fitted a priori rate of the last training period
};

std::string_view to_string(MseTarget t);

struct PredictiveMse {
  double mse = 0.0;
  std::size_t policies = 0;
  std::vector<double> predictions;
  std::vector<int> realized;
};

/// `fit` must come from the panel with each policy's last period removed. Predictions use
/// the first T_i - 1 periods and are scored against period T_i.
PredictiveMse empirical_predictive_mse(const ClaimPanel& panel, const ReFit& fit,
                                       MseTarget target = MseTarget::buhlmann);

}  // namespace ratekit
