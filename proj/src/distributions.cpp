#include "ratekit/distributions.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <string>

#include "ratekit/numeric.hpp"

namespace ratekit {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal quantile requires p in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double log_gamma(double x) { return boost::math::lgamma(x); }

double digamma(double x) { return boost::math::digamma(x); }

void NbParams::validate() const {
  if (!std::isfinite(lambda) || !(lambda > 0.0)) throw DomainError("NB mean must be finite and positive");
  if (!std::isfinite(alpha) || alpha < 0.0) throw DomainError("NB dispersion must be finite and nonnegative");
}

std::string_view to_string(MixingKind kind) {
  switch (kind) {
    case MixingKind::degenerate_one: return "degenerate";
    case MixingKind::gamma_mean_one: return "gamma";
    case MixingKind::lognormal_mean_one: return "lognormal";
  }
  return "unknown";
}

MixingKind mixing_kind_from_string(std::string_view name) {
  if (name == "gamma") return MixingKind::gamma_mean_one;
  if (name == "lognormal") return MixingKind::lognormal_mean_one;
  if (name == "degenerate") return MixingKind::degenerate_one;
  throw DomainError("unknown mixing distribution '" + std::string(name) + "'");
}

MixingDist::MixingDist(MixingKind kind, double parameter) : kind_(kind), parameter_(parameter) {
  if (!std::isfinite(parameter) || parameter < 0.0) throw DomainError("mixing variance must be finite and nonnegative");
  if (kind == MixingKind::degenerate_one && parameter != 0.0) {
    throw DomainError("degenerate mixing distribution has zero variance");
  }
}

double MixingDist::theta_variance() const noexcept {
  if (is_degenerate()) return 0.0;
  if (kind_ == MixingKind::gamma_mean_one) return parameter_;
  return std::expm1(parameter_);
}

namespace {

// sum_{j<n} log(1 + alpha j) = lgamma(n + 1/alpha) - lgamma(1/alpha) + n log(alpha).
// The direct sum is exact for small alpha where the log-gamma difference cancels.
double log_rising_ratio(int n, double alpha) {
  if (n <= 256 || alpha < 1e-6) {
    CompensatedSum acc;
    for (int j = 1; j < n; ++j) acc += std::log1p(alpha * j);
    return acc.value();
  }
  const double r = 1.0 / alpha;
  return log_gamma(n + r) - log_gamma(r) + n * std::log(alpha);
}

}  // namespace

double poisson_log_pmf(int n, double lambda) {
  if (!std::isfinite(lambda) || !(lambda > 0.0)) throw DomainError("poisson rate must be finite and positive");
  if (n < 0) throw DomainError("count must be nonnegative");
  return n * std::log(lambda) - lambda - log_gamma(n + 1.0);
}

double log_pmf(int n, const NbParams& p) {
  p.validate();
  if (n < 0) throw DomainError("count must be nonnegative");
  if (p.alpha < kPoissonAlphaCutoff) return poisson_log_pmf(n, p.lambda);
  const double x = p.alpha * p.lambda;
  return log_rising_ratio(n, p.alpha) - log_gamma(n + 1.0) + n * std::log(p.lambda) -
         (n + 1.0 / p.alpha) * std::log1p(x);
}

double nb_central_moment(const NbParams& p, int order) {
  p.validate();
  const double l = p.lambda;
  const double a = p.alpha;
  const double base = l * (1.0 + a * l);
  switch (order) {
    case 2: return base;
    case 3: return base * (1.0 + 2.0 * a * l);
    case 4: return base * (1.0 + 3.0 * l + 6.0 * a * l + 3.0 * a * l * l + 6.0 * a * a * l * l);
    default: throw DomainError("central moment order must be 2, 3 or 4");
  }
}

double nb_survival(int n, const NbParams& p) {
  p.validate();
  if (n <= 0) return 1.0;
  const double alpha = p.alpha < kPoissonAlphaCutoff ? 0.0 : p.alpha;
  // log-space recursion so that a far-right mode does not underflow the early terms
  double log_pmf_k = alpha == 0.0 ? -p.lambda : -std::log1p(alpha * p.lambda) / alpha;
  const double log_ratio = std::log(p.lambda / (1.0 + alpha * p.lambda));
  CompensatedSum cdf;
  for (int k = 0; k < n; ++k) {
    cdf += std::exp(log_pmf_k);
    log_pmf_k += log_ratio + std::log1p(alpha * k) - std::log(k + 1.0);
  }
  const double s = 1.0 - cdf.value();
  return s > 0.0 ? s : 0.0;
}

}  // namespace ratekit
