#pragma once

#include <cmath>
#include <random>
#include <string_view>

#include "ratekit/errors.hpp"

namespace ratekit {

/// Negative binomial in mean-dispersion form: mean lambda, variance lambda + alpha * lambda^2.
/// alpha = 0 is the Poisson distribution.
struct NbParams {
  double lambda = 1.0;
  double alpha = 0.0;

  void validate() const;
};

/// Dispersion values below this are treated as exactly Poisson.
inline constexpr double kPoissonAlphaCutoff = 1e-12;

enum class MixingKind { degenerate_one, gamma_mean_one, lognormal_mean_one };

std::string_view to_string(MixingKind kind);
MixingKind mixing_kind_from_string(std::string_view name);

/// Mean-one multiplicative random effect.
///
/// gamma_mean_one(v) is Gamma(1/v, 1/v), so Var(theta) = v.
/// lognormal_mean_one(s2) is Lognormal(-s2/2, s2); here the parameter is the log-scale
/// variance s2 and Var(theta) = exp(s2) - 1.
/// Any kind with parameter 0 is the point mass at 1.
class MixingDist {
 public:
  MixingDist() = default;

  static MixingDist degenerate() { return {}; }
  static MixingDist gamma_mean_one(double variance) { return {MixingKind::gamma_mean_one, variance}; }
  static MixingDist lognormal_mean_one(double sigma2) { return {MixingKind::lognormal_mean_one, sigma2}; }
  static MixingDist of(MixingKind kind, double parameter) { return {kind, parameter}; }

  MixingKind kind() const noexcept { return kind_; }
  /// The variance parameter as stored: Var(theta) for gamma, log-scale sigma^2 for lognormal.
  double parameter() const noexcept { return parameter_; }
  /// Var(theta).
  double theta_variance() const noexcept;
  bool is_degenerate() const noexcept { return kind_ == MixingKind::degenerate_one || parameter_ == 0.0; }

  template <class Urbg>
  double sample(Urbg& rng) const {
    if (is_degenerate()) return 1.0;
    if (kind_ == MixingKind::gamma_mean_one) {
      const double shape = 1.0 / parameter_;
      return std::gamma_distribution<double>(shape, 1.0 / shape)(rng);
    }
    const double sigma = std::sqrt(parameter_);
    return std::exp(std::normal_distribution<double>(-0.5 * parameter_, sigma)(rng));
  }

 private:
  MixingDist(MixingKind kind, double parameter);

  MixingKind kind_ = MixingKind::degenerate_one;
  double parameter_ = 0.0;
};

/// log P(N = n) for N ~ NB(lambda, alpha); exact Poisson when alpha < kPoissonAlphaCutoff.
double log_pmf(int n, const NbParams& p);

/// log P(N = n) for N ~ Poisson(lambda).
double poisson_log_pmf(int n, double lambda);

/// Central moments E(N - lambda)^order of NB(lambda, alpha), order in {2, 3, 4}.
double nb_central_moment(const NbParams& p, int order);

/// P(N >= n) for n >= 0 accumulated from the pmf recursion; exact to double rounding.
double nb_survival(int n, const NbParams& p);

template <class Urbg>
int sample_poisson(double lambda, Urbg& rng) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DomainError("poisson rate must be finite and nonnegative");
  if (lambda == 0.0) return 0;
  return std::poisson_distribution<int>(lambda)(rng);
}

/// NB draw through the gamma-Poisson mixture: theta ~ Gamma(1/alpha, 1/alpha), N ~ Poisson(lambda * theta).
template <class Urbg>
int sample_nb(const NbParams& p, Urbg& rng) {
  p.validate();
  if (p.alpha < kPoissonAlphaCutoff) return sample_poisson(p.lambda, rng);
  const double theta = MixingDist::gamma_mean_one(p.alpha).sample(rng);
  return sample_poisson(p.lambda * theta, rng);
}

}  // namespace ratekit
