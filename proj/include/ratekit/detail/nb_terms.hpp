#pragma once

// Per-cell pieces of the NB(mu, alpha) log-likelihood
//   log f = sum_{j<n} log(1 + alpha j) - log n! + n log mu - (n + 1/alpha) log(1 + alpha mu)
// and its alpha-derivatives. Every function is exact at alpha = 0 (the Poisson limit);
// the 1/alpha^k terms are evaluated by power series when alpha * mu is small.

#include <cmath>

#include "ratekit/numeric.hpp"

namespace ratekit::detail {

inline constexpr double kSeriesCutoff = 1e-2;

/// sum_{j<n} log(1 + alpha j) - log n!  (independent of the mean).
inline double nb_count_constant(int n, double alpha) {
  double acc = 0.0;
  if (alpha > 0.0) {
    for (int j = 1; j < n; ++j) acc += std::log1p(alpha * j);
  }
  return acc - log_gamma(n + 1.0);
}

/// n log mu - (n + 1/alpha) log(1 + alpha mu), given log mu.
inline double nb_kernel(int n, double mu, double log_mu, double alpha) {
  if (alpha == 0.0) return n * log_mu - mu;
  const double l = std::log1p(alpha * mu);
  return n * log_mu - n * l - l / alpha;
}

/// (log(1+x) - x/(1+x)) / alpha^2 with x = alpha mu; limit mu^2/2.
inline double nb_g(double alpha, double mu) {
  const double x = alpha * mu;
  if (x < kSeriesCutoff) {
    // mu^2 * sum_{m>=2} (-1)^m (m-1)/m x^(m-2)
    double term = 1.0, acc = 0.0;
    for (int m = 2; m <= 14; ++m) {
      acc += ((m % 2 == 0) ? 1.0 : -1.0) * (m - 1.0) / m * term;
      term *= x;
    }
    return mu * mu * acc;
  }
  return (std::log1p(x) - x / (1.0 + x)) / (alpha * alpha);
}

/// (-2 log(1+x) + 2x/(1+x) + x^2/(1+x)^2) / alpha^3; limit -2 mu^3 / 3.
inline double nb_h2(double alpha, double mu) {
  const double x = alpha * mu;
  if (x < kSeriesCutoff) {
    // mu^3 * sum_{m>=3} (-1)^m (m-1)(m-2)/m x^(m-3)
    double term = 1.0, acc = 0.0;
    for (int m = 3; m <= 15; ++m) {
      acc += ((m % 2 == 0) ? 1.0 : -1.0) * (m - 1.0) * (m - 2.0) / m * term;
      term *= x;
    }
    return mu * mu * mu * acc;
  }
  const double s = 1.0 + x;
  return (-2.0 * std::log1p(x) + 2.0 * x / s + x * x / (s * s)) / (alpha * alpha * alpha);
}

/// sum_{j<n} j/(1+alpha j) and sum_{j<n} j^2/(1+alpha j)^2.
struct CountSums {
  double first = 0.0;
  double second = 0.0;
};

inline CountSums nb_count_sums(int n, double alpha) {
  CountSums s;
  for (int j = 1; j < n; ++j) {
    const double q = j / (1.0 + alpha * j);
    s.first += q;
    s.second += q * q;
  }
  return s;
}

/// d/d alpha of the cell log-likelihood.
inline double nb_alpha_score(int n, double mu, double alpha, const CountSums& sums) {
  return sums.first + nb_g(alpha, mu) - n * mu / (1.0 + alpha * mu);
}

/// d^2/d alpha^2 of the cell log-likelihood.
inline double nb_alpha_curvature(int n, double mu, double alpha, const CountSums& sums) {
  const double s = 1.0 + alpha * mu;
  return -sums.second + nb_h2(alpha, mu) + n * mu * mu / (s * s);
}

}  // namespace ratekit::detail
