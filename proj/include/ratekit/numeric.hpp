#pragma once

#include <cmath>
#include <limits>
#include <span>

namespace ratekit {

/// Neumaier's variant of Kahan summation.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  CompensatedSum& operator+=(double x) noexcept {
    add(x);
    return *this;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double log_sum_exp(std::span<const double> terms) noexcept {
  double hi = -std::numeric_limits<double>::infinity();
  for (double t : terms) hi = t > hi ? t : hi;
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - hi);
  return hi + std::log(acc);
}

/// Upper tail of the standard normal, 1 - Phi(x).
inline double normal_upper_tail(double x) noexcept { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

/// Phi^{-1}(p) for p in (0, 1).
double normal_quantile(double p);

/// Thread-safe log-gamma for positive arguments.
double log_gamma(double x);

/// Digamma for positive arguments.
double digamma(double x);

}  // namespace ratekit
