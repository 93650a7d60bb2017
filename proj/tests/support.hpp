#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ratekit/panel.hpp"

namespace ratekit::test {

/// Panel from per-policy count rows and a constant covariate row per policy.
inline ClaimPanel make_panel(const std::vector<std::vector<int>>& counts, const std::vector<std::vector<double>>& x,
                             std::vector<std::string> names) {
  std::vector<PolicyRecord> recs;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    PolicyRecord r;
    r.id = "p" + std::to_string(i);
    for (std::size_t t = 0; t < counts[i].size(); ++t) {
      r.periods.push_back({static_cast<std::int64_t>(t + 1), counts[i][t], x[i]});
    }
    recs.push_back(std::move(r));
  }
  return ClaimPanel(std::move(names), std::move(recs));
}

inline ClaimPanel intercept_panel(const std::vector<std::vector<int>>& counts) {
  return make_panel(counts, std::vector<std::vector<double>>(counts.size(), {1.0}), {"intercept"});
}

/// Central difference with one Richardson step.
inline double derivative(const std::function<double(double)>& f, double x, double h) {
  const auto d = [&](double s) { return (f(x + s) - f(x - s)) / (2.0 * s); };
  return (4.0 * d(h / 2) - d(h)) / 3.0;
}

inline double second_derivative(const std::function<double(double)>& f, double x, double h) {
  const auto d = [&](double s) { return (f(x + s) - 2.0 * f(x) + f(x - s)) / (s * s); };
  return (4.0 * d(h / 2) - d(h)) / 3.0;
}

}  // namespace ratekit::test
