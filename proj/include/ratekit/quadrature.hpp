#pragma once

#include <vector>

namespace ratekit {

/// n-point Gauss-Hermite rule for weight exp(-x^2), nodes ascending.
/// log_weight_plus_square[j] = log w_j + x_j^2, which is what an integral of an
/// unweighted integrand needs: int f(x) dx ~= sum_j exp(log w_j + x_j^2) f(x_j).
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<double> log_weight_plus_square;
};

/// Nodes by Newton iteration on the normalized Hermite recurrence. 1 <= n <= 512.
GaussHermite gauss_hermite(int n);

}  // namespace ratekit
