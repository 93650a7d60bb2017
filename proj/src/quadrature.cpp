#include "ratekit/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>

#include "ratekit/errors.hpp"

namespace ratekit {

GaussHermite gauss_hermite(int n) {
  if (n < 1 || n > 512) throw DomainError("Gauss-Hermite order must lie in [1, 512]");
  // starting values from the eigenvalues of the Jacobi matrix
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n), sub(std::max(n - 1, 0));
  for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(k / 2.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> jacobi;
  jacobi.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd guess = jacobi.eigenvalues();

  const double log_pim4 = -0.25 * std::log(std::numbers::pi);
  GaussHermite rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  rule.log_weight_plus_square.resize(n);
  const int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    // polish the nonnegative root with Newton steps on the normalized recurrence, scaled by exp(-z^2/2)
    double z = std::abs(guess[n - 1 - i]);
    if (n % 2 == 1 && i == m - 1) z = 0.0;
    double log_pp = 0.0;
    for (int it = 0; it < 50; ++it) {
      double p1 = std::exp(log_pim4 - 0.5 * z * z), p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1.0)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1.0)) * p3;
      }
      const double pp = std::sqrt(2.0 * n) * p2;  // derivative times exp(-z^2/2)
      log_pp = std::log(std::abs(pp));
      const double step = p1 / pp;
      z -= step;
      if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    // w = 2 / H'^2 with H' the normalized derivative; log w + z^2 is what the integrators use
    const double lwps = std::log(2.0) - 2.0 * log_pp;
    rule.nodes[n - 1 - i] = z;
    rule.nodes[i] = -z;
    rule.log_weight_plus_square[i] = rule.log_weight_plus_square[n - 1 - i] = lwps;
    rule.weights[i] = rule.weights[n - 1 - i] = std::exp(lwps - z * z);
  }
  return rule;
}

}  // namespace ratekit
