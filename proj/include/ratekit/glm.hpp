#pragma once

#include <Eigen/Dense>
#include <string>
#include <string_view>

#include "ratekit/panel.hpp"

namespace ratekit {

enum class Family { poisson, negbin };

std::string_view to_string(Family f);

/// Fitted fixed-effect count regression. For negbin the parameter vector is
/// omega = (beta, alpha) and observed_information is (p+1) x (p+1) in that order.
struct GlmFit {
  Family family = Family::poisson;
  Eigen::VectorXd beta;
  double alpha = 0.0;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  bool alpha_on_boundary = false;  // negbin only: the maximum sits at alpha = 0
  double gradient_max_norm = 0.0;
  Eigen::MatrixXd observed_information;
  std::string note;

  /// Inverse of the observed information, restricted to the free parameters.
  Eigen::MatrixXd covariance() const;
  Eigen::VectorXd standard_errors() const { return covariance().diagonal().cwiseSqrt(); }
};

struct GlmOptions {
  int max_iterations = 200;
  double rel_loglik_tol = 1e-10;
  double gradient_tol = 1e-8;
};

GlmFit fit_poisson_glm(const ClaimPanel& panel, const GlmOptions& options = {});

/// Joint (beta, alpha) maximum likelihood; alpha = 0 is admitted as a boundary solution.
GlmFit fit_nb_glm(const ClaimPanel& panel, const GlmOptions& options = {});

/// beta-only NB fit at a fixed dispersion.
GlmFit fit_nb_glm_fixed_alpha(const ClaimPanel& panel, double alpha, const GlmOptions& options = {});

struct LoglikGradient {
  double loglik = 0.0;
  Eigen::VectorXd gradient;  // (d/d beta, d/d alpha)
};

LoglikGradient nb_loglik_and_gradient(const ClaimPanel& panel, const Eigen::VectorXd& beta, double alpha);

/// Full Hessian of the NB log-likelihood in (beta, alpha).
Eigen::MatrixXd nb_loglik_hessian(const ClaimPanel& panel, const Eigen::VectorXd& beta, double alpha);

}  // namespace ratekit
