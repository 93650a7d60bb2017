#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ratekit/distributions.hpp"
#include "ratekit/glm.hpp"
#include "ratekit/panel.hpp"
#include "ratekit/quadrature.hpp"

namespace ratekit {

/// Shared-random-effect fit. sigma2 is the stored MixingDist parameter: Var(theta) for
/// gamma mixing, the log-scale variance for lognormal mixing.
struct ReFit {
  Family conditional = Family::poisson;
  MixingKind re_dist = MixingKind::lognormal_mean_one;
  Eigen::VectorXd beta;
  double alpha = 0.0;
  double sigma2 = 0.0;
  double loglik = 0.0;
  bool converged = false;
  bool sigma2_on_boundary = false;
  int quadrature_nodes = 0;
  int iterations = 0;
  double gradient_max_norm = 0.0;
  /// Inverse observed information over the free parameters (beta, alpha if negbin, sigma2);
  /// empty unless requested.
  Eigen::MatrixXd covariance;
  std::string note;

  double var_theta() const { return MixingDist::of(re_dist, sigma2).theta_variance(); }
  MixingDist mixing() const { return MixingDist::of(re_dist, sigma2); }
};

struct QuadratureOptions {
  int nodes = 32;
  /// Use adaptive quadrature even where a closed form exists.
  bool force_quadrature = false;
};

/// Marginal log-likelihood of a panel under a shared random effect, with gradient in
/// (beta, alpha [negbin only], sigma2). Holds per-policy mode caches between calls.
class MarginalLikelihood {
 public:
  MarginalLikelihood(const ClaimPanel& panel, Family conditional, MixingKind re_dist,
                     const QuadratureOptions& options = {});

  double loglik(const Eigen::VectorXd& beta, double alpha, double sigma2);
  double loglik_and_gradient(const Eigen::VectorXd& beta, double alpha, double sigma2, Eigen::VectorXd& gradient);

  Eigen::Index num_parameters() const;
  Family conditional() const noexcept { return conditional_; }
  MixingKind re_dist() const noexcept { return re_dist_; }
  int nodes() const noexcept { return static_cast<int>(rule_.nodes.size()); }
  bool closed_form() const noexcept { return closed_form_; }
  const ClaimPanel& panel() const noexcept { return panel_; }

 private:
  double evaluate(const Eigen::VectorXd& beta, double alpha, double sigma2, Eigen::VectorXd* gradient);
  void prepare(const Eigen::VectorXd& beta, double alpha);

  const ClaimPanel& panel_;
  FlatPanel flat_;
  Family conditional_;
  MixingKind re_dist_;
  GaussHermite rule_;
  bool closed_form_ = false;

  std::vector<double> log_lambda_, lambda_;
  std::vector<double> count_const_;   // per cell, depends on alpha
  std::vector<double> count_first_;   // sum_{j<n} j/(1+alpha j)
  double prepared_alpha_ = -1.0;
  std::vector<double> modes_;
  std::vector<char> mode_valid_;
};

/// One-shot evaluation; sigma2 = 0 gives the sum of conditional log-pmfs exactly.
double marginal_loglik(const ClaimPanel& panel, Family conditional, MixingKind re_dist, const Eigen::VectorXd& beta,
                       double alpha, double sigma2, const QuadratureOptions& options = {});

struct ReFitOptions {
  QuadratureOptions quadrature;
  int max_iterations = 500;
  double gradient_tol = 1e-9;
  bool compute_covariance = false;
};

/// Maximum likelihood for Model 2 (poisson conditional) or Model 4 (negbin conditional).
/// sigma2 = 0 is admitted; the result never falls below the sigma2 = 0 submodel.
ReFit fit_shared_re(const ClaimPanel& panel, Family conditional, MixingKind re_dist, const ReFitOptions& options = {});

}  // namespace ratekit
