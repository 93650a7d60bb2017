#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ratekit/distributions.hpp"
#include "ratekit/glm.hpp"
#include "ratekit/panel.hpp"

namespace ratekit {

enum class CovariateDesign {
  mod6_blocks,       // x_i = (1, 1 + (i mod 6) / 2, 1 + (i mod 6) % 2) for 0-based i, constant in t
  uniform01_single,  // x_it = (1, U(0,1)) drawn per cell
};

/// One data-generating process:
///   N_it | theta_i, theta_it ~ conditional(lambda_it theta_i theta_it [, alpha]),
///   lambda_it = exp(x_it' beta).
struct Scenario {
  std::string name;
  int k = 30;
  int T = 5;
  Eigen::VectorXd beta;
  CovariateDesign covariate_design = CovariateDesign::mod6_blocks;
  MixingDist shared_effect;
  MixingDist saturated_effect;
  Family conditional = Family::poisson;
  double alpha = 0.0;
  int replications = 100;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Deterministic in (scenario, replication): every (policy, period, purpose) draws from its own substream.
ClaimPanel generate_panel(const Scenario& s, std::uint64_t replication);

enum class Analysis { table1, theorem1, sim1, sim2, power, buhlmann1, buhlmann2 };

std::string_view to_string(Analysis a);
Analysis analysis_from_string(std::string_view name);
const std::vector<std::string>& analysis_names();

struct SimRow {
  std::string scenario;
  double sigma2 = 0.0;        // shared-effect parameter (log-scale for lognormal, variance for gamma)
  double var_theta_it = 0.0;  // saturated-effect variance
  double alpha = 0.0;         // NB dispersion of the generator
  int k = 0;
  int T = 0;
  std::string metric;
  double mean = 0.0;
  double spread = 0.0;  // standard deviation across successful replications
  int replications = 0;
  int failures = 0;
  bool flagged = false;  // failures above 5% of replications
};

struct SimSummary {
  std::string scenario;
  std::uint64_t seed = 0;
  int replications = 0;
  std::vector<SimRow> rows;

  /// First row with this metric whose cell matches every supplied coordinate.
  const SimRow* find(std::string_view metric, std::optional<double> sigma2 = {}, std::optional<double> var_theta_it = {},
                     std::optional<double> alpha = {}, std::optional<int> k = {}) const;
};

/// Cell-axis overrides; each replaces the analysis' default grid for that axis.
struct ExperimentOptions {
  int threads = 1;
  int quadrature_nodes = 32;
  std::optional<std::vector<double>> sigma2;
  std::optional<std::vector<double>> tau2;
  std::optional<std::vector<double>> alpha;
  std::optional<std::vector<int>> k;
};

/// Base scenario of an analysis (design, beta, k, T) with the given replication count and seed.
Scenario default_scenario(Analysis analysis, int replications, std::uint64_t seed);

/// One grid point of an analysis.
struct SimCell {
  Scenario scenario;
  double sigma2 = 0.0;
  double var_theta_it = 0.0;
};

std::vector<SimCell> experiment_cells(const Scenario& base, Analysis analysis, const ExperimentOptions& options = {});

/// Runs every cell's replications (in parallel when threads > 1) and reduces in a fixed order,
/// so the summary does not depend on the thread count.
SimSummary run_experiment(const Scenario& base, Analysis analysis, const ExperimentOptions& options = {});

/// Threads from RATEKIT_THREADS, else 1.
int default_thread_count();

}  // namespace ratekit
