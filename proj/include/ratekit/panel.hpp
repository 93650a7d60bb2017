#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ratekit {

struct PeriodObservation {
  std::int64_t period = 0;
  int count = 0;
  std::vector<double> covariates;
};

struct PolicyRecord {
  std::string id;
  std::vector<PeriodObservation> periods;  // ordered by period

  std::size_t num_periods() const noexcept { return periods.size(); }
  long total_count() const noexcept;
};

/// Ragged longitudinal claim counts. Immutable once constructed; the constructor
/// enforces every invariant (nonempty, unique ids, unique periods, nonnegative
/// counts, covariate width p) and sorts periods within each policy.
class ClaimPanel {
 public:
  ClaimPanel(std::vector<std::string> covariate_names, std::vector<PolicyRecord> policies);

  const std::vector<PolicyRecord>& policies() const noexcept { return policies_; }
  const PolicyRecord& policy(std::size_t i) const { return policies_.at(i); }
  const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }
  std::size_t num_policies() const noexcept { return policies_.size(); }
  std::size_t num_covariates() const noexcept { return covariate_names_.size(); }
  std::size_t num_cells() const noexcept { return num_cells_; }

 private:
  std::vector<std::string> covariate_names_;
  std::vector<PolicyRecord> policies_;
  std::size_t num_cells_ = 0;
};

/// Per-(policy, period) values aligned with a panel.
using CellValues = std::vector<std::vector<double>>;

/// Reads `policy_id,period,count,<covariates...>`. Throws ParseError naming row and column.
ClaimPanel parse_panel_csv(std::string_view text);

std::string write_panel_csv(const ClaimPanel& panel);

/// lambda_it = exp(x_it . beta).
CellValues linear_predictor(const ClaimPanel& panel, const Eigen::VectorXd& beta);

/// Drops the final period of every policy. Every policy needs at least two periods.
ClaimPanel without_last_period(const ClaimPanel& panel);

/// Row-major flattening used by the estimators: one design row per cell, policies contiguous.
struct FlatPanel {
  Eigen::MatrixXd x;                  // cells x p
  std::vector<int> counts;            // per cell
  std::vector<std::size_t> offsets;   // policy i owns cells [offsets[i], offsets[i+1])

  explicit FlatPanel(const ClaimPanel& panel);

  std::size_t num_policies() const noexcept { return offsets.size() - 1; }
  std::size_t num_cells() const noexcept { return counts.size(); }
  Eigen::Index num_covariates() const noexcept { return x.cols(); }
};

}  // namespace ratekit
