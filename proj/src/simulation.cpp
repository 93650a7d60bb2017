#include "ratekit/simulation.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>

#include "ratekit/credibility.hpp"
#include "ratekit/errors.hpp"
#include "ratekit/numeric.hpp"
#include "ratekit/random_effects.hpp"
#include "ratekit/rng.hpp"
#include "ratekit/score_tests.hpp"

namespace ratekit {

void Scenario::validate() const {
  if (k < 1) throw DomainError("scenario '" + name + "': k must be positive");
  if (T < 1) throw DomainError("scenario '" + name + "': T must be positive");
  if (replications < 1) throw DomainError("scenario '" + name + "': replications must be positive");
  const Eigen::Index p = covariate_design == CovariateDesign::mod6_blocks ? 3 : 2;
  if (beta.size() != p) {
    throw DomainError("scenario '" + name + "': beta needs " + std::to_string(p) + " entries for this design");
  }
  if (!beta.allFinite()) throw DomainError("scenario '" + name + "': beta must be finite");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw DomainError("scenario '" + name + "': alpha must be nonnegative");
  if (!(shared_effect.parameter() >= 0.0) || !(saturated_effect.parameter() >= 0.0)) {
    throw DomainError("scenario '" + name + "': effect variances must be nonnegative");
  }
}

ClaimPanel generate_panel(const Scenario& s, std::uint64_t replication) {
  s.validate();
  std::vector<std::string> names = s.covariate_design == CovariateDesign::mod6_blocks
                                       ? std::vector<std::string>{"intercept", "x1", "x2"}
                                       : std::vector<std::string>{"intercept", "x"};
  std::vector<PolicyRecord> policies;
  policies.reserve(static_cast<std::size_t>(s.k));
  const auto tag = [](int v) { return static_cast<std::uint32_t>(v); };
  for (int i = 0; i < s.k; ++i) {
    PolicyRecord rec;
    rec.id = "P" + std::to_string(i + 1);
    auto shared_rng = substream(s.seed, replication, tag(i), kPolicyLevel, StreamPurpose::shared_effect);
    const double theta = s.shared_effect.sample(shared_rng);
    for (int t = 0; t < s.T; ++t) {
      PeriodObservation obs;
      obs.period = t + 1;
      if (s.covariate_design == CovariateDesign::mod6_blocks) {
        const int row = i % 6;
        obs.covariates = {1.0, 1.0 + row / 2, 1.0 + row % 2};
      } else {
        auto cov_rng = substream(s.seed, replication, tag(i), tag(t), StreamPurpose::covariate);
        obs.covariates = {1.0, cov_rng.uniform()};
      }
      double eta = 0.0;
      for (std::size_t j = 0; j < obs.covariates.size(); ++j) eta += obs.covariates[j] * s.beta[static_cast<Eigen::Index>(j)];
      auto sat_rng = substream(s.seed, replication, tag(i), tag(t), StreamPurpose::saturated_effect);
      const double theta_it = s.saturated_effect.sample(sat_rng);
      const double rate = std::exp(eta) * theta * theta_it;
      auto count_rng = substream(s.seed, replication, tag(i), tag(t), StreamPurpose::count);
      obs.count = s.conditional == Family::negbin ? sample_nb({rate, s.alpha}, count_rng)
                                                  : sample_poisson(rate, count_rng);
      rec.periods.push_back(std::move(obs));
    }
    policies.push_back(std::move(rec));
  }
  return ClaimPanel(std::move(names), std::move(policies));
}

namespace {

struct AnalysisInfo {
  Analysis analysis;
  const char* name;
};

constexpr AnalysisInfo kAnalyses[] = {
    {Analysis::table1, "table1"}, {Analysis::theorem1, "theorem1"},   {Analysis::sim1, "sim1"},
    {Analysis::sim2, "sim2"},     {Analysis::power, "power"},         {Analysis::buhlmann1, "buhlmann1"},
    {Analysis::buhlmann2, "buhlmann2"},
};

}  // namespace

std::string_view to_string(Analysis a) {
  for (const auto& info : kAnalyses) {
    if (info.analysis == a) return info.name;
  }
  return "?";
}

const std::vector<std::string>& analysis_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& info : kAnalyses) v.emplace_back(info.name);
    return v;
  }();
  return names;
}

Analysis analysis_from_string(std::string_view name) {
  for (const auto& info : kAnalyses) {
    if (name == info.name) return info.analysis;
  }
  std::string valid;
  for (const auto& n : analysis_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw DomainError("unknown scenario '" + std::string(name) + "'; valid names: " + valid);
}

const SimRow* SimSummary::find(std::string_view metric, std::optional<double> sigma2, std::optional<double> var_theta_it,
                               std::optional<double> alpha, std::optional<int> k) const {
  const auto same = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); };
  for (const auto& r : rows) {
    if (r.metric != metric) continue;
    if (sigma2 && !same(r.sigma2, *sigma2)) continue;
    if (var_theta_it && !same(r.var_theta_it, *var_theta_it)) continue;
    if (alpha && !same(r.alpha, *alpha)) continue;
    if (k && r.k != *k) continue;
    return &r;
  }
  return nullptr;
}

Scenario default_scenario(Analysis analysis, int replications, std::uint64_t seed) {
  Scenario s;
  s.name = std::string(to_string(analysis));
  s.seed = seed;
  s.replications = replications;
  s.T = 5;
  switch (analysis) {
    case Analysis::table1:
    case Analysis::theorem1:
      s.k = 30;
      s.beta = Eigen::Vector3d(-0.5, 0.5, 0.5);
      break;
    case Analysis::sim1:
    case Analysis::sim2:
    case Analysis::buhlmann1:
    case Analysis::buhlmann2:
      s.k = 120;
      s.beta = Eigen::Vector3d(-0.5, 0.5, 0.5);
      break;
    case Analysis::power:
      s.k = 100;
      s.beta = Eigen::Vector2d(0.0, 1.0);
      s.covariate_design = CovariateDesign::uniform01_single;
      s.conditional = Family::negbin;
      break;
  }
  return s;
}

std::vector<SimCell> experiment_cells(const Scenario& base, Analysis analysis, const ExperimentOptions& opt) {
  std::vector<double> sigma2{0.0}, tau2{0.0}, alpha{base.alpha};
  std::vector<int> ks{base.k};
  bool alpha_follows_tau2 = false;
  switch (analysis) {
    case Analysis::table1:
      tau2 = {0.0, 1.0 / 6, 2.0 / 6, 3.0 / 6};
      break;
    case Analysis::theorem1:
      tau2 = {0.5};
      ks = {30, 120, 480};
      break;
    case Analysis::sim1:
    case Analysis::buhlmann1:
      sigma2 = {0.0, 1.0 / 6, 2.0 / 6, 3.0 / 6};
      tau2 = {0.0, 1.0 / 3, 2.0 / 3, 1.0};
      break;
    case Analysis::sim2:
    case Analysis::buhlmann2:
      sigma2 = {0.0, 1.0 / 6, 2.0 / 6, 3.0 / 6};
      tau2 = {0.0, 1.0 / 3, 2.0 / 3, 1.0};
      alpha_follows_tau2 = true;
      break;
    case Analysis::power:
      sigma2.clear();
      for (int j = 0; j <= 10; ++j) sigma2.push_back(j / 10.0);
      alpha = {0.2, 0.5, 1.0};
      break;
  }
  if (opt.sigma2) sigma2 = *opt.sigma2;
  if (opt.tau2) tau2 = *opt.tau2;
  if (opt.k) ks = *opt.k;
  if (opt.alpha) {
    alpha = *opt.alpha;
    alpha_follows_tau2 = false;
  }
  if (sigma2.empty() || tau2.empty() || alpha.empty() || ks.empty()) throw DomainError("empty cell grid");

  const bool negbin_generator = analysis == Analysis::power || analysis == Analysis::sim2 || analysis == Analysis::buhlmann2;
  const MixingKind shared_kind = analysis == Analysis::power ? MixingKind::gamma_mean_one : MixingKind::lognormal_mean_one;

  std::vector<SimCell> cells;
  for (int k : ks) {
    for (double a : (alpha_follows_tau2 ? std::vector<double>{0.0} : alpha)) {
      for (double s2 : sigma2) {
        for (double t2 : tau2) {
          SimCell cell;
          cell.scenario = base;
          cell.scenario.k = k;
          cell.scenario.shared_effect = MixingDist::of(shared_kind, s2);
          cell.scenario.saturated_effect = MixingDist::gamma_mean_one(t2);
          cell.scenario.conditional = negbin_generator ? Family::negbin : Family::poisson;
          cell.scenario.alpha = negbin_generator ? (alpha_follows_tau2 ? t2 : a) : 0.0;
          cell.sigma2 = s2;
          cell.var_theta_it = t2;
          cell.scenario.validate();
          cells.push_back(std::move(cell));
        }
      }
    }
  }
  return cells;
}

namespace {

std::vector<std::string> metric_names(Analysis a) {
  switch (a) {
    case Analysis::table1: return {"sigma2_model2"};
    case Analysis::theorem1: return {"reject_pinquet"};
    case Analysis::sim1:
    case Analysis::sim2: return {"sigma2_model2", "sigma2_model4", "alpha_model4"};
    case Analysis::power: return {"reject_nb_score"};
    case Analysis::buhlmann1:
    case Analysis::buhlmann2:
      return {"sigma2_model2", "sigma2_model4", "z_model2",    "z_model4",    "z_true",
              "z_mad_model2",  "z_mad_model4",  "pmse_model2", "pmse_model4", "pmse_gap"};
  }
  return {};
}

constexpr double kLevel = 0.05;

ReFit checked_fit(const ClaimPanel& panel, Family conditional, const ReFitOptions& opt) {
  ReFit f = fit_shared_re(panel, conditional, MixingKind::lognormal_mean_one, opt);
  if (!f.converged) throw EstimationError("random-effect fit did not converge: " + f.note);
  return f;
}

std::vector<double> policy_factors(const ClaimPanel& panel, const ReFit& fit) {
  std::vector<double> z;
  for (const auto& row : credibility_report(panel, fit).rows) z.push_back(row.z);
  return z;
}

std::vector<double> run_replication(const SimCell& cell, Analysis analysis, std::uint64_t rep, const ExperimentOptions& opt) {
  const Scenario& s = cell.scenario;
  const ClaimPanel panel = generate_panel(s, rep);
  ReFitOptions re_opt;
  re_opt.quadrature.nodes = opt.quadrature_nodes;
  switch (analysis) {
    case Analysis::table1: return {checked_fit(panel, Family::poisson, re_opt).sigma2};
    case Analysis::theorem1: {
      const GlmFit g = fit_poisson_glm(panel);
      if (!g.converged) throw EstimationError("Poisson fit did not converge");
      return {pinquet_statistic(panel, linear_predictor(panel, g.beta)).rejects(kLevel) ? 1.0 : 0.0};
    }
    case Analysis::power: {
      const GlmFit g = fit_nb_glm(panel);
      if (!g.converged) throw EstimationError("NB fit did not converge");
      return {nb_score_test(panel, g).rejects(kLevel) ? 1.0 : 0.0};
    }
    case Analysis::sim1:
    case Analysis::sim2: {
      const ReFit m2 = checked_fit(panel, Family::poisson, re_opt);
      const ReFit m4 = checked_fit(panel, Family::negbin, re_opt);
      return {m2.sigma2, m4.sigma2, m4.alpha};
    }
    case Analysis::buhlmann1:
    case Analysis::buhlmann2: {
      const ReFit m2 = checked_fit(panel, Family::poisson, re_opt);
      const ReFit m4 = checked_fit(panel, Family::negbin, re_opt);
      const std::vector<double> z2 = policy_factors(panel, m2), z4 = policy_factors(panel, m4);
      const CellValues true_rate = linear_predictor(panel, s.beta);
      const bool saturated = analysis == Analysis::buhlmann2;
      // buhlmann1 data are NB(alpha = a) given theta_i; buhlmann2 adds theta_it on top of NB(alpha).
      const CredibilityModel true_model = saturated ? CredibilityModel::nb_re_saturated : CredibilityModel::nb_re;
      const double true_alpha = saturated ? s.alpha : cell.var_theta_it;
      const double true_b = saturated ? cell.var_theta_it : 0.0;
      CompensatedSum zm2, zm4, zt, mad2, mad4;
      for (std::size_t i = 0; i < panel.num_policies(); ++i) {
        double l = 0.0;
        for (double v : true_rate[i]) l += v;
        l /= static_cast<double>(true_rate[i].size());
        const StructuralParams sp = structural_params_mean_one(true_model, l, s.shared_effect, true_alpha, true_b);
        const double z_true = buhlmann_factor(static_cast<int>(panel.policy(i).periods.size()), sp);
        zm2 += z2[i];
        zm4 += z4[i];
        zt += z_true;
        mad2 += std::abs(z2[i] - z_true);
        mad4 += std::abs(z4[i] - z_true);
      }
      const double n = static_cast<double>(panel.num_policies());
      const ClaimPanel train = without_last_period(panel);
      const ReFit h2 = checked_fit(train, Family::poisson, re_opt);
      const ReFit h4 = checked_fit(train, Family::negbin, re_opt);
      const double p2 = empirical_predictive_mse(panel, h2).mse;
      const double p4 = empirical_predictive_mse(panel, h4).mse;
      return {m2.sigma2, m4.sigma2, zm2.value() / n, zm4.value() / n, zt.value() / n,
              mad2.value() / n, mad4.value() / n, p2, p4, p2 - p4};
    }
  }
  return {};
}

}  // namespace

int default_thread_count() {
  const char* env = std::getenv("RATEKIT_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 1024) throw DomainError("RATEKIT_THREADS must be an integer in [1, 1024]");
  return static_cast<int>(v);
}

SimSummary run_experiment(const Scenario& base, Analysis analysis, const ExperimentOptions& opt) {
  if (opt.threads < 1) throw DomainError("thread count must be positive");
  const std::vector<SimCell> cells = experiment_cells(base, analysis, opt);
  const std::vector<std::string> metrics = metric_names(analysis);
  const auto reps = static_cast<std::size_t>(base.replications);
  const std::size_t tasks = cells.size() * reps;

  // results[task] is empty on failure
  std::vector<std::vector<double>> results(tasks);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t task = next++; task < tasks; task = next++) {
      const std::size_t c = task / reps, r = task % reps;
      try {
        results[task] = run_replication(cells[c], analysis, r, opt);
      } catch (const std::exception&) {
        results[task].clear();
      }
    }
  };
  const int nthreads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(opt.threads), std::max<std::size_t>(tasks, 1)));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  SimSummary out;
  out.scenario = base.name;
  out.seed = base.seed;
  out.replications = base.replications;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    int failures = 0;
    for (std::size_t r = 0; r < reps; ++r) failures += results[c * reps + r].empty() ? 1 : 0;
    const int ok = static_cast<int>(reps) - failures;
    for (std::size_t m = 0; m < metrics.size(); ++m) {
      CompensatedSum sum;
      for (std::size_t r = 0; r < reps; ++r) {
        const auto& v = results[c * reps + r];
        if (!v.empty()) sum += v[m];
      }
      const double mean = ok > 0 ? sum.value() / ok : std::nan("");
      CompensatedSum ss;
      for (std::size_t r = 0; r < reps; ++r) {
        const auto& v = results[c * reps + r];
        if (!v.empty()) ss += (v[m] - mean) * (v[m] - mean);
      }
      SimRow row;
      row.scenario = base.name;
      row.sigma2 = cells[c].sigma2;
      row.var_theta_it = cells[c].var_theta_it;
      row.alpha = cells[c].scenario.alpha;
      row.k = cells[c].scenario.k;
      row.T = cells[c].scenario.T;
      row.metric = metrics[m];
      row.mean = mean;
      row.spread = ok > 1 ? std::sqrt(ss.value() / (ok - 1)) : 0.0;
      row.replications = static_cast<int>(reps);
      row.failures = failures;
      row.flagged = failures > 0.05 * static_cast<double>(reps);
      out.rows.push_back(std::move(row));
    }
  }
  return out;
}

}  // namespace ratekit
