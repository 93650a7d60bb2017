#include "ratekit/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ratekit/credibility.hpp"
#include "ratekit/errors.hpp"
#include "ratekit/glm.hpp"
#include "ratekit/panel.hpp"
#include "ratekit/random_effects.hpp"
#include "ratekit/score_tests.hpp"
#include "ratekit/serialization.hpp"
#include "ratekit/simulation.hpp"

namespace ratekit {

namespace {

// Usage problems detected after CLI11 parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InputFile {
  std::string path;
  std::string sha256;
};

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

class Run {
 public:
  Run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
      : out_(out), err_(err), start_(std::chrono::steady_clock::now()) {
    for (int i = 0; i < argc; ++i) argv_.emplace_back(argv[i]);
  }

  std::string read_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open input file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string data = ss.str();
    inputs_.push_back({path, sha256_hex(data)});
    return data;
  }

  void emit(const std::string& text, const std::string& output) {
    if (output.empty()) {
      out_ << text;
      out_.flush();
    } else {
      std::ofstream f(output, std::ios::binary);
      if (!f) throw std::runtime_error("cannot write output file '" + output + "'");
      f << text;
    }
  }

  void manifest(const std::string& manifest_path, const std::string& output, std::optional<std::uint64_t> seed) {
    Json m;
    m["tool"] = "ratekit";
    m["version"] = kVersion;
    m["command_line"] = argv_;
    Json in = Json::array();
    for (const auto& f : inputs_) in.push_back({{"path", f.path}, {"sha256", f.sha256}});
    m["inputs"] = std::move(in);
    m["seed"] = seed ? Json(*seed) : Json(nullptr);
    m["duration_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const std::string text = m.dump(2) + "\n";
    const std::string path = !manifest_path.empty() ? manifest_path : (!output.empty() ? output + ".manifest.json" : "");
    if (path.empty()) {
      err_ << text;
      return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write manifest '" + path + "'");
    f << text;
  }

  std::ostream& err() { return err_; }

 private:
  std::ostream& out_;
  std::ostream& err_;
  std::vector<std::string> argv_;
  std::vector<InputFile> inputs_;
  std::chrono::steady_clock::time_point start_;
};

struct FitArgs {
  std::string model, re_dist, input, output, manifest;
  int nodes = 32;
};

struct TestArgs {
  std::string type, input, output, manifest;
  double level = 0.05;
};

struct CredArgs {
  std::string fit, input, output, manifest, mse_target = "buhlmann";
  bool holdout_last = false;
  int nodes = 32;
};

struct SimArgs {
  std::string scenario, format = "csv", output, manifest;
  std::optional<int> reps;
  std::uint64_t seed = 1;
  std::vector<double> sigma2, tau2, alpha;
  std::vector<int> k;
  std::optional<int> threads;
  int nodes = 32;
};

int cmd_fit(Run& run, const FitArgs& a) {
  const bool re = a.model == "poisson-re" || a.model == "nb-re";
  if (re && a.re_dist.empty()) throw UsageError("--re-dist {gamma|lognormal} is required with --model " + a.model);
  if (!re && !a.re_dist.empty()) throw UsageError("--re-dist applies only to poisson-re and nb-re");
  const ClaimPanel panel = parse_panel_csv(run.read_input(a.input));
  Json j;
  bool converged = false;
  if (re) {
    ReFitOptions opt;
    opt.quadrature.nodes = a.nodes;
    opt.compute_covariance = true;
    const ReFit f = fit_shared_re(panel, a.model == "nb-re" ? Family::negbin : Family::poisson,
                                  mixing_kind_from_string(a.re_dist), opt);
    j = to_json(f, a.model, panel.covariate_names());
    converged = f.converged;
  } else {
    const GlmFit f = a.model == "nb" ? fit_nb_glm(panel) : fit_poisson_glm(panel);
    j = to_json(f, a.model, panel.covariate_names());
    converged = f.converged;
  }
  run.emit(j.dump(2) + "\n", a.output);
  run.manifest(a.manifest, a.output, std::nullopt);
  if (!converged) {
    run.err() << "warning: fit did not converge; output is flagged with converged=false\n";
    return 2;
  }
  return 0;
}

int cmd_test(Run& run, const TestArgs& a) {
  const ClaimPanel panel = parse_panel_csv(run.read_input(a.input));
  Json j;
  if (a.type == "both") {
    j = to_json(bm_existence_report(panel, a.level));
  } else if (a.type == "pinquet") {
    const GlmFit g = fit_poisson_glm(panel);
    if (!g.converged) throw EstimationError("Poisson fit did not converge: " + g.note);
    j = to_json(pinquet_statistic(panel, linear_predictor(panel, g.beta)), a.level);
  } else {
    const GlmFit g = fit_nb_glm(panel);
    j = to_json(nb_score_test(panel, g), a.level);
    j["alpha_hat"] = g.alpha;
  }
  run.emit(j.dump(2) + "\n", a.output);
  run.manifest(a.manifest, a.output, std::nullopt);
  return 0;
}

int cmd_credibility(Run& run, const CredArgs& a) {
  Json fit_json;
  try {
    fit_json = Json::parse(run.read_input(a.fit));
  } catch (const nlohmann::json::parse_error& e) {
    throw DomainError("cannot parse fit JSON '" + a.fit + "': " + e.what());
  }
  const ReFit fit = re_fit_from_json(fit_json);
  const ClaimPanel panel = parse_panel_csv(run.read_input(a.input));
  if (static_cast<std::size_t>(fit.beta.size()) != panel.num_covariates()) {
    throw DomainError("fit has " + std::to_string(fit.beta.size()) + " coefficients but the panel has " +
                      std::to_string(panel.num_covariates()) + " covariates");
  }
  const CredibilityReport report = credibility_report(panel, fit);
  if (report.lambda_varies) {
    run.err() << "note: fitted rates vary across periods for some policies; structural parameters use their average\n";
  }
  std::string text = credibility_csv(report);
  int code = 0;
  if (a.holdout_last) {
    const MseTarget target = a.mse_target == "rate" ? MseTarget::rate : MseTarget::buhlmann;
    for (const auto& rec : panel.policies()) {
      if (rec.periods.size() < 2) throw DomainError("--holdout-last: policy '" + rec.id + "' has a single period");
    }
    ReFitOptions opt;
    opt.quadrature.nodes = a.nodes;
    const ReFit train = fit_shared_re(without_last_period(panel), fit.conditional, fit.re_dist, opt);
    const PredictiveMse pm = empirical_predictive_mse(panel, train, target);
    Json footer;
    footer["predictive_mse"] = pm.mse;
    footer["target"] = to_string(target);
    footer["policies"] = pm.policies;
    footer["holdout_fit"] = {{"sigma2", train.sigma2},
                             {"alpha", train.alpha},
                             {"loglik", train.loglik},
                             {"converged", train.converged}};
    text += "# " + footer.dump() + "\n";
    if (!train.converged) {
      run.err() << "warning: hold-out fit did not converge\n";
      code = 2;
    }
  }
  run.emit(text, a.output);
  run.manifest(a.manifest, a.output, std::nullopt);
  return code;
}

int cmd_simulate(Run& run, const SimArgs& a) {
  const Analysis analysis = analysis_from_string(a.scenario);
  int reps = 100;
  if (analysis == Analysis::theorem1) reps = 200;
  if (analysis == Analysis::power) reps = 1000;
  if (a.reps) reps = *a.reps;
  if (reps < 1) throw UsageError("--reps must be positive");
  ExperimentOptions opt;
  opt.threads = a.threads ? *a.threads : default_thread_count();
  if (opt.threads < 1) throw UsageError("--threads must be positive");
  opt.quadrature_nodes = a.nodes;
  if (!a.sigma2.empty()) opt.sigma2 = a.sigma2;
  if (!a.tau2.empty()) opt.tau2 = a.tau2;
  if (!a.alpha.empty()) opt.alpha = a.alpha;
  if (!a.k.empty()) opt.k = a.k;
  const Scenario base = default_scenario(analysis, reps, a.seed);
  const SimSummary summary = run_experiment(base, analysis, opt);
  for (const auto& row : summary.rows) {
    if (row.flagged) {
      run.err() << "warning: cell sigma2=" << row.sigma2 << " var_theta_it=" << row.var_theta_it << " alpha=" << row.alpha
                << " k=" << row.k << " has " << row.failures << " failed replications of " << row.replications << "\n";
      break;
    }
  }
  run.emit(a.format == "json" ? to_json(summary).dump(2) + "\n" : sim_summary_csv(summary), a.output);
  run.manifest(a.manifest, a.output, a.seed);
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Claim-frequency random-effect models, score tests and credibility", "ratekit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit a count regression or shared-random-effect model");
  fit->add_option("--model", fa.model, "Model")->required()->check(CLI::IsMember({"poisson", "nb", "poisson-re", "nb-re"}));
  fit->add_option("--re-dist", fa.re_dist, "Random-effect distribution")->check(CLI::IsMember({"gamma", "lognormal"}));
  fit->add_option("--input", fa.input, "Panel CSV")->required();
  fit->add_option("--output", fa.output, "Output path (default stdout)");
  fit->add_option("--manifest", fa.manifest, "Manifest path");
  fit->add_option("--nodes", fa.nodes, "Quadrature nodes")->check(CLI::Range(1, 512));

  TestArgs ta;
  auto* test = app.add_subcommand("test", "Score tests for a shared random effect");
  test->add_option("--type", ta.type, "Test")->required()->check(CLI::IsMember({"pinquet", "nb-score", "both"}));
  test->add_option("--input", ta.input, "Panel CSV")->required();
  test->add_option("--level", ta.level, "Significance level")->check(CLI::Range(1e-12, 1.0 - 1e-12));
  test->add_option("--output", ta.output, "Output path (default stdout)");
  test->add_option("--manifest", ta.manifest, "Manifest path");

  CredArgs ca;
  auto* cred = app.add_subcommand("credibility", "Buhlmann credibility report from a random-effect fit");
  cred->add_option("--fit", ca.fit, "Fit JSON from `fit --model poisson-re|nb-re`")->required();
  cred->add_option("--input", ca.input, "Panel CSV")->required();
  cred->add_flag("--holdout-last", ca.holdout_last, "Refit without each policy's last period and report predictive MSE");
  cred->add_option("--mse-target", ca.mse_target, "Prediction scored by --holdout-last")
      ->check(CLI::IsMember({"buhlmann", "rate"}));
  cred->add_option("--output", ca.output, "Output path (default stdout)");
  cred->add_option("--manifest", ca.manifest, "Manifest path");
  cred->add_option("--nodes", ca.nodes, "Quadrature nodes for the hold-out fit")->check(CLI::Range(1, 512));

  SimArgs sa;
  auto* sim = app.add_subcommand("simulate", "Run a simulation study");
  sim->add_option("--scenario", sa.scenario, "One of " + [] {
    std::string s;
    for (const auto& n : analysis_names()) s += (s.empty() ? "" : "|") + n;
    return s;
  }())->required();
  sim->add_option("--reps", sa.reps, "Replications per cell");
  sim->add_option("--seed", sa.seed, "Master seed");
  sim->add_option("--sigma2", sa.sigma2, "Shared-effect grid override")->delimiter(',');
  sim->add_option("--tau2", sa.tau2, "Saturated-effect variance grid override")->delimiter(',');
  sim->add_option("--alpha", sa.alpha, "NB dispersion grid override")->delimiter(',');
  sim->add_option("--k", sa.k, "Number-of-policies grid override")->delimiter(',');
  sim->add_option("--threads", sa.threads, "Worker threads (default RATEKIT_THREADS or 1)");
  sim->add_option("--format", sa.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  sim->add_option("--output", sa.output, "Output path (default stdout)");
  sim->add_option("--manifest", sa.manifest, "Manifest path");
  sim->add_option("--nodes", sa.nodes, "Quadrature nodes")->check(CLI::Range(1, 512));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  Run run(argc, argv, out, err);
  try {
    if (*fit) return cmd_fit(run, fa);
    if (*test) return cmd_test(run, ta);
    if (*cred) return cmd_credibility(run, ca);
    if (*sim) return cmd_simulate(run, sa);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    err << "input error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace ratekit
