// Acceptance suite: one PASS/FAIL line per criterion, diagnostics indented below it.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../oracles.hpp"
#include "ratekit/cli.hpp"
#include "ratekit/distributions.hpp"
#include "ratekit/glm.hpp"
#include "ratekit/random_effects.hpp"
#include "ratekit/score_tests.hpp"
#include "ratekit/simulation.hpp"

using namespace ratekit;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
  void note(const std::string& what) { notes.push_back("     " + what); }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int g_threads = 1;

// Runs `ratekit simulate ... --format json` in-process.
json simulate(std::vector<std::string> args) {
  args.insert(args.begin(), {"ratekit", "simulate"});
  args.insert(args.end(), {"--format", "json", "--threads", std::to_string(g_threads)});
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) throw std::runtime_error("simulate exited " + std::to_string(code) + ": " + err.str());
  return json::parse(out.str());
}

std::string simulate_csv(std::vector<std::string> args, int threads) {
  args.insert(args.begin(), {"ratekit", "simulate"});
  args.insert(args.end(), {"--threads", std::to_string(threads)});
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  if (run_cli(static_cast<int>(argv.size()), argv.data(), out, err) != 0) throw std::runtime_error(err.str());
  return out.str();
}

const json& row(const json& summary, const std::string& metric, double sigma2, double tau2, double alpha = -1) {
  for (const auto& r : summary["rows"]) {
    if (r["metric"] != metric) continue;
    if (std::abs(r["sigma2"].get<double>() - sigma2) > 1e-12) continue;
    if (std::abs(r["var_theta_it"].get<double>() - tau2) > 1e-12) continue;
    if (alpha >= 0 && std::abs(r["alpha"].get<double>() - alpha) > 1e-12) continue;
    return r;
  }
  throw std::runtime_error("missing row " + metric);
}

double mean_of(const json& r) { return r["mean"].get<double>(); }
double se_of(const json& r) { return r["spread"].get<double>() / std::sqrt(r["replications"].get<double>()); }

void check_failures(Verdict& v, const json& summary) {
  int failures = 0, flagged = 0;
  for (const auto& r : summary["rows"]) {
    failures = std::max(failures, r["failures"].get<int>());
    flagged += r["flagged"].get<bool>() ? 1 : 0;
  }
  v.require(flagged == 0, fmt("no cell above 5%% failed replications (max failures in a cell: %d)", failures));
}

// Adjacent decreases in a sequence; the allowance is one decrease no larger than `wobble`.
bool monotone_with_wobble(const std::vector<double>& xs, double wobble, int* decreases = nullptr) {
  int n = 0;
  bool small = true;
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (xs[i] < xs[i - 1]) {
      ++n;
      if (xs[i - 1] - xs[i] > wobble) small = false;
    }
  }
  if (decreases) *decreases = n;
  return n == 0 || (n == 1 && small);
}

const std::vector<double> kSigma2{0.0, 1.0 / 6, 2.0 / 6, 3.0 / 6};
const std::vector<double> kTau2{0.0, 1.0 / 3, 2.0 / 3, 1.0};

Verdict criterion1() {
  Verdict v;
  const json s = simulate({"--scenario", "table1", "--reps", "100"});
  const double target[4] = {0.00094, 0.02678, 0.06557, 0.09888};
  const double spread[4] = {0.00194, 0.01189, 0.02476, 0.03573};
  const double tau2[4] = {0.0, 1.0 / 6, 2.0 / 6, 3.0 / 6};
  std::vector<double> means;
  for (int c = 0; c < 4; ++c) {
    const json& r = row(s, "sigma2_model2", 0.0, tau2[c]);
    const double m = mean_of(r);
    means.push_back(m);
    v.require(std::abs(m - target[c]) <= 2 * spread[c],
              fmt("Var(theta_it)=%.4f: mean %.5f (sd %.5f) vs %.5f +- %.5f", tau2[c], m, r["spread"].get<double>(),
                  target[c], 2 * spread[c]));
  }
  v.require(std::is_sorted(means.begin(), means.end(), std::less_equal<>()) &&
                std::adjacent_find(means.begin(), means.end()) == means.end(),
            "means strictly increasing across cells");
  check_failures(v, s);
  return v;
}

Verdict criterion2() {
  Verdict v;
  const json s = simulate({"--scenario", "theorem1", "--reps", "200"});
  std::vector<double> rates;
  for (int k : {30, 120, 480}) {
    for (const auto& r : s["rows"]) {
      if (r["k"] == k) rates.push_back(mean_of(r));
    }
  }
  v.note(fmt("rejection rates k=30: %.3f, k=120: %.3f, k=480: %.3f", rates[0], rates[1], rates[2]));
  v.require(rates[0] <= rates[1] && rates[1] <= rates[2], "rejection rate monotone in k");
  if (rates[1] == rates[2]) v.note("k=120 and k=480 tie (both saturated)");
  v.require(rates[2] >= 0.90, "rejection rate at k=480 >= 0.90");
  check_failures(v, s);
  return v;
}

Verdict criterion3() {
  Verdict v;
  const json s = simulate({"--scenario", "power", "--reps", "1000", "--alpha", "0.2,0.5,1"});
  for (double alpha : {0.2, 0.5, 1.0}) {
    std::vector<double> curve;
    for (int j = 0; j <= 10; ++j) curve.push_back(mean_of(row(s, "reject_nb_score", j / 10.0, 0.0, alpha)));
    v.require(curve[0] >= 0.03 && curve[0] <= 0.07, fmt("alpha=%.1f: type I error %.3f in [0.03, 0.07]", alpha, curve[0]));
    int dec = 0;
    const bool mono = monotone_with_wobble(curve, 0.02, &dec);
    std::string shape;
    for (double c : curve) shape += fmt(" %.3f", c);
    v.require(mono, fmt("alpha=%.1f: power nondecreasing in sigma2 (%d adjacent decreases):%s", alpha, dec, shape.c_str()));
  }
  check_failures(v, s);
  return v;
}

Verdict criterion4() {
  Verdict v;
  auto rng = substream(2024, 0, 0, 0, StreamPurpose::oracle);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = static_cast<int>(rng.uniform() * 15);
    const double lambda = 0.05 + 8.0 * rng.uniform();
    const double alpha = 2.0 * rng.uniform();
    const PolicyRecord rec{"x", {{1, n, {1.0}}}};
    const double t = nb_score_contribution(rec, Eigen::VectorXd::Constant(1, std::log(lambda)), alpha);
    worst = std::max(worst, std::abs(t - oracle::score_by_differences(n, lambda, alpha)));
  }
  v.require(worst <= 1e-6, fmt("max |T - finite-difference score| over 100 triples = %.2e", worst));

  Scenario s = default_scenario(Analysis::sim1, 1, 5);
  s.shared_effect = MixingDist::lognormal_mean_one(0.3);
  const ClaimPanel panel = generate_panel(s, 0);
  const Eigen::Vector3d beta(-0.4, 0.45, 0.55);
  double twice = 0.0;
  for (const auto& r : panel.policies()) twice += 2.0 * nb_score_contribution(r, beta, 0.0);
  const double pin = pinquet_statistic(panel, linear_predictor(panel, beta)).numerator;
  v.require(std::abs(twice - pin) <= 1e-10, fmt("alpha=0: |2 sum T - Pinquet numerator| = %.2e", std::abs(twice - pin)));
  return v;
}

Verdict criterion5() {
  Verdict v;
  std::vector<PolicyRecord> recs{{"a", {{1, 0, {1.0, 0.2}}, {2, 0, {1.0, 0.8}}}}, {"b", {{1, 0, {1.0, -0.5}}}}};
  const ClaimPanel toy({"c", "x"}, recs);
  const Eigen::Vector2d beta(0.3, 0.7);
  const double alpha = 0.6;
  const InfoComponents info = nb_information_components(toy, beta, alpha);
  const std::vector<oracle::Cell> cells{
      {0, Eigen::Vector2d(1.0, 0.2)}, {0, Eigen::Vector2d(1.0, 0.8)}, {1, Eigen::Vector2d(1.0, -0.5)}};
  const oracle::InfoMonteCarlo mc = oracle::information_monte_carlo(cells, 2, beta, alpha, 1000000, 55);
  const auto check = [&](const char* name, const oracle::McValue& m, double exact) {
    v.require(m.within(exact), fmt("%s: exact %.6f, Monte Carlo %.6f (se %.6f)", name, exact, m.mean, m.se));
  };
  check("E[s_sigma2^2]", mc.ss, info.i_ss);
  check("E[s_sigma2 s_alpha]", mc.s_alpha, info.i_sw[2]);
  check("E[s_alpha^2]", mc.alpha_alpha, info.i_ww(2, 2));
  for (int j = 0; j < 2; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    check(fmt("E[s_sigma2 s_beta%d]", j).c_str(), mc.s_beta[uj], info.i_sw[j]);
    check(fmt("E[s_beta%d s_alpha]", j).c_str(), mc.beta_alpha[uj], info.i_ww(j, 2));
    for (int l = j; l < 2; ++l) {
      check(fmt("E[s_beta%d s_beta%d]", j, l).c_str(), mc.beta_beta[uj][static_cast<std::size_t>(l)], info.i_ww(j, l));
    }
  }

  double worst = 0.0;
  for (double lambda : {0.1, 1.0, 2.0, 7.5}) {
    for (double a : {0.0, 0.3, 1.0, 2.5}) {
      for (int order : {2, 3, 4}) {
        double acc = 0.0, tail = 1.0;
        for (int n = 0; tail > 1e-16 || n < 10; ++n) {
          const double pm = std::exp(oracle::nb_log_density(n, lambda, a));
          acc += std::pow(n - lambda, order) * pm;
          tail -= pm;
          if (n > 100000) break;
        }
        const double exact = nb_central_moment({lambda, a}, order);
        worst = std::max(worst, std::abs(exact - acc) / std::max(1.0, std::abs(acc)));
      }
    }
  }
  v.require(worst <= 1e-8, fmt("central moments vs truncated pmf sums: max relative error %.2e", worst));
  return v;
}

Verdict criterion6() {
  Verdict v;
  const json s1 = simulate({"--scenario", "sim1", "--reps", "100"});
  for (double s2 : kSigma2) {
    for (double t2 : kTau2) {
      const json& m2 = row(s1, "sigma2_model2", s2, t2);
      const json& m4 = row(s1, "sigma2_model4", s2, t2);
      const std::string cell = fmt("sim1 sigma2=%.3f Var(theta_it)=%.3f", s2, t2);
      if (t2 > 0) {
        v.require(mean_of(m2) > mean_of(m4), fmt("%s: Model 2 mean %.4f > Model 4 mean %.4f", cell.c_str(), mean_of(m2), mean_of(m4)));
      }
      v.require(std::abs(mean_of(m4) - s2) <= 3 * se_of(m4),
                fmt("%s: Model 4 mean %.4f within 3 SE (%.4f) of %.4f", cell.c_str(), mean_of(m4), se_of(m4), s2));
    }
  }
  check_failures(v, s1);

  const json s2j = simulate({"--scenario", "sim2", "--reps", "100"});
  for (double s2 : kSigma2) {
    std::vector<double> bias;
    for (double t2 : kTau2) {
      const json& m2 = row(s2j, "sigma2_model2", s2, t2);
      const json& m4 = row(s2j, "sigma2_model4", s2, t2);
      bias.push_back(mean_of(m4) - s2);
      if (t2 > 0) {
        v.require(mean_of(m2) > mean_of(m4), fmt("sim2 sigma2=%.3f Var(theta_it)=%.3f: Model 2 mean %.4f > Model 4 mean %.4f",
                                                 s2, t2, mean_of(m2), mean_of(m4)));
      }
    }
    int dec = 0;
    const bool mono = monotone_with_wobble(bias, 1e300, &dec);
    v.require(mono && bias.back() > bias.front(),
              fmt("sim2 sigma2=%.3f: Model 4 bias grows with Var(theta_it): %.4f %.4f %.4f %.4f", s2, bias[0], bias[1],
                  bias[2], bias[3]));
  }
  check_failures(v, s2j);
  return v;
}

Verdict criterion7() {
  Verdict v;
  for (const char* scenario : {"buhlmann1", "buhlmann2"}) {
    const json s = simulate({"--scenario", scenario, "--reps", "100"});
    for (double s2 : kSigma2) {
      std::vector<double> gap;
      for (double t2 : kTau2) {
        const std::string cell = fmt("%s sigma2=%.3f Var(theta_it)=%.3f", scenario, s2, t2);
        const double mad2 = mean_of(row(s, "z_mad_model2", s2, t2)), mad4 = mean_of(row(s, "z_mad_model4", s2, t2));
        if (s2 > 0 && t2 > 0) {
          v.require(mad4 < mad2, fmt("%s: |Z4 - Z| %.4f < |Z2 - Z| %.4f", cell.c_str(), mad4, mad2));
        } else {
          v.note(fmt("%s: |Z4 - Z| %.4f, |Z2 - Z| %.4f (degenerate cell, not compared)", cell.c_str(), mad4, mad2));
        }
        const double p2 = mean_of(row(s, "pmse_model2", s2, t2)), p4 = mean_of(row(s, "pmse_model4", s2, t2));
        v.require(p4 <= p2, fmt("%s: predictive MSE Model 4 %.5f <= Model 2 %.5f", cell.c_str(), p4, p2));
        gap.push_back(mean_of(row(s, "pmse_gap", s2, t2)));
      }
      int dec = 0;
      const bool mono = monotone_with_wobble(gap, 1e300, &dec);
      v.require(mono, fmt("%s sigma2=%.3f: MSE gap nondecreasing in Var(theta_it) (%d decreases): %.5f %.5f %.5f %.5f",
                          scenario, s2, dec, gap[0], gap[1], gap[2], gap[3]));
    }
    check_failures(v, s);
  }
  return v;
}

Verdict criterion8() {
  Verdict v;
  Scenario s = default_scenario(Analysis::sim2, 1, 17);
  s.shared_effect = MixingDist::lognormal_mean_one(0.3);
  s.saturated_effect = MixingDist::gamma_mean_one(0.3);
  s.conditional = Family::negbin;
  s.alpha = 0.3;
  const ClaimPanel panel = generate_panel(s, 0);

  const auto rel = [](double g, double fd) { return std::abs(g - fd) / std::max(1.0, std::abs(fd)); };
  double worst = 0.0;
  {
    const Eigen::Vector3d beta(-0.45, 0.5, 0.52);
    const LoglikGradient lg = nb_loglik_and_gradient(panel, beta, 0.4);
    for (Eigen::Index j = 0; j < 4; ++j) {
      const auto f = [&](double x) {
        Eigen::Vector3d b = beta;
        double a = 0.4;
        (j < 3 ? b[j] : a) = x;
        return nb_loglik_and_gradient(panel, b, a).loglik;
      };
      worst = std::max(worst, rel(lg.gradient[j], oracle::richardson_first(f, j < 3 ? beta[j] : 0.4, 1e-4)));
    }
  }
  for (Family fam : {Family::poisson, Family::negbin}) {
    for (MixingKind kind : {MixingKind::gamma_mean_one, MixingKind::lognormal_mean_one}) {
      MarginalLikelihood ml(panel, fam, kind);
      const Eigen::Vector3d beta(-0.45, 0.5, 0.52);
      const double alpha = fam == Family::negbin ? 0.35 : 0.0, sig = 0.4;
      Eigen::VectorXd g;
      ml.loglik_and_gradient(beta, alpha, sig, g);
      double w = 0.0;
      for (Eigen::Index j = 0; j < g.size(); ++j) {
        const auto f = [&](double x) {
          Eigen::Vector3d b = beta;
          double a = alpha, s2 = sig;
          if (j < 3) {
            b[j] = x;
          } else if (j == 3 && fam == Family::negbin) {
            a = x;
          } else {
            s2 = x;
          }
          return ml.loglik(b, a, s2);
        };
        const double at = j < 3 ? beta[j] : (j == 3 && fam == Family::negbin ? alpha : sig);
        w = std::max(w, rel(g[j], oracle::richardson_first(f, at, 1e-3)));
      }
      v.note(fmt("marginal gradient %s/%s: max relative error %.2e", std::string(to_string(fam)).c_str(),
                 std::string(to_string(kind)).c_str(), w));
      worst = std::max(worst, w);
    }
  }
  v.require(worst <= 1e-5, fmt("analytic gradients vs finite differences: max relative error %.2e", worst));

  double drift = 0.0;
  for (std::uint64_t rep = 0; rep < 3; ++rep) {
    const ClaimPanel p = generate_panel(s, rep);
    for (Family fam : {Family::poisson, Family::negbin}) {
      for (MixingKind kind : {MixingKind::gamma_mean_one, MixingKind::lognormal_mean_one}) {
        const ReFit f = fit_shared_re(p, fam, kind);
        QuadratureOptions q64;
        q64.nodes = 64;
        q64.force_quadrature = true;
        QuadratureOptions q32;
        q32.force_quadrature = true;
        const double l32 = marginal_loglik(p, fam, kind, f.beta, f.alpha, f.sigma2, q32);
        const double l64 = marginal_loglik(p, fam, kind, f.beta, f.alpha, f.sigma2, q64);
        drift = std::max(drift, std::abs(l64 - l32));
      }
    }
  }
  v.require(drift < 1e-7, fmt("32 -> 64 nodes at fitted optima: max |change| %.2e", drift));

  bool identical = true;
  for (const std::vector<std::string>& args :
       {std::vector<std::string>{"--scenario", "table1", "--reps", "6", "--seed", "3"},
        std::vector<std::string>{"--scenario", "buhlmann2", "--reps", "2", "--seed", "3", "--sigma2", "0.3", "--tau2", "0,0.5"},
        std::vector<std::string>{"--scenario", "power", "--reps", "8", "--seed", "3", "--alpha", "0.5", "--sigma2", "0,0.5"}}) {
    const std::string one = simulate_csv(args, 1);
    identical = identical && one == simulate_csv(args, 4) && one == simulate_csv(args, 1);
  }
  v.require(identical, "simulate output bit-identical for 1 and 4 threads and across runs");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ratekit acceptance suite"};
  std::vector<int> only;
  app.add_option("--criteria", only, "Subset of criteria to run")->delimiter(',');
  app.add_option("--threads", g_threads, "Threads for simulation studies");
  CLI11_PARSE(app, argc, argv);
  if (const char* env = std::getenv("RATEKIT_THREADS"); env && app.count("--threads") == 0) g_threads = default_thread_count();

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"sigma2 under saturated Poisson effects", criterion1},
      {"Pinquet rejection under saturated effects", criterion2},
      {"NB score test size and power", criterion3},
      {"score formula oracle", criterion4},
      {"information components oracle", criterion5},
      {"estimator bias ordering", criterion6},
      {"Buhlmann factor and predictive MSE", criterion7},
      {"numerical hygiene", criterion8},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << criteria[i].first
              << fmt(" (%.1f s)", secs) << "\n";
    for (const auto& n : v.notes) std::cout << "    " << n << "\n";
    std::cout.flush();
    failed += v.pass ? 0 : 1;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << "\n";
  return failed == 0 ? 0 : 1;
}
