#include "ratekit/serialization.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "ratekit/errors.hpp"

namespace ratekit {

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace {

Json number(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

Json vector_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v[i]));
  return a;
}

Json matrix_json(const Eigen::MatrixXd& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(number(m(i, j)));
    a.push_back(std::move(row));
  }
  return a;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

Json to_json(const GlmFit& fit, std::string_view model, const std::vector<std::string>& covariates) {
  Json j;
  j["model"] = model;
  j["family"] = to_string(fit.family);
  j["covariates"] = covariates;
  j["beta"] = vector_json(fit.beta);
  j["alpha"] = fit.family == Family::negbin ? number(fit.alpha) : Json(nullptr);
  j["alpha_on_boundary"] = fit.alpha_on_boundary;
  j["loglik"] = number(fit.loglik);
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  Eigen::MatrixXd cov;
  try {
    cov = fit.covariance();
  } catch (const std::exception&) {
    cov.resize(0, 0);
  }
  j["covariance"] = matrix_json(cov);
  if (!fit.note.empty()) j["note"] = fit.note;
  return j;
}

Json to_json(const ReFit& fit, std::string_view model, const std::vector<std::string>& covariates) {
  Json j;
  j["model"] = model;
  j["family"] = to_string(fit.conditional);
  j["conditional"] = to_string(fit.conditional);
  j["re_dist"] = to_string(fit.re_dist);
  j["covariates"] = covariates;
  j["beta"] = vector_json(fit.beta);
  j["alpha"] = fit.conditional == Family::negbin ? number(fit.alpha) : Json(nullptr);
  j["sigma2"] = number(fit.sigma2);
  j["var_theta"] = number(fit.var_theta());
  j["sigma2_on_boundary"] = fit.sigma2_on_boundary;
  j["loglik"] = number(fit.loglik);
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["quadrature_nodes"] = fit.quadrature_nodes;
  j["covariance"] = matrix_json(fit.covariance);
  if (!fit.note.empty()) j["note"] = fit.note;
  return j;
}

ReFit re_fit_from_json(const Json& j) {
  if (!j.is_object()) throw DomainError("fit JSON must be an object");
  const auto need = [&](const char* key) -> const Json& {
    if (!j.contains(key) || j.at(key).is_null()) {
      const std::string model = j.contains("model") && j.at("model").is_string() ? j.at("model").get<std::string>() : "?";
      throw DomainError(std::string("fit JSON for model '") + model + "' lacks '" + key +
                        "'; credibility needs a poisson-re or nb-re fit");
    }
    return j.at(key);
  };
  ReFit f;
  try {
    const std::string family = need("conditional").get<std::string>();
    if (family == "poisson") {
      f.conditional = Family::poisson;
    } else if (family == "negbin") {
      f.conditional = Family::negbin;
    } else {
      throw DomainError("unknown conditional family '" + family + "'");
    }
    f.re_dist = mixing_kind_from_string(need("re_dist").get<std::string>());
    const auto& beta = need("beta");
    f.beta.resize(static_cast<Eigen::Index>(beta.size()));
    for (std::size_t i = 0; i < beta.size(); ++i) f.beta[static_cast<Eigen::Index>(i)] = beta.at(i).get<double>();
    f.sigma2 = need("sigma2").get<double>();
    f.alpha = f.conditional == Family::negbin ? need("alpha").get<double>() : 0.0;
    f.loglik = j.value("loglik", 0.0);
    f.converged = j.value("converged", true);
    f.quadrature_nodes = j.value("quadrature_nodes", 0);
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("malformed fit JSON: ") + e.what());
  }
  if (!(f.sigma2 >= 0.0) || !(f.alpha >= 0.0)) throw DomainError("fit JSON has negative variance parameters");
  return f;
}

Json to_json(const ScoreTestResult& r, double level) {
  Json j;
  j["test"] = r.test;
  j["statistic"] = number(r.statistic);
  j["p_value"] = number(r.p_value_one_sided);
  j["reject_at"] = {{"level", level}, {"critical_value", r.critical_value(level)}, {"reject", r.rejects(level)}};
  Json c;
  c["numerator"] = number(r.numerator);
  c["denominator"] = number(r.denominator);
  c["policies"] = r.per_policy_contributions.size();
  c["boundary_fallback"] = r.boundary_fallback;
  if (r.info) {
    const auto& in = *r.info;
    c["i_sigma2_sigma2"] = number(in.i_ss);
    c["i_sigma2_alpha"] = number(in.i_sw[in.i_sw.size() - 1]);
    c["i_alpha_alpha"] = number(in.i_ww(in.i_ww.rows() - 1, in.i_ww.cols() - 1));
    c["i_beta_beta"] = matrix_json(in.i_ww.topLeftCorner(in.i_ww.rows() - 1, in.i_ww.cols() - 1));
    c["effective_variance"] = number(in.effective_variance);
    c["alpha_series_terms"] = in.series_terms;
  }
  j["components"] = std::move(c);
  return j;
}

Json to_json(const BmExistenceReport& r) {
  Json j;
  j["level"] = r.level;
  j["pinquet"] = to_json(r.pinquet, r.level);
  j["nb_score"] = to_json(r.nb_score, r.level);
  j["alpha_hat"] = number(r.nb_fit.alpha);
  j["pinquet_rejects"] = r.pinquet_rejects;
  j["nb_rejects"] = r.nb_rejects;
  j["disagreement"] = r.disagreement;
  return j;
}

std::string credibility_csv(const CredibilityReport& report) {
  std::ostringstream os;
  os << "id,T,mean,mu,nu,a,z,prediction,bm_coefficient\n";
  for (const auto& r : report.rows) {
    os << csv_field(r.id) << ',' << r.periods << ',' << format_double(r.sample_mean) << ','
       << format_double(r.structural.mu) << ',' << format_double(r.structural.nu) << ','
       << format_double(r.structural.a) << ',' << format_double(r.z) << ',' << format_double(r.prediction) << ','
       << (r.bm_coefficient ? format_double(*r.bm_coefficient) : std::string()) << '\n';
  }
  return os.str();
}

Json to_json(const CredibilityReport& report) {
  Json rows = Json::array();
  for (const auto& r : report.rows) {
    Json j;
    j["id"] = r.id;
    j["T"] = r.periods;
    j["mean"] = number(r.sample_mean);
    j["mu"] = number(r.structural.mu);
    j["nu"] = number(r.structural.nu);
    j["a"] = number(r.structural.a);
    j["z"] = number(r.z);
    j["prediction"] = number(r.prediction);
    j["bm_coefficient"] = r.bm_coefficient ? number(*r.bm_coefficient) : Json(nullptr);
    rows.push_back(std::move(j));
  }
  return Json{{"lambda_varies", report.lambda_varies}, {"policies", std::move(rows)}};
}

std::string sim_summary_csv(const SimSummary& s) {
  std::ostringstream os;
  os << "scenario,sigma2,var_theta_it,alpha,k,T,metric,mean,spread,replications,failures,flagged\n";
  for (const auto& r : s.rows) {
    os << csv_field(r.scenario) << ',' << format_double(r.sigma2) << ',' << format_double(r.var_theta_it) << ','
       << format_double(r.alpha) << ',' << r.k << ',' << r.T << ',' << r.metric << ',' << format_double(r.mean) << ','
       << format_double(r.spread) << ',' << r.replications << ',' << r.failures << ',' << (r.flagged ? 1 : 0) << '\n';
  }
  return os.str();
}

Json to_json(const SimSummary& s) {
  Json rows = Json::array();
  for (const auto& r : s.rows) {
    Json j;
    j["sigma2"] = r.sigma2;
    j["var_theta_it"] = r.var_theta_it;
    j["alpha"] = r.alpha;
    j["k"] = r.k;
    j["T"] = r.T;
    j["metric"] = r.metric;
    j["mean"] = number(r.mean);
    j["spread"] = number(r.spread);
    j["replications"] = r.replications;
    j["failures"] = r.failures;
    j["flagged"] = r.flagged;
    rows.push_back(std::move(j));
  }
  return Json{{"scenario", s.scenario}, {"seed", s.seed}, {"replications", s.replications}, {"rows", std::move(rows)}};
}

}  // namespace ratekit
