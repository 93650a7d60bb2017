#pragma once

#include <json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "ratekit/credibility.hpp"
#include "ratekit/glm.hpp"
#include "ratekit/random_effects.hpp"
#include "ratekit/score_tests.hpp"
#include "ratekit/simulation.hpp"

namespace ratekit {

using Json = nlohmann::ordered_json;

/// %.17g; round-trips every double.
std::string format_double(double x);

Json to_json(const GlmFit& fit, std::string_view model, const std::vector<std::string>& covariates);
Json to_json(const ReFit& fit, std::string_view model, const std::vector<std::string>& covariates);

/// Reads a shared-random-effect fit back. Throws DomainError when a field the
/// credibility formulas need is absent (e.g. a plain GLM fit has no sigma2).
ReFit re_fit_from_json(const Json& j);

Json to_json(const ScoreTestResult& r, double level);
Json to_json(const BmExistenceReport& r);

std::string credibility_csv(const CredibilityReport& report);
Json to_json(const CredibilityReport& report);

std::string sim_summary_csv(const SimSummary& summary);
Json to_json(const SimSummary& summary);

}  // namespace ratekit
