#include "ratekit/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <unordered_set>

#include "ratekit/errors.hpp"

namespace ratekit {

long PolicyRecord::total_count() const noexcept {
  long total = 0;
  for (const auto& p : periods) total += p.count;
  return total;
}

ClaimPanel::ClaimPanel(std::vector<std::string> covariate_names, std::vector<PolicyRecord> policies)
    : covariate_names_(std::move(covariate_names)), policies_(std::move(policies)) {
  if (policies_.empty()) throw DomainError("panel must contain at least one policy");
  const std::size_t p = covariate_names_.size();
  std::unordered_set<std::string> ids;
  for (auto& rec : policies_) {
    if (!ids.insert(rec.id).second) throw DomainError("duplicate policy id '" + rec.id + "'");
    if (rec.periods.empty()) throw DomainError("policy '" + rec.id + "' has no periods");
    std::stable_sort(rec.periods.begin(), rec.periods.end(),
                     [](const auto& a, const auto& b) { return a.period < b.period; });
    for (std::size_t t = 0; t < rec.periods.size(); ++t) {
      const auto& obs = rec.periods[t];
      if (t > 0 && rec.periods[t - 1].period == obs.period) {
        throw DomainError("policy '" + rec.id + "' repeats period " + std::to_string(obs.period));
      }
      if (obs.count < 0) throw DomainError("policy '" + rec.id + "' has a negative count");
      if (obs.covariates.size() != p) throw DomainError("policy '" + rec.id + "' has a covariate row of the wrong width");
      for (double v : obs.covariates) {
        if (!std::isfinite(v)) throw DomainError("policy '" + rec.id + "' has a non-finite covariate");
      }
    }
    num_cells_ += rec.periods.size();
  }
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string_view unquote(std::string_view s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, out);
  return !s.empty() && res.ec == std::errc() && res.ptr == end;
}

}  // namespace

ClaimPanel parse_panel_csv(std::string_view text) {
  if (text.size() >= 3 && static_cast<unsigned char>(text[0]) == 0xEF &&
      static_cast<unsigned char>(text[1]) == 0xBB && static_cast<unsigned char>(text[2]) == 0xBF) {
    text.remove_prefix(3);
  }
  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    while (start < text.size()) {
      auto nl = text.find('\n', start);
      if (nl == std::string_view::npos) nl = text.size();
      lines.push_back(text.substr(start, nl - start));
      start = nl + 1;
    }
  }
  if (lines.empty() || trim(lines[0]).empty()) throw ParseError(1, "policy_id", "missing header row");

  const auto header = split_fields(lines[0]);
  const char* required[] = {"policy_id", "period", "count"};
  for (std::size_t c = 0; c < 3; ++c) {
    if (header.size() <= c || trim(header[c]) != required[c]) {
      throw ParseError(1, required[c], "header must start with policy_id,period,count");
    }
  }
  std::vector<std::string> names;
  for (std::size_t c = 3; c < header.size(); ++c) {
    const auto name = trim(unquote(trim(header[c])));
    if (name.empty()) throw ParseError(1, "column " + std::to_string(c + 1), "empty covariate name");
    names.emplace_back(name);
  }
  const std::size_t width = header.size();

  std::map<std::string, std::size_t> index;
  std::vector<PolicyRecord> policies;
  std::map<std::pair<std::size_t, std::int64_t>, std::size_t> seen;

  for (std::size_t r = 1; r < lines.size(); ++r) {
    const std::size_t row = r + 1;
    if (trim(lines[r]).empty()) continue;
    const auto fields = split_fields(lines[r]);
    if (fields.size() != width) {
      throw ParseError(row, fields.size() < width ? std::string(trim(header[fields.size()])) : "(extra)",
                       "expected " + std::to_string(width) + " fields, found " + std::to_string(fields.size()));
    }
    const std::string id(trim(unquote(trim(fields[0]))));
    if (id.empty()) throw ParseError(row, "policy_id", "empty policy id");

    std::int64_t period = 0;
    if (!parse_number(trim(fields[1]), period)) throw ParseError(row, "period", "not an integer");
    long long count = 0;
    if (!parse_number(trim(fields[2]), count)) throw ParseError(row, "count", "not an integer");
    if (count < 0) throw ParseError(row, "count", "negative count");
    if (count > 1000000000LL) throw ParseError(row, "count", "count out of range");

    PeriodObservation obs;
    obs.period = period;
    obs.count = static_cast<int>(count);
    obs.covariates.reserve(names.size());
    for (std::size_t c = 3; c < width; ++c) {
      double v = 0.0;
      if (!parse_number(trim(fields[c]), v) || !std::isfinite(v)) {
        throw ParseError(row, names[c - 3], "not a finite decimal number");
      }
      obs.covariates.push_back(v);
    }

    auto [it, inserted] = index.try_emplace(id, policies.size());
    if (inserted) policies.push_back(PolicyRecord{id, {}});
    if (!seen.emplace(std::make_pair(it->second, period), row).second) {
      throw ParseError(row, "period", "duplicate (policy_id, period) = (" + id + ", " + std::to_string(period) + ")");
    }
    policies[it->second].periods.push_back(std::move(obs));
  }
  if (policies.empty()) throw ParseError(2, "policy_id", "no data rows");
  return ClaimPanel(std::move(names), std::move(policies));
}

std::string write_panel_csv(const ClaimPanel& panel) {
  std::ostringstream out;
  out << "policy_id,period,count";
  for (const auto& n : panel.covariate_names()) out << ',' << n;
  out << '\n';
  out << std::setprecision(17);
  for (const auto& rec : panel.policies()) {
    for (const auto& obs : rec.periods) {
      out << rec.id << ',' << obs.period << ',' << obs.count;
      for (double v : obs.covariates) out << ',' << v;
      out << '\n';
    }
  }
  return out.str();
}

CellValues linear_predictor(const ClaimPanel& panel, const Eigen::VectorXd& beta) {
  if (static_cast<std::size_t>(beta.size()) != panel.num_covariates()) {
    throw DomainError("coefficient vector has length " + std::to_string(beta.size()) + ", panel has " +
                      std::to_string(panel.num_covariates()) + " covariates");
  }
  CellValues out;
  out.reserve(panel.num_policies());
  for (const auto& rec : panel.policies()) {
    std::vector<double> row;
    row.reserve(rec.periods.size());
    for (const auto& obs : rec.periods) {
      double eta = 0.0;
      for (std::size_t j = 0; j < obs.covariates.size(); ++j) eta += obs.covariates[j] * beta[static_cast<Eigen::Index>(j)];
      row.push_back(std::exp(eta));
    }
    out.push_back(std::move(row));
  }
  return out;
}

ClaimPanel without_last_period(const ClaimPanel& panel) {
  std::vector<PolicyRecord> out;
  out.reserve(panel.num_policies());
  for (const auto& rec : panel.policies()) {
    if (rec.periods.size() < 2) throw DomainError("policy '" + rec.id + "' has a single period; nothing to hold out");
    PolicyRecord r{rec.id, {rec.periods.begin(), rec.periods.end() - 1}};
    out.push_back(std::move(r));
  }
  return ClaimPanel(panel.covariate_names(), std::move(out));
}

FlatPanel::FlatPanel(const ClaimPanel& panel)
    : x(static_cast<Eigen::Index>(panel.num_cells()), static_cast<Eigen::Index>(panel.num_covariates())) {
  counts.reserve(panel.num_cells());
  offsets.reserve(panel.num_policies() + 1);
  Eigen::Index row = 0;
  offsets.push_back(0);
  for (const auto& rec : panel.policies()) {
    for (const auto& obs : rec.periods) {
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(row, j) = obs.covariates[static_cast<std::size_t>(j)];
      counts.push_back(obs.count);
      ++row;
    }
    offsets.push_back(static_cast<std::size_t>(row));
  }
}

}  // namespace ratekit
