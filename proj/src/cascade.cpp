#include "scrkit/cascade.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace scrkit::cascade {

using nlohmann::json;

void validate_stages(std::span<const BoundaryConfig> stages) {
  if (stages.empty()) throw PreconditionError("cascade needs at least one stage");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    if (std::isnan(s.tau_low) || std::isnan(s.tau_high) || !(s.tau_low <= s.tau_high)) {
      throw PreconditionError("stage '" + s.name + "': tau_low must not exceed tau_high");
    }
    if (!(s.cost >= 0.0) || !std::isfinite(s.cost)) throw PreconditionError("stage '" + s.name + "': invalid cost");
    if (!(s.weight >= 0.0) || !std::isfinite(s.weight)) {
      throw PreconditionError("stage '" + s.name + "': invalid weight");
    }
    if (i > 0 && s.cost < stages[i - 1].cost) {
      throw PreconditionError("stages must be ordered by ascending cost; '" + s.name + "' costs less than '" +
                              stages[i - 1].name + "'");
    }
  }
}

std::string to_string(StageStatus s) {
  switch (s) {
    case StageStatus::NotReached: return "not_reached";
    case StageStatus::Flagged: return "flagged";
    case StageStatus::Cleared: return "cleared";
    case StageStatus::Accumulated: return "accumulated";
    case StageStatus::Unavailable: return "unavailable";
  }
  return "?";
}

CascadeOutcome run_cascade(const ScoreProvider& provider, std::span<const BoundaryConfig> stages, double tau_global) {
  validate_stages(stages);
  CascadeOutcome out;
  out.stages.resize(stages.size());
  for (std::size_t i = 0; i < stages.size(); ++i) out.stages[i].name = stages[i].name;

  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& cfg = stages[i];
    auto& trace = out.stages[i];
    out.incurred_cost += cfg.cost;
    double s;
    try {
      s = provider(i);
    } catch (const UnavailableSignalError& e) {
      trace.status = StageStatus::Unavailable;
      trace.note = e.what();
      continue;
    } catch (const TransportError& e) {
      trace.status = StageStatus::Unavailable;
      trace.note = e.what();
      continue;
    }
    trace.score = s;
    if (s > cfg.tau_high) {
      trace.status = StageStatus::Flagged;
      out.flag = 1;
      out.score = s;
      out.exit_stage = cfg.name;
      out.exit_index = i;
      return out;
    }
    if (s < cfg.tau_low) {
      trace.status = StageStatus::Cleared;
      out.flag = 0;
      out.score = s;
      out.exit_stage = cfg.name;
      out.exit_index = i;
      return out;
    }
    trace.status = StageStatus::Accumulated;
    out.accumulated += cfg.weight * s;
  }
  out.score = out.accumulated;
  out.flag = out.accumulated > tau_global ? 1 : 0;
  out.exit_stage = kGlobalStage;
  out.exit_index = stages.size();
  return out;
}

CostReport cascade_cost(std::span<const double> costs, std::span<const double> betas) {
  const std::size_t k = costs.size();
  if (k == 0) throw PreconditionError("cost report needs at least one stage");
  if (betas.size() + 1 != k && betas.size() != k) {
    throw PreconditionError("expected " + std::to_string(k - 1) + " or " + std::to_string(k) +
                            " pass-through rates, got " + std::to_string(betas.size()));
  }
  for (double b : betas) {
    if (!(b >= 0.0 && b <= 1.0)) throw PreconditionError("pass-through rates must lie in [0, 1]");
  }
  for (double c : costs) {
    if (!(c >= 0.0) || !std::isfinite(c)) throw PreconditionError("costs must be finite and non-negative");
  }
  CostReport r;
  r.costs.assign(costs.begin(), costs.end());
  r.betas.assign(betas.begin(), betas.end());
  double reach = 1.0;
  for (std::size_t i = 0; i < k; ++i) {
    r.c_cascade += costs[i] * reach;
    r.c_parallel += costs[i];
    if (i < betas.size()) reach *= betas[i];
  }
  r.savings = r.c_parallel > 0.0 ? 1.0 - r.c_cascade / r.c_parallel : 0.0;
  return r;
}

double coverage_estimate(std::span<const double> alphas) {
  double miss = 1.0;
  for (double a : alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw PreconditionError("coverages must lie in [0, 1]");
    miss *= 1.0 - a;
  }
  return 1.0 - miss;
}

double default_cost(const std::string& signal) {
  static const std::map<std::string, double> kCosts = {
      {"b1", 0.0}, {"b2", 1.0}, {"b3", 2.0}, {"b4", 3.0}, {"b5", 4.0}};
  std::string prefix = signal.substr(0, 2);
  std::transform(prefix.begin(), prefix.end(), prefix.begin(), [](unsigned char c) { return std::tolower(c); });
  const auto it = kCosts.find(prefix);
  return it == kCosts.end() ? 0.0 : it->second;
}

namespace {

std::optional<double> threshold_value(const json& j, const char* key, const std::string& stage) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  const auto& v = j.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw SchemaError("stage '" + stage + "': " + key + " must be a number, \"inf\" or \"-inf\"");
}

std::optional<double> number(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_number()) throw SchemaError(where + ": " + key + " must be a number");
  return j.at(key).get<double>();
}

}  // namespace

CascadeSpec parse_cascade_spec(std::istream& in) {
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("cascade config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw SchemaError("cascade config must be a JSON object");
  CascadeSpec spec;
  spec.format_version = j.value("format_version", kConfigFormatVersion);
  if (spec.format_version != kConfigFormatVersion) {
    throw SchemaError("unsupported cascade config format_version " + std::to_string(spec.format_version));
  }
  spec.tau_global = number(j, "tau_global", "cascade config");
  if (!j.contains("stages") || !j.at("stages").is_array() || j.at("stages").empty()) {
    throw SchemaError("cascade config needs a non-empty \"stages\" array");
  }
  for (const auto& s : j.at("stages")) {
    StageSpec st;
    if (!s.contains("name") || !s.at("name").is_string()) throw SchemaError("every stage needs a string \"name\"");
    st.name = s.at("name").get<std::string>();
    st.signal = s.contains("signal") ? s.at("signal").get<std::string>() : st.name;
    const std::string where = "stage '" + st.name + "'";
    st.cost = number(s, "cost", where);
    st.weight = number(s, "weight", where);
    st.tau_low = threshold_value(s, "tau_low", st.name);
    st.tau_high = threshold_value(s, "tau_high", st.name);
    spec.stages.push_back(std::move(st));
  }
  return spec;
}

CascadeSpec parse_cascade_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PreconditionError("cannot open cascade config " + path);
  return parse_cascade_spec(in);
}

ResolvedConfig resolve(const CascadeSpec& spec, const std::map<std::string, std::vector<double>>& scores,
                       ThresholdMode mode) {
  if (spec.stages.empty()) throw PreconditionError("cascade config has no stages");
  ResolvedConfig rc;
  const double k = static_cast<double>(spec.stages.size());
  std::vector<double> medians;
  for (const auto& st : spec.stages) {
    BoundaryConfig b;
    b.name = st.name;
    b.signal = st.signal.empty() ? st.name : st.signal;
    b.cost = st.cost.value_or(default_cost(b.signal));
    b.weight = st.weight.value_or(1.0 / k);
    const auto it = scores.find(b.signal);
    const bool have = it != scores.end() && !it->second.empty();
    const bool need_data = !st.tau_low || !st.tau_high || !spec.tau_global;
    if (need_data && !have) {
      throw PreconditionError("stage '" + b.name + "' needs scores for signal '" + b.signal +
                              "' to resolve default thresholds");
    }
    const double q_lo = have ? stats::quantile(it->second, mode == ThresholdMode::Median ? 0.5 : 0.25) : 0.0;
    const double q_hi = have ? stats::quantile(it->second, mode == ThresholdMode::Median ? 0.5 : 0.75) : 0.0;
    medians.push_back(have ? stats::median(it->second) : 0.0);
    b.tau_low = st.tau_low.value_or(q_lo);
    b.tau_high = st.tau_high.value_or(q_hi);
    if (!st.tau_low || !st.tau_high) {
      rc.defaulted.push_back(b.name + ": thresholds from " +
                             (mode == ThresholdMode::Median ? std::string("median") : std::string("quartiles")));
    }
    if (!st.cost) rc.defaulted.push_back(b.name + ": default cost");
    if (!st.weight) rc.defaulted.push_back(b.name + ": weight 1/k");
    rc.stages.push_back(std::move(b));
  }
  if (spec.tau_global) {
    rc.tau_global = *spec.tau_global;
  } else {
    for (std::size_t i = 0; i < rc.stages.size(); ++i) rc.tau_global += rc.stages[i].weight * medians[i];
    rc.defaulted.push_back("tau_global: weighted sum of stage medians");
  }
  std::stable_sort(rc.stages.begin(), rc.stages.end(),
                   [](const BoundaryConfig& a, const BoundaryConfig& b) { return a.cost < b.cost; });
  validate_stages(rc.stages);
  return rc;
}

Evaluation evaluate_cascade(std::span<const QueryRow> rows, const ResolvedConfig& config) {
  validate_stages(config.stages);
  Evaluation ev;
  const std::size_t k = config.stages.size();
  ev.stage_stats.resize(k + 1);
  for (std::size_t i = 0; i < k; ++i) {
    ev.stage_stats[i].name = config.stages[i].name;
    ev.provider_calls[config.stages[i].name] = 0;
  }
  ev.stage_stats[k].name = kGlobalStage;

  for (const auto& row : rows) {
    if (!row.label) {
      ++ev.excluded_unlabeled;
      continue;
    }
    ScoreProvider provider = [&](std::size_t i) {
      const auto& signal = config.stages[i].signal;
      ++ev.provider_calls[config.stages[i].name];
      const auto it = row.signals.find(signal);
      if (it == row.signals.end()) {
        throw UnavailableSignalError("signal '" + signal + "' missing for " + row.question_id);
      }
      return it->second;
    };
    auto outcome = run_cascade(provider, config.stages, config.tau_global);
    for (std::size_t i = 0; i < k; ++i) {
      const auto st = outcome.stages[i].status;
      if (st == StageStatus::NotReached) break;
      ++ev.stage_stats[i].reached;
      if (st == StageStatus::Unavailable) ++ev.stage_stats[i].unavailable;
    }
    auto& exit = ev.stage_stats[outcome.exit_index];
    if (outcome.exit_index == k) ++exit.reached;
    ++exit.exited;
    if (outcome.flag) ++exit.flagged;
    ev.mean_incurred_cost += outcome.incurred_cost;
    ev.question_ids.push_back(row.question_id);
    ev.labels.push_back(*row.label);
    ev.outcomes.push_back(std::move(outcome));
  }

  const std::size_t n = ev.outcomes.size();
  if (n > 0) ev.mean_incurred_cost /= static_cast<double>(n);

  std::vector<double> betas;
  for (std::size_t i = 0; i < k; ++i) {
    auto& st = ev.stage_stats[i];
    st.beta = st.reached > 0 ? static_cast<double>(st.reached - st.exited) / static_cast<double>(st.reached) : 0.0;
    if (i + 1 < k) betas.push_back(st.beta);
  }
  std::vector<double> costs;
  for (const auto& s : config.stages) costs.push_back(s.cost);
  ev.cost = cascade_cost(costs, betas);

  // Scores from different exit stages live on different scales, so each is
  // replaced by its empirical CDF among queries that exited at the same stage.
  std::map<std::size_t, std::vector<double>> by_exit;
  for (const auto& o : ev.outcomes) by_exit[o.exit_index].push_back(o.score);
  for (auto& [idx, v] : by_exit) std::sort(v.begin(), v.end());
  ev.combined_scores.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& o = ev.outcomes[i];
    const auto& v = by_exit[o.exit_index];
    const double rank = static_cast<double>(std::upper_bound(v.begin(), v.end(), o.score) - v.begin());
    ev.combined_scores[i] = static_cast<double>(o.flag) + rank / static_cast<double>(v.size());
  }
  const bool pos = std::count(ev.labels.begin(), ev.labels.end(), 1) > 0;
  const bool neg = std::count(ev.labels.begin(), ev.labels.end(), 0) > 0;
  if (pos && neg) ev.combined_auroc = stats::auroc(stats::make_samples(ev.combined_scores, ev.labels));
  return ev;
}

}  // namespace scrkit::cascade
