#pragma once

/**
 * Cheapest-first boundary cascade.
 *
 * Stages run in ascending cost order. Each stage either exits early (score
 * above tau_high flags, score below tau_low clears) or adds w_i * s_i to an
 * accumulator that is compared with tau_global once every stage has run.
 * Stage scores come from a lazy provider, so stages after the exit are never
 * evaluated. A stage whose provider throws UnavailableSignalError or
 * TransportError is recorded as unavailable and skipped; its cost is still
 * charged because the attempt was made.
 */

#include "scrkit/errors.hpp"
#include "scrkit/stats.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scrkit::cascade {

inline constexpr int kConfigFormatVersion = 1;

struct BoundaryConfig {
  std::string name;
  std::string signal;  // column the stage reads; defaults to name
  double cost = 0.0;
  double tau_low = 0.0;
  double tau_high = 0.0;
  double weight = 1.0;
};

/// Throws PreconditionError unless the list is non-empty, sorted by cost,
/// and every stage has tau_low <= tau_high, cost >= 0 and weight >= 0.
void validate_stages(std::span<const BoundaryConfig> stages);

/// Returns the stage score; may throw UnavailableSignalError / TransportError.
using ScoreProvider = std::function<double(std::size_t stage)>;

enum class StageStatus { NotReached, Flagged, Cleared, Accumulated, Unavailable };
std::string to_string(StageStatus s);

struct StageTrace {
  std::string name;
  StageStatus status = StageStatus::NotReached;
  std::optional<double> score;
  std::string note;  // failure message for unavailable stages
};

struct CascadeOutcome {
  int flag = 0;
  double score = 0.0;            // exit-stage score, or the accumulated sum at the global stage
  std::string exit_stage;        // stage name or "global"
  std::size_t exit_index = 0;    // stage index; stages.size() for the global decision
  double incurred_cost = 0.0;
  double accumulated = 0.0;
  std::vector<StageTrace> stages;
};

inline constexpr const char* kGlobalStage = "global";

CascadeOutcome run_cascade(const ScoreProvider& provider, std::span<const BoundaryConfig> stages, double tau_global);

struct CostReport {
  std::vector<double> costs;
  std::vector<double> betas;
  double c_cascade = 0.0;
  double c_parallel = 0.0;
  double savings = 0.0;  // 1 - c_cascade / c_parallel; 0 when c_parallel is 0
};

/// C_cascade = sum_i c_i prod_{j<i} beta_j. `betas` has k-1 or k entries
/// (the last is ignored when k are given), each in [0, 1].
CostReport cascade_cost(std::span<const double> costs, std::span<const double> betas);

/// 1 - prod (1 - alpha_i).
double coverage_estimate(std::span<const double> alphas);

// ---------------------------------------------------------------------------
// Configuration

/// Stage entry as written in a config file: thresholds, weight and cost may
/// be omitted and are then resolved from data or defaults.
struct StageSpec {
  std::string name;
  std::string signal;
  std::optional<double> cost;
  std::optional<double> tau_low;
  std::optional<double> tau_high;
  std::optional<double> weight;
};

struct CascadeSpec {
  int format_version = kConfigFormatVersion;
  std::vector<StageSpec> stages;
  std::optional<double> tau_global;
};

/// Default abstract cost per boundary family: B1 0, B2 1, B3 2, B4 3, B5 4.
/// Unknown names cost 0 unless configured.
double default_cost(const std::string& signal);

/// JSON config: {"format_version":1,"tau_global":x,"stages":[{"name":..,
/// "signal":..,"cost":..,"tau_low":..,"tau_high":..,"weight":..}]}. Thresholds
/// may be given as "inf" / "-inf" strings. Throws SchemaError.
CascadeSpec parse_cascade_spec(std::istream& in);
CascadeSpec parse_cascade_spec(const std::string& path);

enum class ThresholdMode { Quartiles, Median };

struct ResolvedConfig {
  std::vector<BoundaryConfig> stages;
  double tau_global = 0.0;
  std::vector<std::string> defaulted;  // human-readable notes on resolved defaults
};

/// Fills omitted values: thresholds from the 25th / 75th percentiles (or both
/// at the median) of each stage's available scores, weights 1/k, costs from
/// default_cost, tau_global = sum_i w_i * median_i. `scores` maps signal name
/// to its available values. Stages are stably sorted by cost.
ResolvedConfig resolve(const CascadeSpec& spec, const std::map<std::string, std::vector<double>>& scores,
                       ThresholdMode mode = ThresholdMode::Quartiles);

// ---------------------------------------------------------------------------
// Evaluation over a labeled run

struct QueryRow {
  std::string question_id;
  std::optional<int> label;  // 1 = incorrect; nullopt = unlabeled or ambiguous
  std::map<std::string, double> signals;
};

struct StageStat {
  std::string name;
  std::size_t reached = 0;
  std::size_t exited = 0;
  std::size_t flagged = 0;
  std::size_t unavailable = 0;
  double beta = 0.0;  // fraction of queries reaching this stage that continue past it
};

struct Evaluation {
  std::vector<std::string> question_ids;
  std::vector<CascadeOutcome> outcomes;
  std::vector<double> combined_scores;  // flag + within-exit-stage ECDF of the score
  std::vector<int> labels;
  std::size_t excluded_unlabeled = 0;
  std::optional<double> combined_auroc;
  std::vector<StageStat> stage_stats;  // one per stage then one for "global"
  CostReport cost;                     // from empirical betas
  double mean_incurred_cost = 0.0;
  std::map<std::string, std::size_t> provider_calls;  // per stage
};

/// Runs every labeled row through the cascade. Rows missing a stage's signal
/// see that stage as unavailable.
Evaluation evaluate_cascade(std::span<const QueryRow> rows, const ResolvedConfig& config);

}  // namespace scrkit::cascade
