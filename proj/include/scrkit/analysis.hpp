#pragma once

// Analyses behind the CLI commands. Each function takes an ingested run and
// returns a report::Report; the CLI adds provenance and renders it.
//
// Every per-question signal is oriented so that a larger value means the
// answer is more likely incorrect, matching the label convention (1 =
// incorrect). Signals that need data the run lacks are empty for that
// question rather than zero.

#include "scrkit/cascade.hpp"
#include "scrkit/clustering.hpp"
#include "scrkit/pointer.hpp"
#include "scrkit/report.hpp"
#include "scrkit/stats.hpp"
#include "scrkit/store.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace scrkit::analysis {

struct SignalOptions {
  double jaccard_tau = clustering::kDefaultJaccardThreshold;
  double embedding_tau = clustering::kDefaultEmbeddingThreshold;
  double entailment_tau = clustering::kDefaultEntailmentThreshold;
  std::size_t density_k = 10;                 // B2 neighbours
  store::Date knowledge_cutoff{std::chrono::year{2024} / 1 / 1};  // B3 knowledge date
  double lambda = 0.0;                        // B3 decay per day; 0 selects the one-year half-life
  std::vector<std::string> lexicon;           // B3 temporal terms; empty selects the default lexicon
};

/// Canonical column order of the signal table.
std::vector<std::string> signal_columns();

/// How to obtain a column's inputs, for actionable error messages.
std::string signal_hint(const std::string& column);

struct SignalTable {
  std::vector<std::string> question_ids;
  std::vector<std::optional<int>> labels;  // 1 incorrect, 0 correct, empty when unlabeled or ambiguous
  std::map<std::string, std::vector<std::optional<double>>> values;
  std::size_t ambiguous_probes = 0;

  bool has(const std::string& column) const;  // any value present
  const std::vector<std::optional<double>>& column(const std::string& name) const;
  std::size_t labeled() const;
};

SignalTable compute_signals(const store::Run& run, const SignalOptions& options = {});

std::optional<int> label_value(const store::Run& run, const store::QuestionData& q);

/// Per-question similarity for one clustering method. Throws
/// PreconditionError naming the producing command when inputs are missing.
std::vector<clustering::QuestionSimilarity> similarities(const store::Run& run, clustering::Method method);

// ---------------------------------------------------------------------------

struct DiagnoseOptions {
  std::vector<clustering::Method> methods{clustering::Method::Jaccard};
  std::vector<double> thresholds;  // empty: each method's default
  double advisory_scr = 0.05;
};
report::Report diagnose(const store::Run& run, const DiagnoseOptions& options);

struct CompareOptions {
  clustering::Method method = clustering::Method::Jaccard;
  std::optional<double> threshold;
  stats::Alternative alternative = stats::Alternative::Greater;  // run A has more clusters than run B
};
report::Report compare(const store::Run& a, const store::Run& b, const std::string& name_a, const std::string& name_b,
                       const CompareOptions& options);

struct BaselineOptions {
  std::vector<std::string> methods;  // empty: every baseline column present in the run
  stats::BootstrapOptions bootstrap;
  SignalOptions signal;
};
/// Baseline columns in report order.
std::vector<std::string> baseline_columns();
report::Report baselines(const store::Run& run, const BaselineOptions& options);

struct CascadeOptions {
  std::optional<cascade::CascadeSpec> spec;  // empty: every boundary present, cheapest first
  cascade::ThresholdMode mode = cascade::ThresholdMode::Quartiles;
  SignalOptions signal;
};
cascade::CascadeSpec default_cascade_spec(const SignalTable& table);
report::Report cascade_report(const store::Run& run, const CascadeOptions& options);

struct IndependenceOptions {
  std::vector<std::pair<std::string, std::string>> pairs;  // empty: all pairs of boundary columns present
  stats::PermutationOptions permutations;
  SignalOptions signal;
};
report::Report independence(const store::Run& run, const IndependenceOptions& options);

struct CalibrateOptions {
  std::string signal = "b1_mean";
  int folds = 5;
  std::uint64_t seed = 42;
  int bins = 10;
  SignalOptions signal_options;
};
report::Report calibrate(const store::Run& run, const CalibrateOptions& options);

struct PointerOptions {
  int folds = 5;
  std::uint64_t seed = 42;
};
struct PointerResult {
  report::Report report;
  pointer::Model model;
};
PointerResult train_pointer(const store::Run& run, const PointerOptions& options);

/// Per-question signal table as a report.
report::Report signals_report(const store::Run& run, const SignalOptions& options);

}  // namespace scrkit::analysis
