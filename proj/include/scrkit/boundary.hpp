#pragma once

/**
 * Boundary scores beyond token entropy.
 *
 *   B2 density    mean cosine similarity to the k nearest pool embeddings
 *   B3 freshness  exp(-lambda * days) plus a temporal-entity trigger
 *   B4 rupture    cosine distance between two entity embeddings
 *   B5 grounding  max entailment of the answer by any reference (oracle mode:
 *                 references are gold answers, unavailable in deployment)
 *
 * B4's ideal form scores a missing knowledge-graph link (e1, r, e2) whose
 * completion probability exceeds a threshold; no graph or relation model is
 * implemented, only the embedding-distance proxy.
 */

#include "scrkit/store.hpp"

#include <functional>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace scrkit::boundary {

struct DensityScore {
  double rho = 0.0;
  std::size_t k = 0;
  std::vector<std::size_t> neighbor_ids;  // pool indices, most similar first
};

/// Unit-normalized embeddings with caller-supplied ids.
class EmbeddingPool {
public:
  void add(std::string id, std::vector<double> vec);
  std::size_t size() const { return ids_.size(); }
  std::size_t dimension() const { return vectors_.empty() ? 0 : vectors_.front().size(); }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  const std::vector<double>& vector(std::size_t i) const { return vectors_[i]; }

private:
  std::vector<std::string> ids_;
  std::vector<std::vector<double>> vectors_;
};

/// Exact brute-force k-NN by cosine. Pool entries whose id equals
/// `exclude_id` are skipped. Similarity ties go to the lower pool index.
DensityScore b2_density(const std::vector<double>& query, const EmbeddingPool& pool, std::size_t k,
                        const std::optional<std::string>& exclude_id = std::nullopt);

struct FreshnessScore {
  double freshness = 1.0;
  double lambda = 0.0;
  long delta_days = 0;
  bool triggered = false;
  std::vector<std::string> matched_terms;
};

inline constexpr double kDefaultLambda = std::numbers::ln2 / 365.0;  // one-year half-life

FreshnessScore b3_freshness(const store::Date& knowledge_date, const store::Date& query_date, double lambda);

struct TemporalTrigger {
  bool triggered = false;
  std::vector<std::string> matched_terms;
};

std::vector<std::string> default_temporal_lexicon();

/// Fires on any lexicon term (whole words, case-insensitive) or a four-digit
/// year later than the cutoff's year.
TemporalTrigger b3_trigger(std::string_view query_text, const store::Date& cutoff_date,
                           std::span<const std::string> lexicon);
TemporalTrigger b3_trigger(std::string_view query_text, const store::Date& cutoff_date);

struct RuptureScore {
  double score = 0.0;
  std::pair<std::string, std::string> entity_pair;
};

RuptureScore b4_rupture(const std::vector<double>& entity_a, const std::vector<double>& entity_b);

/// Two longest capitalized spans (in sentence order); nullopt if fewer than two.
std::optional<std::pair<std::string, std::string>> extract_entity_pair(std::string_view question_text);

/// Returns P(premise entails hypothesis) in [0,1]; may throw TransportError.
using EntailmentScorer = std::function<double(const std::string& premise, const std::string& hypothesis)>;

struct GroundingScore {
  double score = 0.0;
  std::size_t best_reference = 0;
  std::vector<double> reference_scores;
  double uncertainty() const { return 1.0 - score; }
};

/// Builds the score from already-computed per-reference entailment probabilities.
GroundingScore grounding_from_scores(std::span<const double> reference_scores);

/// Scores every reference as premise against the answer as hypothesis with at
/// most `max_in_flight` concurrent scorer calls.
GroundingScore b5_grounding(const std::string& answer, std::span<const std::string> references,
                            const EntailmentScorer& scorer, std::size_t max_in_flight = 1);

}  // namespace scrkit::boundary
