#pragma once

/**
 * Single-model uncertainty signals.
 *
 * All entropies are in nats. Token entropy renormalizes over the k
 * alternatives the endpoint returned, so it is a lower bound on the
 * full-vocabulary entropy.
 */

#include "scrkit/clustering.hpp"
#include "scrkit/store.hpp"

#include <optional>
#include <span>
#include <vector>

namespace scrkit::signals {

inline constexpr double kSindexSimilarity = 0.95;

struct TokenEntropy {
  double value = 0.0;
  bool underflow = false;  // every alternative had probability zero
};

/// -sum p ln p over the alternatives after exponentiating and renormalizing.
/// Throws PreconditionError on an empty list or a positive logprob.
TokenEntropy token_entropy(std::span<const store::TokenAlternative> alternatives);

struct EntropyFeatures {
  std::vector<double> per_token;
  double mean = 0.0;
  double max = 0.0;
  double min = 0.0;
  double std = 0.0;        // population standard deviation
  double hi_ratio = 0.0;   // fraction of tokens strictly above the run median
  std::size_t token_count = 0;
  // The two configurable extras used to fill the pointer model's seven
  // entropy statistics.
  double first_token = 0.0;
  double last_quartile_mean = 0.0;
  bool any_underflow = false;
};

/// Token entropies for every position of a sample. Throws
/// UnavailableSignalError when the sample has no logprobs.
std::vector<double> token_entropies(const store::ResponseSample& sample);

EntropyFeatures entropy_features(std::span<const double> per_token, double run_median);
EntropyFeatures entropy_features(const store::ResponseSample& sample, double run_median);

/// Median token entropy over every greedy sample with logprobs in the run.
/// Returns 0 when the run has no token entropies.
double run_median_entropy(const store::Run& run);

struct SemanticEntropyScore {
  double se = 0.0;
  std::vector<double> proportions;
  int m = 0;
};

SemanticEntropyScore semantic_entropy(const clustering::ClusterAssignment& assignment);

/// Leader clustering: each vector joins the first cluster whose leader has
/// cosine >= `similarity`, else opens a new cluster.
clustering::ClusterAssignment greedy_single_pass(std::span<const std::vector<double>> embeddings,
                                                 double similarity = kSindexSimilarity);

/// -sum p'_i ln p'_i with p'_i = p_i * mean intra-cluster cosine (singleton
/// coherence 1). Not renormalized.
double sindex_score(const clustering::ClusterAssignment& assignment,
                    std::span<const std::vector<double>> embeddings);

/// Greedy single-pass clustering at kSindexSimilarity followed by sindex_score.
double sindex(std::span<const std::vector<double>> embeddings);

struct AlignmentTax {
  int clusters = 0;
  int samples = 0;
  double value = 0.0;  // 1 - clusters / samples
};

AlignmentTax alignment_tax(const clustering::ClusterAssignment& assignment);
AlignmentTax alignment_tax(int clusters, int samples);

struct SelfCheckScore {
  double score = 0.0;
  std::size_t k = 0;
};

/// 1 - mean cosine(greedy, sample_i). Throws PreconditionError when k = 0.
SelfCheckScore selfcheck_score(const std::vector<double>& greedy_embedding,
                               std::span<const std::vector<double>> sample_embeddings);

struct PTrue {
  double p_true = 0.0;
  bool from_logprobs = false;
  double uncertainty() const { return 1.0 - p_true; }
};

/// P("True") from the probe's logprobs (renormalized over the True/False
/// alternatives at the first position offering either), else by string
/// match on the response text. Throws AmbiguousProbeError otherwise.
PTrue ptrue_score(std::string_view response_text,
                  const std::optional<std::vector<store::TokenLogprob>>& token_logprobs);
PTrue ptrue_score(const store::ProbeRecord& probe);

}  // namespace scrkit::signals
