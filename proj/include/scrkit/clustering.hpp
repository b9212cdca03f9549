#pragma once

/**
 * Response clustering and homogenization statistics.
 *
 * Three clusterers partition one question's N responses:
 *   - Jaccard: character-bigram Jaccard similarity, single-linkage union-find.
 *   - Embedding: average-linkage agglomerative merging on cosine similarity.
 *   - Entailment: union-find over bidirectional entailment scores.
 *
 * Cluster ids are renumbered by first occurrence, so two assignments of the
 * same partition compare equal label-for-label only when the sample order
 * matches; use same_partition() otherwise.
 *
 * Agglomerative ties (average similarities within kTieEpsilon) are broken by
 * merging the pair with the lexicographically smallest (id_a, id_b), where a
 * cluster's id is its smallest sample index.
 */

#include "scrkit/errors.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scrkit::clustering {

inline constexpr double kDefaultJaccardThreshold = 0.4;
inline constexpr double kDefaultEmbeddingThreshold = 0.85;
inline constexpr double kDefaultEntailmentThreshold = 0.5;
inline constexpr double kTieEpsilon = 1e-12;

enum class Method { Jaccard, Embedding, Entailment };

std::string to_string(Method m);
Method parse_method(const std::string& s);

/// Sorted, unique character bigrams, each packed as (first << 32) | second.
struct BigramSet {
  std::vector<std::uint64_t> codes;
  std::size_t size() const { return codes.size(); }
  bool empty() const { return codes.empty(); }
  bool operator==(const BigramSet&) const = default;
};

/// Dense symmetric N x N similarity matrix, row-major.
class SimilarityMatrix {
public:
  SimilarityMatrix() = default;
  explicit SimilarityMatrix(std::size_t n, double fill = 0.0) : n_(n), data_(n * n, fill) {}

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }

private:
  std::size_t n_ = 0;
  std::vector<double> data_;
};

struct ClusterAssignment {
  std::string question_id;
  Method method = Method::Jaccard;
  double threshold = 0.0;
  std::vector<int> labels;  // sample_index -> cluster id in 0..m-1
  int num_clusters = 0;

  std::size_t n() const { return labels.size(); }
  /// Cluster sizes indexed by cluster id.
  std::vector<int> sizes() const;
};

/// True iff the two label vectors induce the same partition.
bool same_partition(std::span<const int> a, std::span<const int> b);

/// Renumber arbitrary cluster keys to 0..m-1 in order of first occurrence.
std::vector<int> canonical_labels(std::span<const int> raw);

BigramSet char_bigrams(std::string_view text);

/// |a ∩ b| / |a ∪ b|; two empty sets are identical (1.0).
double jaccard_similarity(const BigramSet& a, const BigramSet& b);

SimilarityMatrix jaccard_matrix(std::span<const std::string> responses);

/// Cosine similarities; vectors are L2-normalized first. Throws ShapeError on
/// ragged dimensions and PreconditionError on a zero vector.
SimilarityMatrix cosine_matrix(std::span<const std::vector<double>> embeddings);

enum class EntailmentAggregation { Min, Mean };

/// Symmetric pair scores from directional P(i => j). Throws ShapeError when
/// not square.
SimilarityMatrix entailment_pair_scores(const std::vector<std::vector<double>>& directional,
                                        EntailmentAggregation agg = EntailmentAggregation::Min);

/// Single-linkage union-find: i and j join when min(s(i,j), s(j,i)) >= threshold.
std::vector<int> union_find_partition(const SimilarityMatrix& sim, double threshold);

/// Average-linkage agglomerative partition on a similarity matrix.
std::vector<int> average_linkage_partition(const SimilarityMatrix& sim, double threshold);

ClusterAssignment cluster_jaccard(std::span<const std::string> responses,
                                  double tau = kDefaultJaccardThreshold);

ClusterAssignment cluster_agglomerative(std::span<const std::vector<double>> embeddings,
                                        double tau = kDefaultEmbeddingThreshold);

/// `pair_scores` holds already-aggregated bidirectional scores in [0,1].
ClusterAssignment cluster_entailment(const std::vector<std::vector<double>>& pair_scores,
                                     double tau = kDefaultEntailmentThreshold);

struct HomogenizationStats {
  std::size_t questions = 0;
  double scr = 0.0;      // fraction with m == 1
  double mean_nc = 0.0;  // mean m
  std::map<int, std::size_t> histogram;  // m -> question count
};

/// Throws PreconditionError on an empty input.
HomogenizationStats homogenization_stats(std::span<const ClusterAssignment> assignments);

/// Per-question similarity matrix with the method that produced it, so that
/// threshold sweeps reuse pairwise work.
struct QuestionSimilarity {
  std::string question_id;
  Method method = Method::Jaccard;
  SimilarityMatrix sim;
};

ClusterAssignment cluster_from_similarity(const QuestionSimilarity& qs, double threshold);

struct SweepRow {
  double threshold = 0.0;
  HomogenizationStats stats;
  std::vector<ClusterAssignment> assignments;
};

/// Thresholds must be sorted ascending (PreconditionError otherwise).
std::vector<SweepRow> threshold_sweep(std::span<const QuestionSimilarity> questions,
                                      std::span<const double> thresholds);

}  // namespace scrkit::clustering
