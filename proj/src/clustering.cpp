#include "scrkit/clustering.hpp"

#include "scrkit/text.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace scrkit::clustering {

std::string to_string(Method m) {
  switch (m) {
    case Method::Jaccard: return "jaccard";
    case Method::Embedding: return "embedding";
    case Method::Entailment: return "entailment";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "jaccard") return Method::Jaccard;
  if (s == "embedding") return Method::Embedding;
  if (s == "entailment") return Method::Entailment;
  throw std::invalid_argument("unknown clustering method '" + s + "'");
}

std::vector<int> ClusterAssignment::sizes() const {
  std::vector<int> out(static_cast<std::size_t>(num_clusters), 0);
  for (int l : labels) ++out.at(static_cast<std::size_t>(l));
  return out;
}

std::vector<int> canonical_labels(std::span<const int> raw) {
  std::unordered_map<int, int> remap;
  std::vector<int> out;
  out.reserve(raw.size());
  for (int r : raw) {
    auto [it, inserted] = remap.emplace(r, static_cast<int>(remap.size()));
    out.push_back(it->second);
  }
  return out;
}

bool same_partition(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) return false;
  std::unordered_map<int, int> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [x, nx] = ab.emplace(a[i], b[i]);
    auto [y, ny] = ba.emplace(b[i], a[i]);
    if (x->second != b[i] || y->second != a[i]) return false;
  }
  return true;
}

BigramSet char_bigrams(std::string_view text) {
  const std::u32string cps = text::normalize_for_comparison(text);
  BigramSet out;
  if (cps.size() < 2) return out;
  out.codes.reserve(cps.size() - 1);
  for (std::size_t i = 0; i + 1 < cps.size(); ++i) {
    out.codes.push_back((static_cast<std::uint64_t>(cps[i]) << 32) | static_cast<std::uint64_t>(cps[i + 1]));
  }
  std::sort(out.codes.begin(), out.codes.end());
  out.codes.erase(std::unique(out.codes.begin(), out.codes.end()), out.codes.end());
  return out;
}

double jaccard_similarity(const BigramSet& a, const BigramSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  auto i = a.codes.begin();
  auto j = b.codes.begin();
  while (i != a.codes.end() && j != b.codes.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++inter;
      ++i;
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

SimilarityMatrix jaccard_matrix(std::span<const std::string> responses) {
  std::vector<BigramSet> sets;
  sets.reserve(responses.size());
  for (const auto& r : responses) sets.push_back(char_bigrams(r));
  SimilarityMatrix sim(responses.size(), 1.0);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (std::size_t j = i + 1; j < sets.size(); ++j) {
      sim(i, j) = sim(j, i) = jaccard_similarity(sets[i], sets[j]);
    }
  }
  return sim;
}

SimilarityMatrix cosine_matrix(std::span<const std::vector<double>> embeddings) {
  const std::size_t n = embeddings.size();
  std::vector<std::vector<double>> unit(embeddings.begin(), embeddings.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (unit[i].size() != unit[0].size()) {
      throw ShapeError("embedding " + std::to_string(i) + " has dimension " + std::to_string(unit[i].size()) +
                       ", expected " + std::to_string(unit[0].size()));
    }
    double norm = 0.0;
    for (double x : unit[i]) norm += x * x;
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) throw PreconditionError("embedding " + std::to_string(i) + " has zero norm");
    for (double& x : unit[i]) x /= norm;
  }
  SimilarityMatrix sim(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < unit[i].size(); ++d) dot += unit[i][d] * unit[j][d];
      sim(i, j) = sim(j, i) = std::clamp(dot, -1.0, 1.0);
    }
  }
  return sim;
}

SimilarityMatrix entailment_pair_scores(const std::vector<std::vector<double>>& directional,
                                        EntailmentAggregation agg) {
  const std::size_t n = directional.size();
  for (const auto& row : directional) {
    if (row.size() != n) {
      throw ShapeError("entailment matrix is not square: " + std::to_string(n) + " rows, row of length " +
                       std::to_string(row.size()));
    }
  }
  SimilarityMatrix sim(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double a = directional[i][j];
      const double b = directional[j][i];
      sim(i, j) = sim(j, i) = agg == EntailmentAggregation::Min ? std::min(a, b) : 0.5 * (a + b);
    }
  }
  return sim;
}

namespace {

class DisjointSets {
public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

private:
  std::vector<std::size_t> parent_;
};

ClusterAssignment make_assignment(Method method, double threshold, std::vector<int> labels) {
  ClusterAssignment a;
  a.method = method;
  a.threshold = threshold;
  a.labels = std::move(labels);
  a.num_clusters = a.labels.empty() ? 0 : *std::max_element(a.labels.begin(), a.labels.end()) + 1;
  return a;
}

}  // namespace

std::vector<int> union_find_partition(const SimilarityMatrix& sim, double threshold) {
  const std::size_t n = sim.size();
  DisjointSets ds(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::min(sim(i, j), sim(j, i)) >= threshold) ds.unite(i, j);
    }
  }
  std::vector<int> raw(n);
  for (std::size_t i = 0; i < n; ++i) raw[i] = static_cast<int>(ds.find(i));
  return canonical_labels(raw);
}

std::vector<int> average_linkage_partition(const SimilarityMatrix& sim, double threshold) {
  const std::size_t n = sim.size();
  // Cluster c is alive while size[c] > 0; its id is its smallest member,
  // which is c itself because merges always fold the larger id into the smaller.
  std::vector<std::size_t> size(n, 1);
  std::vector<int> owner(n);
  std::iota(owner.begin(), owner.end(), 0);
  // Sum of pairwise similarities between live clusters (Lance-Williams for
  // average linkage keeps sums additive).
  std::vector<double> link(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) link[i * n + j] = sim(i, j);

  while (true) {
    auto average = [&](std::size_t i, std::size_t j) {
      return link[i * n + j] / static_cast<double>(size[i] * size[j]);
    };
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (size[i] == 0) continue;
      for (std::size_t j = i + 1; j < n; ++j)
        if (size[j] != 0) best = std::max(best, average(i, j));
    }
    if (best == -std::numeric_limits<double>::infinity() || best < threshold) break;
    // Lexicographically first pair within the tie tolerance of the maximum.
    std::size_t bi = n, bj = n;
    for (std::size_t i = 0; i < n && bi == n; ++i) {
      if (size[i] == 0) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (size[j] != 0 && average(i, j) >= best - kTieEpsilon) {
          bi = i;
          bj = j;
          break;
        }
      }
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (size[k] == 0 || k == bi || k == bj) continue;
      link[bi * n + k] += link[bj * n + k];
      link[k * n + bi] = link[bi * n + k];
    }
    size[bi] += size[bj];
    size[bj] = 0;
    for (auto& o : owner)
      if (o == static_cast<int>(bj)) o = static_cast<int>(bi);
  }
  return canonical_labels(owner);
}

ClusterAssignment cluster_jaccard(std::span<const std::string> responses, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw PreconditionError("Jaccard threshold must lie in (0, 1]");
  if (responses.empty()) throw PreconditionError("no responses to cluster");
  return make_assignment(Method::Jaccard, tau, union_find_partition(jaccard_matrix(responses), tau));
}

ClusterAssignment cluster_agglomerative(std::span<const std::vector<double>> embeddings, double tau) {
  if (!(tau > -1.0 && tau < 1.0)) throw PreconditionError("cosine threshold must lie in (-1, 1)");
  if (embeddings.empty()) throw PreconditionError("no embeddings to cluster");
  return make_assignment(Method::Embedding, tau, average_linkage_partition(cosine_matrix(embeddings), tau));
}

ClusterAssignment cluster_entailment(const std::vector<std::vector<double>>& pair_scores, double tau) {
  const std::size_t n = pair_scores.size();
  if (n == 0) throw PreconditionError("empty entailment matrix");
  SimilarityMatrix sim(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (pair_scores[i].size() != n) throw ShapeError("entailment score matrix is not square");
    for (std::size_t j = 0; j < n; ++j) {
      const double p = pair_scores[i][j];
      if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError("entailment score outside [0, 1]");
      sim(i, j) = p;
    }
  }
  return make_assignment(Method::Entailment, tau, union_find_partition(sim, tau));
}

HomogenizationStats homogenization_stats(std::span<const ClusterAssignment> assignments) {
  if (assignments.empty()) throw PreconditionError("homogenization stats need at least one question");
  HomogenizationStats s;
  s.questions = assignments.size();
  std::size_t single = 0;
  double total = 0.0;
  for (const auto& a : assignments) {
    if (a.num_clusters == 1) ++single;
    total += a.num_clusters;
    ++s.histogram[a.num_clusters];
  }
  s.scr = static_cast<double>(single) / static_cast<double>(s.questions);
  s.mean_nc = total / static_cast<double>(s.questions);
  return s;
}

ClusterAssignment cluster_from_similarity(const QuestionSimilarity& qs, double threshold) {
  auto labels = qs.method == Method::Embedding ? average_linkage_partition(qs.sim, threshold)
                                               : union_find_partition(qs.sim, threshold);
  auto a = make_assignment(qs.method, threshold, std::move(labels));
  a.question_id = qs.question_id;
  return a;
}

std::vector<SweepRow> threshold_sweep(std::span<const QuestionSimilarity> questions,
                                      std::span<const double> thresholds) {
  if (!std::is_sorted(thresholds.begin(), thresholds.end()))
    throw PreconditionError("sweep thresholds must be sorted ascending");
  std::vector<SweepRow> rows;
  rows.reserve(thresholds.size());
  for (double t : thresholds) {
    SweepRow row;
    row.threshold = t;
    row.assignments.reserve(questions.size());
    for (const auto& q : questions) row.assignments.push_back(cluster_from_similarity(q, t));
    row.stats = homogenization_stats(row.assignments);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace scrkit::clustering
