#include "scrkit/signals.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>

namespace scrkit::signals {

namespace {

double plogp_sum(std::span<const double> p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h + 0.0;  // normalize -0.0
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw ShapeError("vector dimensions differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (!(na > 0.0) || !(nb > 0.0)) throw PreconditionError("zero-norm embedding");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

std::string trimmed_lower(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Strips punctuation after lowercasing so "True." and " true" both match.
std::string bare_word(std::string_view s) {
  std::string t = trimmed_lower(s);
  t.erase(std::remove_if(t.begin(), t.end(), [](unsigned char c) { return std::ispunct(c); }), t.end());
  return t;
}

}  // namespace

TokenEntropy token_entropy(std::span<const store::TokenAlternative> alternatives) {
  if (alternatives.empty()) throw PreconditionError("token entropy needs at least one alternative");
  double max_lp = -std::numeric_limits<double>::infinity();
  for (const auto& a : alternatives) {
    if (a.logprob > 0.0) throw PreconditionError("positive logprob for token '" + a.token + "'");
    max_lp = std::max(max_lp, a.logprob);
  }
  if (max_lp == -std::numeric_limits<double>::infinity()) return {0.0, true};
  std::vector<double> p;
  p.reserve(alternatives.size());
  double z = 0.0;
  for (const auto& a : alternatives) {
    p.push_back(std::exp(a.logprob - max_lp));
    z += p.back();
  }
  for (double& x : p) x /= z;
  return {plogp_sum(p), false};
}

std::vector<double> token_entropies(const store::ResponseSample& sample) {
  if (!sample.token_logprobs) {
    throw UnavailableSignalError("sample " + std::to_string(sample.sample_index) + " of question '" +
                                 sample.question_id + "' has no token logprobs");
  }
  std::vector<double> h;
  h.reserve(sample.token_logprobs->size());
  for (const auto& tok : *sample.token_logprobs) h.push_back(token_entropy(tok.top_alternatives).value);
  return h;
}

EntropyFeatures entropy_features(std::span<const double> per_token, double run_median) {
  EntropyFeatures f;
  f.per_token.assign(per_token.begin(), per_token.end());
  f.token_count = per_token.size();
  if (per_token.empty()) return f;
  const double n = static_cast<double>(per_token.size());
  f.mean = std::accumulate(per_token.begin(), per_token.end(), 0.0) / n;
  auto [mn, mx] = std::minmax_element(per_token.begin(), per_token.end());
  f.min = *mn;
  f.max = *mx;
  double ss = 0.0;
  std::size_t above = 0;
  for (double h : per_token) {
    ss += (h - f.mean) * (h - f.mean);
    if (h > run_median) ++above;
  }
  f.std = *mn == *mx ? 0.0 : std::sqrt(ss / n);
  // Rounding in the mean can nudge it outside [min, max] for near-constant input.
  f.mean = std::clamp(f.mean, f.min, f.max);
  f.hi_ratio = static_cast<double>(above) / n;
  f.first_token = per_token.front();
  const std::size_t quarter = std::max<std::size_t>(1, (per_token.size() + 3) / 4);
  f.last_quartile_mean =
      std::accumulate(per_token.end() - static_cast<std::ptrdiff_t>(quarter), per_token.end(), 0.0) /
      static_cast<double>(quarter);
  return f;
}

EntropyFeatures entropy_features(const store::ResponseSample& sample, double run_median) {
  if (!sample.token_logprobs) {
    throw UnavailableSignalError("sample " + std::to_string(sample.sample_index) + " of question '" +
                                 sample.question_id + "' has no token logprobs");
  }
  std::vector<double> h;
  bool underflow = false;
  for (const auto& tok : *sample.token_logprobs) {
    auto te = token_entropy(tok.top_alternatives);
    h.push_back(te.value);
    underflow = underflow || te.underflow;
  }
  auto f = entropy_features(h, run_median);
  f.any_underflow = underflow;
  return f;
}

double run_median_entropy(const store::Run& run) {
  std::vector<double> all;
  for (const auto& [qid, q] : run.questions) {
    const auto* g = run.greedy(q);
    if (g == nullptr || !g->token_logprobs) continue;
    for (const auto& tok : *g->token_logprobs) all.push_back(token_entropy(tok.top_alternatives).value);
  }
  if (all.empty()) return 0.0;
  const std::size_t mid = all.size() / 2;
  std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(mid), all.end());
  const double upper = all[mid];
  if (all.size() % 2 == 1) return upper;
  const double lower = *std::max_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

SemanticEntropyScore semantic_entropy(const clustering::ClusterAssignment& assignment) {
  if (assignment.labels.empty() || assignment.num_clusters < 1)
    throw PreconditionError("semantic entropy of an empty assignment");
  SemanticEntropyScore s;
  s.m = assignment.num_clusters;
  const double n = static_cast<double>(assignment.n());
  for (int size : assignment.sizes()) s.proportions.push_back(size / n);
  s.se = s.m == 1 ? 0.0 : plogp_sum(s.proportions);
  return s;
}

clustering::ClusterAssignment greedy_single_pass(std::span<const std::vector<double>> embeddings,
                                                 double similarity) {
  clustering::ClusterAssignment a;
  a.method = clustering::Method::Embedding;
  a.threshold = similarity;
  std::vector<std::size_t> leaders;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    int cluster = -1;
    for (std::size_t c = 0; c < leaders.size(); ++c) {
      if (cosine(embeddings[leaders[c]], embeddings[i]) >= similarity) {
        cluster = static_cast<int>(c);
        break;
      }
    }
    if (cluster < 0) {
      cluster = static_cast<int>(leaders.size());
      leaders.push_back(i);
    }
    a.labels.push_back(cluster);
  }
  a.num_clusters = static_cast<int>(leaders.size());
  return a;
}

double sindex_score(const clustering::ClusterAssignment& assignment,
                    std::span<const std::vector<double>> embeddings) {
  if (embeddings.size() != assignment.n()) {
    throw ShapeError("assignment covers " + std::to_string(assignment.n()) + " samples but " +
                     std::to_string(embeddings.size()) + " embeddings were given");
  }
  const double n = static_cast<double>(assignment.n());
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(assignment.num_clusters));
  for (std::size_t i = 0; i < assignment.labels.size(); ++i)
    members[static_cast<std::size_t>(assignment.labels[i])].push_back(i);

  double h = 0.0;
  for (const auto& c : members) {
    double coherence = 1.0;
    if (c.size() > 1) {
      double sum = 0.0;
      std::size_t pairs = 0;
      for (std::size_t a = 0; a < c.size(); ++a)
        for (std::size_t b = a + 1; b < c.size(); ++b, ++pairs) sum += cosine(embeddings[c[a]], embeddings[c[b]]);
      coherence = sum / static_cast<double>(pairs);
    }
    const double p = static_cast<double>(c.size()) / n * coherence;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h + 0.0;
}

double sindex(std::span<const std::vector<double>> embeddings) {
  return sindex_score(greedy_single_pass(embeddings), embeddings);
}

AlignmentTax alignment_tax(int clusters, int samples) {
  if (samples < 1 || clusters < 1 || clusters > samples)
    throw PreconditionError("alignment tax needs 1 <= clusters <= samples");
  return {clusters, samples, 1.0 - static_cast<double>(clusters) / static_cast<double>(samples)};
}

AlignmentTax alignment_tax(const clustering::ClusterAssignment& assignment) {
  return alignment_tax(assignment.num_clusters, static_cast<int>(assignment.n()));
}

SelfCheckScore selfcheck_score(const std::vector<double>& greedy_embedding,
                               std::span<const std::vector<double>> sample_embeddings) {
  if (sample_embeddings.empty()) throw PreconditionError("SelfCheck needs at least one sample embedding");
  double total = 0.0;
  for (const auto& s : sample_embeddings) total += cosine(greedy_embedding, s);
  const double k = static_cast<double>(sample_embeddings.size());
  return {std::clamp(1.0 - total / k, 0.0, 2.0), sample_embeddings.size()};
}

PTrue ptrue_score(std::string_view response_text,
                  const std::optional<std::vector<store::TokenLogprob>>& token_logprobs) {
  if (token_logprobs) {
    for (const auto& tok : *token_logprobs) {
      double p_true = 0.0, p_false = 0.0;
      bool seen = false;
      for (const auto& alt : tok.top_alternatives) {
        const std::string w = bare_word(alt.token);
        if (w == "true") {
          p_true += std::exp(alt.logprob);
          seen = true;
        } else if (w == "false") {
          p_false += std::exp(alt.logprob);
          seen = true;
        }
      }
      if (seen && p_true + p_false > 0.0) return {p_true / (p_true + p_false), true};
    }
  }
  const std::string w = bare_word(response_text);
  if (w.rfind("true", 0) == 0) return {1.0, false};
  if (w.rfind("false", 0) == 0) return {0.0, false};
  throw AmbiguousProbeError("cannot read True/False from probe response '" + std::string(response_text) + "'");
}

PTrue ptrue_score(const store::ProbeRecord& probe) {
  if (!probe.available) throw UnavailableSignalError("probe unavailable for question '" + probe.question_id + "'");
  return ptrue_score(probe.text, probe.token_logprobs);
}

}  // namespace scrkit::signals
