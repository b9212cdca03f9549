#include "scrkit/boundary.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

namespace scrkit::boundary {

namespace {

std::vector<double> unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (!(n > 0.0)) throw PreconditionError("zero-norm embedding");
  for (double& x : v) x /= n;
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw ShapeError("embedding dimensions differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// ASCII word tokens; anything else separates words.
std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '\'' || static_cast<unsigned char>(c) >= 0x80) {
      cur.push_back(c);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

const std::set<std::string>& entity_stopwords() {
  static const std::set<std::string> kWords = {
      "a",     "an",   "and",   "are",    "can",   "could", "did",  "do",    "does",  "how",
      "i",     "in",   "is",    "it",     "of",    "on",    "the",  "was",   "were",  "what",
      "when",  "where", "which", "who",   "whom",  "whose", "why",  "will",  "would", "should",
      "has",   "have", "had",   "if",     "in",    "to",    "at",   "for",   "from",  "by"};
  return kWords;
}

}  // namespace

void EmbeddingPool::add(std::string id, std::vector<double> vec) {
  if (!vectors_.empty() && vec.size() != vectors_.front().size()) {
    throw ShapeError("pool embedding '" + id + "' has dimension " + std::to_string(vec.size()) + ", expected " +
                     std::to_string(vectors_.front().size()));
  }
  ids_.push_back(std::move(id));
  vectors_.push_back(unit(std::move(vec)));
}

DensityScore b2_density(const std::vector<double>& query, const EmbeddingPool& pool, std::size_t k,
                        const std::optional<std::string>& exclude_id) {
  if (k == 0) throw PreconditionError("k must be positive");
  const auto q = unit(query);
  std::vector<std::pair<double, std::size_t>> sims;
  sims.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (exclude_id && pool.id(i) == *exclude_id) continue;
    sims.emplace_back(dot(q, pool.vector(i)), i);
  }
  if (sims.size() < k) {
    throw PreconditionError("density pool has " + std::to_string(sims.size()) + " candidates, fewer than k=" +
                            std::to_string(k));
  }
  auto better = [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; };
  std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(), better);
  DensityScore out;
  out.k = k;
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    total += sims[i].first;
    out.neighbor_ids.push_back(sims[i].second);
  }
  out.rho = std::clamp(total / static_cast<double>(k), -1.0, 1.0);
  return out;
}

FreshnessScore b3_freshness(const store::Date& knowledge_date, const store::Date& query_date, double lambda) {
  if (!(lambda >= 0.0)) throw PreconditionError("decay rate must be non-negative");
  const auto days = (std::chrono::sys_days{query_date} - std::chrono::sys_days{knowledge_date}).count();
  if (days < 0) {
    throw PreconditionError("query date " + store::format_date(query_date) + " precedes knowledge date " +
                            store::format_date(knowledge_date));
  }
  FreshnessScore f;
  f.lambda = lambda;
  f.delta_days = static_cast<long>(days);
  f.freshness = std::exp(-lambda * static_cast<double>(days));
  return f;
}

std::vector<std::string> default_temporal_lexicon() {
  return {"current", "latest", "today", "now", "recent", "this year"};
}

TemporalTrigger b3_trigger(std::string_view query_text, const store::Date& cutoff_date,
                           std::span<const std::string> lexicon) {
  TemporalTrigger t;
  const auto toks = words(lower(query_text));
  for (const auto& term : lexicon) {
    const auto term_toks = words(lower(term));
    if (term_toks.empty() || term_toks.size() > toks.size()) continue;
    for (std::size_t i = 0; i + term_toks.size() <= toks.size(); ++i) {
      if (std::equal(term_toks.begin(), term_toks.end(), toks.begin() + static_cast<std::ptrdiff_t>(i))) {
        t.matched_terms.push_back(term);
        break;
      }
    }
  }
  const int cutoff_year = static_cast<int>(cutoff_date.year());
  for (const auto& w : toks) {
    if (w.size() == 4 && std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isdigit(c); })) {
      if (std::stoi(w) > cutoff_year) t.matched_terms.push_back(w);
    }
  }
  t.triggered = !t.matched_terms.empty();
  return t;
}

TemporalTrigger b3_trigger(std::string_view query_text, const store::Date& cutoff_date) {
  const auto lex = default_temporal_lexicon();
  return b3_trigger(query_text, cutoff_date, lex);
}

RuptureScore b4_rupture(const std::vector<double>& entity_a, const std::vector<double>& entity_b) {
  if (entity_a.size() != entity_b.size()) {
    throw ShapeError("entity embedding dimensions differ: " + std::to_string(entity_a.size()) + " vs " +
                     std::to_string(entity_b.size()));
  }
  const double cos = dot(unit(entity_a), unit(entity_b));
  return {std::clamp(1.0 - cos, 0.0, 2.0), {}};
}

std::optional<std::pair<std::string, std::string>> extract_entity_pair(std::string_view question_text) {
  struct Span {
    std::string text;
    std::size_t order;
  };
  std::vector<Span> spans;
  std::string current;
  auto close = [&] {
    if (!current.empty()) spans.push_back({std::move(current), spans.size()});
    current.clear();
  };
  for (const auto& w : words(question_text)) {
    const bool capital = std::isupper(static_cast<unsigned char>(w.front())) && !entity_stopwords().count(lower(w));
    if (capital) {
      if (!current.empty()) current.push_back(' ');
      current += w;
    } else {
      close();
    }
  }
  close();
  if (spans.size() < 2) return std::nullopt;
  std::stable_sort(spans.begin(), spans.end(),
                   [](const Span& a, const Span& b) { return a.text.size() > b.text.size(); });
  Span first = spans[0], second = spans[1];
  if (second.order < first.order) std::swap(first, second);
  return std::make_pair(first.text, second.text);
}

GroundingScore grounding_from_scores(std::span<const double> reference_scores) {
  if (reference_scores.empty()) throw PreconditionError("grounding needs at least one reference");
  GroundingScore g;
  g.reference_scores.assign(reference_scores.begin(), reference_scores.end());
  for (std::size_t i = 0; i < reference_scores.size(); ++i) {
    if (i == 0 || reference_scores[i] > g.score) {
      g.score = reference_scores[i];
      g.best_reference = i;
    }
  }
  g.score = std::clamp(g.score, 0.0, 1.0);
  return g;
}

GroundingScore b5_grounding(const std::string& answer, std::span<const std::string> references,
                            const EntailmentScorer& scorer, std::size_t max_in_flight) {
  if (references.empty()) throw PreconditionError("grounding needs at least one reference");
  std::vector<double> scores(references.size(), 0.0);
  const std::size_t workers = std::clamp<std::size_t>(max_in_flight, 1, references.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < references.size(); i = next++) {
      try {
        scores[i] = scorer(references[i], answer);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return grounding_from_scores(scores);
}

}  // namespace scrkit::boundary
