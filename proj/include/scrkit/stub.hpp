#pragma once

// Deterministic in-process HTTP server that speaks the gateway's wire
// shapes. Used by the test suite, the end-to-end golden run and the
// `serve-stub` command.
//
// Fixture format: one JSON object per line with
//   question_id, text, answers (list of canned responses), optional
//   entropy (planted per-token entropy level in [0, 1], default 0.5),
//   optional category, gold_answers, timestamp_query.
// Extra fields are ignored, so the same file doubles as a dataset.
//
// Behaviour:
//   chat / generate  stochastic requests pick answers[hash(seed) % size];
//                    greedy requests (temperature 0) return answers[0].
//                    The P(True) probe template is recognised and answered
//                    "True" when the proposed answer overlaps a gold answer.
//   logprobs         one token per whitespace-separated word; the chosen
//                    token carries probability 1 - entropy * (k - 1) / k and
//                    the remaining k - 1 alternatives share the rest.
//   embeddings       hashed character-bigram counts, dimension 64.
//   entailment       word-set Jaccard of premise and hypothesis.

#include "scrkit/store.hpp"

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace scrkit::stub {

struct StubQuestion {
  store::QuestionRecord question;
  std::vector<std::string> answers;
  double entropy = 0.5;
};

std::vector<StubQuestion> read_fixture(const std::filesystem::path& path);

struct StubOptions {
  int fail_first = 0;             // the first K requests answer HTTP 500
  bool logprobs = true;           // false: never emit logprobs
  std::size_t embedding_dim = 64;
  std::optional<double> fixed_entailment;  // overrides the Jaccard scorer
  bool entailment_schema_ok = true;        // false: labels lack "entailment"
  int latency_ms = 0;             // per-request delay, makes overlap observable
};

class StubServer {
public:
  StubServer(std::vector<StubQuestion> questions, StubOptions options = {});
  ~StubServer();
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port.
  /// Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Serves on the calling thread until stop() is called elsewhere.
  void listen(const std::string& host, int port);
  void stop();

  std::string base_url() const;
  int port() const { return port_; }
  std::size_t requests() const { return requests_.load(); }
  int peak_in_flight() const { return peak_.load(); }

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string host_ = "127.0.0.1";
  int port_ = 0;
  std::atomic<std::size_t> requests_{0};
  std::atomic<int> active_{0};
  std::atomic<int> peak_{0};
};

/// The stub's embedding function, exposed so tests can compute expected vectors.
std::vector<double> hashed_bigram_embedding(const std::string& text, std::size_t dim);

/// The stub's entailment score: Jaccard similarity of lower-cased word sets.
double word_jaccard(const std::string& a, const std::string& b);

}  // namespace scrkit::stub
