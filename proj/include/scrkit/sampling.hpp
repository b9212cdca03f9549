#pragma once

// Drives the gateway over a dataset and persists everything to a run file.
//
// Records are appended as each question finishes, in dataset order, so an
// interrupted run keeps all completed work. Rerunning the same command
// reads the existing file and requests only what is missing. When every
// question is done the file is rewritten in canonical order.

#include "scrkit/gateway.hpp"
#include "scrkit/store.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace scrkit::sampling {

struct SamplingOptions {
  int n = 10;
  store::Decoding decoding;     // seed field is ignored; per-sample seeds are derived
  bool greedy = false;          // greedy decode with top-k logprobs
  int greedy_max_tokens = 256;
  bool probe = false;           // P(True) probe on the greedy answer (sample 0 without greedy)
  bool embed = false;           // question, samples, greedy and entity embeddings
  bool entail = false;          // pairwise sample entailment and grounding against gold answers
  std::string run_id;           // derived from the inputs when empty
  std::string dataset_name;
  bool deterministic = false;   // leaves created_at empty
  int workers = 0;              // questions processed concurrently; 0 uses max_in_flight
  /// Called after each question's records are persisted (tests use it to interrupt).
  std::function<void(const std::string& question_id, bool complete)> on_question;
};

struct QuestionFailure {
  std::string question_id;
  std::string message;
};

struct SamplingReport {
  std::size_t questions = 0;
  std::size_t completed = 0;
  std::size_t skipped = 0;       // already complete before this invocation
  std::vector<QuestionFailure> failures;
  gateway::GatewayStats gateway;
  bool partial() const { return !failures.empty(); }
};

/// Thrown from on_question to stop a run early; already persisted work stays.
struct Interrupted : std::exception {
  const char* what() const noexcept override { return "sampling interrupted"; }
};

SamplingReport run_sampling(const std::vector<store::QuestionRecord>& questions, gateway::Gateway& gw,
                            const SamplingOptions& options, const std::filesystem::path& run_file);

}  // namespace scrkit::sampling
