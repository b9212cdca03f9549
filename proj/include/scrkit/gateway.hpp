#pragma once

/**
 * Model gateway: HTTP clients for sampling, embedding, entailment and the
 * P(True) probe, with a content-addressed disk cache, retry with
 * exponential backoff and a cap on concurrent requests.
 *
 * Two chat wire shapes are supported: the chat-completions shape
 * (messages, temperature, top_p, max_tokens, seed, logprobs, top_logprobs)
 * and the local-runner generate shape (prompt, options{temperature, top_p,
 * num_predict, seed}, logprobs, top_logprobs). Embeddings use the
 * {"model", "input": [...]} -> {"data": [{"embedding": [...]}]} shape.
 * Entailment accepts any service returning a labeled class distribution.
 *
 * The cache key is SHA-256 over (endpoint URL, model, request body), so a
 * rerun of an identical request never reaches the network. API keys are
 * read from the environment at request time and never enter the cache.
 */

#include "scrkit/store.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace scrkit::gateway {

enum class ChatProtocol { ChatCompletions, Generate };
std::string to_string(ChatProtocol p);
ChatProtocol parse_chat_protocol(const std::string& s);

struct Endpoint {
  std::string url;  // full URL including path
  std::string model;
};

inline constexpr const char* kPtrueTemplateVersion = "ptrue-v1";
inline constexpr const char* kPtrueTemplate =
    "Is the following answer true? Answer True or False.\n\nQuestion: {question}\nAnswer: {answer}";

struct GatewayConfig {
  Endpoint chat{"http://127.0.0.1:11434/v1/chat/completions", ""};
  ChatProtocol protocol = ChatProtocol::ChatCompletions;
  Endpoint embedding{"http://127.0.0.1:11434/v1/embeddings", ""};
  Endpoint entailment{"", ""};
  double timeout_seconds = 120.0;
  int max_retries = 3;
  double backoff_seconds = 0.5;  // first retry delay; doubles per attempt
  int max_in_flight = 4;
  std::filesystem::path cache_dir = ".scrkit-cache";
  bool use_cache = true;
  std::string prompt_prefix;           // e.g. "/no_think " for thinking-mode models
  std::string api_key_env = "SCRKIT_API_KEY";
  int top_k = 10;
  int embed_batch = 32;
  std::uint64_t run_seed = 42;

  /// Throws PreconditionError unless max_in_flight >= 1, timeout > 0,
  /// max_retries >= 0 and top_k in [1, 20].
  void validate() const;
};

/// JSON object with any subset of: chat_url, chat_model, protocol
/// ("chat-completions" | "generate"), embedding_url, embedding_model,
/// entailment_url, entailment_model, timeout_seconds, max_retries,
/// backoff_seconds, max_in_flight, cache_dir, use_cache, prompt_prefix,
/// api_key_env, top_k, embed_batch, run_seed. Unknown keys are a SchemaError.
GatewayConfig parse_gateway_config(const std::string& json_text);
GatewayConfig load_gateway_config(const std::filesystem::path& path);

/// Seed for sample `index` of `question_id`, stable across platforms.
std::int64_t sample_seed(std::uint64_t run_seed, const std::string& question_id, int index);

// ---------------------------------------------------------------------------
// Transport pieces

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// POSTs a JSON body. Throws TransportError when no HTTP response arrives
/// (connection refused, timeout).
using HttpPost = std::function<HttpResponse(const std::string& url, const std::string& body,
                                            const std::vector<std::pair<std::string, std::string>>& headers,
                                            double timeout_seconds)>;

/// cpp-httplib implementation of HttpPost.
HttpResponse http_post(const std::string& url, const std::string& body,
                       const std::vector<std::pair<std::string, std::string>>& headers, double timeout_seconds);

/// Content-addressed response cache: one file per key under dir/<2 hex>/<key>.
class DiskCache {
public:
  explicit DiskCache(std::filesystem::path dir);
  std::optional<std::string> get(const std::string& key) const;
  /// Atomic write (temporary file then rename).
  void put(const std::string& key, const std::string& body) const;
  static std::string key(const std::string& url, const std::string& model, const std::string& body);

private:
  std::filesystem::path dir_;
};

/// Counting semaphore bounding concurrent requests.
class InFlightLimiter {
public:
  explicit InFlightLimiter(int limit);
  void acquire();
  void release();
  int peak() const { return peak_.load(); }

private:
  std::mutex mu_;
  std::condition_variable cv_;
  int limit_;
  int active_ = 0;
  std::atomic<int> peak_{0};
};

struct RequestLog {
  std::string url;
  std::string cache_key;
  int attempts = 0;  // network attempts; 0 on a cache hit
  bool from_cache = false;
  int status = 0;
};

struct GatewayStats {
  std::size_t network_calls = 0;  // HTTP attempts, retries included
  std::size_t cache_hits = 0;
  std::size_t retries = 0;
  std::size_t failures = 0;
};

// ---------------------------------------------------------------------------
// Gateway

class Gateway {
public:
  explicit Gateway(GatewayConfig config, HttpPost post = http_post);

  const GatewayConfig& config() const { return config_; }

  /// One stochastic sample. The decoding's seed is replaced by
  /// sample_seed(run_seed, question_id, index).
  store::ResponseSample sample(const store::QuestionRecord& q, int index, store::Decoding decoding,
                               bool with_logprobs = false);

  /// Greedy decode with top_k alternatives per token. Throws
  /// UnavailableSignalError when the endpoint omits logprobs.
  store::ResponseSample greedy_with_logprobs(const store::QuestionRecord& q, int max_tokens, int top_k);

  /// Unit-normalized embeddings in input order. Uncached unique texts are
  /// sent in batches of embed_batch; each vector is cached per text.
  /// Throws IntegrityError when a dimension differs from earlier ones.
  std::vector<std::vector<double>> embed_texts(const std::vector<std::string>& texts);
  std::optional<std::size_t> embedding_dimension() const;
  void expect_embedding_dimension(std::size_t dim);

  /// P(premise entails hypothesis). Throws SchemaError listing the labels
  /// received when none is "entailment".
  double entailment_score(const std::string& premise, const std::string& hypothesis);

  /// Versioned P(True) probe at temperature 0 with logprobs requested. A
  /// transport failure yields an unavailable probe record.
  store::ProbeRecord ptrue_probe(const store::QuestionRecord& q, const std::string& answer);

  GatewayStats stats() const;
  std::vector<RequestLog> request_log() const;
  int peak_in_flight() const { return limiter_.peak(); }

  /// POST with cache, retry and the in-flight cap; returns the body of a 2xx
  /// response. Non-retryable HTTP errors throw TransportError carrying the
  /// status and body verbatim.
  std::string post(const Endpoint& endpoint, const std::string& body);

private:
  struct ChatResult {
    std::string text;
    std::optional<std::vector<store::TokenLogprob>> logprobs;
  };
  ChatResult chat(const std::string& prompt, const store::Decoding& d, bool logprobs, int top_k);
  std::vector<std::pair<std::string, std::string>> headers() const;
  std::string send(const Endpoint& endpoint, const std::string& body, bool cached);

  GatewayConfig config_;
  HttpPost post_;
  DiskCache cache_;
  InFlightLimiter limiter_;
  mutable std::mutex mu_;
  GatewayStats stats_;
  std::vector<RequestLog> log_;
  std::optional<std::size_t> dim_;
};

/// Pulls the entailment probability out of a labeled distribution: an
/// object {label: p}, an array [{label, score}], or either nested under
/// "labels" / "scores" / "predictions". Label match ignores case.
double parse_entailment_response(const std::string& body);

}  // namespace scrkit::gateway
