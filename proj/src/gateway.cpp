#include "scrkit/gateway.hpp"

#include "scrkit/text.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace scrkit::gateway {

using nlohmann::json;
using text::nfc;
using text::sha256_hex;
using text::stable_hash64;

std::string to_string(ChatProtocol p) {
  return p == ChatProtocol::ChatCompletions ? "chat-completions" : "generate";
}

ChatProtocol parse_chat_protocol(const std::string& s) {
  if (s == "chat-completions") return ChatProtocol::ChatCompletions;
  if (s == "generate") return ChatProtocol::Generate;
  throw SchemaError("unknown chat protocol '" + s + "' (expected chat-completions or generate)");
}

void GatewayConfig::validate() const {
  if (max_in_flight < 1) throw PreconditionError("max_in_flight must be at least 1");
  if (!(timeout_seconds > 0.0)) throw PreconditionError("timeout_seconds must be positive");
  if (max_retries < 0) throw PreconditionError("max_retries must be non-negative");
  if (backoff_seconds < 0.0) throw PreconditionError("backoff_seconds must be non-negative");
  if (top_k < 1 || top_k > static_cast<int>(store::kMaxAlternatives)) {
    throw PreconditionError("top_k must lie in [1, " + std::to_string(store::kMaxAlternatives) + "]");
  }
  if (embed_batch < 1) throw PreconditionError("embed_batch must be at least 1");
}

GatewayConfig parse_gateway_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("gateway config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw SchemaError("gateway config must be a JSON object");
  GatewayConfig c;
  static const std::set<std::string> kKeys = {
      "chat_url",       "chat_model",   "protocol",      "embedding_url", "embedding_model", "entailment_url",
      "entailment_model", "timeout_seconds", "max_retries", "backoff_seconds", "max_in_flight", "cache_dir",
      "use_cache",      "prompt_prefix", "api_key_env",  "top_k",         "embed_batch",     "run_seed"};
  for (const auto& [k, v] : j.items()) {
    if (!kKeys.count(k)) throw SchemaError("unknown gateway config key '" + k + "'");
  }
  try {
    c.chat.url = j.value("chat_url", c.chat.url);
    c.chat.model = j.value("chat_model", c.chat.model);
    if (j.contains("protocol")) c.protocol = parse_chat_protocol(j.at("protocol").get<std::string>());
    c.embedding.url = j.value("embedding_url", c.embedding.url);
    c.embedding.model = j.value("embedding_model", c.embedding.model);
    c.entailment.url = j.value("entailment_url", c.entailment.url);
    c.entailment.model = j.value("entailment_model", c.entailment.model);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.backoff_seconds = j.value("backoff_seconds", c.backoff_seconds);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.cache_dir = j.value("cache_dir", c.cache_dir.string());
    c.use_cache = j.value("use_cache", c.use_cache);
    c.prompt_prefix = j.value("prompt_prefix", c.prompt_prefix);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.top_k = j.value("top_k", c.top_k);
    c.embed_batch = j.value("embed_batch", c.embed_batch);
    c.run_seed = j.value("run_seed", c.run_seed);
  } catch (const json::type_error& e) {
    throw SchemaError(std::string("gateway config has a field of the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

GatewayConfig load_gateway_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("cannot open gateway config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_gateway_config(ss.str());
}

std::int64_t sample_seed(std::uint64_t run_seed, const std::string& question_id, int index) {
  const std::uint64_t h =
      stable_hash64(std::to_string(run_seed) + '\x1f' + question_id + '\x1f' + std::to_string(index));
  // Keep seeds positive and within 31 bits; several servers reject larger values.
  return static_cast<std::int64_t>(h & 0x7fffffffULL);
}

// ---------------------------------------------------------------------------
// Transport

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw PreconditionError("URL '" + url + "' lacks a scheme");
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

HttpResponse http_post(const std::string& url, const std::string& body,
                       const std::vector<std::pair<std::string, std::string>>& headers, double timeout_seconds) {
  const auto parts = split_url(url);
  httplib::Client client(parts.origin);
  const auto secs = static_cast<time_t>(timeout_seconds);
  const auto usecs = static_cast<time_t>((timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);
  auto res = client.Post(parts.path, h, body, "application/json");
  if (!res) throw TransportError("POST " + url + " failed: " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

DiskCache::DiskCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::string DiskCache::key(const std::string& url, const std::string& model, const std::string& body) {
  return sha256_hex(url + '\x1f' + model + '\x1f' + body);
}

std::optional<std::string> DiskCache::get(const std::string& key) const {
  std::ifstream in(dir_ / key.substr(0, 2) / (key + ".json"), std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void DiskCache::put(const std::string& key, const std::string& body) const {
  const auto sub = dir_ / key.substr(0, 2);
  std::filesystem::create_directories(sub);
  static std::atomic<std::uint64_t> counter{0};
  const auto tmp = sub / (key + ".tmp" + std::to_string(counter.fetch_add(1)) + "." +
                          std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())));
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw PreconditionError("cannot write cache file " + tmp.string());
    out << body;
  }
  std::filesystem::rename(tmp, sub / (key + ".json"));
}

InFlightLimiter::InFlightLimiter(int limit) : limit_(limit) {
  if (limit < 1) throw PreconditionError("in-flight limit must be at least 1");
}

void InFlightLimiter::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return active_ < limit_; });
  ++active_;
  int seen = peak_.load();
  while (active_ > seen && !peak_.compare_exchange_weak(seen, active_)) {
  }
}

void InFlightLimiter::release() {
  {
    std::lock_guard lock(mu_);
    --active_;
  }
  cv_.notify_one();
}

// ---------------------------------------------------------------------------
// Response parsing

namespace {

double logprob_value(const json& v) {
  if (v.is_null()) return -std::numeric_limits<double>::infinity();
  if (!v.is_number()) throw SchemaError("logprob must be a number or null");
  const double lp = v.get<double>();
  // Servers occasionally emit tiny positive values from rounding.
  return lp > 0.0 && lp < 1e-6 ? 0.0 : lp;
}

std::vector<store::TokenLogprob> parse_token_list(const json& list, int top_k) {
  std::vector<store::TokenLogprob> out;
  for (const auto& t : list) {
    store::TokenLogprob tok;
    tok.token = nfc(t.at("token").get<std::string>());
    tok.chosen_logprob = logprob_value(t.at("logprob"));
    if (t.contains("top_logprobs") && t.at("top_logprobs").is_array()) {
      for (const auto& alt : t.at("top_logprobs")) {
        if (static_cast<int>(tok.top_alternatives.size()) >= top_k) break;
        tok.top_alternatives.push_back(
            store::TokenAlternative{nfc(alt.at("token").get<std::string>()), logprob_value(alt.at("logprob"))});
      }
    }
    const bool present = std::any_of(tok.top_alternatives.begin(), tok.top_alternatives.end(),
                                     [&](const auto& a) { return a.token == tok.token; });
    if (!present && tok.top_alternatives.size() < store::kMaxAlternatives) {
      tok.top_alternatives.push_back(store::TokenAlternative{tok.token, tok.chosen_logprob});
    }
    out.push_back(std::move(tok));
  }
  return out;
}

json parse_body(const std::string& body, const std::string& what) {
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw SchemaError(what + " response is not JSON: " + e.what());
  }
}

}  // namespace

double parse_entailment_response(const std::string& body) {
  json j = parse_body(body, "entailment");
  for (const char* nest : {"labels", "scores", "predictions"}) {
    if (j.is_object() && j.contains(nest) && (j.at(nest).is_array() || j.at(nest).is_object())) {
      j = j.at(nest);
      break;
    }
  }
  // Some classifiers wrap a single prediction list in another array.
  if (j.is_array() && j.size() == 1 && j.front().is_array()) j = j.front();

  std::vector<std::pair<std::string, double>> dist;
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      if (v.is_number()) dist.emplace_back(k, v.get<double>());
    }
  } else if (j.is_array()) {
    for (const auto& e : j) {
      if (!e.is_object() || !e.contains("label")) continue;
      const char* field = e.contains("score") ? "score" : (e.contains("probability") ? "probability" : nullptr);
      if (field && e.at(field).is_number()) dist.emplace_back(e.at("label").get<std::string>(), e.at(field).get<double>());
    }
  }
  std::string received;
  for (const auto& [label, p] : dist) {
    std::string low = label;
    std::transform(low.begin(), low.end(), low.begin(), [](unsigned char c) { return std::tolower(c); });
    if (low == "entailment") {
      if (!(p >= 0.0 && p <= 1.0)) throw SchemaError("entailment probability " + std::to_string(p) + " is outside [0, 1]");
      return p;
    }
    received += (received.empty() ? "" : ", ") + label;
  }
  throw SchemaError("entailment response has no 'entailment' label; received labels: [" + received + "]");
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(GatewayConfig config, HttpPost post)
    : config_(std::move(config)), post_(std::move(post)), cache_(config_.cache_dir), limiter_(config_.max_in_flight) {
  config_.validate();
}

std::vector<std::pair<std::string, std::string>> Gateway::headers() const {
  std::vector<std::pair<std::string, std::string>> h;
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
      h.emplace_back("Authorization", std::string("Bearer ") + key);
    }
  }
  return h;
}

std::string Gateway::post(const Endpoint& endpoint, const std::string& body) {
  return send(endpoint, body, config_.use_cache);
}

std::string Gateway::send(const Endpoint& endpoint, const std::string& body, bool cached) {
  if (endpoint.url.empty()) throw PreconditionError("endpoint URL is not configured");
  RequestLog entry;
  entry.url = endpoint.url;
  entry.cache_key = DiskCache::key(endpoint.url, endpoint.model, body);
  if (cached) {
    if (auto hit = cache_.get(entry.cache_key)) {
      entry.from_cache = true;
      entry.status = 200;
      std::lock_guard lock(mu_);
      ++stats_.cache_hits;
      log_.push_back(entry);
      return *hit;
    }
  }

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(config_.backoff_seconds * std::pow(2.0, attempt - 1)));
      std::lock_guard lock(mu_);
      ++stats_.retries;
    }
    ++entry.attempts;
    std::optional<HttpResponse> res;
    limiter_.acquire();
    try {
      res = post_(endpoint.url, body, headers(), config_.timeout_seconds);
    } catch (const TransportError& e) {
      last_error = e.what();
    }
    limiter_.release();
    {
      std::lock_guard lock(mu_);
      ++stats_.network_calls;
    }
    if (res) {
      entry.status = res->status;
      if (res->status >= 200 && res->status < 300) {
        if (cached) cache_.put(entry.cache_key, res->body);
        std::lock_guard lock(mu_);
        log_.push_back(entry);
        return res->body;
      }
      last_error = "HTTP " + std::to_string(res->status) + " from " + endpoint.url + ": " + res->body;
      const bool retryable = res->status == 429 || res->status >= 500;
      if (!retryable) break;
    }
  }
  std::lock_guard lock(mu_);
  ++stats_.failures;
  log_.push_back(entry);
  throw TransportError(last_error + " (after " + std::to_string(entry.attempts) + " attempt" +
                       (entry.attempts == 1 ? "" : "s") + ")");
}

Gateway::ChatResult Gateway::chat(const std::string& prompt, const store::Decoding& d, bool logprobs, int top_k) {
  const bool greedy = d.mode == store::DecodingMode::Greedy;
  const double temperature = greedy ? 0.0 : d.temperature;
  const double top_p = greedy ? 1.0 : d.top_p;
  json req;
  req["model"] = config_.chat.model;
  req["stream"] = false;
  if (config_.protocol == ChatProtocol::ChatCompletions) {
    req["messages"] = json::array({{{"role", "user"}, {"content", config_.prompt_prefix + prompt}}});
    req["temperature"] = temperature;
    req["top_p"] = top_p;
    req["max_tokens"] = d.max_tokens;
    req["seed"] = d.seed;
  } else {
    req["prompt"] = config_.prompt_prefix + prompt;
    req["options"] = {{"temperature", temperature}, {"top_p", top_p}, {"num_predict", d.max_tokens}, {"seed", d.seed}};
  }
  if (logprobs) {
    req["logprobs"] = true;
    req["top_logprobs"] = top_k;
  }
  const json res = parse_body(post(config_.chat, req.dump()), "chat");

  ChatResult out;
  try {
    const json* lp = nullptr;
    if (config_.protocol == ChatProtocol::ChatCompletions) {
      if (!res.contains("choices") || !res.at("choices").is_array() || res.at("choices").empty()) {
        throw SchemaError("chat response has no choices");
      }
      const auto& choice = res.at("choices").front();
      const auto& content = choice.at("message").at("content");
      out.text = content.is_null() ? std::string() : content.get<std::string>();
      if (choice.contains("logprobs") && choice.at("logprobs").is_object() &&
          choice.at("logprobs").contains("content") && choice.at("logprobs").at("content").is_array()) {
        lp = &choice.at("logprobs").at("content");
      }
    } else {
      out.text = res.at("response").get<std::string>();
      if (res.contains("logprobs") && res.at("logprobs").is_array()) lp = &res.at("logprobs");
    }
    out.text = nfc(out.text);
    if (logprobs && lp) out.logprobs = parse_token_list(*lp, top_k);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("unexpected chat response shape: ") + e.what());
  }
  return out;
}

store::ResponseSample Gateway::sample(const store::QuestionRecord& q, int index, store::Decoding decoding,
                                      bool with_logprobs) {
  decoding.seed = sample_seed(config_.run_seed, q.question_id, index);
  auto r = chat(q.text, decoding, with_logprobs, config_.top_k);
  store::ResponseSample s;
  s.question_id = q.question_id;
  s.sample_index = index;
  s.text = std::move(r.text);
  s.decoding = decoding;
  s.token_logprobs = std::move(r.logprobs);
  return s;
}

store::ResponseSample Gateway::greedy_with_logprobs(const store::QuestionRecord& q, int max_tokens, int top_k) {
  store::Decoding d;
  d.mode = store::DecodingMode::Greedy;
  d.temperature = 0.0;
  d.top_p = 1.0;
  d.max_tokens = max_tokens;
  d.seed = 0;
  auto r = chat(q.text, d, true, top_k);
  if (!r.logprobs) {
    throw UnavailableSignalError("endpoint " + config_.chat.url +
                                 " returned no token logprobs (capability: logprobs/top_logprobs)");
  }
  store::ResponseSample s;
  s.question_id = q.question_id;
  s.sample_index = 0;
  s.text = std::move(r.text);
  s.decoding = d;
  s.token_logprobs = std::move(r.logprobs);
  return s;
}

std::vector<std::vector<double>> Gateway::embed_texts(const std::vector<std::string>& texts) {
  if (texts.empty()) throw PreconditionError("embed_texts needs at least one text");
  const auto& ep = config_.embedding;
  auto single_key = [&](const std::string& t) {
    return DiskCache::key(ep.url, ep.model, json{{"model", ep.model}, {"input", t}}.dump());
  };

  std::map<std::string, std::vector<double>> have;
  std::vector<std::string> missing;
  for (const auto& t : texts) {
    if (have.count(t) || std::find(missing.begin(), missing.end(), t) != missing.end()) continue;
    std::optional<std::string> hit;
    if (config_.use_cache) hit = cache_.get(single_key(t));
    if (hit) {
      have[t] = parse_body(*hit, "cached embedding").get<std::vector<double>>();
      std::lock_guard lock(mu_);
      ++stats_.cache_hits;
    } else {
      missing.push_back(t);
    }
  }

  // Batches bypass the response cache; each vector is cached under its own text.
  for (std::size_t start = 0; start < missing.size(); start += static_cast<std::size_t>(config_.embed_batch)) {
    const auto end = std::min(missing.size(), start + static_cast<std::size_t>(config_.embed_batch));
    const std::vector<std::string> batch(missing.begin() + static_cast<std::ptrdiff_t>(start),
                                         missing.begin() + static_cast<std::ptrdiff_t>(end));
    const json req = {{"model", ep.model}, {"input", batch}};
    const json res = parse_body(send(ep, req.dump(), false), "embedding");
    std::vector<std::vector<double>> vecs;
    try {
      if (res.contains("data")) {
        for (const auto& d : res.at("data")) vecs.push_back(d.at("embedding").get<std::vector<double>>());
      } else if (res.contains("embeddings")) {
        vecs = res.at("embeddings").get<std::vector<std::vector<double>>>();
      } else {
        throw SchemaError("embedding response has neither 'data' nor 'embeddings'");
      }
    } catch (const json::exception& e) {
      throw SchemaError(std::string("unexpected embedding response shape: ") + e.what());
    }
    if (vecs.size() != batch.size()) {
      throw SchemaError("embedding response has " + std::to_string(vecs.size()) + " vectors for " +
                        std::to_string(batch.size()) + " inputs");
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto& v = vecs[i];
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 0.0)
        for (double& x : v) x /= norm;
      if (config_.use_cache) cache_.put(single_key(batch[i]), json(v).dump());
      have[batch[i]] = std::move(v);
    }
  }

  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    const auto& v = have.at(t);
    {
      std::lock_guard lock(mu_);
      if (!dim_) dim_ = v.size();
      if (*dim_ != v.size()) {
        throw IntegrityError("embedding dimension " + std::to_string(v.size()) + " differs from the run's " +
                             std::to_string(*dim_));
      }
    }
    out.push_back(v);
  }
  return out;
}

std::optional<std::size_t> Gateway::embedding_dimension() const {
  std::lock_guard lock(mu_);
  return dim_;
}

void Gateway::expect_embedding_dimension(std::size_t dim) {
  std::lock_guard lock(mu_);
  if (dim_ && *dim_ != dim) {
    throw IntegrityError("embedding dimension " + std::to_string(*dim_) + " differs from the run's " +
                         std::to_string(dim));
  }
  dim_ = dim;
}

double Gateway::entailment_score(const std::string& premise, const std::string& hypothesis) {
  json req = {{"premise", premise}, {"hypothesis", hypothesis}};
  if (!config_.entailment.model.empty()) req["model"] = config_.entailment.model;
  return parse_entailment_response(post(config_.entailment, req.dump()));
}

store::ProbeRecord Gateway::ptrue_probe(const store::QuestionRecord& q, const std::string& answer) {
  std::string prompt = kPtrueTemplate;
  prompt.replace(prompt.find("{question}"), 10, q.text);
  prompt.replace(prompt.find("{answer}"), 8, answer);
  store::Decoding d;
  d.mode = store::DecodingMode::Greedy;
  d.temperature = 0.0;
  d.max_tokens = 5;
  store::ProbeRecord rec;
  rec.question_id = q.question_id;
  try {
    auto r = chat(prompt, d, true, config_.top_k);
    rec.text = std::move(r.text);
    rec.token_logprobs = std::move(r.logprobs);
  } catch (const TransportError&) {
    rec.available = false;
  }
  return rec;
}

GatewayStats Gateway::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

std::vector<RequestLog> Gateway::request_log() const {
  std::lock_guard lock(mu_);
  return log_;
}

}  // namespace scrkit::gateway
