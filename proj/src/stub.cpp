#include "scrkit/stub.hpp"

#include "scrkit/text.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <thread>

namespace scrkit::stub {

using nlohmann::json;

std::vector<StubQuestion> read_fixture(const std::filesystem::path& path) {
  const auto records = store::read_questions(path);
  std::map<std::string, StubQuestion> by_id;
  for (const auto& r : records) by_id[r.question_id].question = r;

  std::ifstream in(path, std::ios::binary);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> order;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line);
    const auto id = j.at("question_id").get<std::string>();
    auto& q = by_id.at(id);
    if (!j.contains("answers") || !j.at("answers").is_array() || j.at("answers").empty()) {
      throw ParseError(line_no, "stub fixture question '" + id + "' needs a non-empty answers list");
    }
    for (const auto& a : j.at("answers")) q.answers.push_back(text::nfc(a.get<std::string>()));
    q.entropy = j.value("entropy", 0.5);
    if (!(q.entropy >= 0.0 && q.entropy <= 1.0)) {
      throw ParseError(line_no, "stub fixture entropy must lie in [0, 1]");
    }
    order.push_back(id);
  }
  std::vector<StubQuestion> out;
  for (const auto& id : order) out.push_back(std::move(by_id.at(id)));
  return out;
}

namespace {

std::vector<std::string> lower_words(const std::string& s) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::vector<std::string> split_tokens(const std::string& s) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto start = s.find_first_not_of(' ', i);
    if (start == std::string::npos) break;
    auto end = s.find(' ', start);
    if (end == std::string::npos) end = s.size();
    tokens.push_back((tokens.empty() ? "" : " ") + s.substr(start, end - start));
    i = end;
  }
  return tokens;
}

double round_logprob(double lp) {
  // Fixed precision keeps payloads identical across platforms.
  return std::round(lp * 1e12) / 1e12;
}

json token_logprobs(const std::string& text, double entropy, int top_k, const std::string& salt) {
  json out = json::array();
  const auto tokens = split_tokens(text);
  const int k = std::max(1, top_k);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    double p_chosen = 1.0;
    double p_other = 0.0;
    if (k > 1) {
      // Vary the level slightly per token so per-token statistics are not degenerate.
      const double jitter = static_cast<double>(text::stable_hash64(salt + tokens[t] + std::to_string(t)) % 1000) / 1e4;
      const double h = std::clamp(entropy + jitter - 0.05, 0.001, 1.0);
      p_chosen = 1.0 - h * static_cast<double>(k - 1) / static_cast<double>(k);
      p_other = (1.0 - p_chosen) / static_cast<double>(k - 1);
    }
    json alts = json::array();
    alts.push_back({{"token", tokens[t]}, {"logprob", round_logprob(std::log(p_chosen))}});
    for (int a = 1; a < k; ++a) {
      alts.push_back({{"token", " alt" + std::to_string(a)}, {"logprob", round_logprob(std::log(p_other))}});
    }
    out.push_back({{"token", tokens[t]}, {"logprob", round_logprob(std::log(p_chosen))}, {"top_logprobs", alts}});
  }
  return out;
}

std::string probe_field(const std::string& prompt, const std::string& tag) {
  const auto pos = prompt.find(tag);
  if (pos == std::string::npos) return {};
  const auto start = pos + tag.size();
  const auto end = prompt.find('\n', start);
  return prompt.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

}  // namespace

std::vector<double> hashed_bigram_embedding(const std::string& s, std::size_t dim) {
  std::vector<double> v(dim, 0.0);
  std::string low;
  for (unsigned char c : s) low.push_back(static_cast<char>(std::tolower(c)));
  if (low.size() < 2) {
    v[0] = 1.0;
    return v;
  }
  for (std::size_t i = 0; i + 1 < low.size(); ++i) {
    const std::uint64_t code = (static_cast<std::uint64_t>(static_cast<unsigned char>(low[i])) << 8) |
                               static_cast<unsigned char>(low[i + 1]);
    v[text::mix64(code) % dim] += 1.0;
  }
  return v;
}

double word_jaccard(const std::string& a, const std::string& b) {
  const auto wa = lower_words(a);
  const auto wb = lower_words(b);
  const std::set<std::string> sa(wa.begin(), wa.end()), sb(wb.begin(), wb.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& w : sa) inter += sb.count(w);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

struct StubServer::Impl {
  std::vector<StubQuestion> questions;
  StubOptions options;
  httplib::Server server;
  std::thread thread;
};

StubServer::StubServer(std::vector<StubQuestion> questions, StubOptions options) : impl_(std::make_unique<Impl>()) {
  impl_->questions = std::move(questions);
  impl_->options = options;
  auto& srv = impl_->server;
  Impl* impl = impl_.get();

  // Wraps every handler with request counting, failure injection and the in-flight gauge.
  auto guarded = [this, impl](auto handler) {
    return [this, impl, handler](const httplib::Request& req, httplib::Response& res) {
      const int now = ++active_;
      int seen = peak_.load();
      while (now > seen && !peak_.compare_exchange_weak(seen, now)) {
      }
      const auto index = requests_.fetch_add(1);
      if (impl->options.latency_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(impl->options.latency_ms));
      if (static_cast<int>(index) < impl->options.fail_first) {
        res.status = 500;
        res.set_content(R"({"error":"injected stub failure"})", "application/json");
      } else {
        try {
          const json body = json::parse(req.body);
          handler(body, res);
        } catch (const std::exception& e) {
          res.status = 400;
          res.set_content(json{{"error", e.what()}}.dump(), "application/json");
        }
      }
      --active_;
    };
  };

  auto complete = [impl](const json& body, const std::string& prompt, double temperature, std::int64_t seed,
                         bool want_logprobs, int top_k) -> std::pair<std::string, json> {
    const std::string probe_head = "Is the following answer true?";
    if (prompt.find(probe_head) != std::string::npos) {
      const auto question = probe_field(prompt, "Question: ");
      const auto answer = probe_field(prompt, "Answer: ");
      bool supported = false;
      for (const auto& q : impl->questions) {
        if (q.question.text != question || !q.question.gold_answers) continue;
        for (const auto& g : *q.question.gold_answers) supported = supported || word_jaccard(g, answer) >= 0.5;
      }
      const std::string verdict = supported ? "True" : "False";
      const std::string other = supported ? "False" : "True";
      json lp = json::array();
      json alts = json::array({{{"token", verdict}, {"logprob", round_logprob(std::log(0.9))}}});
      if (top_k > 1) alts.push_back({{"token", other}, {"logprob", round_logprob(std::log(0.1))}});
      lp.push_back({{"token", verdict}, {"logprob", round_logprob(std::log(0.9))}, {"top_logprobs", alts}});
      return {verdict, want_logprobs ? lp : json()};
    }
    const StubQuestion* match = nullptr;
    for (const auto& q : impl->questions) {
      const auto& t = q.question.text;
      if (prompt.size() >= t.size() && prompt.compare(prompt.size() - t.size(), t.size(), t) == 0) {
        if (!match || t.size() > match->question.text.size()) match = &q;
      }
    }
    if (!match) throw std::runtime_error("stub has no canned answer for prompt: " + prompt);
    std::size_t pick = 0;
    if (temperature > 0.0) pick = text::mix64(static_cast<std::uint64_t>(seed)) % match->answers.size();
    const auto& answer = match->answers[pick];
    (void)body;
    return {answer, want_logprobs ? token_logprobs(answer, match->entropy, top_k, match->question.question_id) : json()};
  };

  srv.Post("/v1/chat/completions", guarded([impl, complete](const json& body, httplib::Response& res) {
             const auto& messages = body.at("messages");
             const std::string prompt = messages.back().at("content").get<std::string>();
             const bool want = impl->options.logprobs && body.value("logprobs", false);
             auto [answer, lp] = complete(body, prompt, body.value("temperature", 1.0), body.value("seed", 0LL), want,
                                          body.value("top_logprobs", 1));
             json choice = {{"index", 0},
                            {"message", {{"role", "assistant"}, {"content", answer}}},
                            {"finish_reason", "stop"}};
             if (want) choice["logprobs"] = {{"content", lp}};
             res.set_content(json{{"object", "chat.completion"}, {"model", body.value("model", "")},
                                  {"choices", json::array({choice})}}
                                 .dump(),
                             "application/json");
           }));

  srv.Post("/api/generate", guarded([impl, complete](const json& body, httplib::Response& res) {
             const auto prompt = body.at("prompt").get<std::string>();
             const json options = body.value("options", json::object());
             const bool want = impl->options.logprobs && body.value("logprobs", false);
             auto [answer, lp] = complete(body, prompt, options.value("temperature", 1.0), options.value("seed", 0LL),
                                          want, body.value("top_logprobs", 1));
             json out = {{"model", body.value("model", "")}, {"response", answer}, {"done", true}};
             if (want) out["logprobs"] = lp;
             res.set_content(out.dump(), "application/json");
           }));

  srv.Post("/v1/embeddings", guarded([impl](const json& body, httplib::Response& res) {
             std::vector<std::string> inputs;
             if (body.at("input").is_string()) {
               inputs.push_back(body.at("input").get<std::string>());
             } else {
               inputs = body.at("input").get<std::vector<std::string>>();
             }
             json data = json::array();
             for (std::size_t i = 0; i < inputs.size(); ++i) {
               data.push_back({{"index", i}, {"embedding", hashed_bigram_embedding(inputs[i], impl->options.embedding_dim)}});
             }
             res.set_content(json{{"model", body.value("model", "")}, {"data", data}}.dump(), "application/json");
           }));

  srv.Post("/entailment", guarded([impl](const json& body, httplib::Response& res) {
             const auto premise = body.at("premise").get<std::string>();
             const auto hypothesis = body.at("hypothesis").get<std::string>();
             const double s = impl->options.fixed_entailment.value_or(word_jaccard(premise, hypothesis));
             const char* first = impl->options.entailment_schema_ok ? "entailment" : "LABEL_0";
             const char* second = impl->options.entailment_schema_ok ? "neutral" : "LABEL_1";
             const char* third = impl->options.entailment_schema_ok ? "contradiction" : "LABEL_2";
             json labels = json::array({{{"label", first}, {"score", s}},
                                        {{"label", second}, {"score", (1.0 - s) / 2.0}},
                                        {{"label", third}, {"score", (1.0 - s) / 2.0}}});
             res.set_content(json{{"labels", labels}}.dump(), "application/json");
           }));
}

StubServer::~StubServer() { stop(); }

int StubServer::start(const std::string& host, int port) {
  host_ = host;
  auto& srv = impl_->server;
  port_ = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw PreconditionError("stub server cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return port_;
}

void StubServer::listen(const std::string& host, int port) {
  host_ = host;
  port_ = port;
  if (!impl_->server.listen(host, port)) {
    throw PreconditionError("stub server cannot listen on " + host + ":" + std::to_string(port));
  }
}

void StubServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string StubServer::base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }

}  // namespace scrkit::stub
