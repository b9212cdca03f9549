#include "scrkit/sampling.hpp"

#include "scrkit/boundary.hpp"
#include "scrkit/text.hpp"

#include <algorithm>
#include <atomic>
#include <ctime>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace scrkit::sampling {

namespace {

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Drops a trailing partial line left by a crash mid-append.
void repair_tail(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  if (content.empty() || content.back() == '\n') return;
  const auto last = content.rfind('\n');
  std::filesystem::resize_file(path, last == std::string::npos ? 0 : last + 1);
}

struct QuestionResult {
  std::vector<std::string> lines;
  std::optional<std::string> failure;
  bool skipped = false;
};

class Worker {
public:
  Worker(gateway::Gateway& gw, const SamplingOptions& options, const store::Decoding& decoding)
      : gw_(gw), options_(options), decoding_(decoding) {}

  QuestionResult process(const store::QuestionRecord& q, const store::QuestionData* existing) const {
    QuestionResult r;
    if (!existing) r.lines.push_back(store::serialize(q));
    try {
      work(q, existing, r.lines);
    } catch (const TransportError& e) {
      r.failure = e.what();
    } catch (const SchemaError& e) {
      r.failure = e.what();
    }
    r.skipped = existing && r.lines.empty() && !r.failure;
    return r;
  }

private:
  void work(const store::QuestionRecord& q, const store::QuestionData* existing, std::vector<std::string>& lines) const {
    const auto sig = decoding_.signature();
    std::map<int, std::string> samples;
    std::optional<std::string> greedy_text;
    if (existing) {
      if (auto it = existing->samples.find(sig); it != existing->samples.end()) {
        for (const auto& s : it->second) samples[s.sample_index] = s.text;
      }
      for (const auto& [key, list] : existing->samples) {
        if (!list.empty() && list.front().decoding.mode == store::DecodingMode::Greedy && !greedy_text) {
          greedy_text = list.front().text;
        }
      }
    }

    for (int i = 0; i < options_.n; ++i) {
      if (samples.count(i)) continue;
      auto s = gw_.sample(q, i, decoding_);
      samples[i] = s.text;
      lines.push_back(store::serialize(s));
    }
    if (options_.greedy && !greedy_text) {
      auto g = gw_.greedy_with_logprobs(q, options_.greedy_max_tokens, gw_.config().top_k);
      greedy_text = g.text;
      lines.push_back(store::serialize(g));
    }
    const std::string& answer = greedy_text ? *greedy_text : samples.at(0);

    if (options_.probe && !(existing && existing->probe)) {
      lines.push_back(store::serialize(gw_.ptrue_probe(q, answer)));
    }

    if (options_.embed) embed(q, existing, samples, greedy_text, lines);

    if (options_.entail) {
      if (options_.n >= 2 && !(existing && existing->entailment)) {
        store::EntailmentRecord e;
        e.question_id = q.question_id;
        const auto n = static_cast<std::size_t>(options_.n);
        e.directional.assign(n, std::vector<double>(n, 1.0));
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            if (i != j) {
              e.directional[i][j] = gw_.entailment_score(samples.at(static_cast<int>(i)), samples.at(static_cast<int>(j)));
            }
          }
        }
        lines.push_back(store::serialize(e));
      }
      if (q.gold_answers && !q.gold_answers->empty() && !(existing && existing->grounding)) {
        const auto g = boundary::b5_grounding(answer, *q.gold_answers, [&](const std::string& p, const std::string& h) {
          return gw_.entailment_score(p, h);
        });
        lines.push_back(store::serialize(store::GroundingRecord{q.question_id, g.reference_scores}));
      }
    }
  }

  void embed(const store::QuestionRecord& q, const store::QuestionData* existing, const std::map<int, std::string>& samples,
             const std::optional<std::string>& greedy_text, std::vector<std::string>& lines) const {
    using store::EmbeddingTarget;
    std::set<std::pair<EmbeddingTarget, int>> have;
    if (existing) {
      for (const auto& e : existing->embeddings) have.insert({e.target, e.sample_index});
    }
    std::vector<store::EmbeddingRecord> todo;
    auto want = [&](EmbeddingTarget t, int index, const std::string& text) {
      if (have.count({t, index})) return;
      store::EmbeddingRecord rec;
      rec.question_id = q.question_id;
      rec.target = t;
      rec.sample_index = index;
      rec.model = gw_.config().embedding.model;
      rec.source_text = text;
      todo.push_back(std::move(rec));
    };
    want(EmbeddingTarget::Question, 0, q.text);
    for (const auto& [i, text] : samples) want(EmbeddingTarget::Sample, i, text);
    if (greedy_text) want(EmbeddingTarget::Greedy, 0, *greedy_text);
    if (auto pair = boundary::extract_entity_pair(q.text)) {
      want(EmbeddingTarget::EntityA, 0, pair->first);
      want(EmbeddingTarget::EntityB, 0, pair->second);
    }
    if (todo.empty()) return;
    std::vector<std::string> texts;
    for (const auto& r : todo) texts.push_back(r.source_text);
    auto vectors = gw_.embed_texts(texts);
    for (std::size_t i = 0; i < todo.size(); ++i) {
      todo[i].vector = std::move(vectors[i]);
      // Only entity records keep their source text; the others point at records already stored.
      if (todo[i].target != EmbeddingTarget::EntityA && todo[i].target != EmbeddingTarget::EntityB) {
        todo[i].source_text.clear();
      }
      lines.push_back(store::serialize(todo[i]));
    }
  }

  gateway::Gateway& gw_;
  const SamplingOptions& options_;
  store::Decoding decoding_;
};

}  // namespace

SamplingReport run_sampling(const std::vector<store::QuestionRecord>& questions, gateway::Gateway& gw,
                            const SamplingOptions& options, const std::filesystem::path& run_file) {
  if (options.n < 1) throw PreconditionError("N must be at least 1");
  {
    std::set<std::string> ids;
    for (const auto& q : questions) {
      if (!ids.insert(q.question_id).second) {
        throw IntegrityError("dataset lists question '" + q.question_id + "' more than once");
      }
    }
  }
  const auto& cfg = gw.config();

  store::RunManifest manifest;
  manifest.model_name = cfg.chat.model;
  manifest.endpoint_url = cfg.chat.url;
  manifest.decoding = options.decoding;
  manifest.decoding.seed = static_cast<std::int64_t>(cfg.run_seed);
  manifest.n = options.n;
  manifest.dataset_name = options.dataset_name;
  manifest.created_at = options.deterministic ? "" : utc_now();
  manifest.run_id = !options.run_id.empty()
                        ? options.run_id
                        : "run-" + text::sha256_hex(options.dataset_name + '\x1f' + cfg.chat.model + '\x1f' +
                                                    options.decoding.signature() + '\x1f' +
                                                    std::to_string(options.n) + '\x1f' + std::to_string(cfg.run_seed))
                                       .substr(0, 12);

  store::Run existing;
  const bool resume = std::filesystem::exists(run_file) && std::filesystem::file_size(run_file) > 0;
  if (resume) {
    repair_tail(run_file);
    existing = store::ingest_run(run_file);
    const auto& old = existing.manifest;
    if (old.n != manifest.n || old.decoding.signature() != manifest.decoding.signature() ||
        old.model_name != manifest.model_name) {
      throw PreconditionError("run file " + run_file.string() + " was created with model '" + old.model_name +
                              "', N=" + std::to_string(old.n) + ", decoding " + old.decoding.signature() +
                              "; this invocation asks for model '" + manifest.model_name + "', N=" +
                              std::to_string(manifest.n) + ", decoding " + manifest.decoding.signature());
    }
    manifest.run_id = old.run_id;
    manifest.created_at = old.created_at;
    manifest.embedding_dim = old.embedding_dim;
    if (old.embedding_dim) gw.expect_embedding_dimension(static_cast<std::size_t>(*old.embedding_dim));
  } else {
    if (run_file.has_parent_path()) std::filesystem::create_directories(run_file.parent_path());
    std::ofstream out(run_file, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionError("cannot write run file " + run_file.string());
    out << store::serialize(manifest) << '\n';
  }

  std::ofstream out(run_file, std::ios::binary | std::ios::app);
  if (!out) throw PreconditionError("cannot append to run file " + run_file.string());

  store::Decoding decoding = options.decoding;
  decoding.seed = 0;
  const Worker worker(gw, options, decoding);

  SamplingReport report;
  report.questions = questions.size();
  std::mutex mu;
  std::map<std::size_t, QuestionResult> pending;
  std::size_t next_write = 0;
  std::atomic<std::size_t> next_task{0};
  std::atomic<bool> stop{false};
  std::exception_ptr error;

  auto drain = [&] {
    while (!pending.empty() && pending.begin()->first == next_write) {
      auto r = std::move(pending.begin()->second);
      pending.erase(pending.begin());
      const auto& qid = questions[next_write].question_id;
      ++next_write;
      for (const auto& line : r.lines) out << line << '\n';
      out.flush();
      if (r.skipped) ++report.skipped;
      if (r.failure) {
        report.failures.push_back({qid, *r.failure});
      } else {
        ++report.completed;
      }
      if (options.on_question) options.on_question(qid, !r.failure);
    }
  };

  auto loop = [&] {
    while (!stop) {
      const auto i = next_task.fetch_add(1);
      if (i >= questions.size()) return;
      try {
        auto r = worker.process(questions[i], existing.find(questions[i].question_id));
        std::lock_guard lock(mu);
        if (stop) return;
        pending.emplace(i, std::move(r));
        drain();
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
        stop = true;
        return;
      }
    }
  };

  const int workers = std::max(1, options.workers > 0 ? options.workers : cfg.max_in_flight);
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(loop);
  loop();
  for (auto& t : pool) t.join();
  out.close();
  report.gateway = gw.stats();
  if (error) std::rethrow_exception(error);

  // Canonical rewrite; the manifest picks up the embedding dimension observed this run.
  auto run = store::ingest_run(run_file);
  if (auto dim = gw.embedding_dimension()) manifest.embedding_dim = static_cast<int>(*dim);
  run.manifest = manifest;
  const auto tmp = std::filesystem::path(run_file.string() + ".tmp");
  store::write_run(run, tmp);
  std::filesystem::rename(tmp, run_file);
  return report;
}

}  // namespace scrkit::sampling
