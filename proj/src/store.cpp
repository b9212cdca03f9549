#include "scrkit/store.hpp"

#include "scrkit/text.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace scrkit::store {

using nlohmann::json;

namespace {

[[noreturn]] void bad(std::size_t line, const std::string& what) { throw ParseError(line, what); }

template <typename T>
T field(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) bad(line, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    bad(line, std::string("field '") + key + "': " + e.what());
  }
}

template <typename T>
std::optional<T> opt_field(const json& j, const char* key, std::size_t line) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    bad(line, std::string("field '") + key + "': " + e.what());
  }
}

json logprob_to_json(double lp) {
  if (std::isinf(lp) && lp < 0) return nullptr;
  return lp;
}

double logprob_from_json(const json& j, std::size_t line) {
  if (j.is_null()) return -std::numeric_limits<double>::infinity();
  if (!j.is_number()) bad(line, "logprob must be a number or null");
  return j.get<double>();
}

json decoding_to_json(const Decoding& d) {
  return json{{"mode", to_string(d.mode)},
              {"temperature", d.temperature},
              {"top_p", d.top_p},
              {"max_tokens", d.max_tokens},
              {"seed", d.seed}};
}

Decoding decoding_from_json(const json& j, std::size_t line) {
  if (!j.is_object()) bad(line, "decoding must be an object");
  Decoding d;
  try {
    d.mode = parse_decoding_mode(field<std::string>(j, "mode", line));
  } catch (const std::invalid_argument& e) {
    bad(line, e.what());
  }
  d.temperature = opt_field<double>(j, "temperature", line).value_or(d.temperature);
  d.top_p = opt_field<double>(j, "top_p", line).value_or(d.top_p);
  d.max_tokens = opt_field<int>(j, "max_tokens", line).value_or(d.max_tokens);
  d.seed = opt_field<std::int64_t>(j, "seed", line).value_or(0);
  if (d.temperature < 0) bad(line, "temperature must be >= 0");
  if (!(d.top_p > 0 && d.top_p <= 1)) bad(line, "top_p must lie in (0, 1]");
  if (d.max_tokens <= 0) bad(line, "max_tokens must be positive");
  return d;
}

json tokens_to_json(const std::vector<TokenLogprob>& toks) {
  json arr = json::array();
  for (const auto& t : toks) {
    json top = json::array();
    for (const auto& a : t.top_alternatives) top.push_back(json::array({a.token, logprob_to_json(a.logprob)}));
    arr.push_back(json{{"token", t.token}, {"logprob", logprob_to_json(t.chosen_logprob)}, {"top", top}});
  }
  return arr;
}

std::vector<TokenLogprob> tokens_from_json(const json& j, std::size_t line) {
  if (!j.is_array()) bad(line, "token_logprobs must be an array");
  std::vector<TokenLogprob> out;
  out.reserve(j.size());
  for (const auto& t : j) {
    if (!t.is_object()) bad(line, "token entry must be an object");
    TokenLogprob tl;
    tl.token = field<std::string>(t, "token", line);
    tl.chosen_logprob = logprob_from_json(t.value("logprob", json()), line);
    auto top = t.find("top");
    if (top != t.end() && !top->is_null()) {
      if (!top->is_array()) bad(line, "top must be an array");
      for (const auto& alt : *top) {
        if (!alt.is_array() || alt.size() != 2 || !alt[0].is_string()) bad(line, "alternative must be [token, logprob]");
        tl.top_alternatives.push_back({alt[0].get<std::string>(), logprob_from_json(alt[1], line)});
      }
    }
    // The chosen token always participates in the distribution.
    const bool present = std::any_of(tl.top_alternatives.begin(), tl.top_alternatives.end(),
                                     [&](const TokenAlternative& a) { return a.token == tl.token; });
    if (!present) tl.top_alternatives.push_back({tl.token, tl.chosen_logprob});
    out.push_back(std::move(tl));
  }
  return out;
}

std::vector<double> doubles(const json& j, const char* key, std::size_t line) {
  auto v = field<std::vector<double>>(j, key, line);
  for (double x : v)
    if (!std::isfinite(x)) bad(line, std::string("non-finite value in '") + key + "'");
  return v;
}

QuestionData& slot(Run& run, const std::string& qid) { return run.questions[qid]; }

bool has_question(const QuestionData& q) { return !q.question.question_id.empty(); }

int judge_rank(Judge j) {
  switch (j) {
    case Judge::Human: return 0;
    case Judge::GoldTemplate: return 1;
    case Judge::LlmJudge: return 2;
    case Judge::WordOverlap: return 3;
  }
  return 4;
}

LabelRecord label_from_json(const json& j, std::size_t line) {
  LabelRecord r;
  r.question_id = field<std::string>(j, "question_id", line);
  try {
    r.label = parse_label(field<std::string>(j, "label", line));
    r.judge = parse_judge(opt_field<std::string>(j, "judge", line).value_or("llm-judge"));
  } catch (const std::invalid_argument& e) {
    bad(line, e.what());
  }
  r.judge_detail = opt_field<std::string>(j, "judge_detail", line).value_or("");
  return r;
}

void insert_sorted_sample(std::vector<ResponseSample>& v, ResponseSample s) {
  auto pos = std::lower_bound(v.begin(), v.end(), s.sample_index,
                              [](const ResponseSample& a, int idx) { return a.sample_index < idx; });
  v.insert(pos, std::move(s));
}

std::string embedding_key(const EmbeddingRecord& e) {
  return to_string(e.target) + "/" + std::to_string(e.target == EmbeddingTarget::Sample ? e.sample_index : 0);
}

}  // namespace

// ---------------------------------------------------------------------------
// Enum conversions

std::string Decoding::signature() const {
  std::ostringstream os;
  os.precision(17);
  os << to_string(mode);
  if (mode != DecodingMode::Greedy) os << "/T=" << temperature << "/p=" << top_p;
  os << "/max=" << max_tokens;
  return os.str();
}

std::string to_string(DecodingMode m) {
  switch (m) {
    case DecodingMode::Greedy: return "greedy";
    case DecodingMode::Temperature: return "temperature";
    case DecodingMode::Nucleus: return "nucleus";
  }
  return "?";
}

std::string to_string(Label l) {
  switch (l) {
    case Label::Correct: return "correct";
    case Label::Incorrect: return "incorrect";
    case Label::Ambiguous: return "ambiguous";
  }
  return "?";
}

std::string to_string(Judge j) {
  switch (j) {
    case Judge::WordOverlap: return "word-overlap";
    case Judge::LlmJudge: return "llm-judge";
    case Judge::GoldTemplate: return "gold-template";
    case Judge::Human: return "human";
  }
  return "?";
}

std::string to_string(EmbeddingTarget t) {
  switch (t) {
    case EmbeddingTarget::Question: return "question";
    case EmbeddingTarget::Sample: return "sample";
    case EmbeddingTarget::Greedy: return "greedy";
    case EmbeddingTarget::EntityA: return "entity_a";
    case EmbeddingTarget::EntityB: return "entity_b";
  }
  return "?";
}

DecodingMode parse_decoding_mode(const std::string& s) {
  if (s == "greedy") return DecodingMode::Greedy;
  if (s == "temperature") return DecodingMode::Temperature;
  if (s == "nucleus") return DecodingMode::Nucleus;
  throw std::invalid_argument("unknown decoding mode '" + s + "'");
}

Label parse_label(const std::string& s) {
  if (s == "correct") return Label::Correct;
  if (s == "incorrect") return Label::Incorrect;
  if (s == "ambiguous") return Label::Ambiguous;
  throw std::invalid_argument("unknown label '" + s + "'");
}

Judge parse_judge(const std::string& s) {
  if (s == "word-overlap") return Judge::WordOverlap;
  if (s == "llm-judge") return Judge::LlmJudge;
  if (s == "gold-template") return Judge::GoldTemplate;
  if (s == "human") return Judge::Human;
  throw std::invalid_argument("unknown judge '" + s + "'");
}

EmbeddingTarget parse_embedding_target(const std::string& s) {
  if (s == "question") return EmbeddingTarget::Question;
  if (s == "sample") return EmbeddingTarget::Sample;
  if (s == "greedy") return EmbeddingTarget::Greedy;
  if (s == "entity_a") return EmbeddingTarget::EntityA;
  if (s == "entity_b") return EmbeddingTarget::EntityB;
  throw std::invalid_argument("unknown embedding target '" + s + "'");
}

std::string format_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

Date parse_date(const std::string& iso) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  if (std::sscanf(iso.c_str(), "%d-%u-%u%c", &y, &m, &d, &tail) != 3) {
    throw std::invalid_argument("date must be YYYY-MM-DD, got '" + iso + "'");
  }
  Date out{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!out.ok()) throw std::invalid_argument("invalid calendar date '" + iso + "'");
  return out;
}

// ---------------------------------------------------------------------------
// Run accessors

Counts Run::counts() const {
  Counts c;
  for (const auto& [qid, q] : questions) {
    if (has_question(q)) ++c.questions;
    for (const auto& [sig, v] : q.samples) c.samples += v.size();
    c.labels += q.labels.size();
  }
  return c;
}

const QuestionData& Run::at(const std::string& question_id) const {
  auto it = questions.find(question_id);
  if (it == questions.end() || !has_question(it->second)) {
    throw ReferenceError("unknown question_id '" + question_id + "'");
  }
  return it->second;
}

QuestionData* Run::find(const std::string& question_id) {
  auto it = questions.find(question_id);
  return it == questions.end() || !has_question(it->second) ? nullptr : &it->second;
}

const QuestionData* Run::find(const std::string& question_id) const {
  auto it = questions.find(question_id);
  return it == questions.end() || !has_question(it->second) ? nullptr : &it->second;
}

const std::vector<ResponseSample>& Run::stochastic_samples(const QuestionData& q) const {
  static const std::vector<ResponseSample> kEmpty;
  auto it = q.samples.find(manifest.decoding.signature());
  if (it != q.samples.end()) return it->second;
  // A manifest-less run: fall back to the only non-greedy configuration.
  const std::vector<ResponseSample>* only = nullptr;
  for (const auto& [sig, v] : q.samples) {
    if (!v.empty() && v.front().decoding.mode != DecodingMode::Greedy) {
      if (only != nullptr) return kEmpty;
      only = &v;
    }
  }
  return only != nullptr ? *only : kEmpty;
}

const ResponseSample* Run::greedy(const QuestionData& q) const {
  for (const auto& [sig, v] : q.samples) {
    if (!v.empty() && v.front().decoding.mode == DecodingMode::Greedy) return &v.front();
  }
  return nullptr;
}

std::optional<LabelRecord> Run::best_label(const QuestionData& q) const {
  std::optional<LabelRecord> best;
  for (const auto& [judge, rec] : q.labels) {
    if (!best || judge_rank(judge) < judge_rank(best->judge)) best = rec;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Serialization

std::string serialize(const RunManifest& m) {
  json j{{"kind", "manifest"},
         {"format_version", m.format_version},
         {"run_id", m.run_id},
         {"model_name", m.model_name},
         {"endpoint_url", m.endpoint_url},
         {"decoding", decoding_to_json(m.decoding)},
         {"n", m.n},
         {"created_at", m.created_at},
         {"dataset_name", m.dataset_name}};
  if (m.embedding_dim) j["embedding_dim"] = *m.embedding_dim;
  return j.dump();
}

std::string serialize(const QuestionRecord& q) {
  json j{{"kind", "question"}, {"question_id", q.question_id}, {"text", q.text}};
  if (q.category) j["category"] = *q.category;
  if (q.gold_answers) j["gold_answers"] = *q.gold_answers;
  if (q.timestamp_query) j["timestamp_query"] = format_date(*q.timestamp_query);
  return j.dump();
}

std::string serialize(const ResponseSample& s) {
  json j{{"kind", "sample"},
         {"question_id", s.question_id},
         {"sample_index", s.sample_index},
         {"text", s.text},
         {"decoding", decoding_to_json(s.decoding)}};
  if (s.token_logprobs) j["token_logprobs"] = tokens_to_json(*s.token_logprobs);
  return j.dump();
}

std::string serialize(const LabelRecord& l) {
  return json{{"kind", "label"},
              {"question_id", l.question_id},
              {"label", to_string(l.label)},
              {"judge", to_string(l.judge)},
              {"judge_detail", l.judge_detail}}
      .dump();
}

std::string serialize(const EmbeddingRecord& e) {
  json j{{"kind", "embedding"},
         {"question_id", e.question_id},
         {"target", to_string(e.target)},
         {"model", e.model},
         {"vector", e.vector}};
  if (e.target == EmbeddingTarget::Sample) j["sample_index"] = e.sample_index;
  if (!e.source_text.empty()) j["source_text"] = e.source_text;
  return j.dump();
}

std::string serialize(const EntailmentRecord& e) {
  return json{{"kind", "entailment"}, {"question_id", e.question_id}, {"directional", e.directional}}.dump();
}

std::string serialize(const ProbeRecord& p) {
  json j{{"kind", "probe"}, {"question_id", p.question_id}, {"available", p.available}, {"text", p.text}};
  if (p.token_logprobs) j["token_logprobs"] = tokens_to_json(*p.token_logprobs);
  return j.dump();
}

std::string serialize(const GroundingRecord& g) {
  return json{{"kind", "grounding"}, {"question_id", g.question_id}, {"reference_scores", g.reference_scores}}.dump();
}

std::string serialize(const ClusterRecord& c) {
  return json{{"kind", "cluster"},
              {"question_id", c.question_id},
              {"method", c.method},
              {"threshold", c.threshold},
              {"assignment", c.assignment},
              {"num_clusters", c.num_clusters}}
      .dump();
}

std::string serialize(const SignalRecord& s) {
  return json{{"kind", "signal"},
              {"question_id", s.question_id},
              {"name", s.name},
              {"value", s.value},
              {"config_hash", s.config_hash}}
      .dump();
}

std::vector<std::string> serialize_question(const QuestionData& q) {
  std::vector<std::string> lines;
  if (has_question(q)) lines.push_back(serialize(q.question));
  for (const auto& [sig, v] : q.samples)
    for (const auto& s : v) lines.push_back(serialize(s));
  for (const auto& [judge, l] : q.labels) lines.push_back(serialize(l));
  for (const auto& e : q.embeddings) lines.push_back(serialize(e));
  if (q.entailment) lines.push_back(serialize(*q.entailment));
  if (q.probe) lines.push_back(serialize(*q.probe));
  if (q.grounding) lines.push_back(serialize(*q.grounding));
  for (const auto& c : q.clusters) lines.push_back(serialize(c));
  for (const auto& s : q.signals) lines.push_back(serialize(s));
  return lines;
}

void write_run(const Run& run, std::ostream& out) {
  out << serialize(run.manifest) << '\n';
  for (const auto& [qid, q] : run.questions)
    for (const auto& line : serialize_question(q)) out << line << '\n';
}

void write_run(const Run& run, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PreconditionError("cannot write " + path.string());
  write_run(run, out);
}

// ---------------------------------------------------------------------------
// Ingest

namespace {

void add_parsed(Run& run, const json& j, std::size_t line, bool& saw_manifest) {
  if (!j.is_object()) bad(line, "record must be a JSON object");
  const auto kind = field<std::string>(j, "kind", line);

  if (kind == "manifest") {
    if (saw_manifest) throw IntegrityError("duplicate manifest record at line " + std::to_string(line));
    saw_manifest = true;
    RunManifest m;
    m.format_version = field<int>(j, "format_version", line);
    if (m.format_version != kFormatVersion)
      bad(line, "unsupported format_version " + std::to_string(m.format_version));
    m.run_id = opt_field<std::string>(j, "run_id", line).value_or("");
    m.model_name = opt_field<std::string>(j, "model_name", line).value_or("");
    m.endpoint_url = opt_field<std::string>(j, "endpoint_url", line).value_or("");
    if (auto d = j.find("decoding"); d != j.end()) m.decoding = decoding_from_json(*d, line);
    m.n = field<int>(j, "n", line);
    if (m.n < 1) bad(line, "manifest n must be >= 1");
    m.created_at = opt_field<std::string>(j, "created_at", line).value_or("");
    m.dataset_name = opt_field<std::string>(j, "dataset_name", line).value_or("");
    m.embedding_dim = opt_field<int>(j, "embedding_dim", line);
    run.manifest = std::move(m);
    return;
  }

  const auto qid = field<std::string>(j, "question_id", line);
  if (qid.empty()) bad(line, "empty question_id");

  if (kind == "question") {
    QuestionRecord q;
    q.question_id = qid;
    q.text = text::nfc(field<std::string>(j, "text", line));
    q.category = opt_field<std::string>(j, "category", line);
    if (auto g = opt_field<std::vector<std::string>>(j, "gold_answers", line)) {
      for (auto& s : *g) s = text::nfc(s);
      q.gold_answers = std::move(g);
    }
    if (auto ts = opt_field<std::string>(j, "timestamp_query", line)) {
      try {
        q.timestamp_query = parse_date(*ts);
      } catch (const std::invalid_argument& e) {
        bad(line, e.what());
      }
    }
    auto& s = slot(run, qid);
    if (has_question(s)) throw IntegrityError("duplicate question_id '" + qid + "'");
    s.question = std::move(q);
  } else if (kind == "sample") {
    ResponseSample s;
    s.question_id = qid;
    s.sample_index = field<int>(j, "sample_index", line);
    if (s.sample_index < 0) bad(line, "negative sample_index");
    s.text = text::nfc(field<std::string>(j, "text", line));
    s.decoding = decoding_from_json(j.value("decoding", json::object({{"mode", "temperature"}})), line);
    if (auto t = j.find("token_logprobs"); t != j.end() && !t->is_null()) s.token_logprobs = tokens_from_json(*t, line);
    auto& v = slot(run, qid).samples[s.decoding.signature()];
    for (const auto& existing : v) {
      if (existing.sample_index == s.sample_index) {
        throw IntegrityError("duplicate sample: question '" + qid + "' sample_index " +
                             std::to_string(s.sample_index) + " (" + s.decoding.signature() + ")");
      }
    }
    insert_sorted_sample(v, std::move(s));
  } else if (kind == "label") {
    auto l = label_from_json(j, line);
    auto& labels = slot(run, qid).labels;
    if (labels.count(l.judge))
      throw IntegrityError("duplicate label for question '" + qid + "' judge " + to_string(l.judge));
    labels.emplace(l.judge, std::move(l));
  } else if (kind == "embedding") {
    EmbeddingRecord e;
    e.question_id = qid;
    try {
      e.target = parse_embedding_target(field<std::string>(j, "target", line));
    } catch (const std::invalid_argument& ex) {
      bad(line, ex.what());
    }
    e.sample_index = opt_field<int>(j, "sample_index", line).value_or(0);
    e.model = opt_field<std::string>(j, "model", line).value_or("");
    e.source_text = text::nfc(opt_field<std::string>(j, "source_text", line).value_or(""));
    e.vector = doubles(j, "vector", line);
    auto& embs = slot(run, qid).embeddings;
    const auto key = embedding_key(e);
    auto pos = std::lower_bound(embs.begin(), embs.end(), key,
                                [](const EmbeddingRecord& a, const std::string& k) { return embedding_key(a) < k; });
    if (pos != embs.end() && embedding_key(*pos) == key)
      throw IntegrityError("duplicate embedding for question '" + qid + "' target " + key);
    embs.insert(pos, std::move(e));
  } else if (kind == "entailment") {
    EntailmentRecord e;
    e.question_id = qid;
    e.directional = field<std::vector<std::vector<double>>>(j, "directional", line);
    auto& s = slot(run, qid);
    if (s.entailment) throw IntegrityError("duplicate entailment matrix for question '" + qid + "'");
    s.entailment = std::move(e);
  } else if (kind == "probe") {
    ProbeRecord p;
    p.question_id = qid;
    p.available = opt_field<bool>(j, "available", line).value_or(true);
    p.text = text::nfc(opt_field<std::string>(j, "text", line).value_or(""));
    if (auto t = j.find("token_logprobs"); t != j.end() && !t->is_null()) p.token_logprobs = tokens_from_json(*t, line);
    auto& s = slot(run, qid);
    if (s.probe) throw IntegrityError("duplicate probe for question '" + qid + "'");
    s.probe = std::move(p);
  } else if (kind == "grounding") {
    GroundingRecord g;
    g.question_id = qid;
    g.reference_scores = doubles(j, "reference_scores", line);
    auto& s = slot(run, qid);
    if (s.grounding) throw IntegrityError("duplicate grounding for question '" + qid + "'");
    s.grounding = std::move(g);
  } else if (kind == "cluster") {
    ClusterRecord c;
    c.question_id = qid;
    c.method = field<std::string>(j, "method", line);
    c.threshold = field<double>(j, "threshold", line);
    c.assignment = field<std::vector<int>>(j, "assignment", line);
    c.num_clusters = field<int>(j, "num_clusters", line);
    auto& cl = slot(run, qid).clusters;
    auto pos = std::find_if(cl.begin(), cl.end(), [&](const ClusterRecord& o) {
      return std::tie(o.method, o.threshold) >= std::tie(c.method, c.threshold);
    });
    if (pos != cl.end() && pos->method == c.method && pos->threshold == c.threshold)
      throw IntegrityError("duplicate cluster record for question '" + qid + "' method " + c.method);
    cl.insert(pos, std::move(c));
  } else if (kind == "signal") {
    SignalRecord s;
    s.question_id = qid;
    s.name = field<std::string>(j, "name", line);
    s.value = field<double>(j, "value", line);
    s.config_hash = opt_field<std::string>(j, "config_hash", line).value_or("");
    auto& sig = slot(run, qid).signals;
    auto pos = std::find_if(sig.begin(), sig.end(), [&](const SignalRecord& o) {
      return std::tie(o.name, o.config_hash) >= std::tie(s.name, s.config_hash);
    });
    if (pos != sig.end() && pos->name == s.name && pos->config_hash == s.config_hash)
      throw IntegrityError("duplicate signal '" + s.name + "' for question '" + qid + "'");
    sig.insert(pos, std::move(s));
  } else {
    bad(line, "unknown record kind '" + kind + "'");
  }
}

json parse_line(const std::string& raw, std::size_t line) {
  try {
    return json::parse(raw);
  } catch (const json::parse_error& e) {
    bad(line, std::string("malformed JSON: ") + e.what());
  }
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

void add_record(Run& run, const std::string& json_line, std::size_t line_no) {
  bool saw_manifest = true;  // a second manifest is never accepted here
  add_parsed(run, parse_line(json_line, line_no), line_no, saw_manifest);
}

Run ingest_run(std::istream& in) {
  Run run;
  bool saw_manifest = false;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (blank(raw)) continue;
    add_parsed(run, parse_line(raw, line), line, saw_manifest);
  }
  return run;
}

Run ingest_run(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("cannot open run file " + path.string());
  return ingest_run(in);
}

Counts merge_labels(Run& run, std::istream& labels, Judge judge) {
  std::vector<LabelRecord> parsed;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(labels, raw)) {
    ++line;
    if (blank(raw)) continue;
    const json j = parse_line(raw, line);
    if (!j.is_object()) bad(line, "label must be a JSON object");
    if (auto k = j.find("kind"); k != j.end() && *k != "label") bad(line, "expected kind 'label'");
    auto l = label_from_json(j, line);
    l.judge = judge;
    if (run.find(l.question_id) == nullptr) {
      throw ReferenceError("label references unknown question_id '" + l.question_id + "' (line " +
                           std::to_string(line) + ")");
    }
    parsed.push_back(std::move(l));
  }
  for (auto& l : parsed) {
    auto& slot_labels = run.questions.at(l.question_id).labels;
    slot_labels[l.judge] = std::move(l);
  }
  return run.counts();
}

Counts merge_labels(Run& run, const std::filesystem::path& labels, Judge judge) {
  std::ifstream in(labels, std::ios::binary);
  if (!in) throw PreconditionError("cannot open labels file " + labels.string());
  return merge_labels(run, in, judge);
}

std::vector<QuestionRecord> read_questions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("cannot open dataset " + path.string());
  std::vector<QuestionRecord> out;
  std::set<std::string> seen;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (blank(raw)) continue;
    json j = parse_line(raw, line);
    if (!j.is_object()) bad(line, "question must be a JSON object");
    if (!j.contains("kind")) j["kind"] = "question";
    if (j["kind"] != "question") bad(line, "expected kind 'question'");
    Run tmp;
    bool saw = true;
    add_parsed(tmp, j, line, saw);
    auto& q = tmp.questions.begin()->second.question;
    if (!seen.insert(q.question_id).second) throw IntegrityError("duplicate question_id '" + q.question_id + "'");
    out.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation

std::vector<Violation> validate_run(const Run& run) {
  std::vector<Violation> out;
  auto report = [&](std::string loc, std::string msg) { out.push_back({std::move(loc), std::move(msg)}); };

  std::optional<std::size_t> dim = run.manifest.embedding_dim
                                       ? std::optional<std::size_t>(static_cast<std::size_t>(*run.manifest.embedding_dim))
                                       : std::nullopt;
  const std::string default_sig = run.manifest.decoding.signature();

  auto check_tokens = [&](const std::string& loc, const std::vector<TokenLogprob>& toks) {
    for (std::size_t t = 0; t < toks.size(); ++t) {
      const auto& tok = toks[t];
      const std::string tloc = loc + "/token " + std::to_string(t);
      if (tok.chosen_logprob > 0)
        report(tloc, "positive logprob " + std::to_string(tok.chosen_logprob) + " for token '" + tok.token + "'");
      if (tok.top_alternatives.size() > kMaxAlternatives + 1)
        report(tloc, "more than " + std::to_string(kMaxAlternatives) + " alternatives");
      for (const auto& a : tok.top_alternatives) {
        if (a.logprob > 0)
          report(tloc, "positive alternative logprob " + std::to_string(a.logprob) + " for token '" + a.token + "'");
      }
    }
  };

  for (const auto& [qid, q] : run.questions) {
    if (!has_question(q)) {
      report(qid, "records reference a question_id with no question record");
      continue;
    }
    if (q.question.text.empty()) report(qid, "empty question text");

    for (const auto& [sig, samples] : q.samples) {
      for (const auto& s : samples) {
        if (s.token_logprobs) check_tokens(qid + "/sample " + std::to_string(s.sample_index), *s.token_logprobs);
      }
      if (sig == default_sig) {
        std::set<int> have;
        for (const auto& s : samples) have.insert(s.sample_index);
        for (int i = 0; i < run.manifest.n; ++i) {
          if (!have.count(i)) report(qid + "/sample " + std::to_string(i), "missing sample");
        }
        for (int i : have) {
          if (i >= run.manifest.n)
            report(qid + "/sample " + std::to_string(i), "sample_index beyond manifest N=" + std::to_string(run.manifest.n));
        }
      }
    }
    if (q.probe && q.probe->token_logprobs) check_tokens(qid + "/probe", *q.probe->token_logprobs);

    for (const auto& e : q.embeddings) {
      const std::string loc = qid + "/embedding " + to_string(e.target);
      if (e.vector.empty()) {
        report(loc, "empty embedding vector");
        continue;
      }
      if (!dim) dim = e.vector.size();
      if (e.vector.size() != *dim)
        report(loc, "dimension " + std::to_string(e.vector.size()) + " differs from run dimension " + std::to_string(*dim));
    }
    if (q.entailment) {
      const auto& m = q.entailment->directional;
      bool square = true;
      for (const auto& row : m) square = square && row.size() == m.size();
      if (!square) report(qid + "/entailment", "entailment matrix is not square");
      for (const auto& row : m)
        for (double p : row)
          if (!(p >= 0 && p <= 1)) {
            report(qid + "/entailment", "entailment probability outside [0,1]");
            break;
          }
    }
    if (q.grounding && q.question.gold_answers && q.grounding->reference_scores.size() != q.question.gold_answers->size())
      report(qid + "/grounding", "grounding score count differs from gold answer count");
  }
  return out;
}

}  // namespace scrkit::store
