#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "scrkit/gateway.hpp"
#include "scrkit/sampling.hpp"
#include "scrkit/signals.hpp"
#include "scrkit/stub.hpp"
#include "support.hpp"

#include <json.hpp>

#include <cmath>
#include <numeric>

using namespace scrkit;
using namespace scrkit::gateway;
using nlohmann::json;
using testsupport::TempDir;

namespace {

const char* kFixture =
    R"({"question_id":"q1","text":"What is the capital of France?","answers":["Paris is the capital.","The capital is Paris.","It is Lyon."],"entropy":0.2,"gold_answers":["Paris is the capital of France."]}
{"question_id":"q2","text":"Did Einstein meet Newton?","answers":["No, they never met."],"entropy":0.8,"gold_answers":["No, Newton died long before Einstein was born."]}
{"question_id":"q3","text":"What is 2+2?","answers":["4","Four","2+2 is 4"],"gold_answers":["4"],"category":"math"}
)";

struct Stubbed {
  TempDir dir;
  stub::StubServer server;
  std::vector<stub::StubQuestion> questions;

  explicit Stubbed(stub::StubOptions options = {}, const char* fixture = kFixture)
      : server(load(dir, fixture), options), questions(load(dir, fixture)) {
    server.start();
  }

  static std::vector<stub::StubQuestion> load(const TempDir& dir, const char* fixture) {
    testsupport::write_file(dir / "fixture.jsonl", fixture);
    return stub::read_fixture(dir / "fixture.jsonl");
  }

  GatewayConfig config(const std::string& cache = "cache") const {
    GatewayConfig c;
    c.chat = {server.base_url() + "/v1/chat/completions", "stub-model"};
    c.embedding = {server.base_url() + "/v1/embeddings", "stub-embed"};
    c.entailment = {server.base_url() + "/entailment", ""};
    c.cache_dir = dir / cache;
    c.backoff_seconds = 0.0;
    c.timeout_seconds = 10.0;
    c.api_key_env = "";
    return c;
  }

  std::vector<store::QuestionRecord> records() const {
    std::vector<store::QuestionRecord> out;
    for (const auto& q : questions) out.push_back(q.question);
    return out;
  }
};

store::Decoding temperature(double t = 1.0, int max_tokens = 64) {
  store::Decoding d;
  d.mode = store::DecodingMode::Temperature;
  d.temperature = t;
  d.max_tokens = max_tokens;
  return d;
}

double norm(const std::vector<double>& v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

}  // namespace

TEST_CASE("config parsing applies defaults and rejects unknown keys") {
  const auto c = parse_gateway_config(R"({"chat_model":"m","max_in_flight":2,"protocol":"generate"})");
  CHECK(c.chat.model == "m");
  CHECK(c.max_in_flight == 2);
  CHECK(c.protocol == ChatProtocol::Generate);
  CHECK(c.top_k == 10);
  CHECK(c.prompt_prefix.empty());
  CHECK_THROWS_AS(parse_gateway_config(R"({"chat_modle":"m"})"), SchemaError);
  CHECK_THROWS_AS(parse_gateway_config(R"({"max_in_flight":0})"), PreconditionError);
  CHECK_THROWS_AS(parse_gateway_config(R"({"timeout_seconds":0})"), PreconditionError);
  CHECK_THROWS_AS(parse_gateway_config(R"({"top_k":21})"), PreconditionError);
  CHECK_THROWS_AS(parse_gateway_config("[1]"), SchemaError);
}

TEST_CASE("per-sample seeds are stable and distinct") {
  CHECK(sample_seed(42, "q1", 0) == sample_seed(42, "q1", 0));
  std::set<std::int64_t> seen;
  for (int i = 0; i < 100; ++i) seen.insert(sample_seed(42, "q1", i));
  CHECK(seen.size() == 100);
  CHECK(sample_seed(42, "q1", 0) != sample_seed(43, "q1", 0));
  CHECK(sample_seed(42, "q1", 0) != sample_seed(42, "q2", 0));
  CHECK(sample_seed(42, "q1", 0) >= 0);
}

TEST_CASE("cache key changes with every field") {
  const auto base = DiskCache::key("http://a/x", "m", "{}");
  CHECK(base == DiskCache::key("http://a/x", "m", "{}"));
  CHECK(base != DiskCache::key("http://a/y", "m", "{}"));
  CHECK(base != DiskCache::key("http://a/x", "n", "{}"));
  CHECK(base != DiskCache::key("http://a/x", "m", "{ }"));
  TempDir dir;
  DiskCache cache(dir.path());
  CHECK_FALSE(cache.get(base));
  cache.put(base, "body");
  CHECK(cache.get(base) == std::optional<std::string>("body"));
}

TEST_CASE("N=10 against the stub persists every sample and fills the cache") {
  Stubbed s;
  Gateway gw(s.config());
  sampling::SamplingOptions opt;
  opt.n = 10;
  opt.decoding = temperature();
  opt.deterministic = true;
  const auto run_file = s.dir / "run.jsonl";
  const auto report = sampling::run_sampling(s.records(), gw, opt, run_file);
  CHECK(report.completed == 3);
  CHECK_FALSE(report.partial());
  const auto run = store::ingest_run(run_file);
  CHECK(run.counts().questions == 3);
  CHECK(run.counts().samples == 30);
  CHECK(store::validate_run(run).empty());
  CHECK(report.gateway.network_calls == 30);
  CHECK(testsupport::count_files(s.dir / "cache") == 30);

  // Distinct seeds reach the server, so a three-answer pool yields more than one answer.
  std::set<std::string> texts;
  for (const auto& smp : run.stochastic_samples(run.at("q1"))) texts.insert(smp.text);
  CHECK(texts.size() > 1);

  SUBCASE("rerunning the same command issues no network calls and writes identical bytes") {
    const auto first = testsupport::read_file(run_file);
    std::filesystem::remove(run_file);
    Gateway again(s.config());
    const auto before = s.server.requests();
    const auto r2 = sampling::run_sampling(s.records(), again, opt, run_file);
    CHECK(r2.gateway.network_calls == 0);
    CHECK(r2.gateway.cache_hits == 30);
    CHECK(s.server.requests() == before);
    CHECK(testsupport::read_file(run_file) == first);
  }
}

TEST_CASE("two injected 500s then success records two retries") {
  stub::StubOptions o;
  o.fail_first = 2;
  Stubbed s(o);
  Gateway gw(s.config());
  const auto smp = gw.sample(s.questions[0].question, 0, temperature());
  CHECK_FALSE(smp.text.empty());
  CHECK(gw.stats().retries == 2);
  CHECK(gw.stats().network_calls == 3);
  REQUIRE(gw.request_log().size() == 1);
  CHECK(gw.request_log()[0].attempts == 3);
  CHECK(gw.request_log()[0].status == 200);
}

TEST_CASE("retries stop at max_retries and surface the body verbatim") {
  stub::StubOptions o;
  o.fail_first = 100;
  Stubbed s(o);
  auto cfg = s.config();
  cfg.max_retries = 2;
  Gateway gw(cfg);
  try {
    (void)gw.sample(s.questions[0].question, 0, temperature());
    FAIL("expected a transport error");
  } catch (const TransportError& e) {
    CHECK(std::string(e.what()).find(R"({"error":"injected stub failure"})") != std::string::npos);
    CHECK(std::string(e.what()).find("HTTP 500") != std::string::npos);
  }
  CHECK(gw.request_log().back().attempts == 3);
  CHECK(s.server.requests() == 3);
}

TEST_CASE("client errors are not retried") {
  Stubbed s;
  Gateway gw(s.config());
  store::QuestionRecord unknown{"qx", "A question the stub has never seen", {}, {}, {}};
  CHECK_THROWS_AS((void)gw.sample(unknown, 0, temperature()), TransportError);
  CHECK(gw.stats().retries == 0);
  CHECK(gw.stats().failures == 1);
}

TEST_CASE("transport failures mark questions incomplete and the run continues") {
  Stubbed s;
  auto cfg = s.config();
  cfg.max_retries = 0;
  Gateway gw(cfg);
  auto qs = s.records();
  qs.insert(qs.begin() + 1, store::QuestionRecord{"qx", "A question the stub has never seen", {}, {}, {}});
  sampling::SamplingOptions opt;
  opt.n = 2;
  opt.decoding = temperature();
  opt.workers = 1;
  const auto report = sampling::run_sampling(qs, gw, opt, s.dir / "run.jsonl");
  CHECK(report.partial());
  REQUIRE(report.failures.size() == 1);
  CHECK(report.failures[0].question_id == "qx");
  CHECK(report.completed == 3);
  const auto run = store::ingest_run(s.dir / "run.jsonl");
  CHECK(run.counts().samples == 6);
}

TEST_CASE("at most P requests are in flight") {
  stub::StubOptions o;
  o.latency_ms = 15;
  Stubbed s(o);
  auto cfg = s.config();
  cfg.max_in_flight = 3;
  Gateway gw(cfg);
  sampling::SamplingOptions opt;
  opt.n = 4;
  opt.decoding = temperature();
  opt.workers = 8;
  opt.embed = true;
  (void)sampling::run_sampling(s.records(), gw, opt, s.dir / "run.jsonl");
  CHECK(s.server.peak_in_flight() <= 3);
  CHECK(gw.peak_in_flight() <= 3);
  CHECK(s.server.peak_in_flight() >= 2);
}

TEST_CASE("greedy logprobs are parsed field for field") {
  const std::string payload = R"({"choices":[{"message":{"role":"assistant","content":"Paris it"},
    "logprobs":{"content":[
      {"token":"Paris","logprob":-0.1,"top_logprobs":[{"token":"Paris","logprob":-0.1},{"token":"Lyon","logprob":-2.5}]},
      {"token":" it","logprob":-1.0,"top_logprobs":[{"token":" is","logprob":-0.5},{"token":" was","logprob":null}]}]}}]})";
  std::string seen_body;
  HttpPost fake = [&](const std::string&, const std::string& body, const auto&, double) {
    seen_body = body;
    return HttpResponse{200, payload};
  };
  GatewayConfig cfg;
  cfg.use_cache = false;
  Gateway gw(cfg, fake);
  store::QuestionRecord q{"q1", "Capital of France?", {}, {}, {}};
  const auto s = gw.greedy_with_logprobs(q, 16, 2);
  const json req = json::parse(seen_body);
  CHECK(req.at("temperature").get<double>() == 0.0);
  CHECK(req.at("logprobs").get<bool>());
  CHECK(req.at("top_logprobs").get<int>() == 2);
  CHECK(req.at("max_tokens").get<int>() == 16);

  CHECK(s.text == "Paris it");
  CHECK(s.decoding.mode == store::DecodingMode::Greedy);
  REQUIRE(s.token_logprobs);
  const std::vector<store::TokenLogprob> expected = {
      {"Paris", -0.1, {{"Paris", -0.1}, {"Lyon", -2.5}}},
      // The chosen token is appended when missing; null becomes -inf.
      {" it", -1.0, {{" is", -0.5}, {" was", -std::numeric_limits<double>::infinity()}, {" it", -1.0}}},
  };
  CHECK(*s.token_logprobs == expected);
}

TEST_CASE("endpoints without logprobs raise an unavailable-signal error naming the capability") {
  stub::StubOptions o;
  o.logprobs = false;
  Stubbed s(o);
  Gateway gw(s.config());
  try {
    (void)gw.greedy_with_logprobs(s.questions[0].question, 32, 10);
    FAIL("expected UnavailableSignalError");
  } catch (const UnavailableSignalError& e) {
    CHECK(std::string(e.what()).find("logprobs") != std::string::npos);
  }
}

TEST_CASE("top_k=1 gives zero entropy features downstream") {
  Stubbed s;
  Gateway gw(s.config());
  const auto g = gw.greedy_with_logprobs(s.questions[1].question, 32, 1);
  const auto f = signals::entropy_features(g, 0.0);
  CHECK(f.token_count > 0);
  CHECK(f.mean == 0.0);
  CHECK(f.max == 0.0);
  CHECK(f.hi_ratio == 0.0);
}

TEST_CASE("stub logprobs carry the planted entropy level") {
  Stubbed s;
  Gateway gw(s.config());
  const auto low = signals::entropy_features(gw.greedy_with_logprobs(s.questions[0].question, 32, 10), 0.0);
  const auto high = signals::entropy_features(gw.greedy_with_logprobs(s.questions[1].question, 32, 10), 0.0);
  CHECK(low.mean < high.mean);
  CHECK(high.max <= std::log(10.0) + 1e-9);
}

TEST_CASE("the generate adapter round-trips through the stub") {
  Stubbed s;
  auto cfg = s.config();
  cfg.protocol = ChatProtocol::Generate;
  cfg.chat.url = s.server.base_url() + "/api/generate";
  Gateway gw(cfg);
  const auto g = gw.greedy_with_logprobs(s.questions[0].question, 32, 5);
  CHECK(g.text == "Paris is the capital.");
  REQUIRE(g.token_logprobs);
  CHECK(g.token_logprobs->size() == 4);
  CHECK(g.token_logprobs->front().top_alternatives.size() == 5);
}

TEST_CASE("embeddings are unit length, deduplicated and passed through") {
  Stubbed s;
  Gateway gw(s.config());
  const auto v = gw.embed_texts({"Paris is the capital.", "Paris is the capital.", "", "Lyon"});
  REQUIRE(v.size() == 4);
  for (const auto& e : v) CHECK(std::abs(norm(e) - 1.0) < 1e-9);
  CHECK(v[0] == v[1]);
  auto raw = stub::hashed_bigram_embedding("Paris is the capital.", 64);
  const double n = norm(raw);
  for (std::size_t i = 0; i < raw.size(); ++i) CHECK(std::abs(v[0][i] - raw[i] / n) < 1e-12);
  CHECK(v[2] == stub::hashed_bigram_embedding("", 64));
  CHECK(gw.embedding_dimension() == std::optional<std::size_t>(64));
  // One batch with the three unique texts.
  CHECK(s.server.requests() == 1);

  const auto again = gw.embed_texts({"Lyon", "Paris is the capital."});
  CHECK(again[0] == v[3]);
  CHECK(s.server.requests() == 1);
  CHECK(gw.stats().cache_hits == 2);
}

TEST_CASE("embedding dimension changes within a run are integrity errors") {
  Stubbed s;
  Gateway gw(s.config());
  gw.expect_embedding_dimension(32);
  CHECK_THROWS_AS((void)gw.embed_texts({"x y"}), IntegrityError);
}

TEST_CASE("entailment extraction") {
  SUBCASE("fixed stub probability") {
    stub::StubOptions o;
    o.fixed_entailment = 0.93;
    Stubbed s(o);
    Gateway gw(s.config());
    CHECK(gw.entailment_score("a", "b") == 0.93);
  }
  SUBCASE("identity reaches the floor") {
    Stubbed s;
    Gateway gw(s.config());
    CHECK(gw.entailment_score("Paris is the capital.", "Paris is the capital.") >= 0.99);
  }
  SUBCASE("unrecognised labels are a schema error listing them") {
    stub::StubOptions o;
    o.entailment_schema_ok = false;
    Stubbed s(o);
    Gateway gw(s.config());
    try {
      (void)gw.entailment_score("a", "b");
      FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
      const std::string what = e.what();
      CHECK(what.find("LABEL_0") != std::string::npos);
      CHECK(what.find("LABEL_2") != std::string::npos);
    }
  }
  SUBCASE("accepted response shapes") {
    CHECK(parse_entailment_response(R"({"entailment":0.7,"neutral":0.2,"contradiction":0.1})") == 0.7);
    CHECK(parse_entailment_response(R"([{"label":"ENTAILMENT","score":0.4}])") == 0.4);
    CHECK(parse_entailment_response(R"({"predictions":[[{"label":"Entailment","probability":0.6}]]})") == 0.6);
    CHECK(parse_entailment_response(R"({"scores":{"entailment":0.25}})") == 0.25);
    CHECK_THROWS_AS(parse_entailment_response(R"({"entailment":1.5})"), SchemaError);
    CHECK_THROWS_AS(parse_entailment_response("not json"), SchemaError);
  }
}

TEST_CASE("the P(True) probe") {
  Stubbed s;
  Gateway gw(s.config());
  const auto& q = s.questions[0].question;
  const auto yes = gw.ptrue_probe(q, "Paris is the capital.");
  CHECK(yes.available);
  CHECK(yes.text == "True");
  REQUIRE(yes.token_logprobs);
  CHECK(signals::ptrue_score(yes).p_true == doctest::Approx(0.9));
  const auto no = gw.ptrue_probe(q, "It is Lyon.");
  CHECK(no.text == "False");
  CHECK(signals::ptrue_score(no).p_true == doctest::Approx(0.1));

  HttpPost timeout = [](const std::string& url, const std::string&, const auto&, double) -> HttpResponse {
    throw TransportError("POST " + url + " failed: Read timeout");
  };
  GatewayConfig cfg;
  cfg.use_cache = false;
  cfg.max_retries = 0;
  Gateway slow(cfg, timeout);
  const auto none = slow.ptrue_probe(q, "Paris");
  CHECK_FALSE(none.available);
  CHECK(none.question_id == "q1");
}

TEST_CASE("a fully enriched run validates") {
  Stubbed s;
  Gateway gw(s.config());
  sampling::SamplingOptions opt;
  opt.n = 3;
  opt.decoding = temperature();
  opt.greedy = true;
  opt.probe = true;
  opt.embed = true;
  opt.entail = true;
  opt.deterministic = true;
  (void)sampling::run_sampling(s.records(), gw, opt, s.dir / "run.jsonl");
  const auto run = store::ingest_run(s.dir / "run.jsonl");
  CHECK(store::validate_run(run).empty());
  CHECK(run.manifest.embedding_dim == std::optional<int>(64));
  const auto& q2 = run.at("q2");
  CHECK(run.greedy(q2) != nullptr);
  CHECK(q2.probe.has_value());
  CHECK(q2.entailment.has_value());
  CHECK(q2.entailment->directional.size() == 3);
  CHECK(q2.grounding.has_value());
  // Question, three samples, greedy and the two entities.
  CHECK(q2.embeddings.size() == 7);
  CHECK(run.at("q3").embeddings.size() == 5);
}

TEST_CASE("nucleus decoding is recorded in every sample") {
  Stubbed s;
  Gateway gw(s.config());
  sampling::SamplingOptions opt;
  opt.n = 2;
  opt.decoding.mode = store::DecodingMode::Nucleus;
  opt.decoding.top_p = 0.9;
  (void)sampling::run_sampling(s.records(), gw, opt, s.dir / "run.jsonl");
  const auto run = store::ingest_run(s.dir / "run.jsonl");
  for (const auto& [id, q] : run.questions) {
    for (const auto& smp : run.stochastic_samples(q)) {
      CHECK(smp.decoding.mode == store::DecodingMode::Nucleus);
      CHECK(smp.decoding.top_p == 0.9);
      CHECK(smp.decoding.seed == sample_seed(42, id, smp.sample_index));
    }
  }
}

TEST_CASE("an interrupted run resumes with the remaining work only") {
  Stubbed s;
  auto cfg = s.config();
  cfg.use_cache = false;
  sampling::SamplingOptions opt;
  opt.n = 2;
  opt.decoding = temperature();
  opt.workers = 1;
  opt.on_question = [](const std::string& id, bool) {
    if (id == "q1") throw sampling::Interrupted();
  };
  const auto run_file = s.dir / "run.jsonl";
  {
    Gateway gw(cfg);
    CHECK_THROWS_AS(sampling::run_sampling(s.records(), gw, opt, run_file), sampling::Interrupted);
  }
  CHECK(store::ingest_run(run_file).counts().questions == 1);

  opt.on_question = nullptr;
  Gateway gw(cfg);
  const auto report = sampling::run_sampling(s.records(), gw, opt, run_file);
  CHECK(report.skipped == 1);
  CHECK(report.gateway.network_calls == 4);
  CHECK(store::ingest_run(run_file).counts().samples == 6);
  CHECK(store::validate_run(store::ingest_run(run_file)).empty());

  SUBCASE("missing sample indices are filled") {
    std::istringstream lines(testsupport::read_file(run_file));
    std::string kept, line;
    while (std::getline(lines, line)) {
      if (line.find(R"("kind":"sample")") != std::string::npos && line.find(R"("question_id":"q3")") != std::string::npos &&
          line.find(R"("sample_index":1)") != std::string::npos) {
        continue;
      }
      kept += line + "\n";
    }
    // A torn final line from a crash is tolerated.
    testsupport::write_file(run_file, kept + R"({"kind":"sample","question_)");
    Gateway fill(cfg);
    const auto r = sampling::run_sampling(s.records(), fill, opt, run_file);
    CHECK(r.gateway.network_calls == 1);
    CHECK(store::ingest_run(run_file).counts().samples == 6);
  }
}

TEST_CASE("resuming with different sampling settings is refused") {
  Stubbed s;
  Gateway gw(s.config());
  sampling::SamplingOptions opt;
  opt.n = 2;
  opt.decoding = temperature();
  (void)sampling::run_sampling(s.records(), gw, opt, s.dir / "run.jsonl");
  opt.n = 3;
  CHECK_THROWS_AS(sampling::run_sampling(s.records(), gw, opt, s.dir / "run.jsonl"), PreconditionError);
}
