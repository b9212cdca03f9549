#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "scrkit/store.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

using namespace scrkit;
using namespace scrkit::store;

namespace {

std::string manifest_line(int n = 10) {
  return R"({"kind":"manifest","format_version":1,"run_id":"r","model_name":"m","endpoint_url":"http://x","decoding":{"mode":"temperature","temperature":1.0,"top_p":1.0,"max_tokens":40,"seed":0},"n":)" +
         std::to_string(n) + R"(,"created_at":"","dataset_name":"d"})";
}

std::string question_line(const std::string& id, const std::string& text = "What is it?") {
  return R"({"kind":"question","question_id":")" + id + R"(","text":")" + text + R"("})";
}

std::string sample_line(const std::string& id, int idx, const std::string& text = "answer") {
  return R"({"kind":"sample","question_id":")" + id + R"(","sample_index":)" + std::to_string(idx) +
         R"(,"text":")" + text +
         R"(","decoding":{"mode":"temperature","temperature":1.0,"top_p":1.0,"max_tokens":40,"seed":)" +
         std::to_string(idx) + "}}";
}

Run ingest_string(const std::string& s) {
  std::istringstream in(s);
  return ingest_run(in);
}

std::string two_by_ten() {
  std::string s = manifest_line() + "\n";
  for (const char* q : {"q1", "q2"}) {
    s += question_line(q) + "\n";
    for (int i = 0; i < 10; ++i) s += sample_line(q, i) + "\n";
  }
  return s;
}

}  // namespace

TEST_CASE("ingest counts questions and samples") {
  SUBCASE("empty file") {
    const auto run = ingest_string("");
    CHECK(run.counts() == Counts{0, 0, 0});
  }
  SUBCASE("two questions with ten samples each") {
    const auto run = ingest_string(two_by_ten());
    CHECK(run.counts() == Counts{2, 20, 0});
    CHECK(run.stochastic_samples(run.at("q1")).size() == 10);
  }
}

TEST_CASE("duplicate sample index is an integrity error naming question and index") {
  const auto s = manifest_line() + "\n" + question_line("q1") + "\n" + sample_line("q1", 3) + "\n" +
                 sample_line("q1", 3, "other") + "\n";
  try {
    ingest_string(s);
    FAIL("expected IntegrityError");
  } catch (const IntegrityError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("q1") != std::string::npos);
    CHECK(msg.find('3') != std::string::npos);
  }
}

TEST_CASE("malformed line reports its line number") {
  const auto s = manifest_line() + "\n" + question_line("q1") + "\n{not json\n";
  try {
    ingest_string(s);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("round trip reproduces every field and line order does not matter") {
  std::string s = manifest_line(2) + "\n" +
                  R"({"kind":"question","question_id":"q1","text":"Who wrote it?","category":"lit","gold_answers":["Austen"],"timestamp_query":"2025-03-01"})" +
                  "\n" +
                  R"({"kind":"sample","question_id":"q1","sample_index":0,"text":"Jane Austen","decoding":{"mode":"temperature","temperature":1.0,"top_p":1.0,"max_tokens":40,"seed":7},"token_logprobs":[{"token":"Jane","logprob":-0.1,"top":[["Jane",-0.1],["J",null]]},{"token":" Austen","logprob":-0.30000000000000004,"top":[[" Austen",-0.30000000000000004]]}]})" +
                  "\n" + sample_line("q1", 1) + "\n" +
                  R"({"kind":"label","question_id":"q1","label":"correct","judge":"human","judge_detail":"x"})" + "\n" +
                  R"({"kind":"embedding","question_id":"q1","target":"question","model":"e","vector":[0.1,0.2,0.30000000000000004]})" +
                  "\n" + R"({"kind":"entailment","question_id":"q1","directional":[[1,0.25],[0.5,1]]})" + "\n" +
                  R"({"kind":"probe","question_id":"q1","available":true,"text":"True"})" + "\n" +
                  R"({"kind":"grounding","question_id":"q1","reference_scores":[0.9]})" + "\n";
  const auto run = ingest_string(s);
  std::ostringstream out;
  write_run(run, out);
  const auto again = ingest_string(out.str());
  CHECK(again == run);
  std::ostringstream out2;
  write_run(again, out2);
  CHECK(out2.str() == out.str());

  // A null logprob survives as -infinity.
  const auto& toks = *run.stochastic_samples(run.at("q1"))[0].token_logprobs;
  CHECK(std::isinf(toks[0].top_alternatives[1].logprob));

  std::vector<std::string> lines;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  std::mt19937 rng(3);
  for (int rep = 0; rep < 5; ++rep) {
    std::shuffle(lines.begin(), lines.end(), rng);
    std::string joined;
    for (const auto& l : lines) joined += l + "\n";
    CHECK(ingest_string(joined) == run);
  }
}

TEST_CASE("chosen token missing from alternatives is appended") {
  const auto s = manifest_line(1) + "\n" + question_line("q1") + "\n" +
                 R"({"kind":"sample","question_id":"q1","sample_index":0,"text":"a","decoding":{"mode":"temperature"},"token_logprobs":[{"token":"a","logprob":-1.0,"top":[["b",-0.5]]}]})" +
                 "\n";
  const auto run = ingest_string(s);
  const auto& alts = (*run.stochastic_samples(run.at("q1"))[0].token_logprobs)[0].top_alternatives;
  REQUIRE(alts.size() == 2);
  CHECK(alts[1].token == "a");
}

TEST_CASE("text is NFC normalized at ingest") {
  // "e" + combining acute accent composes to U+00E9.
  const auto run = ingest_string(manifest_line(1) + "\n" + question_line("q1", "caf\\u0065\\u0301") + "\n");
  CHECK(run.at("q1").question.text == "caf\xC3\xA9");
}

TEST_CASE("merge_labels attaches, overwrites and rejects unknown ids") {
  auto run = ingest_string(two_by_ten());
  std::istringstream labels(R"({"question_id":"q1","label":"correct","judge":"human"}
{"question_id":"q2","label":"incorrect","judge":"human"})");
  CHECK(merge_labels(run, labels, Judge::LlmJudge).labels == 2);
  CHECK(run.at("q1").labels.at(Judge::LlmJudge).label == Label::Correct);

  std::istringstream relabel(R"({"question_id":"q1","label":"incorrect"})");
  CHECK(merge_labels(run, relabel, Judge::LlmJudge).labels == 2);
  CHECK(run.at("q1").labels.at(Judge::LlmJudge).label == Label::Incorrect);

  const auto before = run;
  std::istringstream bad(R"({"question_id":"q1","label":"correct"}
{"question_id":"qX","label":"correct"})");
  CHECK_THROWS_AS(merge_labels(run, bad, Judge::LlmJudge), ReferenceError);
  CHECK(run == before);
}

TEST_CASE("best_label follows judge precedence") {
  auto run = ingest_string(two_by_ten());
  std::istringstream a(R"({"question_id":"q1","label":"incorrect"})");
  merge_labels(run, a, Judge::WordOverlap);
  std::istringstream b(R"({"question_id":"q1","label":"correct"})");
  merge_labels(run, b, Judge::GoldTemplate);
  CHECK(run.best_label(run.at("q1"))->judge == Judge::GoldTemplate);
  CHECK_FALSE(run.best_label(run.at("q2")).has_value());
}

TEST_CASE("validate_run reports violations") {
  SUBCASE("consistent run") { CHECK(validate_run(ingest_string(two_by_ten())).empty()); }
  SUBCASE("positive logprob cites the token") {
    auto s = two_by_ten();
    s += R"({"kind":"sample","question_id":"q1","sample_index":0,"text":"x","decoding":{"mode":"greedy","max_tokens":40},"token_logprobs":[{"token":"zap","logprob":0.5,"top":[]}]})";
    const auto v = validate_run(ingest_string(s));
    REQUIRE(v.size() >= 1);
    bool cites = false;
    for (const auto& x : v) cites = cites || x.message.find("zap") != std::string::npos;
    CHECK(cites);
  }
  SUBCASE("missing sample index") {
    std::string s = manifest_line() + "\n" + question_line("q1") + "\n";
    for (int i = 0; i < 10; ++i)
      if (i != 4) s += sample_line("q1", i) + "\n";
    const auto v = validate_run(ingest_string(s));
    REQUIRE(v.size() == 1);
    CHECK(v[0].message.find("missing") != std::string::npos);
  }
  SUBCASE("orphan sample") {
    const auto v = validate_run(ingest_string(manifest_line(1) + "\n" + sample_line("ghost", 0) + "\n"));
    REQUIRE(v.size() == 1);
    CHECK(v[0].locator == "ghost");
  }
}

TEST_CASE("decoding signature ignores seed and greedy ignores temperature") {
  Decoding a{DecodingMode::Temperature, 1.0, 1.0, 40, 1};
  Decoding b = a;
  b.seed = 99;
  CHECK(a.signature() == b.signature());
  Decoding g1{DecodingMode::Greedy, 0.0, 1.0, 40, 0};
  Decoding g2{DecodingMode::Greedy, 0.7, 0.5, 40, 0};
  CHECK(g1.signature() == g2.signature());
}
