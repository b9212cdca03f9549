#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "scrkit/cascade.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

using namespace scrkit;
using namespace scrkit::cascade;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<BoundaryConfig> three_stages() {
  return {
      {"b1", "b1", 0.0, 0.2, 0.8, 0.5},
      {"b2", "b2", 1.0, 0.3, 0.9, 0.3},
      {"b3", "b3", 2.0, 0.1, 0.95, 0.2},
  };
}

struct CountingProvider {
  std::vector<double> scores;
  std::vector<int> calls;
  explicit CountingProvider(std::vector<double> s) : scores(std::move(s)), calls(scores.size(), 0) {}
  ScoreProvider fn() {
    return [this](std::size_t i) {
      ++calls[i];
      return scores[i];
    };
  }
};

}  // namespace

TEST_CASE("cascade hand traces") {
  const auto stages = three_stages();
  SUBCASE("first stage flags") {
    CountingProvider p({0.85, 0.5, 0.5});
    const auto o = run_cascade(p.fn(), stages, 0.5);
    CHECK(o.flag == 1);
    CHECK(o.score == 0.85);
    CHECK(o.exit_stage == "b1");
    CHECK(o.exit_index == 0);
    CHECK(o.incurred_cost == 0.0);
    CHECK(p.calls == std::vector<int>{1, 0, 0});
    CHECK(o.stages[1].status == StageStatus::NotReached);
  }
  SUBCASE("gray zone throughout, sum below tau_global") {
    // 0.5*0.5 + 0.3*0.6 + 0.2*0.7 = 0.57 < 0.6
    CountingProvider p({0.5, 0.6, 0.7});
    const auto o = run_cascade(p.fn(), stages, 0.6);
    CHECK(o.flag == 0);
    CHECK(o.exit_stage == kGlobalStage);
    CHECK(o.exit_index == 3);
    CHECK(o.accumulated == doctest::Approx(0.57));
    CHECK(o.score == doctest::Approx(0.57));
    CHECK(o.incurred_cost == 3.0);
    CHECK(p.calls == std::vector<int>{1, 1, 1});
  }
  SUBCASE("same scores above tau_global") {
    CountingProvider p({0.5, 0.6, 0.7});
    CHECK(run_cascade(p.fn(), stages, 0.5).flag == 1);
  }
  SUBCASE("second stage clears after accumulating the first") {
    CountingProvider p({0.5, 0.25, 0.99});
    const auto o = run_cascade(p.fn(), stages, 0.5);
    CHECK(o.flag == 0);
    CHECK(o.exit_stage == "b2");
    CHECK(o.score == 0.25);
    CHECK(o.accumulated == doctest::Approx(0.25));
    CHECK(o.incurred_cost == 1.0);
    CHECK(o.stages[0].status == StageStatus::Accumulated);
    CHECK(o.stages[1].status == StageStatus::Cleared);
    CHECK(p.calls == std::vector<int>{1, 1, 0});
  }
  SUBCASE("scores equal to a threshold stay in the gray zone") {
    CountingProvider p({0.8, 0.3, 0.1});
    const auto o = run_cascade(p.fn(), stages, 10.0);
    CHECK(o.exit_stage == kGlobalStage);
  }
  SUBCASE("an unavailable stage is skipped, charged and recorded") {
    const ScoreProvider fail_b1 = [](std::size_t i) -> double {
      if (i == 0) throw UnavailableSignalError("no logprobs");
      return i == 1 ? 0.95 : 0.0;
    };
    const auto o = run_cascade(fail_b1, stages, 0.5);
    CHECK(o.stages[0].status == StageStatus::Unavailable);
    CHECK(o.stages[0].note.find("no logprobs") != std::string::npos);
    CHECK(o.exit_stage == "b2");
    CHECK(o.flag == 1);
    CHECK(o.incurred_cost == 1.0);
    const ScoreProvider down = [](std::size_t) -> double { throw TransportError("refused"); };
    const auto all_down = run_cascade(down, stages, 0.5);
    CHECK(all_down.exit_stage == kGlobalStage);
    CHECK(all_down.flag == 0);
  }
  SUBCASE("invalid configurations") {
    CountingProvider p({0.5});
    std::vector<BoundaryConfig> unsorted = {{"b", "b", 2.0, 0.1, 0.9, 1.0}, {"a", "a", 1.0, 0.1, 0.9, 1.0}};
    CHECK_THROWS_AS(run_cascade(p.fn(), unsorted, 0.5), PreconditionError);
    std::vector<BoundaryConfig> inverted = {{"a", "a", 0.0, 0.9, 0.1, 1.0}};
    CHECK_THROWS_AS(run_cascade(p.fn(), inverted, 0.5), PreconditionError);
    CHECK_THROWS_AS(run_cascade(p.fn(), std::vector<BoundaryConfig>{}, 0.5), PreconditionError);
  }
}

TEST_CASE("cascade matches a direct transcription of the algorithm") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u;
  for (int rep = 0; rep < 2000; ++rep) {
    const std::size_t k = 1 + static_cast<std::size_t>(rep % 5);
    std::vector<BoundaryConfig> stages;
    double cost = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      cost += u(rng);
      double lo = u(rng), hi = u(rng);
      if (lo > hi) std::swap(lo, hi);
      stages.push_back({"s" + std::to_string(i), "", cost, lo, hi, u(rng)});
    }
    std::vector<double> s(k);
    for (auto& x : s) x = u(rng);
    const double tau = u(rng);

    int flag = 0;
    double acc = 0.0, spent = 0.0;
    std::size_t exit = k;
    for (std::size_t i = 0; i < k && exit == k; ++i) {
      spent += stages[i].cost;
      if (s[i] > stages[i].tau_high) {
        flag = 1;
        exit = i;
      } else if (s[i] < stages[i].tau_low) {
        exit = i;
      } else {
        acc += stages[i].weight * s[i];
      }
    }
    if (exit == k) flag = acc > tau ? 1 : 0;

    CountingProvider p(s);
    const auto o = run_cascade(p.fn(), stages, tau);
    REQUIRE(o.flag == flag);
    REQUIRE(o.exit_index == exit);
    REQUIRE(o.incurred_cost == doctest::Approx(spent));
    for (std::size_t i = 0; i < k; ++i) REQUIRE(p.calls[i] == (i <= exit ? 1 : 0));
  }
}

TEST_CASE("cost and coverage accounting") {
  const std::vector<double> unit = {1.0, 1.0};
  const auto r = cascade_cost(unit, std::vector<double>{0.5});
  CHECK(r.c_cascade == 1.5);
  CHECK(r.c_parallel == 2.0);
  CHECK(r.savings == 0.25);
  CHECK(cascade_cost(unit, std::vector<double>{1.0, 1.0}).c_cascade == 2.0);
  const std::vector<double> three = {1.0, 2.0, 4.0};
  CHECK(cascade_cost(three, std::vector<double>{1.0, 1.0}).c_cascade == cascade_cost(three, std::vector<double>{0.0, 0.0}).c_parallel);
  CHECK_THROWS_AS(cascade_cost(three, std::vector<double>{1.5, 0.2}), PreconditionError);

  CHECK(coverage_estimate(std::vector<double>{0.3}) == doctest::Approx(0.3));
  CHECK(coverage_estimate(std::vector<double>{0.5, 0.5}) == doctest::Approx(0.75));

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u;
  for (int rep = 0; rep < 100000; ++rep) {
    const std::size_t k = 1 + static_cast<std::size_t>(rep % 6);
    std::vector<double> c(k), b(k - 1), a(k);
    for (auto& x : c) x = 10.0 * u(rng);
    std::sort(c.begin(), c.end());
    for (auto& x : b) x = u(rng);
    for (auto& x : a) x = u(rng);
    const auto cr = cascade_cost(c, b);
    // Direct transcription of sum_i c_i prod_{j<i} beta_j.
    double want = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      double pass = 1.0;
      for (std::size_t j = 0; j < i; ++j) pass *= b[j];
      want += c[i] * pass;
    }
    REQUIRE(cr.c_cascade == doctest::Approx(want).epsilon(1e-12));
    REQUIRE(cr.c_cascade <= cr.c_parallel + 1e-12);
    REQUIRE(coverage_estimate(a) >= *std::max_element(a.begin(), a.end()) - 1e-15);
  }
}

TEST_CASE("config parsing and resolution") {
  std::istringstream in(R"({"format_version":1,"stages":[
    {"name":"b5","signal":"b5_grounding","tau_low":"-inf","tau_high":"inf"},
    {"name":"b1","signal":"b1_entropy_mean","cost":0,"tau_low":0.1,"tau_high":0.9,"weight":0.8}]})");
  const auto spec = parse_cascade_spec(in);
  REQUIRE(spec.stages.size() == 2);
  CHECK(spec.stages[0].tau_low == -kInf);
  CHECK(spec.stages[0].tau_high == kInf);
  CHECK_FALSE(spec.stages[0].cost.has_value());

  std::map<std::string, std::vector<double>> scores = {{"b5_grounding", {0, 1, 2, 3, 4}},
                                                       {"b1_entropy_mean", {1, 2, 3, 4, 5, 6, 7, 8, 9}}};
  const auto rc = resolve(spec, scores);
  REQUIRE(rc.stages.size() == 2);
  CHECK(rc.stages[0].name == "b1");  // cost 0 sorts ahead of B5's default 4
  CHECK(rc.stages[1].cost == 4.0);
  CHECK(rc.stages[1].weight == 0.5);
  // tau_global = 0.8 * median(b1) + 0.5 * median(b5)
  CHECK(rc.tau_global == doctest::Approx(0.8 * 5.0 + 0.5 * 2.0));

  CascadeSpec bare;
  bare.stages = {{"b2", "b2", {}, {}, {}, {}}};
  const auto q = resolve(bare, {{"b2", {0, 1, 2, 3, 4, 5, 6, 7, 8}}});
  CHECK(q.stages[0].tau_low == 2.0);
  CHECK(q.stages[0].tau_high == 6.0);
  CHECK(q.stages[0].cost == 1.0);
  const auto m = resolve(bare, {{"b2", {0, 1, 2, 3, 4, 5, 6, 7, 8}}}, ThresholdMode::Median);
  CHECK(m.stages[0].tau_low == 4.0);
  CHECK(m.stages[0].tau_high == 4.0);
  CHECK_THROWS_AS(resolve(bare, {}), PreconditionError);

  std::istringstream bad_version(R"({"format_version":2,"stages":[{"name":"a"}]})");
  CHECK_THROWS_AS(parse_cascade_spec(bad_version), SchemaError);
  std::istringstream bad_threshold(R"({"stages":[{"name":"a","tau_low":"low"}]})");
  CHECK_THROWS_AS(parse_cascade_spec(bad_threshold), SchemaError);
  std::istringstream not_json("stages: [a]");
  CHECK_THROWS_AS(parse_cascade_spec(not_json), SchemaError);
}

TEST_CASE("cascade evaluation over a run") {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution wrong(0.4);
  std::normal_distribution<double> g;
  std::vector<QueryRow> rows;
  for (int i = 0; i < 600; ++i) {
    QueryRow r;
    r.question_id = "q" + std::to_string(i);
    const int y = wrong(rng) ? 1 : 0;
    r.label = y;
    r.signals["b1"] = 0.8 * y + g(rng);
    r.signals["b2"] = 0.6 * y + g(rng);
    r.signals["b3"] = 0.5 * y + g(rng);
    rows.push_back(r);
  }
  rows.push_back({"unlabeled", std::nullopt, {{"b1", 0.0}, {"b2", 0.0}, {"b3", 0.0}}});

  SUBCASE("stage one never exits") {
    ResolvedConfig rc;
    rc.stages = {{"b1", "b1", 1.0, -kInf, kInf, 0.5}, {"b2", "b2", 2.0, -kInf, kInf, 0.5}};
    rc.tau_global = 0.3;
    const auto ev = evaluate_cascade(rows, rc);
    CHECK(ev.excluded_unlabeled == 1);
    CHECK(ev.outcomes.size() == 600);
    CHECK(ev.stage_stats.back().name == kGlobalStage);
    CHECK(ev.stage_stats.back().exited == 600);
    CHECK(ev.cost.c_cascade == ev.cost.c_parallel);
    CHECK(ev.mean_incurred_cost == 3.0);
  }
  SUBCASE("stage one always clears") {
    ResolvedConfig rc;
    rc.stages = {{"b1", "b1", 1.0, kInf, kInf, 0.5}, {"b2", "b2", 2.0, -kInf, kInf, 0.5}};
    const auto ev = evaluate_cascade(rows, rc);
    CHECK(ev.stage_stats[0].exited == 600);
    CHECK(ev.stage_stats[0].beta == 0.0);
    CHECK(ev.mean_incurred_cost == 1.0);
    CHECK(ev.provider_calls.at("b2") == 0);
  }
  SUBCASE("combined AUROC keeps pace with the best single boundary") {
    CascadeSpec spec;
    for (const char* s : {"b1", "b2", "b3"}) spec.stages.push_back({s, s, {}, {}, {}, {}});
    std::map<std::string, std::vector<double>> cal;
    for (const auto& r : rows)
      for (const auto& [k, v] : r.signals) cal[k].push_back(v);
    const auto rc = resolve(spec, cal);
    const auto ev = evaluate_cascade(rows, rc);
    double best = 0.0;
    for (const char* s : {"b1", "b2", "b3"}) {
      std::vector<double> sc;
      std::vector<int> y;
      for (const auto& r : rows)
        if (r.label) {
          sc.push_back(r.signals.at(s));
          y.push_back(*r.label);
        }
      best = std::max(best, oracle::auroc_pairs(sc, y));
    }
    REQUIRE(ev.combined_auroc.has_value());
    CHECK(*ev.combined_auroc >= best - 0.02);
    std::size_t exits = 0;
    for (const auto& st : ev.stage_stats) exits += st.exited;
    CHECK(exits == 600);
  }
  SUBCASE("a missing signal marks that stage unavailable") {
    auto partial = rows;
    partial[0].signals.erase("b1");
    ResolvedConfig rc;
    rc.stages = {{"b1", "b1", 0.0, -kInf, kInf, 1.0}, {"b2", "b2", 1.0, -kInf, kInf, 1.0}};
    const auto ev = evaluate_cascade(partial, rc);
    CHECK(ev.stage_stats[0].unavailable == 1);
    CHECK(ev.outcomes[0].stages[0].status == StageStatus::Unavailable);
  }
}
