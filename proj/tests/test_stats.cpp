#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "scrkit/stats.hpp"

#include <cmath>
#include <random>

using namespace scrkit;
using namespace scrkit::stats;

namespace {

std::vector<ScoredSample> rows(std::initializer_list<std::pair<double, int>> xs) {
  std::vector<ScoredSample> out;
  for (auto [s, l] : xs) out.push_back({s, l});
  return out;
}

std::vector<double> scores_of(const std::vector<ScoredSample>& s) {
  std::vector<double> out;
  for (const auto& x : s) out.push_back(x.score);
  return out;
}

std::vector<int> labels_of(const std::vector<ScoredSample>& s) {
  std::vector<int> out;
  for (const auto& x : s) out.push_back(x.label);
  return out;
}

/// Incorrect rows score N(shift, 1), correct rows N(0, 1); the population
/// AUROC is Phi(shift / sqrt 2).
std::vector<ScoredSample> binormal(std::mt19937_64& rng, std::size_t n, double shift, double p_incorrect = 0.4) {
  std::bernoulli_distribution wrong(p_incorrect);
  std::normal_distribution<double> g;
  std::vector<ScoredSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = wrong(rng) ? 1 : 0;
    out.push_back({g(rng) + (y ? shift : 0.0), y});
  }
  // Guarantee both classes.
  out[0].label = 0;
  out[1].label = 1;
  return out;
}

}  // namespace

TEST_CASE("AUROC examples") {
  CHECK(auroc(rows({{1, 0}, {2, 0}, {3, 1}, {4, 1}})) == 1.0);
  CHECK(auroc(rows({{5, 0}, {5, 1}, {5, 0}, {5, 1}})) == 0.5);
  CHECK(auroc(rows({{1, 0}, {2, 1}, {2, 0}, {3, 1}})) == 0.875);
  CHECK_THROWS_AS(auroc(rows({{1, 1}, {2, 1}})), DegenerateInputError);
}

TEST_CASE("AUROC matches pair enumeration and its invariants") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> coarse(0, 6);
  for (int rep = 0; rep < 300; ++rep) {
    auto s = binormal(rng, 5 + static_cast<std::size_t>(rep % 40), 0.7);
    if (rep % 2) for (auto& x : s) x.score = coarse(rng);  // heavy ties
    const double a = auroc(s);
    CHECK(a == doctest::Approx(oracle::auroc_pairs(scores_of(s), labels_of(s))).epsilon(1e-12));
    auto flipped = s;
    for (auto& x : flipped) x.label = 1 - x.label;
    CHECK(a + auroc(flipped) == 1.0);
    auto transformed = s;
    for (auto& x : transformed) x.score = std::exp(x.score / 4.0);
    CHECK(auroc(transformed) == a);
    for (auto& x : transformed) x.score = 3.0 * x.score - 7.0;
    CHECK(auroc(transformed) == a);
  }
}

TEST_CASE("bootstrap CI") {
  std::mt19937_64 rng(2);
  const auto s = binormal(rng, 200, 1.0);
  const BootstrapOptions opt{1000, 7, 0.95};
  const auto r1 = bootstrap_ci(s, Statistic::Auroc, opt);
  const auto r2 = bootstrap_ci(s, Statistic::Auroc, opt);
  CHECK(r1.ci_low == r2.ci_low);
  CHECK(r1.ci_high == r2.ci_high);
  CHECK(*r1.ci_low <= r1.estimate);
  CHECK(r1.estimate <= *r1.ci_high);
  CHECK(r1.estimate == auroc(s));

  const auto constant = rows({{1, 0}, {1, 1}, {1, 0}, {1, 1}, {1, 0}});
  const auto c = bootstrap_ci(constant, Statistic::Auroc, {500, 1, 0.95});
  CHECK(*c.ci_low == 0.5);
  CHECK(*c.ci_high == 0.5);

  CHECK_THROWS_AS(bootstrap_ci(s, Statistic::Auroc, {50, 1, 0.95}), PreconditionError);

  SUBCASE("coverage of the population AUROC") {
    const double truth = normal_cdf(1.0 / std::sqrt(2.0));
    int covered = 0;
    for (int rep = 0; rep < 100; ++rep) {
      const auto d = binormal(rng, 790, 1.0);
      const auto r = bootstrap_ci(d, Statistic::Auroc, {1000, static_cast<std::uint64_t>(rep), 0.95});
      covered += (*r.ci_low <= truth && truth <= *r.ci_high) ? 1 : 0;
    }
    CHECK(covered >= 93);
  }
}

TEST_CASE("DeLong difference test") {
  std::mt19937_64 rng(3);
  const auto s = binormal(rng, 300, 0.8);
  const BootstrapOptions opt{500, 1, 0.95};
  const auto same = auroc_diff_test(s, s, true, opt);
  CHECK(same.estimate == 0.0);
  CHECK(*same.p_value == 1.0);

  auto other = s;
  std::normal_distribution<double> g;
  for (auto& x : other) x.score += g(rng);
  const auto ab = auroc_diff_test(s, other, true, opt);
  const auto ba = auroc_diff_test(other, s, true, opt);
  CHECK(ab.estimate == -ba.estimate);
  CHECK(*ab.p_value == doctest::Approx(*ba.p_value).epsilon(1e-12));

  auto misaligned = other;
  misaligned.pop_back();
  CHECK_THROWS_AS(auroc_diff_test(s, misaligned, true, opt), AlignmentError);

  SUBCASE("power against a null signal") {
    int significant = 0;
    std::uniform_real_distribution<double> u;
    for (int rep = 0; rep < 100; ++rep) {
      const auto strong = binormal(rng, 500, 1.2);
      auto null = strong;
      for (auto& x : null) x.score = u(rng);
      significant += *auroc_diff_test(strong, null, false, {200, static_cast<std::uint64_t>(rep), 0.95}).p_value < 0.01;
    }
    CHECK(significant >= 95);
  }
}

TEST_CASE("Holm-Bonferroni") {
  CHECK(holm_bonferroni(std::vector<double>{0.03}) == std::vector<double>{0.03});
  const auto two = holm_bonferroni(std::vector<double>{0.01, 0.04});
  CHECK(two[0] == doctest::Approx(0.02));
  CHECK(two[1] == doctest::Approx(0.04));
  for (double p : holm_bonferroni(std::vector<double>(4, 0.1))) CHECK(p == doctest::Approx(0.4));
  for (double p : holm_bonferroni(std::vector<double>(4, 0.3))) CHECK(p == 1.0);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u;
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> p(static_cast<std::size_t>(1 + rep % 9));
    for (auto& x : p) x = u(rng) * u(rng);
    const auto got = holm_bonferroni(p);
    const auto want = oracle::holm(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
      CHECK(got[i] >= p[i]);
      for (std::size_t j = 0; j < p.size(); ++j)
        if (p[i] < p[j]) CHECK(got[i] <= got[j]);
    }
  }
}

TEST_CASE("Wilcoxon signed-rank") {
  const auto pos = wilcoxon_signed_rank(std::vector<double>{1, 2, 3, 4, 5, 6}, Alternative::Greater);
  CHECK(*pos.p_value == doctest::Approx(1.0 / 64.0));
  CHECK(pos.estimate == 21.0);
  CHECK(wilcoxon_signed_rank(std::vector<double>{1, -1, 2, -2, 3, -3}).p_value == 1.0);
  CHECK_THROWS_AS(wilcoxon_signed_rank(std::vector<double>(8, 0.0)), DegenerateInputError);
  CHECK_THROWS_AS(wilcoxon_signed_rank(std::vector<double>{1, 2, 0, 0}), PreconditionError);

  SUBCASE("exact tails match enumeration, ties and zeros included") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> v(-4, 6);
    for (int rep = 0; rep < 150; ++rep) {
      std::vector<double> d(static_cast<std::size_t>(5 + rep % 10));
      for (auto& x : d) x = v(rng);
      std::vector<double> nz;
      for (double x : d)
        if (x != 0.0) nz.push_back(x);
      if (nz.size() < 5) continue;
      const auto r = wilcoxon_signed_rank(d);
      const auto want = oracle::wilcoxon_enumerate(nz);
      CHECK(r.extra.at("p_greater") == doctest::Approx(want.p_greater).epsilon(1e-12));
      CHECK(r.extra.at("p_less") == doctest::Approx(want.p_less).epsilon(1e-12));
      CHECK(r.extra.at("n_used") == static_cast<double>(nz.size()));
    }
  }
  SUBCASE("large-sample shift is detected") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> g(0.4, 1.0);
    int detected = 0;
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> d(200);
      for (auto& x : d) x = g(rng);
      const auto r = wilcoxon_signed_rank(d, Alternative::Greater);
      CHECK(r.extra.at("exact") == 0.0);
      detected += *r.p_value < 0.001;
    }
    CHECK(detected >= 19);
  }
}

TEST_CASE("TOST equivalence") {
  std::mt19937_64 rng(7);
  const auto s = binormal(rng, 300, 0.8);
  CHECK(tost_equivalence(s, s, 0.05, {500, 1, 0.95}).extra.at("equivalent") == 1.0);
  CHECK(tost_equivalence(s, s, 0.001, {500, 1, 0.95}).extra.at("equivalent") == 1.0);
  CHECK_THROWS_AS(tost_equivalence(s, s, 0.0), PreconditionError);

  std::uniform_real_distribution<double> u;
  auto null = s;
  for (auto& x : null) x.score = u(rng);
  CHECK(tost_equivalence(s, null, 0.05, {500, 1, 0.95}).extra.at("equivalent") == 0.0);

  SUBCASE("small true difference inside the margin") {
    std::normal_distribution<double> jitter(0.0, 0.15);
    int equivalent = 0;
    for (int rep = 0; rep < 100; ++rep) {
      const auto a = binormal(rng, 401, 0.9);
      auto b = a;
      for (auto& x : b) x.score += jitter(rng);
      equivalent += tost_equivalence(a, b, 0.05, {300, static_cast<std::uint64_t>(rep), 0.95}).extra.at("equivalent") == 1.0;
    }
    CHECK(equivalent >= 90);
  }
}

TEST_CASE("Cohen's d") {
  CHECK(cohens_d_value(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}) == 0.0);
  // Both samples have SD 1 (n - 1 denominator) and means 1 apart.
  CHECK(cohens_d_value(std::vector<double>{0, 1, 2}, std::vector<double>{-1, 0, 1}) == doctest::Approx(1.0));
  CHECK(cohens_d_value(std::vector<double>{0, 0, 1, 1}, std::vector<double>{1, 1, 2, 2}) ==
        doctest::Approx(-1.0 / std::sqrt(1.0 / 3.0)));
  CHECK_THROWS_AS(cohens_d_value(std::vector<double>{1, 1}, std::vector<double>{2, 2}), DegenerateInputError);
  const auto r = cohens_d(std::vector<double>{0, 0, 1, 1, 2}, std::vector<double>{1, 1, 2, 2, 3}, {500, 3, 0.95});
  CHECK(*r.ci_low <= r.estimate);
  CHECK(r.estimate <= *r.ci_high);
}

TEST_CASE("Mann-Whitney U agrees with the AUROC") {
  const std::vector<double> a = {3, 2, 5, 4}, b = {1, 2, 0};
  const auto r = mann_whitney_u(a, b);
  std::vector<double> s = a;
  s.insert(s.end(), b.begin(), b.end());
  std::vector<int> l = {1, 1, 1, 1, 0, 0, 0};
  CHECK(r.extra.at("auc") == doctest::Approx(oracle::auroc_pairs(s, l)));
  CHECK(r.estimate == doctest::Approx(oracle::auroc_pairs(s, l) * 12.0));
}

TEST_CASE("independence measures") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> x(200);
  for (auto& v : x) v = u(rng);
  CHECK(pearson_value(x, x) == doctest::Approx(1.0));
  CHECK(distance_correlation_value(x, x) == doctest::Approx(1.0));
  CHECK_THROWS_AS(pearson_value(x, std::vector<double>(200, 1.0)), DegenerateInputError);
  CHECK_THROWS_AS(distance_correlation_value(x, std::vector<double>(200, 1.0)), DegenerateInputError);
  CHECK_THROWS_AS(pearson_r(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}), PreconditionError);
  CHECK(mutual_information_fd(x, std::vector<double>(200, 1.0)).estimate == 0.0);

  SUBCASE("y = x^2 is invisible to Pearson but not to dcor or HSIC") {
    std::vector<double> y;
    for (double v : x) y.push_back(v * v);
    CHECK(std::abs(pearson_value(x, y)) < 0.2);
    const PermutationOptions opt{200, 1};
    CHECK(*distance_correlation(x, y, opt).p_value < 0.05);
    CHECK(*hsic_test(x, y, opt).p_value < 0.05);
  }
  SUBCASE("MI of a variable with itself is its binned entropy") {
    for (int rep = 0; rep < 30; ++rep) {
      std::normal_distribution<double> g;
      std::vector<double> v(static_cast<std::size_t>(20 + rep * 7));
      for (auto& e : v) e = g(rng);
      CHECK(mutual_information_bits(v, v) == doctest::Approx(oracle::binned_entropy_bits(v)).epsilon(1e-10));
    }
  }
  SUBCASE("independent uniforms stay near the permutation null") {
    int small = 0;
    for (int rep = 0; rep < 100; ++rep) {
      std::vector<double> a(500), b(500);
      for (auto& e : a) e = u(rng);
      for (auto& e : b) e = u(rng);
      const auto r = mutual_information_fd(a, b, {200, static_cast<std::uint64_t>(rep)});
      CHECK(r.estimate >= 0.0);
      small += r.estimate < 3.0 * r.extra.at("null_mean");
    }
    CHECK(small >= 90);
  }
  SUBCASE("dcor lies in [0, 1] and is small under independence") {
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> a(100), b(100);
      for (auto& e : a) e = u(rng);
      for (auto& e : b) e = u(rng);
      const double d = distance_correlation_value(a, b);
      CHECK(d >= 0.0);
      CHECK(d <= 1.0);
    }
  }
  SUBCASE("permutation p-values are deterministic per seed") {
    std::vector<double> y(200);
    for (auto& v : y) v = u(rng);
    CHECK(*pearson_r(x, y, {300, 4}).p_value == *pearson_r(x, y, {300, 4}).p_value);
    CHECK(*hsic_test(x, y, {100, 4}).p_value == *hsic_test(x, y, {100, 4}).p_value);
  }
}

TEST_CASE("Freedman-Diaconis binning") {
  const auto b = freedman_diaconis(std::vector<double>{1.0, 1.0, 1.0});
  CHECK(b.bins == 1);
  std::vector<double> two = {0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0};
  CHECK(freedman_diaconis(two).bins >= 2);
  const auto bins = freedman_diaconis(std::vector<double>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(bins.index(-5.0) == 0);
  CHECK(bins.index(100.0) == bins.bins - 1);
}

TEST_CASE("ECE and Brier") {
  std::vector<int> half = {1, 0, 1, 0};
  CHECK(ece(std::vector<double>(4, 1.0), half) == doctest::Approx(0.5));
  CHECK(ece(std::vector<double>(4, 0.5), half) == doctest::Approx(0.0));
  CHECK(brier(std::vector<double>{1, 0, 1}, std::vector<int>{1, 0, 1}) == 0.0);
  CHECK(brier(std::vector<double>(4, 0.5), half) == 0.25);
  CHECK(brier(std::vector<double>{0.8, 0.3}, std::vector<int>{1, 0}) == doctest::Approx(0.065));

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u;
  std::vector<double> conf(10000);
  std::vector<int> correct(10000);
  for (std::size_t i = 0; i < conf.size(); ++i) {
    conf[i] = u(rng);
    correct[i] = u(rng) < conf[i] ? 1 : 0;
  }
  CHECK(ece(conf, correct) < 0.02);
  const auto table = reliability_table(conf, correct);
  std::size_t total = 0;
  for (const auto& b : table) total += b.count;
  CHECK(total == conf.size());
}

TEST_CASE("Platt calibration") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u;

  SUBCASE("compressed scores") {
    std::vector<double> raw(2000);
    std::vector<int> y(2000);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const double p = u(rng);  // true P(incorrect), wide spread
      y[i] = u(rng) < p ? 1 : 0;
      raw[i] = 0.4 + 0.2 * p;   // squeezed into [0.4, 0.6]
    }
    const auto r = platt_fit(raw, y, 5, 42);
    CHECK(r.ece_after <= 0.5 * r.ece_before);
    CHECK(r.brier_after < r.brier_before);
    CHECK(r.auroc_after == r.auroc_before);
    CHECK_FALSE(r.slope_sign_flipped);
    CHECK(r.full_map.a > 0.0);
  }
  SUBCASE("already calibrated probabilities") {
    std::vector<double> raw(3000);
    std::vector<int> y(3000);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      raw[i] = u(rng);
      y[i] = u(rng) < raw[i] ? 1 : 0;
    }
    const auto r = platt_fit(raw, y, 5, 42);
    CHECK(r.ece_after <= r.ece_before + 0.01);
    CHECK(r.auroc_after == r.auroc_before);
  }
  SUBCASE("permuted labels collapse to the base rate") {
    std::vector<double> raw(2000);
    std::vector<int> y(2000);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      raw[i] = u(rng);
      y[i] = u(rng) < 0.3 ? 1 : 0;
    }
    const auto r = platt_fit(raw, y, 5, 42);
    CHECK(r.ece_after < 0.05);
    CHECK(std::abs(r.auroc_oof - 0.5) < 0.07);
    for (double p : r.oof_p_incorrect) CHECK(std::abs(p - 0.3) < 0.1);
  }
  SUBCASE("the fitted map is monotone in the score") {
    std::vector<double> raw = {0.1, 0.2, 0.3, 0.5, 0.6, 0.7, 0.8, 0.9, 0.35, 0.45};
    std::vector<int> y = {0, 0, 1, 0, 1, 1, 0, 1, 0, 1};
    const auto map = fit_platt(raw, y, true);
    for (double s = 0.0; s < 1.0; s += 0.05) CHECK(map(s + 0.05) >= map(s));
  }
  SUBCASE("stratified folds need every class in every fold") {
    std::vector<int> y = {1, 0, 0, 0, 0, 0, 0, 0};
    CHECK_THROWS_AS(stratified_folds(y, 5, 1), PreconditionError);
  }
}

TEST_CASE("risk-coverage") {
  SUBCASE("oracle scores") {
    // Accuracy 0.7: three errors ranked most uncertain.
    std::vector<ScoredSample> s;
    for (int i = 0; i < 10; ++i) s.push_back({static_cast<double>(i), i >= 7 ? 1 : 0});
    const auto c = risk_coverage(s);
    for (std::size_t i = 0; i < c.coverage.size(); ++i)
      if (c.coverage[i] <= 0.7 + 1e-12) CHECK(c.risk[i] == 0.0);
    CHECK(c.prr == doctest::Approx(1.0));
    CHECK(c.accuracy_at.at(0.5) == 1.0);
  }
  SUBCASE("constant scores give the overall risk and PRR 0") {
    std::vector<ScoredSample> s;
    for (int i = 0; i < 10; ++i) s.push_back({0.5, i % 5 == 0 ? 1 : 0});
    const auto c = risk_coverage(s);
    for (double r : c.risk) CHECK(r == doctest::Approx(0.2));
    CHECK(c.prr == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("area against an independent trapezoid") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 100; ++rep) {
      auto s = binormal(rng, 10 + static_cast<std::size_t>(rep % 30), 0.8);
      for (auto& x : s) x.score = std::round(x.score * 2.0) / 2.0;  // ties
      std::vector<double> grid;
      for (std::size_t i = 1; i <= s.size(); ++i) grid.push_back(static_cast<double>(i) / static_cast<double>(s.size()));
      const auto c = risk_coverage(s, grid);

      // Expected errors among the kept fraction with proportional tie sharing.
      auto kept_errors = [&](double cov) {
        const double keep = cov * static_cast<double>(s.size());
        double errors = 0.0, taken = 0.0;
        auto sorted = s;
        std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.score < b.score; });
        for (std::size_t i = 0; i < sorted.size();) {
          std::size_t j = i;
          double e = 0.0;
          while (j < sorted.size() && sorted[j].score == sorted[i].score) e += sorted[j++].label;
          const double g = static_cast<double>(j - i);
          const double take = std::min(g, keep - taken);
          if (take <= 0) break;
          errors += e * take / g;
          taken += take;
          i = j;
        }
        return errors / keep;
      };
      double area = 0.0;
      for (std::size_t i = 0; i < grid.size(); ++i) {
        CHECK(c.risk[i] == doctest::Approx(kept_errors(grid[i])).epsilon(1e-12));
        if (i > 0) area += (grid[i] - grid[i - 1]) * (kept_errors(grid[i]) + kept_errors(grid[i - 1])) / 2.0;
      }
      CHECK(c.aurc == doctest::Approx(area).epsilon(1e-12));
      CHECK(c.aurc_oracle <= c.aurc + 1e-12);

      auto anti = s;
      for (auto& x : anti) x.score = 1.0 - x.label;
      CHECK(c.aurc <= risk_coverage(anti, grid).aurc + 1e-12);
    }
  }
  SUBCASE("random scores track the overall accuracy") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u;
    std::vector<ScoredSample> s(500);
    int errors = 0;
    for (auto& x : s) {
      x.label = u(rng) < 0.3 ? 1 : 0;
      errors += x.label;
      x.score = u(rng);
    }
    const double acc = 1.0 - errors / 500.0;
    const auto c = risk_coverage(s);
    for (auto [cov, a] : c.accuracy_at) CHECK(std::abs(a - acc) < (cov < 0.4 ? 0.06 : 0.03));
  }
  std::vector<ScoredSample> single = {{0.1, 0}, {0.2, 0}};
  CHECK_THROWS_AS(risk_coverage(single), DegenerateInputError);
}
