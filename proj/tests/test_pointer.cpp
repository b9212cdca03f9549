#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "scrkit/pointer.hpp"

#include <cmath>
#include <random>

using namespace scrkit;
using namespace scrkit::pointer;

namespace {

using Matrix = std::vector<std::vector<double>>;

std::vector<std::string> names(std::size_t d) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < d; ++i) out.push_back("f" + std::to_string(i));
  return out;
}

}  // namespace

TEST_CASE("feature layout") {
  CHECK(base_feature_names().size() == 20);
  const std::vector<std::string> cats = {"health", "law"};
  const auto n = feature_names(cats);
  REQUIRE(n.size() == 22);
  CHECK(n[20] == "category=health");

  signals::EntropyFeatures e;
  e.mean = 0.5;
  e.max = 1.0;
  const auto f = features(e, "Who wrote Hamlet in 1600?", "I think maybe Shakespeare", std::string("law"), cats);
  REQUIRE(f.size() == 22);
  const auto base = base_feature_names();
  auto at = [&](const std::string& name) {
    return f[static_cast<std::size_t>(std::find(base.begin(), base.end(), name) - base.begin())];
  };
  CHECK(at("entropy_mean") == 0.5);
  CHECK(at("q_who") == 1.0);
  CHECK(at("q_what") == 0.0);
  CHECK(at("q_has_digit") == 1.0);
  CHECK(at("q_question_marks") == 1.0);
  CHECK(at("q_tokens") == 5.0);
  CHECK(at("answer_hedges") >= 2.0);
  CHECK(f[20] == 0.0);
  CHECK(f[21] == 1.0);
}

TEST_CASE("separable data is learned") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  Matrix x;
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    const double a = g(rng), b = g(rng);
    x.push_back({a, b, g(rng)});
    y.push_back(a + 0.5 * b > 0.0 ? 1 : 0);
  }
  const auto t = train_pointer(x, y, names(3), 5, 42);
  CHECK(t.cv_auc >= 0.99);
  CHECK(t.fold_auc.size() == 5);
  for (double p : t.oof_probability) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("permuted labels give chance-level CV AUC") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  std::bernoulli_distribution coin(0.4);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Matrix x;
    std::vector<int> y;
    for (int i = 0; i < 790; ++i) {
      x.push_back({g(rng), g(rng), g(rng), g(rng)});
      y.push_back(coin(rng) ? 1 : 0);
    }
    const auto t = train_pointer(x, y, names(4), 5, seed);
    CHECK(t.cv_auc >= 0.4);
    CHECK(t.cv_auc <= 0.6);
  }
}

TEST_CASE("single informative feature") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u;
  Matrix x;
  std::vector<double> col;
  std::vector<int> y;
  for (int i = 0; i < 500; ++i) {
    const double v = g(rng);
    x.push_back({v});
    col.push_back(v);
    y.push_back(u(rng) < 1.0 / (1.0 + std::exp(-1.5 * v)) ? 1 : 0);
  }
  const auto m = fit_logistic(x, y, names(1));
  CHECK(m.coefficients[0] > 0.0);
  // A positive-slope logistic model ranks rows exactly as the feature does.
  std::vector<double> p;
  for (const auto& row : x) p.push_back(m.predict(row));
  CHECK(oracle::auroc_pairs(p, y) == doctest::Approx(oracle::auroc_pairs(col, y)).epsilon(1e-12));
}

TEST_CASE("training is deterministic per seed") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  std::bernoulli_distribution coin(0.5);
  Matrix x;
  std::vector<int> y;
  for (int i = 0; i < 120; ++i) {
    const int label = coin(rng) ? 1 : 0;
    x.push_back({g(rng) + label, g(rng), 3.0});  // constant column included
    y.push_back(label);
  }
  const auto a = train_pointer(x, y, names(3), 5, 9);
  const auto b = train_pointer(x, y, names(3), 5, 9);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(std::abs(a.model.coefficients[i] - b.model.coefficients[i]) <= 1e-10);
  CHECK(a.cv_auc == b.cv_auc);
  CHECK(a.oof_probability == b.oof_probability);

  CHECK_THROWS_AS(train_pointer(Matrix(x.begin(), x.begin() + 6), std::vector<int>(y.begin(), y.begin() + 6),
                                names(3), 5, 1),
                  PreconditionError);
  CHECK_THROWS_AS(fit_logistic(x, std::vector<int>(x.size(), 1), names(3)), PreconditionError);
  FitOptions strict;
  strict.max_iterations = 1;
  CHECK_THROWS_AS(fit_logistic(x, y, names(3), strict), ConvergenceError);
}

TEST_CASE("model serialization round trip") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  Matrix x;
  std::vector<int> y;
  for (int i = 0; i < 80; ++i) {
    x.push_back({g(rng), g(rng)});
    y.push_back(x.back()[0] + g(rng) > 0 ? 1 : 0);
  }
  const auto t = train_pointer(x, y, {"entropy_mean", "q_tokens"}, 4, 3);
  const auto back = parse_model(serialize(t.model));
  CHECK(back.feature_names == t.model.feature_names);
  CHECK(back.coefficients == t.model.coefficients);
  CHECK(back.intercept == t.model.intercept);
  CHECK(back.center == t.model.center);
  CHECK(back.scale == t.model.scale);
  CHECK(back.folds == 4);
  CHECK(back.seed == 3);
  for (const auto& row : x) CHECK(back.predict(row) == t.model.predict(row));
  CHECK_THROWS_AS(parse_model("not a model"), ParseError);
}

TEST_CASE("PCA") {
  SUBCASE("points on a line") {
    Matrix x;
    for (int i = 0; i < 50; ++i) x.push_back({1.0 + 2.0 * i, -3.0 + 0.5 * i, 4.0 - i});
    const auto p = pca_project(x, 1);
    CHECK(p.explained_ratio[0] >= 0.9999);
  }
  SUBCASE("isotropic cloud spreads variance evenly") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> g;
    Matrix x(4000, std::vector<double>(4));
    for (auto& r : x)
      for (auto& v : r) v = g(rng);
    const auto p = pca_project(x, 4);
    for (double r : p.explained_ratio) CHECK(std::abs(r - 0.25) <= 0.05);
  }
  SUBCASE("full-rank projection reconstructs exactly") {
    const Matrix x = {{1.0, 2.0}, {3.0, -1.0}, {0.5, 0.5}};
    const auto p = pca_project(x, 2);
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t d = 0; d < 2; ++d) {
        double r = p.mean[d];
        for (std::size_t c = 0; c < 2; ++c) r += p.projected[i][c] * p.components[c][d];
        CHECK(std::abs(r - x[i][d]) < 1e-9);
      }
    }
  }
  SUBCASE("components are orthonormal and sign-fixed") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    Matrix x(200, std::vector<double>(8));
    for (auto& r : x) {
      const double shared = g(rng);
      for (std::size_t d = 0; d < r.size(); ++d) r[d] = g(rng) * (1.0 + static_cast<double>(d)) + shared;
    }
    const auto p = pca_project(x, 5);
    for (std::size_t a = 0; a < 5; ++a) {
      for (std::size_t b = 0; b < 5; ++b) {
        double dot = 0.0;
        for (std::size_t d = 0; d < 8; ++d) dot += p.components[a][d] * p.components[b][d];
        CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-8);
      }
      const auto& c = p.components[a];
      const auto big = std::max_element(c.begin(), c.end(), [](double l, double r) { return std::abs(l) < std::abs(r); });
      CHECK(*big > 0.0);
      if (a > 0) CHECK(p.explained_variance[a] <= p.explained_variance[a - 1] + 1e-9);
    }
    // Determinism.
    CHECK(pca_project(x, 5).components == p.components);
  }
  SUBCASE("rank shortfall warns, oversize request throws") {
    Matrix x;
    for (int i = 0; i < 10; ++i) x.push_back({static_cast<double>(i), 2.0 * i, 0.0});
    const auto p = pca_project(x, 3);
    CHECK(p.warning.has_value());
    CHECK(p.components.size() < 3);
    CHECK_THROWS_AS(pca_project(x, 4), PreconditionError);
  }
}
