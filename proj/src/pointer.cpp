#include "scrkit/pointer.hpp"

#include "scrkit/stats.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

namespace scrkit::pointer {

namespace {

std::vector<std::string> words_of(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '\'' || static_cast<unsigned char>(c) >= 0x80) {
      cur.push_back(c);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::size_t code_points(std::string_view s) {
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

bool contains_phrase(const std::vector<std::string>& toks, const std::vector<std::string>& phrase) {
  if (phrase.empty() || phrase.size() > toks.size()) return false;
  for (std::size_t i = 0; i + phrase.size() <= toks.size(); ++i) {
    if (std::equal(phrase.begin(), phrase.end(), toks.begin() + static_cast<std::ptrdiff_t>(i))) return true;
  }
  return false;
}

const std::vector<std::string>& hedges() {
  static const std::vector<std::string> kHedges = {"i think",  "i believe", "probably", "possibly", "perhaps",
                                                   "might",    "may",       "likely",   "not sure", "uncertain",
                                                   "it seems", "maybe",     "could be"};
  return kHedges;
}

const std::set<std::string>& auxiliaries() {
  static const std::set<std::string> kAux = {"is",  "are",   "was",    "were", "do",  "does", "did",
                                             "can", "could", "will",   "would", "should", "has", "have",
                                             "had", "am",    "shall",  "may",  "might", "must"};
  return kAux;
}

double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

double softplus(double f) { return f > 0.0 ? f + std::log1p(std::exp(-f)) : std::log1p(std::exp(f)); }

}  // namespace

std::vector<std::string> base_feature_names() {
  return {"entropy_mean",     "entropy_max",      "entropy_min",      "entropy_std",    "entropy_hi_ratio",
          "entropy_first",    "entropy_last_quartile_mean",
          "q_tokens",         "q_chars",          "q_question_marks", "q_who",          "q_what",
          "q_when",           "q_where",          "q_why",            "q_how",          "q_has_digit",
          "q_capitalized_spans", "answer_hedges", "q_is_yes_no"};
}

std::vector<std::string> feature_names(std::span<const std::string> categories) {
  auto names = base_feature_names();
  for (const auto& c : categories) names.push_back("category=" + c);
  return names;
}

std::vector<double> features(const signals::EntropyFeatures& e, std::string_view question, std::string_view answer,
                             const std::optional<std::string>& category, std::span<const std::string> categories) {
  std::vector<double> f = {e.mean, e.max, e.min, e.std, e.hi_ratio, e.first_token, e.last_quartile_mean};

  const auto raw_words = words_of(question);
  std::vector<std::string> q;
  for (const auto& w : raw_words) q.push_back(lower(w));
  auto has = [&](const char* w) { return std::find(q.begin(), q.end(), w) != q.end() ? 1.0 : 0.0; };

  double cap_spans = 0.0;
  bool in_span = false;
  for (std::size_t i = 0; i < raw_words.size(); ++i) {
    const bool cap = std::isupper(static_cast<unsigned char>(raw_words[i].front())) && !auxiliaries().count(q[i]) &&
                     q[i] != "who" && q[i] != "what" && q[i] != "when" && q[i] != "where" && q[i] != "why" &&
                     q[i] != "how" && q[i] != "which";
    if (cap && !in_span) cap_spans += 1.0;
    in_span = cap;
  }

  const auto a = words_of(lower(answer));
  double hedge_hits = 0.0;
  for (const auto& h : hedges())
    if (contains_phrase(a, words_of(h))) hedge_hits += 1.0;

  f.push_back(static_cast<double>(q.size()));
  f.push_back(static_cast<double>(code_points(question)));
  f.push_back(static_cast<double>(std::count(question.begin(), question.end(), '?')));
  for (const char* w : {"who", "what", "when", "where", "why", "how"}) f.push_back(has(w));
  f.push_back(std::any_of(question.begin(), question.end(), [](unsigned char c) { return std::isdigit(c); }) ? 1.0
                                                                                                            : 0.0);
  f.push_back(cap_spans);
  f.push_back(hedge_hits);
  f.push_back(!q.empty() && auxiliaries().count(q.front()) ? 1.0 : 0.0);

  for (const auto& c : categories) f.push_back(category && *category == c ? 1.0 : 0.0);
  return f;
}

double Model::predict(std::span<const double> x) const {
  if (x.size() != coefficients.size()) {
    throw ShapeError("pointer model expects " + std::to_string(coefficients.size()) + " features, got " +
                     std::to_string(x.size()));
  }
  double z = intercept;
  for (std::size_t i = 0; i < x.size(); ++i) z += coefficients[i] * (x[i] - center[i]) / scale[i];
  // Saturated logits would round to exactly 0 or 1; keep the open interval.
  constexpr double kFloor = 1e-15;
  return std::clamp(sigmoid(z), kFloor, 1.0 - kFloor);
}

Model fit_logistic(const std::vector<std::vector<double>>& x, std::span<const int> y, std::vector<std::string> names,
                   const FitOptions& options) {
  const std::size_t n = x.size();
  if (n != y.size()) throw ShapeError("feature rows and labels differ in length");
  if (n == 0) throw PreconditionError("logistic fit needs rows");
  const std::size_t d = x.front().size();
  if (names.size() != d) throw ShapeError("feature names do not match the feature count");
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i].size() != d) throw ShapeError("ragged feature matrix at row " + std::to_string(i));
    if (y[i] != 0 && y[i] != 1) throw PreconditionError("labels must be 0 or 1");
    positives += static_cast<std::size_t>(y[i]);
  }
  if (positives == 0 || positives == n) throw PreconditionError("logistic fit needs both classes");

  Model m;
  m.feature_names = std::move(names);
  m.ridge = options.ridge;
  m.center.assign(d, 0.0);
  m.scale.assign(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i][j];
    m.center[j] = s / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (x[i][j] - m.center[j]) * (x[i][j] - m.center[j]);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    m.scale[j] = sd > 0.0 ? sd : 1.0;
  }

  // Column 0 is the intercept.
  Eigen::MatrixXd z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d + 1));
  Eigen::VectorXd t(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    z(r, 0) = 1.0;
    for (std::size_t j = 0; j < d; ++j) z(r, static_cast<Eigen::Index>(j + 1)) = (x[i][j] - m.center[j]) / m.scale[j];
    t(r) = y[i];
  }
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d + 1), options.ridge);
  penalty(0) = 0.0;

  // Mean log-loss keeps the gradient tolerance independent of the row count.
  const double rows = static_cast<double>(n);
  auto objective = [&](const Eigen::VectorXd& w) {
    const Eigen::VectorXd f = z * w;
    double s = 0.0;
    for (Eigen::Index i = 0; i < f.size(); ++i) s += softplus(f(i)) - t(i) * f(i);
    return s / rows + 0.5 * (penalty.array() * w.array().square()).sum();
  };

  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d + 1));
  const double base_rate = static_cast<double>(positives) / static_cast<double>(n);
  w(0) = std::log(base_rate / (1.0 - base_rate));
  double grad_norm = 0.0;
  for (int it = 0; it < options.max_iterations; ++it) {
    const Eigen::VectorXd f = z * w;
    Eigen::VectorXd p(f.size()), weights(f.size());
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      p(i) = sigmoid(f(i));
      weights(i) = p(i) * (1.0 - p(i));
    }
    const Eigen::VectorXd grad = z.transpose() * (p - t) / rows + penalty.cwiseProduct(w);
    grad_norm = grad.lpNorm<Eigen::Infinity>();
    if (grad_norm < options.tolerance) {
      m.intercept = w(0);
      m.coefficients.assign(w.data() + 1, w.data() + w.size());
      return m;
    }
    Eigen::MatrixXd hess = z.transpose() * weights.asDiagonal() * z / rows;
    hess.diagonal() += penalty;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    const double before = objective(w);
    double scale = 1.0;
    while (scale > 1e-10 && objective(w - scale * step) > before) scale *= 0.5;
    w -= scale * step;
  }
  std::ostringstream msg;
  msg << "logistic fit did not reach gradient norm " << options.tolerance << " in " << options.max_iterations
      << " iterations (final norm " << grad_norm << ")";
  throw ConvergenceError(msg.str());
}

Training train_pointer(const std::vector<std::vector<double>>& x, std::span<const int> y,
                       std::vector<std::string> names, int folds, std::uint64_t seed, const FitOptions& options) {
  if (x.size() != y.size()) throw ShapeError("feature rows and labels differ in length");
  if (folds < 2) throw PreconditionError("need at least two folds");
  if (x.size() < 2 * static_cast<std::size_t>(folds)) {
    throw PreconditionError("pointer training needs at least " + std::to_string(2 * folds) + " labeled rows");
  }
  const auto fold = stats::stratified_folds(y, folds, seed);
  Training tr;
  tr.oof_probability.assign(x.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    std::vector<std::vector<double>> xs;
    std::vector<int> ys;
    std::vector<double> test_scores;
    std::vector<int> test_labels;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (fold[i] != f) {
        xs.push_back(x[i]);
        ys.push_back(y[i]);
      }
    }
    const auto model = fit_logistic(xs, ys, names, options);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (fold[i] == f) {
        tr.oof_probability[i] = model.predict(x[i]);
        test_scores.push_back(tr.oof_probability[i]);
        test_labels.push_back(y[i]);
      }
    }
    tr.fold_auc.push_back(stats::auroc(stats::make_samples(test_scores, test_labels)));
  }
  tr.cv_auc = stats::mean(tr.fold_auc);
  tr.pooled_oof_auc = stats::auroc(stats::make_samples(tr.oof_probability, y));
  tr.model = fit_logistic(x, y, std::move(names), options);
  tr.model.folds = folds;
  tr.model.seed = seed;
  return tr;
}

std::string serialize(const Model& m) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "scrkit-pointer-model 1 " << kFeatureSetVersion << "\n";
  out << "folds " << m.folds << "\nseed " << m.seed << "\nridge " << m.ridge << "\n";
  out << "intercept " << m.intercept << "\n";
  for (std::size_t i = 0; i < m.coefficients.size(); ++i) {
    out << "feature " << m.feature_names[i] << " " << m.coefficients[i] << " " << m.center[i] << " " << m.scale[i]
        << "\n";
  }
  return out.str();
}

Model parse_model(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  Model m;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (!header) {
      int version = 0;
      ls >> version;
      if (key != "scrkit-pointer-model" || version != 1) throw ParseError(line_no, "not a pointer model file");
      header = true;
      continue;
    }
    if (key == "folds") {
      ls >> m.folds;
    } else if (key == "seed") {
      ls >> m.seed;
    } else if (key == "ridge") {
      ls >> m.ridge;
    } else if (key == "intercept") {
      ls >> m.intercept;
    } else if (key == "feature") {
      std::string name;
      double c, mu, sd;
      ls >> name >> c >> mu >> sd;
      if (!ls) throw ParseError(line_no, "feature line needs name, coefficient, center and scale");
      m.feature_names.push_back(name);
      m.coefficients.push_back(c);
      m.center.push_back(mu);
      m.scale.push_back(sd);
      continue;
    } else {
      throw ParseError(line_no, "unknown key '" + key + "'");
    }
    if (!ls) throw ParseError(line_no, "malformed value for '" + key + "'");
  }
  if (!header) throw ParseError(line_no, "empty pointer model file");
  return m;
}

Pca pca_project(const std::vector<std::vector<double>>& data, std::size_t dims) {
  const std::size_t n = data.size();
  if (n == 0) throw PreconditionError("PCA needs rows");
  const std::size_t d = data.front().size();
  if (dims == 0 || dims > std::min(n, d)) {
    throw PreconditionError("PCA dims must lie in [1, min(rows, cols)] = [1, " + std::to_string(std::min(n, d)) + "]");
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    if (data[i].size() != d) throw ShapeError("ragged PCA input at row " + std::to_string(i));
    for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = data[i][j];
  }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  const double total = x.squaredNorm() / denom;

  Pca out;
  out.mean.assign(mu.data(), mu.data() + mu.size());
  std::vector<Eigen::VectorXd> comps;
  auto deflate = [&](Eigen::VectorXd& v) {
    for (const auto& c : comps) v -= c.dot(v) * c;
  };
  constexpr double kTolerance = 1e-9;
  constexpr int kMaxIterations = 100000;
  bool stalled = false;
  for (std::size_t k = 0; k < dims; ++k) {
    // Deterministic start: the residual data row with the largest norm.
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    double best = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Eigen::VectorXd r = x.row(i).transpose();
      deflate(r);
      if (r.norm() > best * (1.0 + 1e-12)) {
        best = r.norm();
        v = r;
      }
    }
    if (!(best > 0.0) || !(total > 0.0)) break;
    v.normalize();
    double lambda = 0.0;
    bool converged = false;
    for (int it = 0; it < kMaxIterations; ++it) {
      Eigen::VectorXd w = x.transpose() * (x * v) / denom;
      deflate(w);
      lambda = w.norm();
      if (!(lambda > 0.0)) break;
      w /= lambda;
      if ((w - v).norm() < kTolerance) {
        v = w;
        converged = true;
        break;
      }
      v = w;
    }
    if (!(lambda > 1e-12 * total)) break;
    if (!converged) stalled = true;
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    lambda = v.dot(x.transpose() * (x * v)) / denom;
    comps.push_back(v);
    out.explained_variance.push_back(lambda);
    out.explained_ratio.push_back(lambda / total);
  }
  if (comps.size() < dims) {
    out.warning = "requested " + std::to_string(dims) + " components but the data have rank " +
                  std::to_string(comps.size());
  } else if (stalled) {
    out.warning = "power iteration reached its iteration cap before the 1e-9 tolerance";
  }
  for (const auto& c : comps) out.components.emplace_back(c.data(), c.data() + c.size());
  out.projected.assign(n, std::vector<double>(comps.size(), 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < comps.size(); ++k) out.projected[i][k] = x.row(static_cast<Eigen::Index>(i)).dot(comps[k]);
  }
  return out;
}

}  // namespace scrkit::pointer
