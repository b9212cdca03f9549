#include "scrkit/stats.hpp"

#include "internal.hpp"

#include <algorithm>
#include <cmath>

namespace scrkit::stats {

namespace {

void check_probabilities(std::span<const double> p, std::span<const int> y) {
  if (p.size() != y.size()) throw ShapeError("probabilities and outcomes differ in length");
  if (p.empty()) throw PreconditionError("calibration metrics need at least one row");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0)) {
      throw PreconditionError("probability outside [0, 1] at row " + std::to_string(i));
    }
    if (y[i] != 0 && y[i] != 1) throw PreconditionError("outcomes must be 0 or 1");
  }
}

int bin_of(double confidence, int bins) {
  return std::min(static_cast<int>(std::floor(confidence * bins)), bins - 1);
}

double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Negative log-likelihood of targets t under sigmoid(a z + b).
double nll(std::span<const double> z, std::span<const double> t, double a, double b) {
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double f = a * z[i] + b;
    // log(1 + e^f) - t f, computed stably.
    const double softplus = f > 0.0 ? f + std::log1p(std::exp(-f)) : std::log1p(std::exp(f));
    s += softplus - t[i] * f;
  }
  return s;
}

}  // namespace

double ece(std::span<const double> confidence, std::span<const int> correct, int bins) {
  check_probabilities(confidence, correct);
  if (bins < 1) throw PreconditionError("ECE needs at least one bin");
  std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0), hit_sum(static_cast<std::size_t>(bins), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const auto b = static_cast<std::size_t>(bin_of(confidence[i], bins));
    conf_sum[b] += confidence[i];
    hit_sum[b] += correct[i];
    ++count[b];
  }
  const double n = static_cast<double>(confidence.size());
  double total = 0.0;
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (count[b] == 0) continue;
    const double c = static_cast<double>(count[b]);
    total += (c / n) * std::abs(hit_sum[b] / c - conf_sum[b] / c);
  }
  return total;
}

double brier(std::span<const double> probabilities, std::span<const int> outcomes) {
  check_probabilities(probabilities, outcomes);
  double s = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double d = probabilities[i] - outcomes[i];
    s += d * d;
  }
  return s / static_cast<double>(probabilities.size());
}

std::vector<ReliabilityBin> reliability_table(std::span<const double> confidence, std::span<const int> correct,
                                              int bins) {
  check_probabilities(confidence, correct);
  if (bins < 1) throw PreconditionError("reliability table needs at least one bin");
  std::vector<ReliabilityBin> table(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    table[static_cast<std::size_t>(b)].lo = static_cast<double>(b) / bins;
    table[static_cast<std::size_t>(b)].hi = static_cast<double>(b + 1) / bins;
  }
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    auto& bin = table[static_cast<std::size_t>(bin_of(confidence[i], bins))];
    ++bin.count;
    bin.mean_confidence += confidence[i];
    bin.accuracy += correct[i];
  }
  for (auto& bin : table) {
    if (bin.count == 0) continue;
    bin.mean_confidence /= static_cast<double>(bin.count);
    bin.accuracy /= static_cast<double>(bin.count);
  }
  return table;
}

std::vector<double> raw_incorrect_probability(std::span<const double> scores) {
  if (scores.empty()) return {};
  const auto [mn, mx] = std::minmax_element(scores.begin(), scores.end());
  if (*mn >= 0.0 && *mx <= 1.0) return {scores.begin(), scores.end()};
  std::vector<double> out(scores.size(), 0.5);
  const double range = *mx - *mn;
  if (range > 0.0) {
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = (scores[i] - *mn) / range;
  }
  return out;
}

double PlattMap::operator()(double score) const { return sigmoid(a * score + b); }

PlattMap fit_platt(std::span<const double> scores, std::span<const int> labels, bool nonnegative_slope) {
  if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
  if (scores.size() < 2) throw PreconditionError("Platt fit needs at least two rows");
  double pos = 0.0, neg = 0.0;
  for (int y : labels) (y == 1 ? pos : neg) += 1.0;
  // Smoothed targets keep the optimum finite on separable data.
  const double t_pos = (pos + 1.0) / (pos + 2.0);
  const double t_neg = 1.0 / (neg + 2.0);
  std::vector<double> t(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) t[i] = labels[i] == 1 ? t_pos : t_neg;

  // Fit on standardized scores, then map the coefficients back.
  const double mu = mean(scores);
  double sd = std::sqrt(std::max(0.0, variance(scores)));
  const bool constant = !(sd > 0.0);
  if (constant) sd = 1.0;
  std::vector<double> z(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) z[i] = (scores[i] - mu) / sd;

  auto newton = [&](bool fit_slope, double& a, double& b) {
    constexpr int kMaxIter = 200;
    for (int it = 0; it < kMaxIter; ++it) {
      double ga = 0.0, gb = 0.0, haa = 0.0, hab = 0.0, hbb = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double p = sigmoid(a * z[i] + b);
        const double r = p - t[i];
        const double w = std::max(p * (1.0 - p), 1e-12);
        ga += r * z[i];
        gb += r;
        haa += w * z[i] * z[i];
        hab += w * z[i];
        hbb += w;
      }
      if (!fit_slope) ga = 0.0;
      if (std::hypot(ga, gb) < 1e-10 * static_cast<double>(z.size())) return;
      double da, db;
      if (fit_slope) {
        const double det = haa * hbb - hab * hab;
        if (!(det > 0.0)) throw ConvergenceError("Platt fit: singular Hessian at iteration " + std::to_string(it));
        da = (hbb * ga - hab * gb) / det;
        db = (haa * gb - hab * ga) / det;
      } else {
        da = 0.0;
        db = gb / hbb;
      }
      // Half the Newton decrement estimates the remaining gap to the optimum.
      if ((ga * da + gb * db) / 2.0 < 1e-12) return;
      const double before = nll(z, t, a, b);
      double step = 1.0;
      while (step > 1e-12 && nll(z, t, a - step * da, b - step * db) > before) step *= 0.5;
      a -= step * da;
      b -= step * db;
    }
    throw ConvergenceError("Platt fit did not converge in 200 Newton iterations");
  };

  double a = 0.0, b = std::log(std::max(1e-12, pos + 1.0) / std::max(1e-12, neg + 1.0));
  if (!constant) {
    newton(true, a, b);
    if (nonnegative_slope && a < 0.0) {
      a = 0.0;
      newton(false, a, b);
    }
  } else {
    newton(false, a, b);
  }
  return {a / sd, b - a * mu / sd};
}

PlattResult platt_fit(std::span<const double> raw_scores, std::span<const int> labels, int folds, std::uint64_t seed,
                      int bins) {
  const auto samples = make_samples(raw_scores, labels);
  PlattResult res;
  res.auroc_before = auroc(samples);
  const bool nonnegative = res.auroc_before >= 0.5;
  res.slope_sign_flipped = !nonnegative;

  const auto fold = stratified_folds(labels, folds, seed);
  res.oof_p_incorrect.assign(raw_scores.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i = 0; i < raw_scores.size(); ++i) {
      if (fold[i] != f) {
        s.push_back(raw_scores[i]);
        y.push_back(labels[i]);
      }
    }
    const auto map = fit_platt(s, y, nonnegative);
    for (std::size_t i = 0; i < raw_scores.size(); ++i)
      if (fold[i] == f) res.oof_p_incorrect[i] = map(raw_scores[i]);
  }
  res.full_map = fit_platt(raw_scores, labels, nonnegative);

  std::vector<int> correct(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) correct[i] = 1 - labels[i];
  auto confidence_of = [](const std::vector<double>& p_incorrect) {
    std::vector<double> c(p_incorrect.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = 1.0 - p_incorrect[i];
    return c;
  };
  const auto before = raw_incorrect_probability(raw_scores);
  res.ece_before = ece(confidence_of(before), correct, bins);
  res.brier_before = brier(before, labels);
  res.ece_after = ece(confidence_of(res.oof_p_incorrect), correct, bins);
  res.brier_after = brier(res.oof_p_incorrect, labels);

  // Ranking by the logit avoids ties created by sigmoid saturation.
  std::vector<double> logit(raw_scores.size());
  for (std::size_t i = 0; i < raw_scores.size(); ++i) logit[i] = res.full_map.a * raw_scores[i] + res.full_map.b;
  res.auroc_after = auroc(make_samples(logit, labels));
  res.auroc_oof = auroc(make_samples(res.oof_p_incorrect, labels));
  return res;
}

}  // namespace scrkit::stats
