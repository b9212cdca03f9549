#include "scrkit/stats.hpp"

#include "internal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace scrkit::stats {

std::vector<double> holm_bonferroni(std::span<const double> p_values) {
  const std::size_t k = p_values.size();
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError("p-values must lie in [0, 1]");
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  std::vector<double> adjusted(k);
  double running = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    const double scaled = std::min(1.0, static_cast<double>(k - r) * p_values[order[r]]);
    running = std::max(running, scaled);
    adjusted[order[r]] = running;
  }
  return adjusted;
}

namespace {

double tie_term(std::span<const double> sorted_values) {
  double total = 0.0;
  for (std::size_t i = 0; i < sorted_values.size();) {
    std::size_t j = i;
    while (j + 1 < sorted_values.size() && sorted_values[j + 1] == sorted_values[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    total += t * t * t - t;
    i = j + 1;
  }
  return total;
}

double pick(Alternative alt, double p_greater, double p_less) {
  switch (alt) {
    case Alternative::Greater: return p_greater;
    case Alternative::Less: return p_less;
    case Alternative::TwoSided: break;
  }
  return std::min(1.0, 2.0 * std::min(p_greater, p_less));
}

std::string to_string(Alternative alt) {
  switch (alt) {
    case Alternative::Greater: return "greater";
    case Alternative::Less: return "less";
    case Alternative::TwoSided: break;
  }
  return "two-sided";
}

}  // namespace

StatReport wilcoxon_signed_rank(std::span<const double> differences, Alternative alternative) {
  std::vector<double> nonzero;
  for (double d : differences) {
    if (!std::isfinite(d)) throw PreconditionError("non-finite paired difference");
    if (d != 0.0) nonzero.push_back(d);
  }
  if (nonzero.empty()) throw DegenerateInputError("all paired differences are zero");
  const std::size_t n = nonzero.size();
  if (n < 5) {
    throw PreconditionError("signed-rank test needs at least 5 non-zero differences, got " + std::to_string(n));
  }
  std::vector<double> magnitude(n);
  for (std::size_t i = 0; i < n; ++i) magnitude[i] = std::abs(nonzero[i]);
  const auto ranks = midranks(magnitude);
  double w_plus = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (nonzero[i] > 0.0) w_plus += ranks[i];

  StatReport rep;
  rep.name = "wilcoxon_signed_rank";
  rep.estimate = w_plus;
  rep.n = n;
  double p_greater, p_less;
  const bool exact = n <= kWilcoxonExactLimit;
  if (exact) {
    // Midranks are multiples of 1/2, so doubled ranks are integers and the
    // null distribution of 2 W+ can be counted by subset-sum.
    std::vector<long> doubled(n);
    long total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      doubled[i] = std::lround(2.0 * ranks[i]);
      total += doubled[i];
    }
    std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    for (long r : doubled) {
      for (long s = total; s >= r; --s) count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - r)];
    }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    const long obs = std::lround(2.0 * w_plus);
    double ge = 0.0, le = 0.0;
    for (long s = 0; s <= total; ++s) {
      if (s >= obs) ge += count[static_cast<std::size_t>(s)];
      if (s <= obs) le += count[static_cast<std::size_t>(s)];
    }
    p_greater = ge / all;
    p_less = le / all;
    rep.method = "Wilcoxon signed-rank, exact null";
  } else {
    std::sort(magnitude.begin(), magnitude.end());
    const double nn = static_cast<double>(n);
    const double mu = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term(magnitude) / 48.0;
    const double sd = std::sqrt(var);
    p_greater = 1.0 - normal_cdf((w_plus - mu - 0.5) / sd);
    p_less = normal_cdf((w_plus - mu + 0.5) / sd);
    rep.extra["z"] = (w_plus - mu) / sd;
    rep.method = "Wilcoxon signed-rank, normal approximation with tie and continuity correction";
  }
  p_greater = std::min(1.0, p_greater);
  p_less = std::min(1.0, p_less);
  rep.p_value = pick(alternative, p_greater, p_less);
  rep.method += ", " + to_string(alternative);
  rep.extra["p_greater"] = p_greater;
  rep.extra["p_less"] = p_less;
  rep.extra["p_two_sided"] = pick(Alternative::TwoSided, p_greater, p_less);
  rep.extra["n_used"] = static_cast<double>(n);
  rep.extra["n_zero_dropped"] = static_cast<double>(differences.size() - n);
  rep.extra["exact"] = exact ? 1.0 : 0.0;
  return rep;
}

StatReport mann_whitney_u(std::span<const double> a, std::span<const double> b, Alternative alternative) {
  if (a.empty() || b.empty()) throw PreconditionError("rank-sum test needs two non-empty groups");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = midranks(pooled);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double ra = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ra += ranks[i];
  const double u = ra - na * (na + 1.0) / 2.0;

  std::sort(pooled.begin(), pooled.end());
  const double n = na + nb;
  const double var = na * nb / 12.0 * ((n + 1.0) - tie_term(pooled) / (n * (n - 1.0)));
  const double mu = na * nb / 2.0;

  StatReport rep;
  rep.name = "mann_whitney_u";
  rep.estimate = u;
  rep.n = a.size() + b.size();
  rep.extra["auc"] = u / (na * nb);
  rep.method = "Mann-Whitney U, normal approximation with tie and continuity correction, " + to_string(alternative);
  if (var <= 0.0) {
    throw DegenerateInputError("rank-sum test undefined: every value is tied");
  }
  const double sd = std::sqrt(var);
  const double p_greater = std::min(1.0, 1.0 - normal_cdf((u - mu - 0.5) / sd));
  const double p_less = std::min(1.0, normal_cdf((u - mu + 0.5) / sd));
  rep.extra["z"] = (u - mu) / sd;
  rep.extra["p_greater"] = p_greater;
  rep.extra["p_less"] = p_less;
  rep.p_value = pick(alternative, p_greater, p_less);
  return rep;
}

double cohens_d_value(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw PreconditionError("Cohen's d needs at least two values per group");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0);
  if (!(pooled > 0.0)) throw DegenerateInputError("Cohen's d undefined: pooled standard deviation is zero");
  return (mean(a) - mean(b)) / std::sqrt(pooled);
}

StatReport cohens_d(std::span<const double> a, std::span<const double> b, const BootstrapOptions& options) {
  std::vector<double> values(a.begin(), a.end());
  values.insert(values.end(), b.begin(), b.end());
  std::vector<int> group(values.size(), 0);
  std::fill(group.begin(), group.begin() + static_cast<std::ptrdiff_t>(a.size()), 1);
  auto stat = [&](std::span<const std::size_t> idx) -> std::optional<double> {
    std::vector<double> ga, gb;
    for (auto i : idx) (group[i] == 1 ? ga : gb).push_back(values[i]);
    if (ga.size() < 2 || gb.size() < 2) return std::nullopt;
    try {
      return cohens_d_value(ga, gb);
    } catch (const DegenerateInputError&) {
      return std::nullopt;
    }
  };
  cohens_d_value(a, b);  // surfaces precondition and degenerate errors on the full sample
  auto rep = bootstrap_ci(values.size(), stat, options, group);
  rep.name = "cohens_d";
  rep.method = "pooled-SD Cohen's d, " + rep.method;
  return rep;
}

}  // namespace scrkit::stats
