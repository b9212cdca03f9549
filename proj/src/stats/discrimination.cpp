#include "scrkit/stats.hpp"

#include "internal.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

namespace scrkit::stats {

// ---------------------------------------------------------------------------
// Helpers

double mean(std::span<const double> x) {
  if (x.empty()) throw PreconditionError("mean of an empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
  if (x.size() < 2) throw PreconditionError("variance needs at least two values");
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

double quantile(std::vector<double> x, double q) {
  if (x.empty()) throw PreconditionError("quantile of an empty sample");
  std::sort(x.begin(), x.end());
  const double h = (static_cast<double>(x.size()) - 1.0) * std::clamp(q, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  const double frac = h - static_cast<double>(lo);
  // Equal neighbours return exactly, so a constant sample has constant quantiles.
  if (x[lo] == x[hi]) return x[lo];
  return x[lo] + frac * (x[hi] - x[lo]);
}

double median(std::vector<double> x) { return quantile(std::move(x), 0.5); }

std::vector<double> midranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

std::vector<ScoredSample> make_samples(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
  std::vector<ScoredSample> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw PreconditionError("non-finite score at row " + std::to_string(i));
    if (labels[i] != 0 && labels[i] != 1) throw PreconditionError("labels must be 0 or 1");
    out[i] = {scores[i], labels[i]};
  }
  return out;
}

std::vector<int> stratified_folds(std::span<const int> labels, int folds, std::uint64_t seed) {
  if (folds < 2) throw PreconditionError("need at least two folds");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<int> fold(labels.size(), 0);
  std::uint64_t stream_id = 0;
  for (auto& [cls, idx] : by_class) {
    if (idx.size() < static_cast<std::size_t>(folds)) {
      throw PreconditionError("class " + std::to_string(cls) + " has " + std::to_string(idx.size()) +
                              " rows, fewer than " + std::to_string(folds) + " folds");
    }
    auto rng = detail::stream(seed, stream_id++);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < idx.size(); ++k) fold[idx[k]] = static_cast<int>(k % static_cast<std::size_t>(folds));
  }
  return fold;
}

// ---------------------------------------------------------------------------
// AUROC

namespace detail {

std::optional<double> auroc_or_none(std::span<const double> scores, std::span<const int> labels) {
  const auto ranks = midranks(scores);
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      rank_sum += ranks[i];
      ++pos;
    }
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

}  // namespace detail

namespace {

void split(std::span<const ScoredSample> s, std::vector<double>& scores, std::vector<int>& labels) {
  scores.resize(s.size());
  labels.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    scores[i] = s[i].score;
    labels[i] = s[i].label;
  }
}

std::vector<int> label_vector(std::span<const ScoredSample> s) {
  std::vector<int> l(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) l[i] = s[i].label;
  return l;
}

void require_two_classes(std::span<const ScoredSample> s) {
  bool pos = false, neg = false;
  for (const auto& x : s) (x.label == 1 ? pos : neg) = true;
  if (!pos || !neg) throw DegenerateInputError("AUROC needs both correct and incorrect answers");
}

// Resampled indices honoring per-stratum counts.
void draw(std::mt19937_64& rng, const std::vector<std::vector<std::size_t>>& groups, std::vector<std::size_t>& out) {
  out.clear();
  for (const auto& g : groups) {
    std::uniform_int_distribution<std::size_t> pick(0, g.size() - 1);
    for (std::size_t k = 0; k < g.size(); ++k) out.push_back(g[pick(rng)]);
  }
}

std::vector<std::vector<std::size_t>> strata_groups(std::size_t n, std::span<const int> strata) {
  if (strata.empty()) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    return {all};
  }
  std::map<int, std::vector<std::size_t>> m;
  for (std::size_t i = 0; i < n; ++i) m[strata[i]].push_back(i);
  std::vector<std::vector<std::size_t>> out;
  for (auto& [k, v] : m) out.push_back(std::move(v));
  return out;
}

double auroc_of(std::span<const ScoredSample> s, std::span<const std::size_t> idx, std::vector<double>& sc,
                std::vector<int>& lb) {
  sc.resize(idx.size());
  lb.resize(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    sc[k] = s[idx[k]].score;
    lb[k] = s[idx[k]].label;
  }
  return detail::auroc_or_none(sc, lb).value_or(std::nan(""));
}

// Bootstrap distribution of AUROC(a) - AUROC(b). Paired inputs share indices;
// unpaired inputs draw independently from one stream each.
std::vector<double> bootstrap_auroc_differences(std::span<const ScoredSample> a, std::span<const ScoredSample> b,
                                                bool paired, const BootstrapOptions& opt) {
  const auto ga = strata_groups(a.size(), label_vector(a));
  const auto gb = strata_groups(b.size(), label_vector(b));
  std::vector<double> deltas(opt.resamples);
  detail::parallel_for(opt.resamples, [&](std::size_t r) {
    auto rng = detail::stream(opt.seed, r);
    std::vector<std::size_t> ia, ib;
    std::vector<double> sc;
    std::vector<int> lb;
    draw(rng, ga, ia);
    if (paired) {
      ib = ia;
    } else {
      draw(rng, gb, ib);
    }
    deltas[r] = auroc_of(a, ia, sc, lb) - auroc_of(b, ib, sc, lb);
  });
  return deltas;
}

struct DelongComponents {
  std::vector<double> v10;  // per positive
  std::vector<double> v01;  // per negative
  double auc = 0.0;
};

DelongComponents delong_components(std::span<const ScoredSample> s, std::span<const int> labels) {
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < s.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(s[i].score);
  std::vector<double> neg_sorted = neg, pos_sorted = pos;
  std::sort(neg_sorted.begin(), neg_sorted.end());
  std::sort(pos_sorted.begin(), pos_sorted.end());
  auto placement = [](const std::vector<double>& sorted, double x, bool count_below) {
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), x) - sorted.begin();
    const auto hi = std::upper_bound(sorted.begin(), sorted.end(), x) - sorted.begin();
    const double ties = static_cast<double>(hi - lo);
    const double strictly = count_below ? static_cast<double>(lo) : static_cast<double>(sorted.size() - hi);
    return (strictly + 0.5 * ties) / static_cast<double>(sorted.size());
  };
  DelongComponents c;
  for (double x : pos) c.v10.push_back(placement(neg_sorted, x, true));
  for (double y : neg) c.v01.push_back(placement(pos_sorted, y, false));
  c.auc = std::accumulate(c.v10.begin(), c.v10.end(), 0.0) / static_cast<double>(c.v10.size());
  return c;
}

double covariance(std::span<const double> x, std::span<const double> y) {
  const double mx = mean(x), my = mean(y);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mx) * (y[i] - my);
  return s / static_cast<double>(x.size() - 1);
}

double sd(std::span<const double> x) {
  std::vector<double> finite;
  for (double v : x)
    if (std::isfinite(v)) finite.push_back(v);
  return finite.size() < 2 ? 0.0 : std::sqrt(variance(finite));
}

void check_paired(std::span<const ScoredSample> a, std::span<const ScoredSample> b) {
  if (a.size() != b.size()) {
    throw AlignmentError("paired comparison needs equal sizes, got " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].label != b[i].label) throw AlignmentError("paired inputs disagree on the label of row " + std::to_string(i));
  }
}

}  // namespace

double auroc(std::span<const ScoredSample> samples) {
  require_two_classes(samples);
  std::vector<double> sc;
  std::vector<int> lb;
  split(samples, sc, lb);
  return *detail::auroc_or_none(sc, lb);
}

std::string to_string(Statistic s) {
  switch (s) {
    case Statistic::Auroc: return "auroc";
    case Statistic::Mean: return "mean";
    case Statistic::CohensD: return "cohens_d";
  }
  return "?";
}

StatReport bootstrap_ci(std::size_t n, const std::function<std::optional<double>(std::span<const std::size_t>)>& stat,
                        const BootstrapOptions& opt, std::span<const int> strata) {
  if (n < 2) throw PreconditionError("bootstrap needs at least two rows");
  if (opt.resamples < 100) throw PreconditionError("bootstrap needs at least 100 resamples");
  if (!strata.empty() && strata.size() != n) throw ShapeError("strata length differs from row count");
  const auto groups = strata_groups(n, strata);

  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  const auto point = stat(all);
  if (!point) throw DegenerateInputError("statistic undefined on the full sample");

  std::vector<double> values(opt.resamples);
  std::atomic<std::size_t> discarded{0};
  constexpr std::size_t kMaxAttempts = 1000;
  detail::parallel_for(opt.resamples, [&](std::size_t r) {
    auto rng = detail::stream(opt.seed, r);
    std::vector<std::size_t> idx;
    for (std::size_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
      draw(rng, groups, idx);
      if (auto v = stat(idx)) {
        values[r] = *v;
        return;
      }
      ++discarded;
    }
    throw DegenerateInputError("bootstrap could not draw a resample with a defined statistic");
  });

  StatReport rep;
  rep.estimate = *point;
  rep.n = n;
  rep.seed = opt.seed;
  rep.method = "percentile bootstrap, B=" + std::to_string(opt.resamples);
  const double tail = (1.0 - opt.level) / 2.0;
  rep.ci_low = std::min(quantile(values, tail), rep.estimate);
  rep.ci_high = std::max(quantile(values, 1.0 - tail), rep.estimate);
  rep.extra["discarded"] = static_cast<double>(discarded.load());
  rep.extra["resamples"] = static_cast<double>(opt.resamples);
  return rep;
}

StatReport bootstrap_ci(std::span<const ScoredSample> samples, Statistic statistic, const BootstrapOptions& opt) {
  std::vector<int> labels = label_vector(samples);
  std::function<std::optional<double>(std::span<const std::size_t>)> fn;
  std::span<const int> strata;
  switch (statistic) {
    case Statistic::Auroc:
      require_two_classes(samples);
      strata = labels;
      fn = [&](std::span<const std::size_t> idx) -> std::optional<double> {
        std::vector<double> sc;
        std::vector<int> lb;
        const double v = auroc_of(samples, idx, sc, lb);
        return std::isnan(v) ? std::nullopt : std::optional<double>(v);
      };
      break;
    case Statistic::Mean:
      fn = [&](std::span<const std::size_t> idx) -> std::optional<double> {
        double s = 0.0;
        for (auto i : idx) s += samples[i].score;
        return s / static_cast<double>(idx.size());
      };
      break;
    case Statistic::CohensD:
      strata = labels;
      fn = [&](std::span<const std::size_t> idx) -> std::optional<double> {
        std::vector<double> pos, neg;
        for (auto i : idx) (samples[i].label == 1 ? pos : neg).push_back(samples[i].score);
        if (pos.size() < 2 || neg.size() < 2) return std::nullopt;
        try {
          return cohens_d_value(pos, neg);
        } catch (const DegenerateInputError&) {
          return std::nullopt;
        }
      };
      break;
  }
  auto rep = bootstrap_ci(samples.size(), fn, opt, strata);
  rep.name = to_string(statistic);
  return rep;
}

StatReport auroc_diff_test(std::span<const ScoredSample> a, std::span<const ScoredSample> b, bool paired,
                           const BootstrapOptions& opt) {
  require_two_classes(a);
  require_two_classes(b);
  if (paired) check_paired(a, b);
  const auto la = label_vector(a);
  const auto lb = label_vector(b);
  const auto ca = delong_components(a, la);
  const auto cb = delong_components(b, lb);

  double var = 0.0;
  if (paired) {
    const double m = static_cast<double>(ca.v10.size());
    const double n = static_cast<double>(ca.v01.size());
    auto part = [](const std::vector<double>& x, const std::vector<double>& y) {
      return x.size() < 2 ? 0.0 : covariance(x, x) + covariance(y, y) - 2.0 * covariance(x, y);
    };
    var = part(ca.v10, cb.v10) / m + part(ca.v01, cb.v01) / n;
  } else {
    auto single = [](const DelongComponents& c) {
      const double s10 = c.v10.size() < 2 ? 0.0 : variance(c.v10);
      const double s01 = c.v01.size() < 2 ? 0.0 : variance(c.v01);
      return s10 / static_cast<double>(c.v10.size()) + s01 / static_cast<double>(c.v01.size());
    };
    var = single(ca) + single(cb);
  }

  StatReport rep;
  rep.name = "auroc_difference";
  rep.estimate = ca.auc - cb.auc;
  rep.n = a.size();
  rep.seed = opt.seed;
  rep.method = std::string("DeLong ") + (paired ? "paired" : "unpaired") + " + bootstrap B=" +
               std::to_string(opt.resamples);
  rep.extra["auroc_a"] = ca.auc;
  rep.extra["auroc_b"] = cb.auc;
  const double delta = rep.estimate;
  if (var > 0.0) {
    const double z = delta / std::sqrt(var);
    rep.extra["z"] = z;
    rep.extra["se_delong"] = std::sqrt(var);
    rep.p_value = std::min(1.0, 2.0 * normal_cdf(-std::abs(z)));
  } else {
    rep.extra["se_delong"] = 0.0;
    rep.p_value = delta == 0.0 ? 1.0 : 0.0;
  }

  const auto deltas = bootstrap_auroc_differences(a, b, paired, opt);
  std::size_t extreme = 0;
  for (double d : deltas)
    if (std::abs(d - delta) >= std::abs(delta)) ++extreme;
  rep.extra["p_bootstrap"] =
      static_cast<double>(extreme + 1) / static_cast<double>(deltas.size() + 1);
  const double tail = (1.0 - opt.level) / 2.0;
  rep.ci_low = std::min(quantile(deltas, tail), delta);
  rep.ci_high = std::max(quantile(deltas, 1.0 - tail), delta);
  return rep;
}

StatReport tost_equivalence(std::span<const ScoredSample> a, std::span<const ScoredSample> b, double margin,
                            const BootstrapOptions& opt, double alpha) {
  if (!(margin > 0.0)) throw PreconditionError("equivalence margin must be positive");
  require_two_classes(a);
  require_two_classes(b);
  bool paired = a.size() == b.size();
  for (std::size_t i = 0; paired && i < a.size(); ++i) paired = a[i].label == b[i].label;

  const double delta = auroc(a) - auroc(b);
  const auto deltas = bootstrap_auroc_differences(a, b, paired, opt);
  const double se = sd(deltas);

  double p_lower, p_upper;  // H0: delta <= -margin ; H0: delta >= margin
  if (se > 0.0) {
    p_lower = 1.0 - normal_cdf((delta + margin) / se);
    p_upper = 1.0 - normal_cdf((margin - delta) / se);
  } else {
    p_lower = delta > -margin ? 0.0 : 1.0;
    p_upper = delta < margin ? 0.0 : 1.0;
  }
  StatReport rep;
  rep.name = "tost_auroc";
  rep.estimate = delta;
  rep.p_value = std::max(p_lower, p_upper);
  rep.n = a.size();
  rep.seed = opt.seed;
  rep.method = std::string("TOST on AUROC difference, bootstrap SE, ") + (paired ? "paired" : "unpaired") +
               ", margin=" + std::to_string(margin);
  rep.extra["p_lower"] = p_lower;
  rep.extra["p_upper"] = p_upper;
  rep.extra["se_bootstrap"] = se;
  rep.extra["margin"] = margin;
  rep.extra["equivalent"] = (p_lower < alpha && p_upper < alpha) ? 1.0 : 0.0;
  return rep;
}

}  // namespace scrkit::stats
