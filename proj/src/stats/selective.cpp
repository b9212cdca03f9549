#include "scrkit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace scrkit::stats {

namespace {

// Cumulative error count as a function of how many rows are kept, with rows
// ordered by ascending uncertainty. Within a group of tied scores the errors
// are spread evenly, so the function is piecewise linear.
class CumulativeErrors {
public:
  explicit CumulativeErrors(std::span<const ScoredSample> samples) {
    std::vector<ScoredSample> sorted(samples.begin(), samples.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const ScoredSample& a, const ScoredSample& b) { return a.score < b.score; });
    knots_.push_back(0.0);
    errors_.push_back(0.0);
    for (std::size_t i = 0; i < sorted.size();) {
      std::size_t j = i;
      double e = 0.0;
      while (j < sorted.size() && sorted[j].score == sorted[i].score) e += sorted[j++].label;
      knots_.push_back(static_cast<double>(j));
      errors_.push_back(errors_.back() + e);
      i = j;
    }
    n_ = static_cast<double>(sorted.size());
  }

  double at(double kept) const {
    const auto it = std::upper_bound(knots_.begin(), knots_.end(), kept);
    if (it == knots_.end()) return errors_.back();
    const auto hi = static_cast<std::size_t>(it - knots_.begin());
    const std::size_t lo = hi - 1;
    const double frac = (kept - knots_[lo]) / (knots_[hi] - knots_[lo]);
    return errors_[lo] + frac * (errors_[hi] - errors_[lo]);
  }

  double risk(double coverage) const {
    const double kept = coverage * n_;
    return kept > 0.0 ? std::clamp(at(kept) / kept, 0.0, 1.0) : 0.0;
  }

private:
  std::vector<double> knots_;
  std::vector<double> errors_;
  double n_ = 0.0;
};

void check(std::span<const ScoredSample> samples) {
  bool pos = false, neg = false;
  for (const auto& s : samples) {
    if (!std::isfinite(s.score)) throw PreconditionError("non-finite uncertainty score");
    (s.label == 1 ? pos : neg) = true;
  }
  if (!pos || !neg) throw DegenerateInputError("risk-coverage needs both correct and incorrect answers");
}

double area(const std::vector<double>& coverage, const std::vector<double>& risk) {
  double a = 0.0;
  for (std::size_t i = 1; i < coverage.size(); ++i) {
    a += 0.5 * (risk[i] + risk[i - 1]) * (coverage[i] - coverage[i - 1]);
  }
  return a;
}

std::vector<double> risks(const CumulativeErrors& ce, const std::vector<double>& grid) {
  std::vector<double> r(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) r[i] = ce.risk(grid[i]);
  return r;
}

}  // namespace

RiskCoverageCurve risk_coverage(std::span<const ScoredSample> samples, std::vector<double> grid) {
  check(samples);
  const std::size_t n = samples.size();
  if (grid.empty()) {
    for (std::size_t i = 1; i <= n; ++i) grid.push_back(static_cast<double>(i) / static_cast<double>(n));
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0 && grid[i] <= 1.0)) throw PreconditionError("coverage grid points must lie in (0, 1]");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw PreconditionError("coverage grid must be strictly increasing");
  }

  std::vector<ScoredSample> oracle(samples.begin(), samples.end());
  std::vector<ScoredSample> random(samples.begin(), samples.end());
  for (auto& s : oracle) s.score = s.label;
  for (auto& s : random) s.score = 0.0;

  const CumulativeErrors method(samples);
  RiskCoverageCurve c;
  c.coverage = grid;
  c.risk = risks(method, grid);
  c.aurc = area(grid, c.risk);
  c.aurc_random = area(grid, risks(CumulativeErrors(random), grid));
  c.aurc_oracle = area(grid, risks(CumulativeErrors(oracle), grid));
  const double denom = c.aurc_random - c.aurc_oracle;
  c.prr = denom > 0.0 ? (c.aurc_random - c.aurc) / denom : 0.0;
  for (double cov : {0.3, 0.5, 0.8}) c.accuracy_at[cov] = 1.0 - method.risk(cov);
  return c;
}

double selective_risk(std::span<const ScoredSample> samples, double coverage) {
  check(samples);
  if (!(coverage > 0.0 && coverage <= 1.0)) throw PreconditionError("coverage must lie in (0, 1]");
  return CumulativeErrors(samples).risk(coverage);
}

}  // namespace scrkit::stats
