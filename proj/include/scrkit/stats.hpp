#pragma once

/**
 * Evaluation statistics.
 *
 * Label convention: ScoredSample::label is 1 for an incorrect answer (the
 * positive class) and 0 for a correct one; scores are uncertainties, higher
 * meaning more likely incorrect. AUROC therefore measures error detection.
 *
 * Every randomized procedure takes an explicit seed. Resample b draws from
 * its own generator seeded with mix64(seed, b), so results do not depend on
 * thread count or scheduling.
 *
 * Ties use midranks throughout.
 */

#include "scrkit/errors.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scrkit::stats {

struct ScoredSample {
  double score = 0.0;
  int label = 0;  // 1 = incorrect (positive), 0 = correct
};

struct StatReport {
  std::string name;
  double estimate = 0.0;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  std::optional<double> p_value;
  std::size_t n = 0;
  std::string method;
  std::uint64_t seed = 0;
  std::map<std::string, double> extra;
};

struct BootstrapOptions {
  std::size_t resamples = 10000;
  std::uint64_t seed = 42;
  double level = 0.95;
};

// ---------------------------------------------------------------------------
// Basic helpers

double mean(std::span<const double> x);
/// Sample variance (n - 1 denominator).
double variance(std::span<const double> x);
/// Linear-interpolation quantile (Hyndman-Fan type 7); q in [0, 1].
double quantile(std::vector<double> x, double q);
double median(std::vector<double> x);
/// Midranks, 1-based.
std::vector<double> midranks(std::span<const double> x);
double normal_cdf(double z);

std::vector<ScoredSample> make_samples(std::span<const double> scores, std::span<const int> labels);

/// Fold index per row, stratified by label: each class is shuffled with the
/// seed and dealt round-robin. Throws PreconditionError when a class has
/// fewer members than folds.
std::vector<int> stratified_folds(std::span<const int> labels, int folds, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Discrimination

/// Mann-Whitney formulation. Throws DegenerateInputError on a single class.
double auroc(std::span<const ScoredSample> samples);

enum class Statistic { Auroc, Mean, CohensD };
std::string to_string(Statistic s);

/// Percentile bootstrap CI. AUROC and Cohen's d resample within each label
/// stratum; the mean resamples rows. Resamples that leave a statistic
/// undefined are discarded and redrawn (count in extra["discarded"]). The
/// interval is widened to include the point estimate if needed.
StatReport bootstrap_ci(std::span<const ScoredSample> samples, Statistic statistic,
                        const BootstrapOptions& options = {});

/// Generic percentile bootstrap over row indices. `stat` may return nullopt
/// for an undefined resample; `strata` (optional) fixes per-stratum counts.
StatReport bootstrap_ci(std::size_t n, const std::function<std::optional<double>(std::span<const std::size_t>)>& stat,
                        const BootstrapOptions& options, std::span<const int> strata = {});

/// AUROC(a) - AUROC(b) with a DeLong p-value (structural components) and a
/// bootstrap p-value cross-check in extra["p_bootstrap"]. Paired inputs must
/// share size and labels row by row (AlignmentError otherwise).
StatReport auroc_diff_test(std::span<const ScoredSample> a, std::span<const ScoredSample> b, bool paired,
                           const BootstrapOptions& options = {});

/// Two one-sided tests for |AUROC(a) - AUROC(b)| < margin using the
/// bootstrap standard error. extra["equivalent"] is 1 when both one-sided
/// p-values fall below alpha.
StatReport tost_equivalence(std::span<const ScoredSample> a, std::span<const ScoredSample> b, double margin,
                            const BootstrapOptions& options = {}, double alpha = 0.05);

// ---------------------------------------------------------------------------
// Hypothesis tests and effect sizes

std::vector<double> holm_bonferroni(std::span<const double> p_values);

enum class Alternative { TwoSided, Greater, Less };

/// Signed-rank test on paired differences. Zero differences are dropped.
/// Exact null distribution for n <= 20, normal approximation with tie and
/// continuity correction above. estimate = W+ (sum of positive ranks).
/// extra holds p_greater, p_less, p_two_sided, n_used, exact.
StatReport wilcoxon_signed_rank(std::span<const double> differences,
                                Alternative alternative = Alternative::TwoSided);

inline constexpr std::size_t kWilcoxonExactLimit = 20;

/// Rank-sum test of a against b (normal approximation with tie correction).
/// estimate = U for a; extra["auc"] = U / (n_a n_b).
StatReport mann_whitney_u(std::span<const double> a, std::span<const double> b,
                          Alternative alternative = Alternative::TwoSided);

/// Pooled-SD Cohen's d of a relative to b with a bootstrap CI.
StatReport cohens_d(std::span<const double> a, std::span<const double> b, const BootstrapOptions& options = {});
double cohens_d_value(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Independence. Each takes a permutation count; p = (1 + #{null >= obs}) / (1 + perms).

struct PermutationOptions {
  std::size_t permutations = 500;
  std::uint64_t seed = 42;
};

StatReport pearson_r(std::span<const double> x, std::span<const double> y, const PermutationOptions& options = {});
double pearson_value(std::span<const double> x, std::span<const double> y);

StatReport distance_correlation(std::span<const double> x, std::span<const double> y,
                                const PermutationOptions& options = {});
double distance_correlation_value(std::span<const double> x, std::span<const double> y);

/// Biased HSIC with Gaussian kernels, bandwidth = median pairwise distance.
StatReport hsic_test(std::span<const double> x, std::span<const double> y, const PermutationOptions& options = {});

/// Histogram mutual information in bits with Freedman-Diaconis bins per axis
/// (width 2 IQR n^(-1/3), at least 2 bins). extra["null_mean"] is the mean
/// MI under permutation. Constant input yields 0.
StatReport mutual_information_fd(std::span<const double> x, std::span<const double> y,
                                 const PermutationOptions& options = {});

struct Binning {
  double lo = 0.0;
  double width = 1.0;
  int bins = 2;
  int index(double v) const;
};

Binning freedman_diaconis(std::span<const double> x);
double mutual_information_bits(std::span<const double> x, std::span<const double> y);

// ---------------------------------------------------------------------------
// Calibration. Confidence is the predicted probability that the answer is
// correct; `correct` is 1 for a correct answer.

double ece(std::span<const double> confidence, std::span<const int> correct, int bins = 10);
double brier(std::span<const double> probabilities, std::span<const int> outcomes);

struct ReliabilityBin {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

std::vector<ReliabilityBin> reliability_table(std::span<const double> confidence, std::span<const int> correct,
                                              int bins = 10);

/// Maps raw uncertainty scores to P(incorrect) before calibration: the scores
/// themselves when all lie in [0, 1], otherwise min-max normalized.
std::vector<double> raw_incorrect_probability(std::span<const double> scores);

struct PlattMap {
  double a = 0.0;
  double b = 0.0;
  double operator()(double score) const;  // P(incorrect)
};

/// Maximum-likelihood sigmoid with smoothed targets. When `nonnegative_slope`
/// is set the slope is constrained to a >= 0. Throws ConvergenceError.
PlattMap fit_platt(std::span<const double> scores, std::span<const int> labels, bool nonnegative_slope);

struct PlattResult {
  std::vector<double> oof_p_incorrect;  // out-of-fold calibrated probabilities
  PlattMap full_map;                     // fit on all rows
  bool slope_sign_flipped = false;       // raw AUROC < 0.5, negative slope allowed
  double ece_before = 0.0, ece_after = 0.0;
  double brier_before = 0.0, brier_after = 0.0;
  double auroc_before = 0.0;
  double auroc_after = 0.0;  // under full_map, a monotone transform of the raw scores
  double auroc_oof = 0.0;    // of the out-of-fold probabilities
};

PlattResult platt_fit(std::span<const double> raw_scores, std::span<const int> labels, int folds = 5,
                      std::uint64_t seed = 42, int bins = 10);

// ---------------------------------------------------------------------------
// Selective prediction

struct RiskCoverageCurve {
  std::vector<double> coverage;
  std::vector<double> risk;
  double aurc = 0.0;
  double aurc_random = 0.0;
  double aurc_oracle = 0.0;
  double prr = 0.0;
  std::map<double, double> accuracy_at;  // at coverages 0.3, 0.5 and 0.8
};

/// Keep the c-fraction with the lowest uncertainty; tied scores share the
/// boundary proportionally so constant scores give the overall risk at every
/// coverage. AURC is the trapezoidal area over the grid (default i/n).
/// PRR = (AURC_random - AURC) / (AURC_random - AURC_oracle).
RiskCoverageCurve risk_coverage(std::span<const ScoredSample> samples, std::vector<double> grid = {});

/// Selective risk at a single coverage in (0, 1].
double selective_risk(std::span<const ScoredSample> samples, double coverage);

}  // namespace scrkit::stats
