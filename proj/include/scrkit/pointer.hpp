#pragma once

/**
 * Pointer model: a logistic classifier over cheap per-question features that
 * predicts whether the model's answer is incorrect, plus the PCA projection
 * used for its embedding-based variant.
 *
 * Features are standardized with training-set statistics. The fit is Newton's
 * method (IRLS) on the mean log-loss plus an L2 penalty; the small ridge keeps the
 * optimum finite on separable data. Training is deterministic given the seed.
 */

#include "scrkit/errors.hpp"
#include "scrkit/signals.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scrkit::pointer {

inline constexpr const char* kFeatureSetVersion = "pointer-features-v1";

/// Names of the seven entropy statistics followed by the thirteen text features.
std::vector<std::string> base_feature_names();

/// Feature vector for one question. `answer` feeds the hedge counter; every
/// other text feature reads the question. When `categories` is non-empty a
/// one-hot block (one column per listed category) is appended.
std::vector<double> features(const signals::EntropyFeatures& entropy, std::string_view question,
                             std::string_view answer, const std::optional<std::string>& category = std::nullopt,
                             std::span<const std::string> categories = {});

std::vector<std::string> feature_names(std::span<const std::string> categories = {});

struct Model {
  std::vector<std::string> feature_names;
  std::vector<double> center;  // per-feature training mean
  std::vector<double> scale;   // per-feature training SD (1 for constant columns)
  std::vector<double> coefficients;
  double intercept = 0.0;
  int folds = 0;
  std::uint64_t seed = 0;
  double ridge = 0.0;

  /// P(incorrect) in (0, 1).
  double predict(std::span<const double> x) const;
};

struct FitOptions {
  double ridge = 1e-4;
  double tolerance = 1e-8;  // on the infinity norm of the mean-loss gradient
  int max_iterations = 200;
};

/// Fits on all rows. Throws ConvergenceError with the final gradient norm
/// and iteration count when the tolerance is not reached.
Model fit_logistic(const std::vector<std::vector<double>>& x, std::span<const int> y,
                   std::vector<std::string> names, const FitOptions& options = {});

struct Training {
  Model model;                 // refit on all rows
  double cv_auc = 0.0;         // mean of per-fold AUCs
  double pooled_oof_auc = 0.0;
  std::vector<double> fold_auc;
  std::vector<double> oof_probability;
};

/// Stratified k-fold CV then a final fit on all rows. Needs at least 2*folds
/// rows and `folds` members of each class.
Training train_pointer(const std::vector<std::vector<double>>& x, std::span<const int> y,
                       std::vector<std::string> names, int folds, std::uint64_t seed,
                       const FitOptions& options = {});

/// Portable text format: a header line, then one "name coefficient center
/// scale" line per feature and an intercept line.
std::string serialize(const Model& m);
Model parse_model(std::string_view text);

struct Pca {
  std::vector<double> mean;
  std::vector<std::vector<double>> components;  // each unit length, largest-|loading| positive
  std::vector<double> explained_variance;       // eigenvalues of the sample covariance
  std::vector<double> explained_ratio;          // share of total variance
  std::vector<std::vector<double>> projected;   // rows x components
  std::optional<std::string> warning;           // set when fewer components than requested
};

/// Principal components by deflated power iteration (tolerance 1e-9), each
/// component re-orthogonalized against earlier ones. Throws PreconditionError
/// when dims exceeds min(rows, cols) or data are ragged.
Pca pca_project(const std::vector<std::vector<double>>& data, std::size_t dims);

}  // namespace scrkit::pointer
