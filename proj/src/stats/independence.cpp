#include "scrkit/stats.hpp"

#include "internal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace scrkit::stats {

namespace {

constexpr std::size_t kMinPairs = 8;

void check_pair(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw ShapeError("paired series differ in length: " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  }
  if (x.size() < kMinPairs) {
    throw PreconditionError("independence measures need at least 8 pairs, got " + std::to_string(x.size()));
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw PreconditionError("non-finite value at row " + std::to_string(i));
  }
}

bool is_constant(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

// Square matrix stored row-major.
struct Matrix {
  std::size_t n = 0;
  std::vector<double> v;
  double& at(std::size_t i, std::size_t j) { return v[i * n + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * n + j]; }
};

Matrix double_centered_distances(std::span<const double> x) {
  const std::size_t n = x.size();
  Matrix m{n, std::vector<double>(n * n)};
  std::vector<double> row(n, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d = std::abs(x[i] - x[j]);
      m.at(i, j) = d;
      row[i] += d;
    }
    grand += row[i];
  }
  const double nn = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) m.at(i, j) += -row[i] / nn - row[j] / nn + grand / (nn * nn);
  }
  return m;
}

void center(Matrix& k) {
  const std::size_t n = k.n;
  const double nn = static_cast<double>(n);
  std::vector<double> row(n, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row[i] += k.at(i, j);
    grand += row[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) k.at(i, j) += -row[i] / nn - row[j] / nn + grand / (nn * nn);
  }
}

// sum_ij a_ij b_{p(i) p(j)} / n^2; identity when `perm` is empty.
double frobenius(const Matrix& a, const Matrix& b, std::span<const std::size_t> perm) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.n; ++i) {
    const std::size_t pi = perm.empty() ? i : perm[i];
    for (std::size_t j = 0; j < a.n; ++j) s += a.at(i, j) * b.at(pi, perm.empty() ? j : perm[j]);
  }
  const double nn = static_cast<double>(a.n);
  return s / (nn * nn);
}

Matrix gaussian_kernel(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> dists;
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) dists.push_back(std::abs(x[i] - x[j]));
  double sigma = median(dists);
  if (!(sigma > 0.0)) sigma = 1.0;
  Matrix k{n, std::vector<double>(n * n)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double d = x[i] - x[j];
      k.at(i, j) = std::exp(-d * d / (2.0 * sigma * sigma));
    }
  return k;
}

// Runs `statistic(perm)` under options.permutations random permutations.
std::vector<double> permutation_null(std::size_t n, const PermutationOptions& options,
                                     const std::function<double(std::span<const std::size_t>)>& statistic) {
  if (options.permutations == 0) throw PreconditionError("permutation count must be positive");
  std::vector<double> null(options.permutations);
  detail::parallel_for(options.permutations, [&](std::size_t r) {
    auto rng = detail::stream(options.seed, r);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    null[r] = statistic(perm);
  });
  return null;
}

double permutation_p(std::span<const double> null, double observed) {
  // A small relative slack keeps exact ties (e.g. the identity permutation)
  // from being lost to rounding.
  const double bar = observed - 1e-12 * std::max(1.0, std::abs(observed));
  const auto hits = std::count_if(null.begin(), null.end(), [&](double v) { return v >= bar; });
  return static_cast<double>(hits + 1) / static_cast<double>(null.size() + 1);
}

StatReport base_report(std::string name, double estimate, std::size_t n, const PermutationOptions& options) {
  StatReport r;
  r.name = std::move(name);
  r.estimate = estimate;
  r.n = n;
  r.seed = options.seed;
  return r;
}

}  // namespace

double pearson_value(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ShapeError("Pearson needs two equal-length series of length >= 2");
  if (is_constant(x) || is_constant(y)) throw DegenerateInputError("Pearson correlation undefined for a constant series");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

StatReport pearson_r(std::span<const double> x, std::span<const double> y, const PermutationOptions& options) {
  check_pair(x, y);
  const double r = pearson_value(x, y);
  const auto null = permutation_null(x.size(), options, [&](std::span<const std::size_t> perm) {
    std::vector<double> yp(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) yp[i] = y[perm[i]];
    return std::abs(pearson_value(x, yp));
  });
  auto rep = base_report("pearson_r", r, x.size(), options);
  rep.p_value = permutation_p(null, std::abs(r));
  rep.method = "Pearson r, two-sided permutation p, permutations=" + std::to_string(options.permutations);
  return rep;
}

double distance_correlation_value(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ShapeError("distance correlation needs equal-length series");
  if (is_constant(x) || is_constant(y)) {
    throw DegenerateInputError("distance correlation undefined for a constant series");
  }
  const auto a = double_centered_distances(x);
  const auto b = double_centered_distances(y);
  const double vxy = frobenius(a, b, {});
  const double vxx = frobenius(a, a, {});
  const double vyy = frobenius(b, b, {});
  return std::sqrt(std::clamp(vxy / std::sqrt(vxx * vyy), 0.0, 1.0));
}

StatReport distance_correlation(std::span<const double> x, std::span<const double> y,
                                const PermutationOptions& options) {
  check_pair(x, y);
  const double d = distance_correlation_value(x, y);
  const auto a = double_centered_distances(x);
  const auto b = double_centered_distances(y);
  const double observed = frobenius(a, b, {});
  const auto null = permutation_null(x.size(), options, [&](std::span<const std::size_t> perm) {
    return frobenius(a, b, perm);
  });
  auto rep = base_report("distance_correlation", d, x.size(), options);
  rep.p_value = permutation_p(null, observed);
  rep.extra["dcov2"] = observed;
  rep.method = "distance correlation (V-statistic), permutation p, permutations=" +
               std::to_string(options.permutations);
  return rep;
}

StatReport hsic_test(std::span<const double> x, std::span<const double> y, const PermutationOptions& options) {
  check_pair(x, y);
  auto k = gaussian_kernel(x);
  const auto l = gaussian_kernel(y);
  center(k);
  const double observed = frobenius(k, l, {});
  const auto null =
      permutation_null(x.size(), options, [&](std::span<const std::size_t> perm) { return frobenius(k, l, perm); });
  auto rep = base_report("hsic", observed, x.size(), options);
  rep.p_value = permutation_p(null, observed);
  rep.extra["null_mean"] = std::accumulate(null.begin(), null.end(), 0.0) / static_cast<double>(null.size());
  rep.method = "biased HSIC, Gaussian kernels with median-distance bandwidth, permutation p, permutations=" +
               std::to_string(options.permutations);
  return rep;
}

int Binning::index(double v) const {
  if (bins <= 1 || !(width > 0.0)) return 0;
  const double pos = std::floor((v - lo) / width);
  return static_cast<int>(std::clamp(pos, 0.0, static_cast<double>(bins - 1)));
}

Binning freedman_diaconis(std::span<const double> x) {
  if (x.empty()) throw PreconditionError("binning needs at least one value");
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  Binning b;
  b.lo = *mn;
  const double range = *mx - *mn;
  if (!(range > 0.0)) {
    b.bins = 1;
    b.width = 0.0;
    return b;
  }
  std::vector<double> v(x.begin(), x.end());
  const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
  const double n = static_cast<double>(x.size());
  const double fd_width = 2.0 * iqr * std::cbrt(1.0 / n);
  int bins = fd_width > 0.0 ? static_cast<int>(std::ceil(range / fd_width)) : 2;
  bins = std::clamp(bins, 2, std::max(2, static_cast<int>(x.size())));
  b.bins = bins;
  b.width = range / static_cast<double>(bins);
  return b;
}

namespace {

double mi_from_codes(std::span<const int> cx, int bx, std::span<const int> cy, int by,
                     std::span<const std::size_t> perm) {
  const std::size_t n = cx.size();
  std::vector<double> joint(static_cast<std::size_t>(bx) * static_cast<std::size_t>(by), 0.0);
  std::vector<double> px(static_cast<std::size_t>(bx), 0.0), py(static_cast<std::size_t>(by), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const int yi = cy[perm.empty() ? i : perm[i]];
    joint[static_cast<std::size_t>(cx[i] * by + yi)] += 1.0;
    px[static_cast<std::size_t>(cx[i])] += 1.0;
    py[static_cast<std::size_t>(yi)] += 1.0;
  }
  const double nn = static_cast<double>(n);
  double mi = 0.0;
  for (int i = 0; i < bx; ++i) {
    for (int j = 0; j < by; ++j) {
      const double c = joint[static_cast<std::size_t>(i * by + j)];
      if (c == 0.0) continue;
      mi += (c / nn) * std::log2(c * nn / (px[static_cast<std::size_t>(i)] * py[static_cast<std::size_t>(j)]));
    }
  }
  return std::max(0.0, mi);
}

std::vector<int> codes(std::span<const double> x, const Binning& b) {
  std::vector<int> c(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) c[i] = b.index(x[i]);
  return c;
}

}  // namespace

double mutual_information_bits(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("mutual information needs equal-length series");
  if (x.empty()) throw PreconditionError("mutual information of an empty sample");
  const auto bx = freedman_diaconis(x);
  const auto by = freedman_diaconis(y);
  return mi_from_codes(codes(x, bx), bx.bins, codes(y, by), by.bins, {});
}

StatReport mutual_information_fd(std::span<const double> x, std::span<const double> y,
                                 const PermutationOptions& options) {
  check_pair(x, y);
  const auto bx = freedman_diaconis(x);
  const auto by = freedman_diaconis(y);
  const auto cx = codes(x, bx);
  const auto cy = codes(y, by);
  const double observed = mi_from_codes(cx, bx.bins, cy, by.bins, {});
  auto rep = base_report("mutual_information", observed, x.size(), options);
  rep.method = "histogram MI in bits, Freedman-Diaconis bins, permutation null, permutations=" +
               std::to_string(options.permutations);
  rep.extra["bins_x"] = bx.bins;
  rep.extra["bins_y"] = by.bins;
  if (bx.bins <= 1 || by.bins <= 1) {
    rep.extra["null_mean"] = 0.0;
    rep.p_value = 1.0;
    return rep;
  }
  const auto null = permutation_null(x.size(), options, [&](std::span<const std::size_t> perm) {
    return mi_from_codes(cx, bx.bins, cy, by.bins, perm);
  });
  rep.extra["null_mean"] = std::accumulate(null.begin(), null.end(), 0.0) / static_cast<double>(null.size());
  rep.p_value = permutation_p(null, observed);
  return rep;
}

}  // namespace scrkit::stats
