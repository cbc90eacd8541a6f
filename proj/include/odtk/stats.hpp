#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "odtk/core.hpp"

namespace odtk::stats {

inline double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Sample standard deviation (n - 1); 0 for fewer than two values.
inline double sample_std(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

/// Population standard deviation (n).
inline double population_std(std::span<const double> x) {
  if (x.empty()) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size()));
}

/// Nearest-rank quantile on ascending-sorted data: element ceil(p*n) (1-based).
inline double nearest_rank_sorted(std::span<const double> sorted, double p) {
  require(!sorted.empty(), ErrorKind::InvalidArgument, "quantile of empty sample");
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(p * n - 1e-9 * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

struct Quartiles {
  double q1 = 0.0, q2 = 0.0, q3 = 0.0;
};

inline Quartiles nearest_rank_quartiles(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  return {nearest_rank_sorted(x, 0.25), nearest_rank_sorted(x, 0.5),
          nearest_rank_sorted(x, 0.75)};
}

/// Mean, sample std and nearest-rank quartiles of a sample.
struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
  double q1 = 0.0, q2 = 0.0, q3 = 0.0;
};

inline Summary summarize(std::span<const double> x) {
  Summary s;
  s.n = x.size();
  if (x.empty()) return s;
  s.mean = stats::mean(x);
  s.std = sample_std(x);
  const auto q = nearest_rank_quartiles({x.begin(), x.end()});
  s.q1 = q.q1;
  s.q2 = q.q2;
  s.q3 = q.q3;
  return s;
}

/// 1-based ranks; tied values share the mean of the ranks they span.
template <class T> std::vector<double> average_ranks(std::span<const T> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && !(x[order[i]] < x[order[j]])) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

/// Pearson correlation; nullopt when either input is constant.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::InvalidArgument,
          "correlation inputs differ in length");
  require(x.size() >= 2, ErrorKind::InvalidArgument,
          "correlation needs at least two points");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Spearman's rho: Pearson correlation of tie-averaged ranks. nullopt when
/// either input is constant (rho undefined).
template <class T, class U>
std::optional<double> spearman(std::span<const T> x, std::span<const U> y) {
  require(x.size() == y.size(), ErrorKind::InvalidArgument,
          "spearman inputs differ in length");
  require(x.size() >= 2, ErrorKind::InvalidArgument,
          "spearman needs at least two points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

inline std::optional<double> spearman(const std::vector<double> &x,
                                      const std::vector<double> &y) {
  return spearman(std::span<const double>(x), std::span<const double>(y));
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Ordinary least squares y = slope * x + intercept; nullopt if x is constant.
inline std::optional<LinearFit> ols(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::InvalidArgument, "ols inputs differ in length");
  require(x.size() >= 2, ErrorKind::InvalidArgument, "ols needs at least two points");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx <= 0.0) return std::nullopt;
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

/// Two-sided one-sample Kolmogorov-Smirnov test against U(0,1).
struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

inline KsResult ks_uniform(std::vector<double> x) {
  require(!x.empty(), ErrorKind::InvalidArgument, "KS test of empty sample");
  std::sort(x.begin(), x.end());
  const auto n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = std::clamp(x[i], 0.0, 1.0);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  // Asymptotic Kolmogorov distribution with the Stephens small-sample correction.
  const double sn = std::sqrt(n);
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    p += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return {d, std::clamp(lambda < 1e-3 ? 1.0 : p, 0.0, 1.0)};
}

} // namespace odtk::stats
