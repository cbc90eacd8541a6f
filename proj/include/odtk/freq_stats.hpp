#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odtk/ablation.hpp"
#include "odtk/bundle.hpp"
#include "odtk/csv.hpp"
#include "odtk/od_detect.hpp"
#include "odtk/stats.hpp"

namespace odtk {

struct FreqPoint {
  std::size_t token = 0;
  double corpus_frequency = 0.0;
  std::size_t prediction_count = 0;
  double log_frequency = 0.0; ///< log10
  double log_count = 0.0;     ///< log10
};

struct FreqRegression {
  std::string condition;
  std::vector<FreqPoint> points;
  double slope = 0.0;
  double intercept = 0.0;
  std::optional<double> spearman_rho;
};

/// Log-log OLS of prediction count against corpus frequency, over tokens
/// predicted at least once with corpus frequency >= 1.
inline FreqRegression prediction_frequency_fit(const AblationResult &result,
                                               const VocabTable &vocab) {
  require(!result.prediction_counts.empty(), ErrorKind::InvalidArgument,
          "prediction census is empty");
  FreqRegression fit;
  fit.condition = result.condition;
  std::vector<double> x, y;
  for (const auto &[tok, cnt] : result.prediction_counts) {
    require(tok < vocab.size(), ErrorKind::ShapeMismatch, "predicted token outside vocabulary");
    const double f = vocab.corpus_frequency[tok];
    if (cnt < 1 || f < 1.0) continue;
    FreqPoint p{tok, f, cnt, std::log10(f), std::log10(static_cast<double>(cnt))};
    x.push_back(p.log_frequency);
    y.push_back(p.log_count);
    fit.points.push_back(p);
  }
  require(fit.points.size() >= 3, ErrorKind::Degenerate,
          "TooFewPoints: " + std::to_string(fit.points.size()) + " tokens qualify, need 3");
  const auto line = stats::ols(x, y);
  require(line.has_value(), ErrorKind::Degenerate,
          "all qualifying tokens share one corpus frequency");
  fit.slope = line->slope;
  fit.intercept = line->intercept;
  fit.spearman_rho = stats::spearman(x, y);
  return fit;
}

struct DimFreqCorrelation {
  std::optional<double> rho_activation;
  std::optional<double> rho_unembedding;
  bool is_od = false;
};

using DimFreqCorrelations = std::vector<DimFreqCorrelation>;

namespace detail {

/// Spearman against a fixed second variable whose ranks are precomputed.
inline std::optional<double> spearman_with_ranks(std::span<const float> x,
                                                 std::span<const double> y_ranks) {
  const auto rx = stats::average_ranks(x);
  return stats::pearson(rx, y_ranks);
}

} // namespace detail

/// Per dimension j: Spearman between activations[:, j] and the corpus
/// frequency of each sample's predicted token, and between unembedding[:, j]
/// and the corpus frequency of each vocabulary item.
inline DimFreqCorrelations dimension_frequency_profile(const ModelBundle &bundle,
                                                       const AblationResult &full_result,
                                                       const ODReport &od) {
  const std::size_t n = bundle.n(), d = bundle.d(), v = bundle.v();
  require(full_result.predictions.size() == n, ErrorKind::ShapeMismatch,
          "full-model predictions do not cover every sample");
  require(od.dims.size() == d, ErrorKind::ShapeMismatch, "OD report built for another width");

  std::vector<double> pred_freq(n);
  for (std::size_t i = 0; i < n; ++i)
    pred_freq[i] = bundle.vocab.corpus_frequency[full_result.predictions[i]];
  const auto pred_ranks = stats::average_ranks(std::span<const double>(pred_freq));
  const auto vocab_ranks = stats::average_ranks(std::span<const double>(bundle.vocab.corpus_frequency));

  DimFreqCorrelations out(d);
  std::vector<float> col_a(n), col_u(v);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) col_a[i] = bundle.activations(i, j);
    for (std::size_t t = 0; t < v; ++t) col_u[t] = bundle.unembedding(t, j);
    if (n >= 2) out[j].rho_activation = detail::spearman_with_ranks(col_a, pred_ranks);
    if (v >= 2) out[j].rho_unembedding = detail::spearman_with_ranks(col_u, vocab_ranks);
    out[j].is_od = od.is_od(j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// serialization

inline nlohmann::ordered_json to_json(const FreqRegression &f) {
  nlohmann::ordered_json j;
  j["condition"] = f.condition;
  j["points"] = f.points.size();
  j["slope"] = f.slope;
  j["intercept"] = f.intercept;
  j["spearman_rho"] = f.spearman_rho ? nlohmann::ordered_json(*f.spearman_rho) : nlohmann::ordered_json();
  return j;
}

inline std::string freq_points_csv(const FreqRegression &f) {
  csv::Writer w{"token", "corpus_freq", "pred_count", "log10_freq", "log10_count"};
  for (const auto &p : f.points)
    w.row({std::to_string(p.token), csv::num(p.corpus_frequency), std::to_string(p.prediction_count),
           csv::num(p.log_frequency), csv::num(p.log_count)});
  return w.str();
}

inline std::string dim_correlation_csv(const DimFreqCorrelations &c) {
  csv::Writer w{"dimension", "rho_activation", "rho_unembedding", "is_od"};
  for (std::size_t j = 0; j < c.size(); ++j)
    w.row({std::to_string(j), csv::num(c[j].rho_activation), csv::num(c[j].rho_unembedding),
           c[j].is_od ? "1" : "0"});
  return w.str();
}

/// Boxplot-ready summary: non-OD correlations pooled, missing values dropped.
inline nlohmann::ordered_json to_json(const DimFreqCorrelations &c) {
  std::vector<double> act, unemb;
  auto ods = nlohmann::ordered_json::array();
  for (std::size_t j = 0; j < c.size(); ++j) {
    if (c[j].is_od) {
      nlohmann::ordered_json e;
      e["dimension"] = j;
      e["rho_activation"] = c[j].rho_activation ? nlohmann::ordered_json(*c[j].rho_activation) : nlohmann::ordered_json();
      e["rho_unembedding"] = c[j].rho_unembedding ? nlohmann::ordered_json(*c[j].rho_unembedding) : nlohmann::ordered_json();
      ods.push_back(e);
      continue;
    }
    if (c[j].rho_activation) act.push_back(*c[j].rho_activation);
    if (c[j].rho_unembedding) unemb.push_back(*c[j].rho_unembedding);
  }
  auto box = [](const std::vector<double> &x) {
    nlohmann::ordered_json j;
    const auto s = stats::summarize(x);
    j["n"] = s.n;
    j["mean"] = s.mean;
    j["q1"] = s.q1;
    j["median"] = s.q2;
    j["q3"] = s.q3;
    return j;
  };
  nlohmann::ordered_json j;
  j["non_od_activation"] = box(act);
  j["non_od_unembedding"] = box(unemb);
  j["ods"] = ods;
  return j;
}

} // namespace odtk
