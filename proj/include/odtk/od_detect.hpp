#pragma once

// Outlier-dimension identification.
//
// A dimension is an outlier dimension (OD) when its median activation over all
// samples is an extreme value, i.e. reaches the threshold tau separating the
// top (1 - quantile) share of the pooled absolute activations of the layer.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odtk/core.hpp"
#include "odtk/csv.hpp"

namespace odtk {

enum class MedianMode {
  AbsOfSignedMedian, ///< |median(a_j)|, the default
  MedianOfAbs,       ///< median(|a_j|)
};

struct DetectOptions {
  double quantile = 0.99;
  /// Fraction f of samples that must reach tau. 0.5 is the median rule; any
  /// other value tests the ceil(f*N)-th largest |a_j| against tau.
  double min_median_fraction = 0.5;
  MedianMode median_mode = MedianMode::AbsOfSignedMedian;
};

struct DimensionStats {
  double median = 0.0;    ///< signed median over samples
  double magnitude = 0.0; ///< statistic compared against tau
  double z_score = 0.0;   ///< (magnitude - mean_abs) / std_abs
};

struct ODReport {
  double tau = 0.0;
  bool degenerate = false; ///< tau == 0: every dimension passes trivially
  std::size_t top_count = 0;
  IndexSet od_indices;
  std::vector<DimensionStats> dims;
  double mean_abs = 0.0;
  double std_abs = 0.0;
  DetectOptions options;

  bool is_od(std::size_t j) const {
    return std::binary_search(od_indices.begin(), od_indices.end(), j);
  }

  /// Mean and sample std of the OD z-scores.
  std::pair<double, double> od_z_summary() const {
    std::vector<double> z;
    for (auto j : od_indices) z.push_back(dims[j].z_score);
    double m = 0.0, s = 0.0;
    if (!z.empty()) {
      for (double v : z) m += v;
      m /= static_cast<double>(z.size());
      if (z.size() > 1) {
        for (double v : z) s += (v - m) * (v - m);
        s = std::sqrt(s / static_cast<double>(z.size() - 1));
      }
    }
    return {m, s};
  }
};

/// Number of pooled values in the top (1 - quantile) share: ceil((1-q)*n),
/// at least 1. The small slack absorbs binary rounding of (1 - q).
inline std::size_t top_count(std::size_t n, double quantile) {
  const double x = (1.0 - quantile) * static_cast<double>(n);
  auto k = static_cast<std::size_t>(std::ceil(x - 1e-9 * std::max(1.0, x)));
  return std::clamp<std::size_t>(k, 1, n);
}

namespace detail {

inline double median_inplace(std::vector<double> &v) {
  const std::size_t n = v.size();
  const std::size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

} // namespace detail

inline ODReport detect_ods(const MatrixF &activations, const DetectOptions &opt = {}) {
  const std::size_t n = activations.rows(), d = activations.cols();
  require(n >= 1 && d >= 1, ErrorKind::InvalidArgument, "EmptyMatrix: activations are empty");
  require(opt.quantile > 0.0 && opt.quantile < 1.0, ErrorKind::InvalidArgument,
          "quantile must lie in (0, 1)");
  require(opt.min_median_fraction > 0.0 && opt.min_median_fraction <= 1.0,
          ErrorKind::InvalidArgument, "min_median_fraction must lie in (0, 1]");

  ODReport rep;
  rep.options = opt;
  const std::size_t total = n * d;
  rep.top_count = top_count(total, opt.quantile);

  std::vector<float> pooled(total);
  double sum = 0.0;
  for (std::size_t i = 0; i < total; ++i) {
    pooled[i] = std::fabs(activations.values()[i]);
    sum += pooled[i];
  }
  rep.mean_abs = sum / static_cast<double>(total);
  double ss = 0.0;
  for (float v : pooled) ss += (v - rep.mean_abs) * (v - rep.mean_abs);
  rep.std_abs = std::sqrt(ss / static_cast<double>(total));

  const auto kth = pooled.begin() + static_cast<std::ptrdiff_t>(total - rep.top_count);
  std::nth_element(pooled.begin(), kth, pooled.end());
  rep.tau = *kth;
  rep.degenerate = rep.tau == 0.0;

  const bool median_rule = opt.min_median_fraction == 0.5;
  const auto order_rank = static_cast<std::size_t>(
      std::ceil(opt.min_median_fraction * static_cast<double>(n) - 1e-9));

  rep.dims.resize(d);
  std::vector<double> col(n);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = activations(i, j);
    DimensionStats &s = rep.dims[j];
    s.median = detail::median_inplace(col);
    if (median_rule && opt.median_mode == MedianMode::AbsOfSignedMedian) {
      s.magnitude = std::fabs(s.median);
    } else {
      for (std::size_t i = 0; i < n; ++i) col[i] = std::fabs(activations(i, j));
      if (median_rule) {
        s.magnitude = detail::median_inplace(col);
      } else {
        const std::size_t r = std::clamp<std::size_t>(order_rank, 1, n);
        std::nth_element(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(n - r), col.end());
        s.magnitude = col[n - r];
      }
    }
    s.z_score = rep.std_abs > 0.0 ? (s.magnitude - rep.mean_abs) / rep.std_abs : 0.0;
    if (s.magnitude >= rep.tau) rep.od_indices.push_back(j);
  }
  return rep;
}

struct LayerOverlapPoint {
  std::size_t od_count = 0;
  std::size_t overlap_with_last = 0;
  IndexSet od_indices;
  double tau = 0.0;
};

using LayerOverlapCurve = std::vector<LayerOverlapPoint>;

/// Runs detection independently on each layer and counts, per layer, the ODs
/// that are also ODs of the last layer.
inline LayerOverlapCurve layer_overlap(std::span<const MatrixF> layers,
                                       const DetectOptions &opt = {}) {
  require(layers.size() >= 2, ErrorKind::InvalidArgument,
          "layer overlap needs at least two layers");
  for (const auto &l : layers)
    require(l.rows() == layers[0].rows() && l.cols() == layers[0].cols(),
            ErrorKind::ShapeMismatch, "layers differ in shape");
  LayerOverlapCurve curve(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto rep = detect_ods(layers[i], opt);
    curve[i].od_indices = rep.od_indices;
    curve[i].od_count = rep.od_indices.size();
    curve[i].tau = rep.tau;
  }
  const IndexSet &last = curve.back().od_indices;
  for (auto &p : curve) p.overlap_with_last = intersection_size(p.od_indices, last);
  return curve;
}

// ---------------------------------------------------------------------------
// serialization

inline nlohmann::ordered_json to_json(const ODReport &r) {
  nlohmann::ordered_json j;
  j["tau"] = r.tau;
  j["degenerate_tau"] = r.degenerate;
  j["top_count"] = r.top_count;
  j["od_count"] = r.od_indices.size();
  j["od_indices"] = r.od_indices;
  const auto [zm, zs] = r.od_z_summary();
  j["od_z_mean"] = zm;
  j["od_z_std"] = zs;
  j["mean_abs"] = r.mean_abs;
  j["std_abs"] = r.std_abs;
  auto &ods = j["ods"] = nlohmann::ordered_json::array();
  for (auto k : r.od_indices) {
    nlohmann::ordered_json e;
    e["dimension"] = k;
    e["median"] = r.dims[k].median;
    e["magnitude"] = r.dims[k].magnitude;
    e["z_score"] = r.dims[k].z_score;
    ods.push_back(e);
  }
  return j;
}

/// Per-dimension medians, one row per dimension (threshold repeated so the
/// table alone suffices for plotting).
inline std::string dimension_csv(const ODReport &r) {
  csv::Writer w{"dimension", "median", "magnitude", "z_score", "is_od", "tau"};
  for (std::size_t j = 0; j < r.dims.size(); ++j)
    w.row({std::to_string(j), csv::num(r.dims[j].median), csv::num(r.dims[j].magnitude),
           csv::num(r.dims[j].z_score), r.is_od(j) ? "1" : "0", csv::num(r.tau)});
  return w.str();
}

inline nlohmann::ordered_json to_json(const LayerOverlapCurve &c) {
  auto arr = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < c.size(); ++i) {
    nlohmann::ordered_json e;
    e["layer"] = i;
    e["od_count"] = c[i].od_count;
    e["overlap_with_last_layer"] = c[i].overlap_with_last;
    e["tau"] = c[i].tau;
    e["od_indices"] = c[i].od_indices;
    arr.push_back(e);
  }
  return arr;
}

inline std::string layer_csv(const LayerOverlapCurve &c) {
  csv::Writer w{"layer", "od_count", "overlap_with_last_layer"};
  for (std::size_t i = 0; i < c.size(); ++i)
    w.row({std::to_string(i), std::to_string(c[i].od_count),
           std::to_string(c[i].overlap_with_last)});
  return w.str();
}

} // namespace odtk
