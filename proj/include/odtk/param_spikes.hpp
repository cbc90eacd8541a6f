#pragma once

// Which parameters boost the ODs: spikes (entries beyond sigma_mult standard
// deviations from the mean) in the left singular vectors of the last MLP
// down-projection and in the final LayerNorm weight and bias, and how often
// they land on OD dimensions compared with chance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/SVD>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "odtk/bundle.hpp"
#include "odtk/core.hpp"
#include "odtk/csv.hpp"
#include "odtk/od_detect.hpp"
#include "odtk/prng.hpp"
#include "odtk/stats.hpp"

namespace odtk {

struct SvdResult {
  std::size_t rank = 0;                         ///< min(d, h)
  std::vector<double> singular_values;          ///< all r, descending
  std::vector<std::vector<double>> left;        ///< top_k columns of U, length d
  std::vector<std::vector<double>> right;       ///< matching columns of V, length h
};

/// Flips (u, v) so the largest-|entry| component of u is positive (first such
/// index on ties).
inline void normalize_sign(std::vector<double> &u, std::vector<double> &v) {
  std::size_t arg = 0;
  for (std::size_t i = 1; i < u.size(); ++i)
    if (std::fabs(u[i]) > std::fabs(u[arg])) arg = i;
  if (!u.empty() && u[arg] < 0.0) {
    for (auto &x : u) x = -x;
    for (auto &x : v) x = -x;
  }
}

inline SvdResult svd_down_projection(const MatrixF &mlp_down, std::size_t top_k) {
  const std::size_t d = mlp_down.rows(), h = mlp_down.cols();
  require(d >= 1 && h >= 1, ErrorKind::InvalidArgument, "down-projection is empty");
  const std::size_t r = std::min(d, h);
  require(top_k >= 1 && top_k <= r, ErrorKind::InvalidArgument,
          fmt::format("BadK: top_k must lie in [1, {}]; got {}", r, top_k));
  for (float x : mlp_down.values())
    require(std::isfinite(x), ErrorKind::NonFiniteValue, "down-projection has non-finite entries");

  Eigen::MatrixXd m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < h; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = mlp_down(i, j);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);

  SvdResult res;
  res.rank = r;
  const auto &sv = svd.singularValues();
  res.singular_values.assign(sv.data(), sv.data() + sv.size());
  for (std::size_t k = 0; k < top_k; ++k) {
    std::vector<double> u(d), v(h);
    for (std::size_t i = 0; i < d; ++i) u[i] = svd.matrixU()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    for (std::size_t j = 0; j < h; ++j) v[j] = svd.matrixV()(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
    normalize_sign(u, v);
    res.left.push_back(std::move(u));
    res.right.push_back(std::move(v));
  }
  return res;
}

/// Cumulative explained fraction sum_{i<=N} lambda_i / sum_i lambda_i for
/// N = 1..r; the last entry is exactly 1.
inline std::vector<double> explained_fraction(const SvdResult &svd) {
  double total = 0.0;
  for (double l : svd.singular_values) total += l;
  std::vector<double> out(svd.singular_values.size(), 1.0);
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < out.size(); ++i) {
    acc += svd.singular_values[i];
    out[i] = total > 0.0 ? std::min(1.0, acc / total) : 1.0;
  }
  return out;
}

struct CombinedVector {
  std::vector<double> values;
  std::size_t n_used = 0;
  double explained = 0.0;
};

/// sum_{i<=N} lambda_i u_i for the smallest N whose explained fraction reaches
/// variance_fraction.
inline CombinedVector combined_vector(const SvdResult &svd, double variance_fraction) {
  require(variance_fraction > 0.0 && variance_fraction <= 1.0, ErrorKind::InvalidArgument,
          "variance fraction must lie in (0, 1]");
  const auto frac = explained_fraction(svd);
  std::size_t n = 0;
  while (n < frac.size() && frac[n] < variance_fraction) ++n;
  require(n < frac.size(), ErrorKind::InvalidArgument, "InsufficientRank: fraction unreachable");
  CombinedVector cv;
  cv.n_used = n + 1;
  cv.explained = frac[n];
  require(cv.n_used <= svd.left.size(), ErrorKind::InvalidArgument,
          fmt::format("InsufficientRank: need {} singular vectors, {} available", cv.n_used,
                      svd.left.size()));
  cv.values.assign(svd.left.front().size(), 0.0);
  for (std::size_t i = 0; i < cv.n_used; ++i)
    for (std::size_t j = 0; j < cv.values.size(); ++j)
      cv.values[j] += svd.singular_values[i] * svd.left[i][j];
  return cv;
}

struct SpikeSet {
  IndexSet indices;
  double mean = 0.0;
  double std = 0.0; ///< population
  bool degenerate = false;
};

/// Indices j with |v_j - mean(v)| > sigma_mult * std(v). A constant vector
/// yields no spikes and is flagged degenerate.
template <class T> SpikeSet detect_spikes(std::span<const T> v, double sigma_mult = 3.0) {
  require(v.size() >= 2, ErrorKind::InvalidArgument, "spike detection needs length >= 2");
  std::vector<double> x(v.begin(), v.end());
  SpikeSet s;
  s.mean = stats::mean(x);
  s.std = stats::population_std(x);
  if (s.std <= 0.0) {
    s.degenerate = true;
    return s;
  }
  for (std::size_t j = 0; j < x.size(); ++j)
    if (std::fabs(x[j] - s.mean) > sigma_mult * s.std) s.indices.push_back(j);
  return s;
}

inline SpikeSet detect_spikes(const std::vector<double> &v, double sigma_mult = 3.0) {
  return detect_spikes(std::span<const double>(v), sigma_mult);
}

enum class PValueMethod { MonteCarlo, Exact };

struct OverlapPValue {
  std::size_t observed = 0;
  double p = 1.0;
  PValueMethod method = PValueMethod::Exact;
  std::size_t trials = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline long double log_choose(std::size_t n, std::size_t k) {
  return std::lgamma(static_cast<long double>(n) + 1) - std::lgamma(static_cast<long double>(k) + 1) -
         std::lgamma(static_cast<long double>(n - k) + 1);
}

} // namespace detail

/// P[X >= observed] for X ~ Hypergeometric(population d, successes K, draws n).
inline double hypergeometric_upper_tail(std::size_t d, std::size_t successes, std::size_t draws,
                                        std::size_t observed) {
  require(successes <= d && draws <= d, ErrorKind::InvalidArgument, "BadSets: set larger than d");
  const std::size_t lo = draws + successes > d ? draws + successes - d : 0;
  const std::size_t hi = std::min(successes, draws);
  if (observed <= lo) return 1.0;
  if (observed > hi) return 0.0;
  const long double denom = detail::log_choose(d, draws);
  long double p = 0.0L;
  for (std::size_t x = observed; x <= hi; ++x)
    p += std::exp(detail::log_choose(successes, x) + detail::log_choose(d - successes, draws - x) - denom);
  return std::clamp(static_cast<double>(p), 0.0, 1.0);
}

/// Chance of an overlap at least as large as observed between `spikes` and
/// `ods`, placing |spikes| positions uniformly at random among d.
/// Monte-Carlo uses add-one smoothing: (successes + 1) / (trials + 1).
inline OverlapPValue overlap_pvalue(const IndexSet &spikes, const IndexSet &ods, std::size_t d,
                                    PValueMethod method, std::size_t trials = 100000,
                                    std::uint64_t seed = 1) {
  require(spikes.empty() || spikes.back() < d, ErrorKind::InvalidArgument, "BadSets: spike index >= d");
  require(ods.empty() || ods.back() < d, ErrorKind::InvalidArgument, "BadSets: OD index >= d");
  OverlapPValue out;
  out.observed = intersection_size(spikes, ods);
  out.method = method;
  if (method == PValueMethod::Exact) {
    out.p = hypergeometric_upper_tail(d, ods.size(), spikes.size(), out.observed);
    return out;
  }
  require(trials >= 1, ErrorKind::InvalidArgument, "Monte-Carlo needs at least one trial");
  out.trials = trials;
  out.seed = seed;
  std::vector<char> is_od(d, 0);
  for (auto j : ods) is_od[j] = 1;
  DistinctSampler sampler(d);
  std::size_t hits = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    auto rng = CounterRng::stream(seed, t);
    std::size_t overlap = 0;
    for (auto j : sampler.draw(spikes.size(), rng)) overlap += static_cast<std::size_t>(is_od[j]);
    if (overlap >= out.observed) ++hits;
  }
  out.p = static_cast<double>(hits + 1) / static_cast<double>(trials + 1);
  return out;
}

struct SpikeSuiteOptions {
  std::size_t top_k = 4;
  double sigma_mult = 3.0;
  std::vector<double> variance_fractions{0.25, 0.5, 0.75, 0.9};
  PValueMethod method = PValueMethod::MonteCarlo;
  std::size_t trials = 100000;
  std::uint64_t seed = 1;
  bool require_layer_norm = false;
};

struct SpikeEntry {
  std::string label;
  std::vector<double> values;
  SpikeSet spikes;
  std::size_t overlap = 0;
  OverlapPValue p;
  double p_exact = 1.0;
  std::optional<double> singular_value;
  std::optional<std::size_t> n_used; ///< combined vectors only
};

struct SpikeOverlapReport {
  std::vector<SpikeEntry> entries;
  std::vector<double> explained_fraction;
  std::vector<std::string> notes;
};

namespace detail {

inline SpikeEntry analyze_vector(std::string label, std::vector<double> values, const IndexSet &ods,
                                 const SpikeSuiteOptions &opt) {
  SpikeEntry e;
  e.label = std::move(label);
  e.values = std::move(values);
  e.spikes = detect_spikes(e.values, opt.sigma_mult);
  e.overlap = intersection_size(e.spikes.indices, ods);
  e.p = overlap_pvalue(e.spikes.indices, ods, e.values.size(), opt.method, opt.trials, opt.seed);
  e.p_exact = hypergeometric_upper_tail(e.values.size(), ods.size(), e.spikes.indices.size(), e.overlap);
  return e;
}

} // namespace detail

inline SpikeOverlapReport spike_overlap_suite(const ModelBundle &bundle, const ODReport &od,
                                              const SpikeSuiteOptions &opt = {}) {
  require(bundle.mlp_down.has_value(), ErrorKind::MissingTensor,
          "bundle has no mlp_down tensor");
  if (opt.require_layer_norm) {
    require(bundle.ln_weight.has_value(), ErrorKind::MissingTensor, "bundle has no ln_weight tensor");
    require(bundle.ln_bias.has_value(), ErrorKind::MissingTensor, "bundle has no ln_bias tensor");
  }
  const auto &ods = od.od_indices;
  const std::size_t r = std::min(bundle.mlp_down->rows(), bundle.mlp_down->cols());
  require(opt.top_k >= 1 && opt.top_k <= r, ErrorKind::InvalidArgument,
          fmt::format("BadK: top_k must lie in [1, {}]", r));

  SpikeOverlapReport rep;
  const SvdResult svd = svd_down_projection(*bundle.mlp_down, r);
  rep.explained_fraction = explained_fraction(svd);
  for (std::size_t k = 0; k < opt.top_k; ++k) {
    auto e = detail::analyze_vector(fmt::format("singular_vector_{}", k + 1), svd.left[k], ods, opt);
    e.singular_value = svd.singular_values[k];
    rep.entries.push_back(std::move(e));
  }
  for (double f : opt.variance_fractions) {
    const auto cv = combined_vector(svd, f);
    auto e = detail::analyze_vector(fmt::format("combined_{}", f), cv.values, ods, opt);
    e.n_used = cv.n_used;
    rep.entries.push_back(std::move(e));
  }
  if (bundle.ln_weight)
    rep.entries.push_back(detail::analyze_vector(
        "ln_weight", {bundle.ln_weight->begin(), bundle.ln_weight->end()}, ods, opt));
  else
    rep.notes.emplace_back("ln_weight absent: no LayerNorm weight analysis");
  if (bundle.ln_bias)
    rep.entries.push_back(detail::analyze_vector(
        "ln_bias", {bundle.ln_bias->begin(), bundle.ln_bias->end()}, ods, opt));
  else
    rep.notes.emplace_back("ln_bias absent: no LayerNorm bias analysis");
  return rep;
}

// ---------------------------------------------------------------------------
// serialization

inline std::string spike_vector_csv(const SpikeEntry &e, const IndexSet &ods) {
  csv::Writer w{"index", "value", "is_spike", "is_od"};
  for (std::size_t j = 0; j < e.values.size(); ++j) {
    const bool spike = std::binary_search(e.spikes.indices.begin(), e.spikes.indices.end(), j);
    const bool is_od = std::binary_search(ods.begin(), ods.end(), j);
    w.row({std::to_string(j), csv::num(e.values[j]), spike ? "1" : "0", is_od ? "1" : "0"});
  }
  return w.str();
}

inline nlohmann::ordered_json to_json(const SpikeOverlapReport &r) {
  nlohmann::ordered_json j;
  auto &arr = j["vectors"] = nlohmann::ordered_json::array();
  for (const auto &e : r.entries) {
    nlohmann::ordered_json x;
    x["label"] = e.label;
    if (e.singular_value) x["singular_value"] = *e.singular_value;
    if (e.n_used) x["singular_vectors_used"] = *e.n_used;
    x["spike_count"] = e.spikes.indices.size();
    x["spikes"] = e.spikes.indices;
    x["degenerate_std"] = e.spikes.degenerate;
    x["od_overlap"] = e.overlap;
    x["p_value"] = e.p.p;
    x["method"] = e.p.method == PValueMethod::Exact ? "exact-hypergeometric" : "monte-carlo";
    if (e.p.method == PValueMethod::MonteCarlo) {
      x["trials"] = e.p.trials;
      x["seed"] = e.p.seed;
    }
    x["p_value_exact"] = e.p_exact;
    arr.push_back(x);
  }
  j["explained_fraction_head"] = std::vector<double>(
      r.explained_fraction.begin(),
      r.explained_fraction.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(32, r.explained_fraction.size())));
  j["notes"] = r.notes;
  return j;
}

} // namespace odtk
