#pragma once

// Masked read-out of the final representation: logits, predictions and the
// ablation conditions (full, ablate-X, only-X, and their random counterparts).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "odtk/bundle.hpp"
#include "odtk/core.hpp"
#include "odtk/csv.hpp"
#include "odtk/prng.hpp"
#include "odtk/stats.hpp"

namespace odtk {

enum class MaskKind { Full, AblateSet, OnlySet, AblateRandom, OnlyRandom };

inline std::string_view to_string(MaskKind k) {
  switch (k) {
  case MaskKind::Full: return "full";
  case MaskKind::AblateSet: return "ablate";
  case MaskKind::OnlySet: return "only";
  case MaskKind::AblateRandom: return "ablate-random";
  case MaskKind::OnlyRandom: return "only-random";
  }
  return "?";
}

/// Dimensions kept active; every other dimension of the final representation
/// is set to zero.
struct DimensionMask {
  std::size_t dim = 0;
  IndexSet kept;
  IndexSet target; ///< the set X of ablate-X / only-X
  MaskKind kind = MaskKind::Full;
  std::optional<std::uint64_t> seed;

  static DimensionMask full(std::size_t d) {
    DimensionMask m;
    m.dim = d;
    m.kept.resize(d);
    for (std::size_t j = 0; j < d; ++j) m.kept[j] = j;
    return m;
  }

  static DimensionMask only(IndexSet x, std::size_t d) {
    check(x, d);
    DimensionMask m;
    m.dim = d;
    m.kind = MaskKind::OnlySet;
    m.kept = x;
    m.target = std::move(x);
    return m;
  }

  static DimensionMask ablate(IndexSet x, std::size_t d) {
    check(x, d);
    DimensionMask m;
    m.dim = d;
    m.kind = MaskKind::AblateSet;
    for (std::size_t j = 0, p = 0; j < d; ++j) {
      if (p < x.size() && x[p] == j) {
        ++p;
        continue;
      }
      m.kept.push_back(j);
    }
    m.target = std::move(x);
    return m;
  }

  /// k dimensions drawn with CounterRng(seed) and partial Fisher-Yates.
  static IndexSet random_dims(std::size_t k, std::size_t d, std::uint64_t seed) {
    CounterRng rng(seed);
    return sample_distinct(k, d, rng);
  }

  static DimensionMask only_random(std::size_t k, std::size_t d, std::uint64_t seed) {
    auto m = only(random_dims(k, d, seed), d);
    m.kind = MaskKind::OnlyRandom;
    m.seed = seed;
    return m;
  }

  static DimensionMask ablate_random(std::size_t k, std::size_t d, std::uint64_t seed) {
    auto m = ablate(random_dims(k, d, seed), d);
    m.kind = MaskKind::AblateRandom;
    m.seed = seed;
    return m;
  }

private:
  static void check(IndexSet &x, std::size_t d) {
    x = make_index_set(std::move(x));
    require(x.empty() || x.back() < d, ErrorKind::InvalidArgument,
            "BadMaskIndex: dimension " + (x.empty() ? std::string() : std::to_string(x.back())) +
                " outside [0, " + std::to_string(d) + ")");
  }
};

namespace detail {

using RowMatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void check_mask(const DimensionMask &mask, std::size_t d) {
  require(mask.dim == d, ErrorKind::ShapeMismatch,
          "mask built for d=" + std::to_string(mask.dim) + ", activations have d=" +
              std::to_string(d));
  require(mask.kept.empty() || mask.kept.back() < d, ErrorKind::InvalidArgument,
          "BadMaskIndex: kept dimension outside [0, d)");
}

/// Columns `cols` of `m` as a double matrix.
inline RowMatrixD gather_columns(const MatrixF &m, std::size_t row0, std::size_t rows,
                                 const IndexSet &cols) {
  RowMatrixD out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < rows; ++r) {
    const auto src = m.row(row0 + r);
    for (std::size_t c = 0; c < cols.size(); ++c)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = src[cols[c]];
  }
  return out;
}

/// Calls fn(first_row, block) for consecutive row blocks of the masked logits;
/// block is rows x V.
template <class Fn>
void for_each_logit_block(const MatrixF &acts, const MatrixF &unemb, const DimensionMask &mask,
                          std::size_t block_rows, Fn &&fn) {
  require(acts.cols() == unemb.cols(), ErrorKind::ShapeMismatch,
          "activations and unembedding differ in hidden dimension");
  check_mask(mask, acts.cols());
  const RowMatrixD u = gather_columns(unemb, 0, unemb.rows(), mask.kept);
  for (std::size_t r0 = 0; r0 < acts.rows(); r0 += block_rows) {
    const std::size_t rows = std::min(block_rows, acts.rows() - r0);
    RowMatrixD block;
    if (mask.kept.empty()) {
      block = RowMatrixD::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(unemb.rows()));
    } else {
      const RowMatrixD a = gather_columns(acts, r0, rows, mask.kept);
      block.noalias() = a * u.transpose();
    }
    fn(r0, block);
  }
}

} // namespace detail

/// logits[i, t] = sum over kept j of activations[i, j] * unembedding[t, j].
inline MatrixD masked_logits(const MatrixF &activations, const MatrixF &unembedding,
                             const DimensionMask &mask) {
  MatrixD out(activations.rows(), unembedding.rows());
  detail::for_each_logit_block(activations, unembedding, mask, 512,
                               [&](std::size_t r0, const detail::RowMatrixD &block) {
                                 std::copy(block.data(), block.data() + block.size(),
                                           out.data() + r0 * out.cols());
                               });
  return out;
}

enum class SurprisalTarget { GroundTruth, Predicted };

struct EvalOptions {
  SurprisalTarget surprisal_target = SurprisalTarget::GroundTruth;
  std::size_t block_rows = 256;
};

struct AblationResult {
  std::string condition;
  std::size_t kept_dims = 0;
  std::vector<std::size_t> predictions;
  std::vector<double> surprisal; ///< nats
  double accuracy = 0.0;
  double surprisal_q1 = 0.0, surprisal_q2 = 0.0, surprisal_q3 = 0.0;
  std::size_t distinct_predicted = 0;
  std::map<std::size_t, std::size_t> prediction_counts;

  std::size_t count(std::size_t token) const {
    const auto it = prediction_counts.find(token);
    return it == prediction_counts.end() ? 0 : it->second;
  }
};

inline std::string condition_label(const DimensionMask &m) {
  std::string s(to_string(m.kind));
  if (m.seed) s += "(" + std::to_string(*m.seed) + ")";
  return s;
}

/// Prediction = argmax of the masked logits (lowest token id on ties);
/// surprisal = -ln softmax(logits)[target].
inline AblationResult evaluate_condition(const ModelBundle &bundle, const DimensionMask &mask,
                                         const EvalOptions &opt = {}) {
  const std::size_t n = bundle.n(), v = bundle.v();
  require(bundle.samples.size() == n, ErrorKind::ShapeMismatch,
          "sample table length differs from activations");
  AblationResult res;
  res.condition = condition_label(mask);
  res.kept_dims = mask.kept.size();
  res.predictions.resize(n);
  res.surprisal.resize(n);
  std::size_t hits = 0;

  detail::for_each_logit_block(
      bundle.activations, bundle.unembedding, mask, std::max<std::size_t>(1, opt.block_rows),
      [&](std::size_t r0, const detail::RowMatrixD &block) {
        for (Eigen::Index r = 0; r < block.rows(); ++r) {
          const double *logit = block.data() + r * block.cols();
          std::size_t best = 0;
          double best_val = logit[0];
          for (std::size_t t = 1; t < v; ++t)
            if (logit[t] > best_val) {
              best_val = logit[t];
              best = t;
            }
          double sum = 0.0;
          for (std::size_t t = 0; t < v; ++t) sum += std::exp(logit[t] - best_val);
          const double lse = best_val + std::log(sum);
          const std::size_t i = r0 + static_cast<std::size_t>(r);
          const std::size_t truth = bundle.samples.ground_truth[i];
          const std::size_t target =
              opt.surprisal_target == SurprisalTarget::GroundTruth ? truth : best;
          res.predictions[i] = best;
          res.surprisal[i] = lse - logit[target];
          if (best == truth) ++hits;
        }
      });

  res.accuracy = static_cast<double>(hits) / static_cast<double>(n);
  const auto q = stats::nearest_rank_quartiles(res.surprisal);
  res.surprisal_q1 = q.q1;
  res.surprisal_q2 = q.q2;
  res.surprisal_q3 = q.q3;
  for (auto p : res.predictions) ++res.prediction_counts[p];
  res.distinct_predicted = res.prediction_counts.size();
  return res;
}

enum class RandomMode { Ablate, Only };

struct RandomBaseline {
  RandomMode mode = RandomMode::Only;
  std::size_t k = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationResult> per_seed;
  double accuracy_mean = 0.0, accuracy_std = 0.0;
  double distinct_mean = 0.0, distinct_std = 0.0;
  double surprisal_median_mean = 0.0;
};

namespace detail {

inline RandomBaseline aggregate(RandomBaseline rb) {
  std::vector<double> acc, distinct, med;
  for (const auto &r : rb.per_seed) {
    acc.push_back(r.accuracy);
    distinct.push_back(static_cast<double>(r.distinct_predicted));
    med.push_back(r.surprisal_q2);
  }
  rb.accuracy_mean = stats::mean(acc);
  rb.accuracy_std = stats::sample_std(acc);
  rb.distinct_mean = stats::mean(distinct);
  rb.distinct_std = stats::sample_std(distinct);
  rb.surprisal_median_mean = stats::mean(med);
  return rb;
}

} // namespace detail

/// Ablates (or keeps only) k uniformly drawn dimensions per seed; reports the
/// per-seed results with mean and sample std of accuracy and distinct counts.
inline RandomBaseline random_baseline(const ModelBundle &bundle, std::size_t k, RandomMode mode,
                                      std::span<const std::uint64_t> seeds,
                                      const EvalOptions &opt = {}) {
  require(k > 0 && k <= bundle.d(), ErrorKind::InvalidArgument,
          "BadK: k must lie in [1, d]; got " + std::to_string(k));
  require(!seeds.empty(), ErrorKind::InvalidArgument, "random baseline needs at least one seed");
  RandomBaseline rb;
  rb.mode = mode;
  rb.k = k;
  rb.seeds.assign(seeds.begin(), seeds.end());
  for (auto s : seeds) {
    const auto mask = mode == RandomMode::Only ? DimensionMask::only_random(k, bundle.d(), s)
                                               : DimensionMask::ablate_random(k, bundle.d(), s);
    rb.per_seed.push_back(evaluate_condition(bundle, mask, opt));
  }
  return detail::aggregate(std::move(rb));
}

/// The five-condition experiment grid for one OD set.
struct AblationGrid {
  AblationResult full, ablate_od, only_od;
  RandomBaseline ablate_random, only_random;
};

inline AblationGrid run_grid(const ModelBundle &bundle, const IndexSet &ods,
                             std::span<const std::uint64_t> seeds, const EvalOptions &opt = {}) {
  const std::size_t d = bundle.d();
  AblationGrid g;
  g.full = evaluate_condition(bundle, DimensionMask::full(d), opt);
  g.ablate_od = evaluate_condition(bundle, DimensionMask::ablate(ods, d), opt);
  g.ablate_od.condition = "ablate-od";
  g.only_od = evaluate_condition(bundle, DimensionMask::only(ods, d), opt);
  g.only_od.condition = "only-od";
  if (!ods.empty()) {
    g.ablate_random = random_baseline(bundle, ods.size(), RandomMode::Ablate, seeds, opt);
    g.only_random = random_baseline(bundle, ods.size(), RandomMode::Only, seeds, opt);
  } else {
    // k = 0: both random conditions are the seed-independent empty draw.
    for (auto *rb : {&g.ablate_random, &g.only_random}) {
      rb->mode = rb == &g.ablate_random ? RandomMode::Ablate : RandomMode::Only;
      rb->seeds.assign(seeds.begin(), seeds.end());
      const auto base = rb->mode == RandomMode::Ablate ? g.full : g.only_od;
      for (auto s : seeds) {
        auto r = base;
        r.condition = std::string(rb->mode == RandomMode::Ablate ? "ablate-random(" : "only-random(") +
                      std::to_string(s) + ")";
        rb->per_seed.push_back(std::move(r));
      }
      *rb = detail::aggregate(std::move(*rb));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// serialization

inline nlohmann::ordered_json to_json(const AblationResult &r, bool with_counts = false) {
  nlohmann::ordered_json j;
  j["condition"] = r.condition;
  j["kept_dims"] = r.kept_dims;
  j["accuracy"] = r.accuracy;
  j["surprisal_quartiles"] = {r.surprisal_q1, r.surprisal_q2, r.surprisal_q3};
  j["distinct_predicted_tokens"] = r.distinct_predicted;
  if (with_counts) {
    auto &c = j["prediction_counts"] = nlohmann::ordered_json::array();
    for (const auto &[tok, cnt] : r.prediction_counts) c.push_back({tok, cnt});
  }
  return j;
}

inline nlohmann::ordered_json to_json(const RandomBaseline &rb) {
  nlohmann::ordered_json j;
  j["mode"] = rb.mode == RandomMode::Only ? "only-random" : "ablate-random";
  j["k"] = rb.k;
  j["seeds"] = rb.seeds;
  j["accuracy_mean"] = rb.accuracy_mean;
  j["accuracy_std"] = rb.accuracy_std;
  j["distinct_mean"] = rb.distinct_mean;
  j["distinct_std"] = rb.distinct_std;
  j["surprisal_median_mean"] = rb.surprisal_median_mean;
  auto &per = j["per_seed"] = nlohmann::ordered_json::array();
  for (const auto &r : rb.per_seed) per.push_back(to_json(r));
  return j;
}

/// Condition x metric table.
inline std::string ablation_table_csv(const std::vector<const AblationResult *> &singles,
                                      const std::vector<const RandomBaseline *> &randoms) {
  csv::Writer w{"condition", "kept_dims", "accuracy", "accuracy_std", "distinct_tokens",
                "distinct_std", "surprisal_q1", "surprisal_q2", "surprisal_q3"};
  for (const auto *r : singles)
    w.row({r->condition, std::to_string(r->kept_dims), csv::num(r->accuracy), "0",
           std::to_string(r->distinct_predicted), "0", csv::num(r->surprisal_q1),
           csv::num(r->surprisal_q2), csv::num(r->surprisal_q3)});
  for (const auto *rb : randoms) {
    std::vector<double> q1, q3;
    for (const auto &r : rb->per_seed) {
      q1.push_back(r.surprisal_q1);
      q3.push_back(r.surprisal_q3);
    }
    w.row({rb->mode == RandomMode::Only ? "only-random" : "ablate-random",
           std::to_string(rb->per_seed.empty() ? 0 : rb->per_seed.front().kept_dims),
           csv::num(rb->accuracy_mean), csv::num(rb->accuracy_std), csv::num(rb->distinct_mean),
           csv::num(rb->distinct_std), csv::num(stats::mean(q1)),
           csv::num(rb->surprisal_median_mean), csv::num(stats::mean(q3))});
  }
  return w.str();
}

} // namespace odtk
