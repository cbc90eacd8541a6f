#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odtk/ablation.hpp"
#include "odtk/bundle.hpp"
#include "odtk/csv.hpp"
#include "odtk/od_detect.hpp"

namespace odtk {

struct TimelineConfig {
  DetectOptions detect;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  EvalOptions eval;
  std::size_t min_truth_count = 100;
};

struct OverPredicted {
  std::size_t token = 0;
  std::size_t truth_count = 0;
  std::size_t predicted_count = 0;
  double ratio = 0.0;
};

struct CheckpointRow {
  std::string step;
  std::size_t od_count = 0;
  std::size_t intersection_with_final = 0;
  IndexSet od_indices;
  double accuracy_full = 0.0;
  double accuracy_ablate = 0.0;
  std::size_t distinct_full = 0;
  std::size_t distinct_ablate = 0;
  std::size_t distinct_only_od = 0;
  double distinct_only_random_mean = 0.0;
  double distinct_only_random_std = 0.0;
  std::vector<OverPredicted> over_predicted;
};

/// Tokens with at least min_truth_count ground-truth occurrences, ranked by
/// predicted / ground-truth count (descending, then token id).
inline std::vector<OverPredicted> over_predicted_tokens(const AblationResult &full,
                                                        const SampleTable &samples,
                                                        std::size_t min_truth_count = 100) {
  std::map<std::size_t, std::size_t> truth;
  for (auto t : samples.ground_truth) ++truth[t];
  std::vector<OverPredicted> out;
  for (const auto &[tok, tc] : truth) {
    if (tc < min_truth_count) continue;
    const std::size_t pc = full.count(tok);
    out.push_back({tok, tc, pc, static_cast<double>(pc) / static_cast<double>(tc)});
  }
  std::sort(out.begin(), out.end(), [](const OverPredicted &a, const OverPredicted &b) {
    return a.ratio != b.ratio ? a.ratio > b.ratio : a.token < b.token;
  });
  return out;
}

/// One checkpoint's row, given the final checkpoint's OD set.
inline CheckpointRow timeline_row(const ModelBundle &bundle, const IndexSet &final_ods,
                                  const TimelineConfig &cfg) {
  CheckpointRow row;
  row.step = bundle.manifest.checkpoint_step;
  const auto od = detect_ods(bundle.activations, cfg.detect);
  row.od_indices = od.od_indices;
  row.od_count = od.od_indices.size();
  row.intersection_with_final = intersection_size(od.od_indices, final_ods);
  const auto grid = run_grid(bundle, od.od_indices, cfg.seeds, cfg.eval);
  row.accuracy_full = grid.full.accuracy;
  row.accuracy_ablate = grid.ablate_od.accuracy;
  row.distinct_full = grid.full.distinct_predicted;
  row.distinct_ablate = grid.ablate_od.distinct_predicted;
  row.distinct_only_od = grid.only_od.distinct_predicted;
  row.distinct_only_random_mean = grid.only_random.distinct_mean;
  row.distinct_only_random_std = grid.only_random.distinct_std;
  row.over_predicted = over_predicted_tokens(grid.full, bundle.samples, cfg.min_truth_count);
  return row;
}

inline void check_compatible(const ModelBundle &a, const ModelBundle &b) {
  require(a.d() == b.d() && a.v() == b.v(), ErrorKind::IncompatibleBundles,
          "checkpoints differ in hidden dimension or vocabulary size");
}

/// The last bundle is the final reference checkpoint.
inline std::vector<CheckpointRow> run_timeline(std::span<const ModelBundle> bundles,
                                               const TimelineConfig &cfg = {}) {
  require(bundles.size() >= 2, ErrorKind::IncompatibleBundles,
          "a timeline needs at least two checkpoints");
  for (const auto &b : bundles) check_compatible(b, bundles.back());
  const IndexSet final_ods = detect_ods(bundles.back().activations, cfg.detect).od_indices;
  std::vector<CheckpointRow> rows;
  for (const auto &b : bundles) rows.push_back(timeline_row(b, final_ods, cfg));
  return rows;
}

// ---------------------------------------------------------------------------
// serialization

inline std::string timeline_csv(const std::vector<CheckpointRow> &rows) {
  csv::Writer w{"step", "od_count", "intersection_final", "accuracy_full", "accuracy_ablate_od",
                "distinct_full", "distinct_ablate_od", "distinct_only_od",
                "distinct_only_random_mean", "distinct_only_random_std"};
  for (const auto &r : rows)
    w.row({r.step, std::to_string(r.od_count), std::to_string(r.intersection_with_final),
           csv::num(r.accuracy_full), csv::num(r.accuracy_ablate), std::to_string(r.distinct_full),
           std::to_string(r.distinct_ablate), std::to_string(r.distinct_only_od),
           csv::num(r.distinct_only_random_mean), csv::num(r.distinct_only_random_std)});
  return w.str();
}

inline nlohmann::ordered_json to_json(const std::vector<CheckpointRow> &rows, const VocabTable &vocab,
                                      std::size_t max_tokens = 20) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto &r : rows) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["od_count"] = r.od_count;
    j["intersection_with_final"] = r.intersection_with_final;
    j["od_indices"] = r.od_indices;
    j["accuracy_full"] = r.accuracy_full;
    j["accuracy_ablate_od"] = r.accuracy_ablate;
    j["distinct_full"] = r.distinct_full;
    j["distinct_ablate_od"] = r.distinct_ablate;
    j["distinct_only_od"] = r.distinct_only_od;
    j["distinct_only_random"] = {r.distinct_only_random_mean, r.distinct_only_random_std};
    auto &op = j["over_predicted"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < r.over_predicted.size() && i < max_tokens; ++i) {
      const auto &t = r.over_predicted[i];
      nlohmann::ordered_json e;
      e["id"] = t.token;
      e["string"] = t.token < vocab.size() ? vocab.surface[t.token] : std::string();
      e["truth_count"] = t.truth_count;
      e["predicted_count"] = t.predicted_count;
      e["ratio"] = t.ratio;
      op.push_back(e);
    }
    arr.push_back(j);
  }
  return arr;
}

} // namespace odtk
