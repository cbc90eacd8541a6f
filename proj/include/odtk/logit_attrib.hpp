#pragma once

// Splits logits into the contribution of the OD dimensions and of all other
// dimensions, and mines the token cohorts the split is reported for.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "odtk/ablation.hpp"
#include "odtk/bundle.hpp"
#include "odtk/csv.hpp"
#include "odtk/stats.hpp"

namespace odtk {

struct LogitSplit {
  std::size_t context = 0;
  std::size_t token = 0;
  double od_part = 0.0;
  double nonod_part = 0.0;
  double total = 0.0;
};

template <class T>
LogitSplit split_logit(std::span<const T> activation, std::span<const T> unembedding_row,
                       const IndexSet &od) {
  require(activation.size() == unembedding_row.size(), ErrorKind::ShapeMismatch,
          "activation and unembedding row differ in length");
  require(od.empty() || od.back() < activation.size(), ErrorKind::InvalidArgument,
          "BadIndex: OD index outside the vector");
  LogitSplit s;
  std::size_t p = 0;
  for (std::size_t j = 0; j < activation.size(); ++j) {
    const double term = static_cast<double>(activation[j]) * static_cast<double>(unembedding_row[j]);
    if (p < od.size() && od[p] == j) {
      s.od_part += term;
      ++p;
    } else {
      s.nonod_part += term;
    }
    s.total += term;
  }
  return s;
}

inline LogitSplit split_logit(const ModelBundle &b, std::size_t context, std::size_t token,
                              const IndexSet &od) {
  auto s = split_logit(b.activations.row(context), b.unembedding.row(token), od);
  s.context = context;
  s.token = token;
  return s;
}

struct TokenCount {
  std::size_t token = 0;
  std::size_t count = 0;       ///< in the condition that selected the token
  std::size_t full_count = 0;  ///< in the full model
};

/// min(1000, ceil(0.02 * N)), at least 1: 1000 predictions at N = 50k.
inline std::size_t default_min_count(std::size_t n_samples) {
  const auto scaled = static_cast<std::size_t>(std::ceil(0.02 * static_cast<double>(n_samples)));
  return std::max<std::size_t>(1, std::min<std::size_t>(1000, scaled));
}

/// Tokens predicted >= min_count times with only ODs active and at least once
/// by the full model; most frequent first.
inline std::vector<TokenCount> find_od_favored(const AblationResult &only_od,
                                               const AblationResult &full, std::size_t min_count) {
  std::vector<TokenCount> out;
  for (const auto &[tok, cnt] : only_od.prediction_counts) {
    const std::size_t fc = full.count(tok);
    if (cnt >= min_count && fc >= 1) out.push_back({tok, cnt, fc});
  }
  std::sort(out.begin(), out.end(), [](const TokenCount &a, const TokenCount &b) {
    return a.count != b.count ? a.count > b.count : a.token < b.token;
  });
  return out;
}

struct NeutralOptions {
  std::size_t min_full_count = 10;
  double ratio_lo = 0.9;
  double ratio_hi = 1.1;
  std::size_t cap = 10;
};

struct NeutralSelection {
  std::vector<TokenCount> tokens; ///< count = ablated-condition count
  bool used_ratio_fallback = false;
};

/// Tokens whose full-model count (>= min_full_count) is unchanged under OD
/// ablation. With fewer than two such tokens, the ablated/full ratio band is
/// used instead. At most `cap` tokens, highest full count first.
inline NeutralSelection find_od_neutral(const AblationResult &full, const AblationResult &ablated,
                                        const NeutralOptions &opt = {},
                                        const IndexSet &exclude = {}) {
  require(opt.ratio_lo <= opt.ratio_hi, ErrorKind::InvalidArgument, "ratio band is empty");
  auto pick = [&](bool strict) {
    std::vector<TokenCount> c;
    for (const auto &[tok, fc] : full.prediction_counts) {
      if (fc < opt.min_full_count) continue;
      if (std::binary_search(exclude.begin(), exclude.end(), tok)) continue;
      const std::size_t ac = ablated.count(tok);
      const double ratio = static_cast<double>(ac) / static_cast<double>(fc);
      const bool ok = strict ? ac == fc : (ratio >= opt.ratio_lo && ratio <= opt.ratio_hi);
      if (ok) c.push_back({tok, ac, fc});
    }
    return c;
  };
  NeutralSelection sel;
  sel.tokens = pick(true);
  if (sel.tokens.size() < 2) {
    sel.tokens = pick(false);
    sel.used_ratio_fallback = true;
  }
  std::sort(sel.tokens.begin(), sel.tokens.end(), [](const TokenCount &a, const TokenCount &b) {
    return a.full_count != b.full_count ? a.full_count > b.full_count : a.token < b.token;
  });
  if (sel.tokens.size() > opt.cap) sel.tokens.resize(opt.cap);
  return sel;
}

struct TokenCohorts {
  std::vector<TokenCount> od_favored;
  std::vector<TokenCount> od_neutral;
  bool neutral_used_ratio_fallback = false;
  std::size_t min_count = 0;
  NeutralOptions neutral_options;
};

/// OD-favored tokens, then OD-neutral tokens drawn from the remaining ones.
inline TokenCohorts make_cohorts(const AblationResult &full, const AblationResult &ablate_od,
                                 const AblationResult &only_od, std::size_t min_count,
                                 const NeutralOptions &nopt = {}) {
  TokenCohorts c;
  c.min_count = min_count;
  c.neutral_options = nopt;
  c.od_favored = find_od_favored(only_od, full, min_count);
  IndexSet fav;
  for (const auto &t : c.od_favored) fav.push_back(t.token);
  fav = make_index_set(std::move(fav));
  auto sel = find_od_neutral(full, ablate_od, nopt, fav);
  c.od_neutral = std::move(sel.tokens);
  c.neutral_used_ratio_fallback = sel.used_ratio_fallback;
  return c;
}

struct PartSummary {
  stats::Summary od;
  stats::Summary nonod;
};

struct FavoredContribution {
  std::size_t token = 0;
  PartSummary parts; ///< over contexts where the full model predicts the token
};

struct NeutralContribution {
  std::size_t token = 0;
  std::size_t contexts = 0;
  PartSummary self;                        ///< toward the neutral token itself
  std::vector<PartSummary> toward_favored; ///< aligned with the favored cohort
  PartSummary favored_average;             ///< pooled over contexts and favored tokens
};

struct ContributionReport {
  std::vector<FavoredContribution> favored;
  std::vector<NeutralContribution> neutral;
  std::vector<std::size_t> favored_tokens;
  /// Long format: (context, token, cohort) splits.
  struct Row {
    LogitSplit split;
    std::string cohort;
  };
  std::vector<Row> rows;
};

namespace detail {

inline PartSummary summarize_parts(const std::vector<double> &od, const std::vector<double> &nonod) {
  return {stats::summarize(od), stats::summarize(nonod)};
}

inline std::vector<std::size_t> contexts_predicting(const AblationResult &full, std::size_t token) {
  std::vector<std::size_t> ctx;
  for (std::size_t i = 0; i < full.predictions.size(); ++i)
    if (full.predictions[i] == token) ctx.push_back(i);
  return ctx;
}

} // namespace detail

inline ContributionReport contribution_report(const ModelBundle &bundle,
                                              const AblationResult &full,
                                              const TokenCohorts &cohorts, const IndexSet &od) {
  require(!cohorts.od_favored.empty() || !cohorts.od_neutral.empty(), ErrorKind::Degenerate,
          "EmptyCohort: no OD-favored and no OD-neutral tokens");
  require(full.predictions.size() == bundle.n(), ErrorKind::ShapeMismatch,
          "full-model predictions do not cover every sample");
  ContributionReport rep;
  for (const auto &t : cohorts.od_favored) rep.favored_tokens.push_back(t.token);

  for (const auto &t : cohorts.od_favored) {
    std::vector<double> od_v, non_v;
    for (auto i : detail::contexts_predicting(full, t.token)) {
      const auto s = split_logit(bundle, i, t.token, od);
      od_v.push_back(s.od_part);
      non_v.push_back(s.nonod_part);
      rep.rows.push_back({s, "favored"});
    }
    rep.favored.push_back({t.token, detail::summarize_parts(od_v, non_v)});
  }

  for (const auto &t : cohorts.od_neutral) {
    NeutralContribution nc;
    nc.token = t.token;
    const auto ctx = detail::contexts_predicting(full, t.token);
    nc.contexts = ctx.size();
    std::vector<double> od_v, non_v, pool_od, pool_non;
    std::vector<std::vector<double>> fav_od(rep.favored_tokens.size()),
        fav_non(rep.favored_tokens.size());
    for (auto i : ctx) {
      const auto s = split_logit(bundle, i, t.token, od);
      od_v.push_back(s.od_part);
      non_v.push_back(s.nonod_part);
      rep.rows.push_back({s, "neutral"});
      for (std::size_t f = 0; f < rep.favored_tokens.size(); ++f) {
        const auto sf = split_logit(bundle, i, rep.favored_tokens[f], od);
        fav_od[f].push_back(sf.od_part);
        fav_non[f].push_back(sf.nonod_part);
        pool_od.push_back(sf.od_part);
        pool_non.push_back(sf.nonod_part);
        rep.rows.push_back({sf, "neutral_context_favored"});
      }
    }
    nc.self = detail::summarize_parts(od_v, non_v);
    for (std::size_t f = 0; f < rep.favored_tokens.size(); ++f)
      nc.toward_favored.push_back(detail::summarize_parts(fav_od[f], fav_non[f]));
    nc.favored_average = detail::summarize_parts(pool_od, pool_non);
    rep.neutral.push_back(std::move(nc));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// serialization

namespace detail {

inline nlohmann::ordered_json to_json(const stats::Summary &s) {
  nlohmann::ordered_json j;
  j["n"] = s.n;
  j["mean"] = s.mean;
  j["std"] = s.std;
  j["q1"] = s.q1;
  j["median"] = s.q2;
  j["q3"] = s.q3;
  return j;
}

inline nlohmann::ordered_json to_json(const PartSummary &p) {
  nlohmann::ordered_json j;
  j["od"] = to_json(p.od);
  j["nonod"] = to_json(p.nonod);
  return j;
}

inline nlohmann::ordered_json token_json(const VocabTable &v, std::size_t t) {
  nlohmann::ordered_json j;
  j["id"] = t;
  j["string"] = t < v.size() ? v.surface[t] : std::string();
  return j;
}

} // namespace detail

inline nlohmann::ordered_json to_json(const TokenCohorts &c, const VocabTable &v) {
  nlohmann::ordered_json j;
  j["min_count"] = c.min_count;
  j["neutral_min_full_count"] = c.neutral_options.min_full_count;
  j["neutral_ratio_band"] = {c.neutral_options.ratio_lo, c.neutral_options.ratio_hi};
  j["neutral_cap"] = c.neutral_options.cap;
  j["neutral_used_ratio_fallback"] = c.neutral_used_ratio_fallback;
  auto &fav = j["od_favored"] = nlohmann::ordered_json::array();
  for (const auto &t : c.od_favored) {
    auto e = detail::token_json(v, t.token);
    e["only_od_count"] = t.count;
    e["full_count"] = t.full_count;
    fav.push_back(e);
  }
  auto &neu = j["od_neutral"] = nlohmann::ordered_json::array();
  for (const auto &t : c.od_neutral) {
    auto e = detail::token_json(v, t.token);
    e["full_count"] = t.full_count;
    e["ablated_count"] = t.count;
    neu.push_back(e);
  }
  return j;
}

inline nlohmann::ordered_json to_json(const ContributionReport &r, const VocabTable &v) {
  nlohmann::ordered_json j;
  auto &fav = j["od_favored"] = nlohmann::ordered_json::array();
  for (const auto &f : r.favored) {
    auto e = detail::token_json(v, f.token);
    e["contributions"] = detail::to_json(f.parts);
    fav.push_back(e);
  }
  auto &neu = j["od_neutral"] = nlohmann::ordered_json::array();
  for (const auto &n : r.neutral) {
    auto e = detail::token_json(v, n.token);
    e["contexts"] = n.contexts;
    e["self"] = detail::to_json(n.self);
    auto &tf = e["toward_favored"] = nlohmann::ordered_json::array();
    for (std::size_t f = 0; f < n.toward_favored.size(); ++f) {
      auto t = detail::token_json(v, r.favored_tokens[f]);
      t["contributions"] = detail::to_json(n.toward_favored[f]);
      tf.push_back(t);
    }
    e["favored_average"] = detail::to_json(n.favored_average);
    neu.push_back(e);
  }
  return j;
}

inline std::string contribution_csv(const ContributionReport &r, const ModelBundle &b) {
  csv::Writer w{"context", "token", "cohort", "part", "value"};
  for (const auto &row : r.rows) {
    const auto &ctx = b.samples.context_id[row.split.context];
    const auto tok = std::to_string(row.split.token);
    w.row({ctx, tok, row.cohort, "od", csv::num(row.split.od_part)});
    w.row({ctx, tok, row.cohort, "nonod", csv::num(row.split.nonod_part)});
  }
  return w.str();
}

} // namespace odtk
