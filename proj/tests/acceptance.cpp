// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <string>

#include <fmt/format.h>

#include "odtk/odtk.hpp"

using namespace odtk;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(bool ok, const std::string &name, const std::string &detail) {
  fmt::print("{} {}: {}\n", ok ? "PASS" : "FAIL", name, detail);
  std::fflush(stdout);
  if (!ok) ++failures;
}

void guarded(const std::string &name, const std::function<void()> &fn) {
  try {
    fn();
  } catch (const std::exception &e) {
    report(false, name, fmt::format("threw: {}", e.what()));
  }
}

MatrixF gaussian(std::size_t rows, std::size_t cols, std::mt19937_64 &gen, double scale = 1.0) {
  std::normal_distribution<float> nd(0.0f, static_cast<float>(scale));
  MatrixF m(rows, cols);
  for (auto &x : m.values()) x = nd(gen);
  return m;
}

ModelBundle bundle_of(MatrixF acts, MatrixF unemb) {
  ModelBundle b;
  const std::size_t n = acts.rows(), d = acts.cols(), v = unemb.rows();
  b.activations = std::move(acts);
  b.unembedding = std::move(unemb);
  b.samples.ground_truth.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) b.samples.context_id.push_back(fmt::format("c{}", i));
  for (std::size_t t = 0; t < v; ++t) {
    b.vocab.surface.push_back(fmt::format("t{}", t));
    b.vocab.corpus_frequency.push_back(static_cast<double>(v - t));
  }
  b.manifest.model_name = "acceptance";
  b.manifest.checkpoint_step = "0";
  b.manifest.hidden_dim = d;
  b.manifest.vocab_size = v;
  b.manifest.n_samples = n;
  return b;
}

// ---------------------------------------------------------------------------

void od_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(2024);
  std::size_t mismatches = 0;
  for (int c = 0; c < 200; ++c) {
    const std::size_t n = 1 + gen() % 50, d = 1 + gen() % 64;
    auto a = gaussian(n, d, gen);
    if (c % 3 == 1)
      for (auto &x : a.values()) x = std::round(x * 1.5f);
    if (c % 3 == 2)
      for (int s = 0; s < 3; ++s) {
        const std::size_t j = gen() % d;
        for (std::size_t i = 0; i < n; ++i) a(i, j) += 5.0f;
      }
    // naive: full sort, integer top-count for q = 0.99
    std::vector<double> pooled;
    for (float x : a.values()) pooled.push_back(std::fabs(static_cast<double>(x)));
    std::sort(pooled.begin(), pooled.end(), std::greater<>());
    const std::size_t k = std::max<std::size_t>(1, (pooled.size() + 99) / 100);
    const double tau = pooled[k - 1];
    IndexSet ods;
    for (std::size_t j = 0; j < d; ++j) {
      auto col = a.column(j);
      std::sort(col.begin(), col.end());
      const double med = n % 2 ? col[n / 2] : (static_cast<double>(col[n / 2 - 1]) + col[n / 2]) / 2.0;
      if (std::fabs(med) >= tau) ods.push_back(j);
    }
    const auto r = detect_ods(a);
    if (r.tau != tau || r.od_indices != ods) ++mismatches;
  }
  const double secs = seconds_since(t0);
  report(mismatches == 0 && secs < 10.0, "od-detection oracle",
         fmt::format("{} of 200 matrices differ from the full-sort oracle; {:.2f} s (limit 10 s)", mismatches, secs));
}

void decomposition() {
  std::mt19937_64 gen(77);
  double worst_rel = 0.0, worst_split = 0.0;
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = 2 + gen() % 20, d = 2 + gen() % 64, v = 2 + gen() % 40;
    auto b = bundle_of(gaussian(n, d, gen, 3.0), gaussian(v, d, gen));
    CounterRng rng(gen());
    const auto x = sample_distinct(gen() % (d + 1), d, rng);
    const auto full = masked_logits(b.activations, b.unembedding, DimensionMask::full(d));
    const auto abl = masked_logits(b.activations, b.unembedding, DimensionMask::ablate(x, d));
    const auto only = masked_logits(b.activations, b.unembedding, DimensionMask::only(x, d));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < v; ++t) {
        const double diff = std::fabs(abl(i, t) + only(i, t) - full(i, t));
        worst_rel = std::max(worst_rel, diff / std::max(1.0, std::fabs(full(i, t))));
        const auto s = split_logit(b, i, t, x);
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j)
          dot += static_cast<double>(b.activations(i, j)) * static_cast<double>(b.unembedding(t, j));
        worst_split = std::max(worst_split, std::fabs(s.od_part + s.nonod_part - dot));
      }
  }
  report(worst_rel <= 1e-5 && worst_split <= 1e-6, "decomposition identities",
         fmt::format("max |ablate+only-full| relative {:.2e} (limit 1e-5); max split residual {:.2e} (limit 1e-6)",
                     worst_rel, worst_split));
}

void surprisal_calibration() {
  bool ok = true;
  std::string detail;
  for (std::size_t v : {50688u, 50272u}) {
    const auto b = synthetic::zero_bundle(16, 8, v);
    const auto r = evaluate_condition(b, DimensionMask::full(8));
    const double err = std::fabs(r.surprisal_q2 - std::log(static_cast<double>(v)));
    ok = ok && err <= 1e-6;
    detail += fmt::format("V={} median {:.6f} nats vs ln V {:.6f} (err {:.1e}); ", v, r.surprisal_q2,
                          std::log(static_cast<double>(v)), err);
  }
  detail += "only-random rows reported at roughly 10.7-10.8 nats";
  report(ok, "surprisal calibration", detail);
}

// Brute force: pairwise-count average ranks, raw-sum Pearson in long double.
std::optional<double> brute_spearman(const std::vector<double> &x, const std::vector<double> &y) {
  const std::size_t n = x.size();
  auto ranks = [n](const std::vector<double> &v) {
    std::vector<long double> r(n);
    for (std::size_t i = 0; i < n; ++i) {
      long double less = 0, eq = 0;
      for (double w : v) {
        less += w < v[i];
        eq += w == v[i];
      }
      r[i] = less + (eq + 1) / 2;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += rx[i];
    sy += ry[i];
    sxx += rx[i] * rx[i];
    syy += ry[i] * ry[i];
    sxy += rx[i] * ry[i];
  }
  const long double vx = n * sxx - sx * sx, vy = n * syy - sy * sy;
  if (vx <= 1e-12L || vy <= 1e-12L) return std::nullopt;
  return static_cast<double>((n * sxy - sx * sy) / std::sqrt(vx * vy));
}

void statistics_oracles() {
  std::mt19937_64 gen(4242);
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> small(0, 3);
  double worst_rho = 0.0, worst_slope = 0.0;
  std::size_t presence = 0, tie_cases = 0;
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 3 + gen() % 15;
    const bool ties = c % 2 == 0;
    tie_cases += ties;
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = ties ? small(gen) : nd(gen);
      y[i] = ties ? small(gen) + 0.5 * x[i] : x[i] + nd(gen);
    }
    const auto rho = stats::spearman(x, y);
    const auto want = brute_spearman(x, y);
    if (rho.has_value() != want.has_value()) ++presence;
    else if (rho) worst_rho = std::max(worst_rho, std::fabs(*rho - *want));

    const auto fit = stats::ols(x, y);
    long double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sx += x[i];
      sy += y[i];
      sxx += (long double)x[i] * x[i];
      sxy += (long double)x[i] * y[i];
    }
    const long double det = n * sxx - sx * sx;
    if (std::fabs(det) < 1e-9L) {
      if (fit) ++presence;
      continue;
    }
    if (!fit) {
      ++presence;
      continue;
    }
    const double slope = static_cast<double>((n * sxy - sx * sy) / det);
    worst_slope = std::max(worst_slope, std::fabs(fit->slope - slope) / std::max(1.0, std::fabs(slope)));
  }
  report(presence == 0 && worst_rho <= 1e-10 && worst_slope <= 1e-10, "statistics oracles",
         fmt::format("1000 inputs ({} tie-heavy): max Spearman diff {:.1e}, max OLS slope diff {:.1e} "
                     "(limit 1e-10); {} defined/undefined disagreements",
                     tie_cases, worst_rho, worst_slope, presence));
}

void svd_checks() {
  std::mt19937_64 gen(64128);
  double worst_rel = 0.0;
  bool monotone = true;
  for (int c = 0; c < 5; ++c) {
    const auto m = gaussian(64, 128, gen);
    const auto s = svd_down_projection(m, 64);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < 64; ++i)
      for (std::size_t j = 0; j < 128; ++j) {
        double r = 0.0;
        for (std::size_t k = 0; k < 64; ++k) r += s.singular_values[k] * s.left[k][i] * s.right[k][j];
        num += (r - m(i, j)) * (r - m(i, j));
        den += static_cast<double>(m(i, j)) * m(i, j);
      }
    worst_rel = std::max(worst_rel, std::sqrt(num / den));
    const auto f = explained_fraction(s);
    for (std::size_t i = 1; i < f.size(); ++i) monotone = monotone && f[i] >= f[i - 1];
    monotone = monotone && f.back() == 1.0;
  }
  bool diag_exact = true;
  for (int c = 0; c < 5; ++c) {
    const std::size_t d = 3 + c, h = 5 + c;
    MatrixF m(d, h);
    std::vector<double> want;
    for (std::size_t i = 0; i < d; ++i) {
      m(i, i) = static_cast<float>(1 + (i * 7 + c) % 11);
      want.push_back(m(i, i));
    }
    std::sort(want.begin(), want.end(), std::greater<>());
    const auto s = svd_down_projection(m, 1);
    diag_exact = diag_exact && s.singular_values == want;
  }
  report(worst_rel < 1e-4 && diag_exact && monotone, "svd",
         fmt::format("64x128 relative Frobenius reconstruction {:.1e} (limit 1e-4); diagonal cases {}; "
                     "explained fraction {}",
                     worst_rel, diag_exact ? "exact" : "inexact", monotone ? "monotone" : "NOT monotone"));
}

void overlap_pvalues() {
  std::mt19937_64 gen(555);
  const std::size_t trials = 100000;
  std::size_t outside = 0;
  double worst_z = 0.0;
  for (int c = 0; c < 50; ++c) {
    const std::size_t d = 20 + gen() % 300;
    const std::size_t k_od = 1 + gen() % 15, k_sp = 1 + gen() % 15;
    CounterRng rng(gen());
    const auto ods = sample_distinct(k_od, d, rng);
    auto spikes = sample_distinct(k_sp, d, rng);
    // force some overlap so the tail is not trivially 1
    const std::size_t force = std::min<std::size_t>(gen() % 4, std::min(k_od, k_sp));
    std::vector<std::size_t> s(spikes.begin(), spikes.end());
    for (std::size_t i = 0; i < force; ++i) s[i] = ods[i];
    spikes = make_index_set(s);
    const auto exact = overlap_pvalue(spikes, ods, d, PValueMethod::Exact);
    const auto mc = overlap_pvalue(spikes, ods, d, PValueMethod::MonteCarlo, trials, 1 + c);
    const double p = exact.p;
    const double expect = (p * trials + 1.0) / (trials + 1.0);
    const double se = std::sqrt(p * (1.0 - p) * trials) / (trials + 1.0);
    const double diff = std::fabs(mc.p - expect);
    if (diff > 3.0 * se + 1e-15) ++outside;
    if (se > 0) worst_z = std::max(worst_z, diff / se);
  }
  // null: independent random sets; exact tails are nearly continuous at these sizes
  std::vector<double> null_p;
  for (int c = 0; c < 200; ++c) {
    const std::size_t d = 2000;
    const std::size_t a = 100 + gen() % 301, b = 100 + gen() % 301;
    CounterRng rng(gen());
    const auto x = sample_distinct(a, d, rng), y = sample_distinct(b, d, rng);
    null_p.push_back(overlap_pvalue(x, y, d, PValueMethod::Exact).p);
  }
  const auto ks = stats::ks_uniform(null_p);
  report(outside == 0 && ks.p_value > 0.01, "overlap p-values",
         fmt::format("{} of 50 Monte-Carlo estimates (1e5 trials) outside 3 SE of exact (max {:.2f} SE); "
                     "null KS D={:.3f}, p={:.3f} (alpha 0.01)",
                     outside, worst_z, ks.statistic, ks.p_value));
}

void planted_recovery() {
  const auto t0 = Clock::now();
  const auto p = synthetic::make_planted(synthetic::Config{});
  const auto &b = p.bundle;
  const auto od = detect_ods(b.activations);
  const bool ods_ok = od.od_indices == p.dims;
  const auto full = evaluate_condition(b, DimensionMask::full(b.d()));
  const auto abl = evaluate_condition(b, DimensionMask::ablate(od.od_indices, b.d()));
  const auto only = evaluate_condition(b, DimensionMask::only(od.od_indices, b.d()));
  const auto f_full = prediction_frequency_fit(full, b.vocab);
  const auto f_abl = prediction_frequency_fit(abl, b.vocab);
  const double drop = f_full.slope - f_abl.slope;
  SpikeSuiteOptions opt;
  opt.top_k = 1;
  opt.variance_fractions = {};
  const auto spikes = spike_overlap_suite(b, od, opt);
  const auto &sv1 = spikes.entries.front();
  const double secs = seconds_since(t0);
  const bool ok = ods_ok && only.distinct_predicted <= 10 && drop >= 0.2 && sv1.p.p < 0.01 && secs < 60.0;
  report(ok, "planted-structure recovery",
         fmt::format("detected ODs {} planted set; only-OD distinct {} (limit 10); slope full {:.3f} vs "
                     "ablate-OD {:.3f}, drop {:.3f} (limit 0.2); singular vector 1 overlap {} p={:.2e} "
                     "(limit 0.01); {:.1f} s (limit 60 s)",
                     ods_ok ? "equal" : "DIFFER FROM", only.distinct_predicted, f_full.slope, f_abl.slope, drop,
                     sv1.overlap, sv1.p.p, secs));
}

void small_model_end_to_end() {
  const auto t0 = Clock::now();
  const auto b = load_bundle(ODTK_TOY_BUNDLE);
  const auto diag = validate_bundle(b);
  const auto od = detect_ods(b.activations);
  const auto full = evaluate_condition(b, DimensionMask::full(b.d()));
  std::size_t agree = 0;
  const auto &ref = *b.samples.reference_prediction;
  for (std::size_t i = 0; i < b.n(); ++i) agree += full.predictions[i] == ref[i];
  const double agreement = static_cast<double>(agree) / static_cast<double>(b.n());
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const auto rnd = random_baseline(b, std::max<std::size_t>(1, od.od_indices.size()), RandomMode::Ablate, seeds);
  const double delta_pp = 100.0 * std::fabs(rnd.accuracy_mean - full.accuracy);
  const double secs = seconds_since(t0);
  const bool analysis_ok = diag.empty() && b.n() >= 2000 && agreement >= 0.99 && delta_pp < 0.5 && secs < 900;
  // Extraction from a public decoder model needs the exporter and model
  // weights; neither is available offline, so this half is not run.
  const bool extraction_run = false;
  report(analysis_ok && extraction_run, "small-model end-to-end",
         fmt::format("extraction from a public model NOT RUN (no model weights offline); analysis on the "
                     "checked-in toy bundle ({} samples, {} diagnostics): argmax agreement {:.2f}% (limit 99%), "
                     "ablate-random vs full accuracy {:.3f} pp over 10 seeds (limit 0.5 pp), {:.1f} s -> analysis {}",
                     b.n(), diag.size(), 100.0 * agreement, delta_pp, secs, analysis_ok ? "ok" : "FAILED"));
}

} // namespace

int main() {
  guarded("od-detection oracle", od_oracle);
  guarded("decomposition identities", decomposition);
  guarded("surprisal calibration", surprisal_calibration);
  guarded("statistics oracles", statistics_oracles);
  guarded("svd", svd_checks);
  guarded("overlap p-values", overlap_pvalues);
  guarded("planted-structure recovery", planted_recovery);
  guarded("small-model end-to-end", small_model_end_to_end);
  fmt::print("{} failed\n", failures);
  return failures == 0 ? 0 : 1;
}
