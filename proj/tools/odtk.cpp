// odtk: outlier-dimension analyses over exported model bundles.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "odtk/odtk.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char *kSpecVersion = "1.0.0";

struct RunConfig {
  std::string command;
  std::string bundle;
  std::vector<std::string> bundles;
  double quantile = 0.99;
  double min_median_fraction = 0.5;
  std::string median_mode = "abs-of-median";
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::string mode = "grid";
  std::size_t k = 0;
  std::string surprisal_target = "ground-truth";
  long long min_count = -1; // -1: scale with N
  std::size_t min_full_count = 10;
  std::vector<double> ratio_band{0.9, 1.1};
  std::size_t cap = 10;
  double sigma_mult = 3.0;
  std::size_t top_k = 4;
  std::vector<double> variance_fractions{0.25, 0.5, 0.75, 0.9};
  std::size_t trials = 100000;
  std::string method = "monte-carlo";
  std::uint64_t seed = 1;
  std::size_t min_truth_count = 100;
  std::string out = ".";
  std::vector<std::string> formats{"json", "csv"};
  std::string input;
  std::string kind;

  bool wants(std::string_view f) const {
    return std::find(formats.begin(), formats.end(), f) != formats.end();
  }
};

/// Files produced by a command, written only once the command has succeeded.
class Outputs {
public:
  explicit Outputs(const RunConfig &cfg) : cfg_(cfg) {}

  void add(std::string_view format, std::string name, std::string content) {
    if (cfg_.wants(format)) files_.emplace_back(std::move(name), std::move(content));
  }

  void add_json(std::string name, const json &j) { add("json", std::move(name), j.dump(2) + "\n"); }

  void commit() const {
    if (files_.empty()) return;
    std::error_code ec;
    fs::create_directories(cfg_.out, ec);
    if (ec) throw odtk::Error(odtk::ErrorKind::Io, fmt::format("cannot create '{}': {}", cfg_.out, ec.message()));
    for (const auto &[name, content] : files_) {
      odtk::io::write_atomic(fs::path(cfg_.out) / name, content);
      std::cout << (fs::path(cfg_.out) / name).string() << "\n";
    }
  }

private:
  const RunConfig &cfg_;
  std::vector<std::pair<std::string, std::string>> files_;
};

json config_json(const RunConfig &c) {
  json j;
  j["command"] = c.command;
  if (!c.bundle.empty()) j["bundle"] = c.bundle;
  if (!c.bundles.empty()) j["bundles"] = c.bundles;
  j["quantile"] = c.quantile;
  j["min_median_fraction"] = c.min_median_fraction;
  j["median_mode"] = c.median_mode;
  const auto &cmd = c.command;
  if (cmd == "ablate" || cmd == "freq" || cmd == "logits" || cmd == "timeline") {
    j["seeds"] = c.seeds;
    j["surprisal_target"] = c.surprisal_target;
  }
  if (cmd == "ablate") {
    j["mode"] = c.mode;
    j["k"] = c.k;
  }
  if (cmd == "logits") {
    j["min_count"] = c.min_count;
    j["min_full_count"] = c.min_full_count;
    j["ratio_band"] = c.ratio_band;
    j["cap"] = c.cap;
  }
  if (cmd == "spikes") {
    j["sigma_mult"] = c.sigma_mult;
    j["top_k"] = c.top_k;
    j["variance_fractions"] = c.variance_fractions;
    j["method"] = c.method;
    j["trials"] = c.trials;
    j["seed"] = c.seed;
  }
  if (cmd == "timeline") j["min_truth_count"] = c.min_truth_count;
  j["formats"] = c.formats;
  return j;
}

json envelope(const RunConfig &c, json result) {
  json j;
  j["tool"] = "odtk";
  j["spec_version"] = kSpecVersion;
  j["config"] = config_json(c);
  j["result"] = std::move(result);
  return j;
}

odtk::DetectOptions detect_options(const RunConfig &c) {
  odtk::DetectOptions o;
  o.quantile = c.quantile;
  o.min_median_fraction = c.min_median_fraction;
  o.median_mode = c.median_mode == "median-of-abs" ? odtk::MedianMode::MedianOfAbs
                                                    : odtk::MedianMode::AbsOfSignedMedian;
  return o;
}

odtk::EvalOptions eval_options(const RunConfig &c) {
  odtk::EvalOptions o;
  o.surprisal_target =
      c.surprisal_target == "predicted" ? odtk::SurprisalTarget::Predicted : odtk::SurprisalTarget::GroundTruth;
  return o;
}

void check_config(const RunConfig &c) {
  using odtk::ErrorKind;
  using odtk::require;
  require(c.quantile > 0.0 && c.quantile < 1.0, ErrorKind::InvalidArgument, "--quantile must lie in (0, 1)");
  require(c.min_median_fraction > 0.0 && c.min_median_fraction <= 1.0, ErrorKind::InvalidArgument,
          "--min-median-fraction must lie in (0, 1]");
  require(!c.seeds.empty(), ErrorKind::InvalidArgument, "--seeds must name at least one seed");
  require(c.ratio_band.size() == 2 && c.ratio_band[0] <= c.ratio_band[1] && c.ratio_band[0] >= 0.0,
          ErrorKind::InvalidArgument, "--ratio-band takes lo,hi with 0 <= lo <= hi");
  require(c.sigma_mult > 0.0, ErrorKind::InvalidArgument, "--sigma-mult must be positive");
  for (double f : c.variance_fractions)
    require(f > 0.0 && f <= 1.0, ErrorKind::InvalidArgument, "--variance-fractions entries must lie in (0, 1]");
  require(c.trials >= 1, ErrorKind::InvalidArgument, "--trials must be at least 1");
  for (const auto &f : c.formats)
    require(f == "json" || f == "csv" || f == "svg", ErrorKind::InvalidArgument,
            fmt::format("unknown format '{}'", f));
}

odtk::ModelBundle load(const std::string &path) {
  odtk::require(!path.empty(), odtk::ErrorKind::InvalidArgument, "--bundle is required");
  return odtk::load_bundle(path);
}

std::string svg_of(odtk::svg::ChartKind kind, const std::string &csv_text) {
  return odtk::svg::render(kind, csv_text);
}

void cmd_detect(const RunConfig &c) {
  const auto b = load(c.bundle);
  const auto rep = odtk::detect_ods(b.activations, detect_options(c));
  Outputs out(c);
  json r = odtk::to_json(rep);
  out.add_json("detect.json", envelope(c, r));
  const auto csv_text = odtk::dimension_csv(rep);
  out.add("csv", "detect_dimensions.csv", csv_text);
  if (c.wants("svg")) out.add("svg", "fig_medians.svg", svg_of(odtk::svg::ChartKind::Medians, csv_text));
  out.commit();
}

void cmd_ablate(const RunConfig &c) {
  const auto b = load(c.bundle);
  const auto od = odtk::detect_ods(b.activations, detect_options(c));
  const auto eo = eval_options(c);
  const std::size_t d = b.d();
  Outputs out(c);
  json r;
  r["od_indices"] = od.od_indices;
  std::string table;
  if (c.mode == "grid") {
    const auto g = odtk::run_grid(b, od.od_indices, c.seeds, eo);
    r["full"] = odtk::to_json(g.full, true);
    r["ablate_od"] = odtk::to_json(g.ablate_od);
    r["only_od"] = odtk::to_json(g.only_od, true);
    r["ablate_random"] = odtk::to_json(g.ablate_random);
    r["only_random"] = odtk::to_json(g.only_random);
    table = odtk::ablation_table_csv({&g.full, &g.ablate_od, &g.only_od}, {&g.ablate_random, &g.only_random});
  } else if (c.mode == "ablate-random" || c.mode == "only-random") {
    const std::size_t k = c.k ? c.k : od.od_indices.size();
    const auto rb = odtk::random_baseline(
        b, k, c.mode == "only-random" ? odtk::RandomMode::Only : odtk::RandomMode::Ablate, c.seeds, eo);
    r[c.mode == "only-random" ? "only_random" : "ablate_random"] = odtk::to_json(rb);
    table = odtk::ablation_table_csv({}, {&rb});
  } else {
    odtk::DimensionMask mask;
    if (c.mode == "full") mask = odtk::DimensionMask::full(d);
    else if (c.mode == "ablate-od") mask = odtk::DimensionMask::ablate(od.od_indices, d);
    else if (c.mode == "only-od") mask = odtk::DimensionMask::only(od.od_indices, d);
    else throw odtk::Error(odtk::ErrorKind::InvalidArgument, fmt::format("unknown --mode '{}'", c.mode));
    auto res = odtk::evaluate_condition(b, mask, eo);
    res.condition = c.mode;
    r[c.mode] = odtk::to_json(res, true);
    table = odtk::ablation_table_csv({&res}, {});
  }
  out.add_json("ablate.json", envelope(c, r));
  out.add("csv", "ablate_table.csv", table);
  out.commit();
}

void cmd_freq(const RunConfig &c) {
  const auto b = load(c.bundle);
  const auto od = odtk::detect_ods(b.activations, detect_options(c));
  const auto eo = eval_options(c);
  auto full = odtk::evaluate_condition(b, odtk::DimensionMask::full(b.d()), eo);
  full.condition = "full";
  auto ablated = odtk::evaluate_condition(b, odtk::DimensionMask::ablate(od.od_indices, b.d()), eo);
  ablated.condition = "ablate-od";
  const auto fit_full = odtk::prediction_frequency_fit(full, b.vocab);
  const auto fit_abl = odtk::prediction_frequency_fit(ablated, b.vocab);
  const auto dims = odtk::dimension_frequency_profile(b, full, od);
  Outputs out(c);
  json r;
  r["od_indices"] = od.od_indices;
  r["full"] = odtk::to_json(fit_full);
  r["ablate_od"] = odtk::to_json(fit_abl);
  r["slope_change"] = fit_abl.slope - fit_full.slope;
  r["dimensions"] = odtk::to_json(dims);
  out.add_json("freq.json", envelope(c, r));
  const auto pf = odtk::freq_points_csv(fit_full), pa = odtk::freq_points_csv(fit_abl);
  out.add("csv", "freq_points_full.csv", pf);
  out.add("csv", "freq_points_ablate_od.csv", pa);
  out.add("csv", "freq_dimensions.csv", odtk::dim_correlation_csv(dims));
  if (c.wants("svg")) {
    out.add("svg", "fig_frequency_full.svg", svg_of(odtk::svg::ChartKind::Frequency, pf));
    out.add("svg", "fig_frequency_ablate_od.svg", svg_of(odtk::svg::ChartKind::Frequency, pa));
  }
  out.commit();
}

void cmd_logits(const RunConfig &c) {
  const auto b = load(c.bundle);
  const auto od = odtk::detect_ods(b.activations, detect_options(c));
  const auto eo = eval_options(c);
  const std::size_t d = b.d();
  const auto full = odtk::evaluate_condition(b, odtk::DimensionMask::full(d), eo);
  const auto abl = odtk::evaluate_condition(b, odtk::DimensionMask::ablate(od.od_indices, d), eo);
  const auto only = odtk::evaluate_condition(b, odtk::DimensionMask::only(od.od_indices, d), eo);
  const std::size_t min_count =
      c.min_count >= 0 ? static_cast<std::size_t>(c.min_count) : odtk::default_min_count(b.n());
  odtk::NeutralOptions nopt;
  nopt.min_full_count = c.min_full_count;
  nopt.ratio_lo = c.ratio_band[0];
  nopt.ratio_hi = c.ratio_band[1];
  nopt.cap = c.cap;
  const auto cohorts = odtk::make_cohorts(full, abl, only, min_count, nopt);
  const auto rep = odtk::contribution_report(b, full, cohorts, od.od_indices);
  Outputs out(c);
  json r;
  r["od_indices"] = od.od_indices;
  r["cohorts"] = odtk::to_json(cohorts, b.vocab);
  r["contributions"] = odtk::to_json(rep, b.vocab);
  out.add_json("logits.json", envelope(c, r));
  const auto csv_text = odtk::contribution_csv(rep, b);
  out.add("csv", "logits_contributions.csv", csv_text);
  if (c.wants("svg"))
    out.add("svg", "fig_contributions.svg", svg_of(odtk::svg::ChartKind::Contributions, csv_text));
  out.commit();
}

void cmd_spikes(const RunConfig &c) {
  const auto b = load(c.bundle);
  const auto od = odtk::detect_ods(b.activations, detect_options(c));
  odtk::SpikeSuiteOptions so;
  so.top_k = c.top_k;
  so.sigma_mult = c.sigma_mult;
  so.variance_fractions = c.variance_fractions;
  so.trials = c.trials;
  so.seed = c.seed;
  if (c.method == "exact") so.method = odtk::PValueMethod::Exact;
  else if (c.method != "monte-carlo")
    throw odtk::Error(odtk::ErrorKind::InvalidArgument, fmt::format("unknown --method '{}'", c.method));
  const auto rep = odtk::spike_overlap_suite(b, od, so);
  Outputs out(c);
  json r;
  r["od_indices"] = od.od_indices;
  r["spikes"] = odtk::to_json(rep);
  out.add_json("spikes.json", envelope(c, r));
  for (const auto &e : rep.entries) {
    const auto csv_text = odtk::spike_vector_csv(e, od.od_indices);
    out.add("csv", fmt::format("spikes_{}.csv", e.label), csv_text);
    if (c.wants("svg"))
      out.add("svg", fmt::format("fig_spikes_{}.svg", e.label), svg_of(odtk::svg::ChartKind::Spikes, csv_text));
  }
  out.commit();
}

void cmd_layers(const RunConfig &c) {
  const auto b = load(c.bundle);
  odtk::require(b.layers.size() >= 2, odtk::ErrorKind::MissingTensor,
                "bundle has fewer than two per-layer activation tensors");
  const auto curve = odtk::layer_overlap(b.layers, detect_options(c));
  Outputs out(c);
  out.add_json("layers.json", envelope(c, odtk::to_json(curve)));
  out.add("csv", "layers.csv", odtk::layer_csv(curve));
  out.commit();
}

void cmd_timeline(const RunConfig &c) {
  odtk::require(c.bundles.size() >= 2, odtk::ErrorKind::IncompatibleBundles,
                "--bundles needs at least two checkpoint directories");
  std::vector<odtk::ModelBundle> bundles;
  for (const auto &p : c.bundles) bundles.push_back(odtk::load_bundle(p));
  odtk::TimelineConfig tc;
  tc.detect = detect_options(c);
  tc.seeds = c.seeds;
  tc.eval = eval_options(c);
  tc.min_truth_count = c.min_truth_count;
  const auto rows = odtk::run_timeline(bundles, tc);
  Outputs out(c);
  out.add_json("timeline.json", envelope(c, odtk::to_json(rows, bundles.back().vocab)));
  out.add("csv", "timeline.csv", odtk::timeline_csv(rows));
  out.commit();
}

void cmd_render(RunConfig c) {
  odtk::require(!c.input.empty(), odtk::ErrorKind::InvalidArgument, "--input is required");
  const auto kind = odtk::svg::parse_kind(c.kind);
  const std::string text = odtk::io::read_text(c.input);
  const std::string svg = odtk::svg::render(kind, text);
  c.formats = {"svg"};
  Outputs out(c);
  out.add("svg", fs::path(c.input).stem().string() + ".svg", svg);
  out.commit();
}

int cmd_validate(const RunConfig &c) {
  const auto b = load(c.bundle);
  const auto diag = odtk::validate_bundle(b);
  for (const auto &d : diag) std::cout << d << "\n";
  if (diag.empty()) std::cout << "ok: " << b.n() << " samples, d=" << b.d() << ", V=" << b.v() << "\n";
  return diag.empty() ? 0 : odtk::exit_code(odtk::ErrorKind::InvalidRecord);
}

std::string exit_code_help() {
  std::string s = "Exit codes:\n  0  success\n  1  unexpected failure\n  2  usage error\n";
  for (int k = 0; k <= static_cast<int>(odtk::ErrorKind::Io); ++k) {
    const auto kind = static_cast<odtk::ErrorKind>(k);
    s += fmt::format("  {:<2} {}\n", odtk::exit_code(kind), odtk::to_string(kind));
  }
  s += "\nODTK_OUT sets the default output directory.\n";
  return s;
}

} // namespace

int main(int argc, char **argv) {
  RunConfig cfg;
  CLI::App app{"Outlier-dimension analyses over exported model bundles."};
  app.footer(exit_code_help());
  app.require_subcommand(1);

  auto add_common = [&](CLI::App *sub, bool single_bundle) {
    if (single_bundle) sub->add_option("--bundle", cfg.bundle, "bundle directory")->required();
    sub->add_option("--quantile", cfg.quantile, "pooled |activation| quantile for tau")->capture_default_str();
    sub->add_option("--min-median-fraction", cfg.min_median_fraction,
                    "share of samples that must reach tau")->capture_default_str();
    sub->add_option("--median-mode", cfg.median_mode, "abs-of-median | median-of-abs")
        ->check(CLI::IsMember({"abs-of-median", "median-of-abs"}))->capture_default_str();
    sub->add_option("--out", cfg.out, "output directory")->envname("ODTK_OUT")->capture_default_str();
    sub->add_option("--format", cfg.formats, "comma list of json,csv,svg")->delimiter(',')->capture_default_str();
  };
  auto add_eval = [&](CLI::App *sub) {
    sub->add_option("--seeds", cfg.seeds, "comma list of PRNG seeds")->delimiter(',')->capture_default_str();
    sub->add_option("--surprisal-target", cfg.surprisal_target, "ground-truth | predicted")
        ->check(CLI::IsMember({"ground-truth", "predicted"}))->capture_default_str();
  };

  auto *detect = app.add_subcommand("detect", "detect outlier dimensions");
  add_common(detect, true);

  auto *ablate = app.add_subcommand("ablate", "ablation grid or a single condition");
  add_common(ablate, true);
  add_eval(ablate);
  ablate->add_option("--mode", cfg.mode, "grid | full | ablate-od | only-od | ablate-random | only-random")
      ->check(CLI::IsMember({"grid", "full", "ablate-od", "only-od", "ablate-random", "only-random"}))
      ->capture_default_str();
  ablate->add_option("--k", cfg.k, "random dimension count (default: number of ODs)");

  auto *freq = app.add_subcommand("freq", "prediction-frequency regressions and per-dimension correlations");
  add_common(freq, true);
  add_eval(freq);

  auto *logits = app.add_subcommand("logits", "OD / non-OD logit contributions");
  add_common(logits, true);
  add_eval(logits);
  logits->add_option("--min-count", cfg.min_count, "only-OD count for OD-favored tokens (default min(1000, 2% of N))");
  logits->add_option("--min-full-count", cfg.min_full_count, "full-model count for OD-neutral tokens")
      ->capture_default_str();
  logits->add_option("--ratio-band", cfg.ratio_band, "lo,hi fallback band for OD-neutral tokens")
      ->delimiter(',')->expected(2)->capture_default_str();
  logits->add_option("--cap", cfg.cap, "maximum OD-neutral tokens")->capture_default_str();

  auto *spikes = app.add_subcommand("spikes", "parameter spikes and OD overlap p-values");
  add_common(spikes, true);
  spikes->add_option("--sigma-mult", cfg.sigma_mult, "spike threshold in standard deviations")->capture_default_str();
  spikes->add_option("--top-k", cfg.top_k, "leading singular vectors to analyze")->capture_default_str();
  spikes->add_option("--variance-fractions", cfg.variance_fractions, "comma list for combined vectors")
      ->delimiter(',')->capture_default_str();
  spikes->add_option("--trials", cfg.trials, "Monte-Carlo trials")->capture_default_str();
  spikes->add_option("--method", cfg.method, "monte-carlo | exact")
      ->check(CLI::IsMember({"monte-carlo", "exact"}))->capture_default_str();
  spikes->add_option("--seed", cfg.seed, "Monte-Carlo seed")->capture_default_str();

  auto *layers = app.add_subcommand("layers", "per-layer OD counts and overlap with the last layer");
  add_common(layers, true);

  auto *timeline = app.add_subcommand("timeline", "OD emergence across checkpoints");
  add_common(timeline, false);
  add_eval(timeline);
  timeline->add_option("--bundles", cfg.bundles, "comma list of checkpoint bundles, final last")
      ->delimiter(',')->required();
  timeline->add_option("--min-truth-count", cfg.min_truth_count, "ground-truth count for over-prediction ranking")
      ->capture_default_str();

  auto *render = app.add_subcommand("render", "render an SVG chart from a report CSV");
  render->add_option("--input", cfg.input, "report CSV")->required();
  render->add_option("--kind", cfg.kind, "medians | frequency | contributions | spikes")
      ->check(CLI::IsMember({"medians", "frequency", "contributions", "spikes"}))->required();
  render->add_option("--out", cfg.out, "output directory")->envname("ODTK_OUT")->capture_default_str();

  auto *validate = app.add_subcommand("validate", "check a bundle and list diagnostics");
  validate->add_option("--bundle", cfg.bundle, "bundle directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return 2;
  }

  try {
    auto *sub = app.get_subcommands().front();
    cfg.command = sub->get_name();
    check_config(cfg);
    if (sub == detect) cmd_detect(cfg);
    else if (sub == ablate) cmd_ablate(cfg);
    else if (sub == freq) cmd_freq(cfg);
    else if (sub == logits) cmd_logits(cfg);
    else if (sub == spikes) cmd_spikes(cfg);
    else if (sub == layers) cmd_layers(cfg);
    else if (sub == timeline) cmd_timeline(cfg);
    else if (sub == render) cmd_render(cfg);
    else if (sub == validate) return cmd_validate(cfg);
  } catch (const odtk::Error &e) {
    std::cerr << "odtk: " << e.what() << "\n";
    return odtk::exit_code(e.kind());
  } catch (const std::exception &e) {
    std::cerr << "odtk: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
