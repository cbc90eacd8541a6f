#pragma once

// Standalone SVG charts rendered from the report CSVs alone.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "odtk/core.hpp"
#include "odtk/csv.hpp"
#include "odtk/stats.hpp"

namespace odtk::svg {

enum class ChartKind { Medians, Frequency, Contributions, Spikes };

inline ChartKind parse_kind(std::string_view s) {
  if (s == "medians") return ChartKind::Medians;
  if (s == "frequency") return ChartKind::Frequency;
  if (s == "contributions") return ChartKind::Contributions;
  if (s == "spikes") return ChartKind::Spikes;
  throw Error(ErrorKind::InvalidArgument, fmt::format("unknown chart kind '{}'", s));
}

namespace detail {

inline constexpr double kWidth = 640, kHeight = 420, kLeft = 70, kRight = 20, kTop = 40,
                        kBottom = 50;
inline constexpr const char *kBlue = "#1f77b4";
inline constexpr const char *kOrange = "#ff7f0e";

struct Frame {
  double x0, x1, y0, y1;

  static Frame fit(double x0, double x1, double y0, double y1) {
    if (!(x1 > x0)) { x0 -= 0.5; x1 += 0.5; }
    if (!(y1 > y0)) { y0 -= 0.5; y1 += 0.5; }
    const double px = 0.05 * (x1 - x0), py = 0.05 * (y1 - y0);
    return {x0 - px, x1 + px, y0 - py, y1 + py};
  }
  double sx(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double sy(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

inline std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    default: out += c;
    }
  }
  return out;
}

inline std::string open(std::string_view title, const Frame &f, std::string_view xlabel,
                        std::string_view ylabel) {
  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
      "<text x=\"{2:.1f}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{3}</text>\n",
      kWidth, kHeight, kWidth / 2, escape(title));
  const double bx = kLeft, by = kHeight - kBottom;
  s += fmt::format("<g class=\"axes\" stroke=\"black\" stroke-width=\"1\">"
                   "<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{2:.1f}\" y2=\"{1:.1f}\"/>"
                   "<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{3:.1f}\"/></g>\n",
                   bx, by, kWidth - kRight, kTop);
  auto tick = [](double v) { return fmt::format("{:.3g}", v); };
  s += fmt::format("<g font-family=\"sans-serif\" font-size=\"11\">"
                   "<text x=\"{0:.1f}\" y=\"{1:.1f}\" text-anchor=\"start\">{2}</text>"
                   "<text x=\"{3:.1f}\" y=\"{1:.1f}\" text-anchor=\"end\">{4}</text>"
                   "<text x=\"{5:.1f}\" y=\"{6:.1f}\" text-anchor=\"end\">{7}</text>"
                   "<text x=\"{5:.1f}\" y=\"{8:.1f}\" text-anchor=\"end\">{9}</text>"
                   "<text x=\"{10:.1f}\" y=\"{11:.1f}\" text-anchor=\"middle\">{12}</text>"
                   "<text x=\"16\" y=\"{13:.1f}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {13:.1f})\">{14}</text></g>\n",
                   bx, by + 16, tick(f.x0), kWidth - kRight, tick(f.x1), bx - 6, by, tick(f.y0), kTop + 4,
                   tick(f.y1), (kLeft + kWidth - kRight) / 2, kHeight - 12, escape(xlabel),
                   (kTop + kHeight - kBottom) / 2, escape(ylabel));
  return s;
}

inline std::string close() { return "</svg>\n"; }

inline std::string mark(const Frame &f, double x, double y, const char *color, double r = 3) {
  return fmt::format("<circle class=\"mark\" cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"{}\" fill=\"{}\" fill-opacity=\"0.8\"/>\n",
                     f.sx(x), f.sy(y), r, color);
}

inline void require_points(const csv::Table &t, std::string_view what) {
  require(!t.rows.empty(), ErrorKind::MalformedReport, fmt::format("{}: no points to plot", what));
}

} // namespace detail

/// Per-dimension signed medians with the +/- tau threshold lines; ODs in orange.
inline std::string render_medians(const csv::Table &t) {
  detail::require_points(t, "medians");
  const auto cd = t.column("dimension"), cm = t.column("median"), ct = t.column("tau"),
             co = t.column("is_od");
  const double tau = t.number(0, ct);
  double ymin = -tau, ymax = tau, xmax = 0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    ymin = std::min(ymin, t.number(r, cm));
    ymax = std::max(ymax, t.number(r, cm));
    xmax = std::max(xmax, t.number(r, cd));
  }
  const auto f = detail::Frame::fit(0, xmax, ymin, ymax);
  std::string s = detail::open("Median activation per dimension", f, "dimension", "median activation");
  for (double y : {tau, -tau})
    s += fmt::format("<line class=\"threshold\" x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" "
                     "stroke=\"{}\" stroke-dasharray=\"4 3\" data-value=\"{}\"/>\n",
                     f.sx(f.x0), f.sy(y), f.sx(f.x1), f.sy(y), detail::kOrange, y);
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    s += detail::mark(f, t.number(r, cd), t.number(r, cm),
                      t.rows[r][co] == "1" ? detail::kOrange : detail::kBlue);
  return s + detail::close();
}

/// Log-log prediction count vs corpus frequency with the OLS line fitted to
/// the plotted points. Line endpoints carry data coordinates.
inline std::string render_frequency(const csv::Table &t) {
  detail::require_points(t, "frequency");
  const auto cx = t.column("log10_freq"), cy = t.column("log10_count");
  std::vector<double> x, y;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    x.push_back(t.number(r, cx));
    y.push_back(t.number(r, cy));
  }
  const auto [xmin, xmax] = std::minmax_element(x.begin(), x.end());
  const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
  std::optional<stats::LinearFit> fit;
  if (x.size() >= 2) fit = stats::ols(x, y);
  double lo = *ymin, hi = *ymax;
  if (fit) {
    lo = std::min({lo, fit->slope * *xmin + fit->intercept, fit->slope * *xmax + fit->intercept});
    hi = std::max({hi, fit->slope * *xmin + fit->intercept, fit->slope * *xmax + fit->intercept});
  }
  const auto f = detail::Frame::fit(*xmin, *xmax, lo, hi);
  std::string title = "Prediction frequency vs corpus frequency";
  if (fit) title += fmt::format(" (slope {:.2f})", fit->slope);
  std::string s = detail::open(title, f, "log10 corpus frequency", "log10 prediction count");
  for (std::size_t i = 0; i < x.size(); ++i) s += detail::mark(f, x[i], y[i], detail::kBlue, 2.5);
  if (fit) {
    const double y1 = fit->slope * *xmin + fit->intercept, y2 = fit->slope * *xmax + fit->intercept;
    s += fmt::format("<line class=\"fit\" x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"{}\" "
                     "stroke-width=\"2\" data-x1=\"{}\" data-y1=\"{}\" data-x2=\"{}\" data-y2=\"{}\"/>\n",
                     f.sx(*xmin), f.sy(y1), f.sx(*xmax), f.sy(y2), detail::kOrange, *xmin, y1, *xmax, y2);
  }
  return s + detail::close();
}

/// Boxplots of OD and non-OD logit contributions per cohort.
inline std::string render_contributions(const csv::Table &t) {
  detail::require_points(t, "contributions");
  const auto cc = t.column("cohort"), cp = t.column("part"), cv = t.column("value");
  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    groups[{t.rows[r][cc], t.rows[r][cp]}].push_back(t.number(r, cv));
  double lo = 0, hi = 0;
  for (const auto &[k, v] : groups) {
    lo = std::min(lo, *std::min_element(v.begin(), v.end()));
    hi = std::max(hi, *std::max_element(v.begin(), v.end()));
  }
  const auto f = detail::Frame::fit(0, static_cast<double>(groups.size()), lo, hi);
  std::string s = detail::open("OD and non-OD logit contributions", f, "cohort / part", "logit contribution");
  s += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#999\"/>\n",
                   f.sx(f.x0), f.sy(0), f.sx(f.x1), f.sy(0));
  double slot = 0.5;
  for (const auto &[key, values] : groups) {
    auto v = values;
    std::sort(v.begin(), v.end());
    const double q1 = stats::nearest_rank_sorted(v, 0.25), q2 = stats::nearest_rank_sorted(v, 0.5),
                 q3 = stats::nearest_rank_sorted(v, 0.75);
    const double cx = f.sx(slot), half = 18;
    const char *color = key.second == "od" ? detail::kOrange : detail::kBlue;
    s += fmt::format("<g class=\"box\" data-cohort=\"{}\" data-part=\"{}\" data-n=\"{}\">", detail::escape(key.first),
                     key.second, v.size());
    s += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"black\"/>", cx,
                     f.sy(v.front()), f.sy(v.back()));
    s += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"{}\" stroke=\"black\"/>",
                     cx - half, f.sy(q3), 2 * half, std::max(0.5, f.sy(q1) - f.sy(q3)), color);
    s += fmt::format("<line x1=\"{0:.2f}\" y1=\"{2:.2f}\" x2=\"{1:.2f}\" y2=\"{2:.2f}\" stroke=\"black\" stroke-width=\"2\"/>",
                     cx - half, cx + half, f.sy(q2));
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{}/{}</text></g>\n",
                     cx, detail::kHeight - detail::kBottom + 14, detail::escape(key.first), key.second);
    slot += 1.0;
  }
  return s + detail::close();
}

/// Parameter vector values with spikes circled; spikes on ODs in orange.
inline std::string render_spikes(const csv::Table &t) {
  detail::require_points(t, "spikes");
  const auto ci = t.column("index"), cv = t.column("value"), cs = t.column("is_spike"),
             co = t.column("is_od");
  double lo = 0, hi = 0, xmax = 0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    lo = std::min(lo, t.number(r, cv));
    hi = std::max(hi, t.number(r, cv));
    xmax = std::max(xmax, t.number(r, ci));
  }
  const auto f = detail::Frame::fit(0, xmax, lo, hi);
  std::string s = detail::open("Parameter spikes", f, "dimension", "value");
  std::string path;
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    path += fmt::format("{}{:.2f},{:.2f}", r ? " L" : "M", f.sx(t.number(r, ci)), f.sy(t.number(r, cv)));
  s += fmt::format("<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"0.8\"/>\n", path, detail::kBlue);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (t.rows[r][cs] != "1") continue;
    s += detail::mark(f, t.number(r, ci), t.number(r, cv),
                      t.rows[r][co] == "1" ? detail::kOrange : "#555555", 4);
  }
  return s + detail::close();
}

inline std::string render(ChartKind kind, std::string_view csv_text) {
  const auto t = csv::parse(csv_text);
  switch (kind) {
  case ChartKind::Medians: return render_medians(t);
  case ChartKind::Frequency: return render_frequency(t);
  case ChartKind::Contributions: return render_contributions(t);
  case ChartKind::Spikes: return render_spikes(t);
  }
  return {};
}

} // namespace odtk::svg
