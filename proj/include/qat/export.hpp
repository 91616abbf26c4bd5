#pragma once

// Reads a metrics CSV back, optionally smooths / downsamples the per-layer
// series, and renders small SVG line charts.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qat/metrics.hpp"
#include "qat/trainer.hpp"

namespace qat {

class ExportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<StepRow> read_steps_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ExportError("cannot open metrics file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ExportError("metrics file '" + path.string() + "' is empty");
  if (line != kStepCsvHeader) throw ExportError("metrics file '" + path.string() + "' has an unexpected header");
  std::vector<StepRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 10) {
      throw ExportError(path.string() + ":" + std::to_string(lineno) + ": expected 10 columns, got " +
                        std::to_string(cells.size()));
    }
    auto num = [&](const std::string& s) {
      if (s.empty()) return kNotLogged;
      double v = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || p != s.data() + s.size()) {
        throw ExportError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + s + "'");
      }
      return v;
    };
    StepRow r;
    r.step = static_cast<long>(num(cells[0]));
    r.layer = cells[1];
    r.k = num(cells[2]);
    r.K = num(cells[3]);
    r.R = num(cells[4]);
    r.U = num(cells[5]);
    r.ess_latent = num(cells[6]);
    r.ess_quant = num(cells[7]);
    r.dist_tp = num(cells[8]);
    r.loss = num(cells[9]);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ExportError("metrics file '" + path.string() + "' has no rows");
  return rows;
}

struct Series {
  std::string name;
  std::vector<double> x, y;
};

// EMA with the same form as the running TR; NaN samples are skipped.
inline std::vector<double> ema_smooth(const std::vector<double>& v, double m) {
  if (m == 0.0) return v;
  std::vector<double> out(v.size(), kNotLogged);
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::isnan(v[i])) continue;
    acc = update_running_tr(acc, v[i], m);
    out[i] = acc;
  }
  return out;
}

inline Series downsample(const Series& s, long every) {
  if (every <= 1) return s;
  Series o{s.name, {}, {}};
  for (std::size_t i = 0; i < s.x.size(); i += static_cast<std::size_t>(every)) {
    o.x.push_back(s.x[i]);
    o.y.push_back(s.y[i]);
  }
  if (!s.x.empty() && (s.x.size() - 1) % static_cast<std::size_t>(every) != 0) {
    o.x.push_back(s.x.back());
    o.y.push_back(s.y.back());
  }
  return o;
}

inline std::vector<std::string> layers_of(const std::vector<StepRow>& rows) {
  std::vector<std::string> out;
  for (const auto& r : rows)
    if (std::find(out.begin(), out.end(), r.layer) == out.end()) out.push_back(r.layer);
  return out;
}

inline Series column(const std::vector<StepRow>& rows, const std::string& layer, double StepRow::*field,
                     const std::string& name) {
  Series s{name, {}, {}};
  for (const auto& r : rows) {
    if (r.layer != layer) continue;
    s.x.push_back(static_cast<double>(r.step));
    s.y.push_back(r.*field);
  }
  return s;
}

namespace detail {
inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  return colors[i % 8];
}

inline std::string fmt_tick(double v) {
  std::ostringstream o;
  o.precision(3);
  o << v;
  return o.str();
}
}  // namespace detail

// Plain polyline chart with axes and a legend. Series with dashed=true
// (names ending in "(target)") are drawn dashed.
inline std::string render_svg(const std::string& title, const std::string& ylabel, const std::vector<Series>& series) {
  const double W = 640, H = 400, L = 70, Rm = 160, T = 40, B = 50;
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isnan(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  const bool empty = !std::isfinite(xmin);
  if (empty) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  ymin = std::min(ymin, 0.0);
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - Rm); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - Rm << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0, yv = ymin + (ymax - ymin) * i / 4.0;
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << detail::fmt_tick(xv) << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << detail::fmt_tick(yv) << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << py(yv) << "\" x2=\"" << W - Rm << "\" y2=\"" << py(yv) << "\" stroke=\"#eee\"/>\n";
  }
  o << "<text x=\"" << (L + W - Rm) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">step</text>\n";
  o << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (T + H - B) / 2 << ")\">" << ylabel << "</text>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const bool dashed = s.name.find("(target)") != std::string::npos;
    o << "<polyline fill=\"none\" stroke=\"" << detail::palette(dashed ? si + 1 : si) << "\" stroke-width=\"1.2\""
      << (dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isnan(s.y[i])) continue;
      o << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    o << "\"/>\n";
    const double ly = T + 14.0 * static_cast<double>(si);
    o << "<line x1=\"" << W - Rm + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - Rm + 30 << "\" y2=\"" << ly << "\" stroke=\""
      << detail::palette(dashed ? si + 1 : si) << "\"" << (dashed ? " stroke-dasharray=\"5,3\"" : "") << "/>\n";
    o << "<text x=\"" << W - Rm + 34 << "\" y=\"" << ly + 4 << "\">" << s.name << "</text>\n";
  }
  if (empty) o << "<text x=\"" << (L + W - Rm) / 2 << "\" y=\"" << H / 2 << "\" text-anchor=\"middle\">no data</text>\n";
  o << "</svg>\n";
  return o.str();
}

struct ExportOptions {
  double smooth = 0.0;  // EMA momentum, 0 = raw
  long every = 1;       // keep one point in `every`
};

// Writes tr.svg, talr.svg, ess.svg, dist_tp.svg and series.csv into out_dir.
// Returns the written paths.
inline std::vector<std::filesystem::path> export_run(const std::filesystem::path& metrics_csv,
                                                     const std::filesystem::path& out_dir, const ExportOptions& opt) {
  if (!(opt.smooth >= 0.0 && opt.smooth < 1.0)) throw ExportError("--smooth must be in [0,1)");
  if (opt.every < 1) throw ExportError("--every must be >= 1");
  const auto rows = read_steps_csv(metrics_csv);
  const auto layers = layers_of(rows);
  auto prep = [&](Series s, bool smooth) {
    if (smooth) s.y = ema_smooth(s.y, opt.smooth);
    return downsample(s, opt.every);
  };
  std::vector<Series> tr, talr, ess, dist;
  for (const auto& l : layers) {
    tr.push_back(prep(column(rows, l, &StepRow::K, l + " K"), true));
    talr.push_back(prep(column(rows, l, &StepRow::U, l + " U"), false));
    ess.push_back(prep(column(rows, l, &StepRow::ess_latent, l + " latent"), true));
    ess.push_back(prep(column(rows, l, &StepRow::ess_quant, l + " quantized"), true));
    dist.push_back(prep(column(rows, l, &StepRow::dist_tp, l), true));
  }
  if (!layers.empty()) tr.push_back(prep(column(rows, layers.front(), &StepRow::R, "R (target)"), false));

  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  auto write = [&](const std::string& name, const std::string& text) {
    const auto p = out_dir / name;
    std::ofstream f(p);
    if (!f) throw ExportError("cannot write '" + p.string() + "'");
    f << text;
    written.push_back(p);
  };
  write("tr.svg", render_svg("running TR vs target", "TR", tr));
  write("talr.svg", render_svg("TALR / LR", "U", talr));
  write("ess.svg", render_svg("average effective step size", "ESS", ess));
  write("dist_tp.svg", render_svg("mean distance to transition points", "distance", dist));

  std::ostringstream csv;
  csv << "series,step,value\n";
  for (const auto* group : {&tr, &talr, &ess, &dist})
    for (const auto& s : *group)
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        csv << s.name << ',' << static_cast<long>(s.x[i]) << ',';
        detail::put_number(csv, s.y[i]);
        csv << '\n';
      }
  write("series.csv", csv.str());
  return written;
}

}  // namespace qat
