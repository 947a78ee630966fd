#include "ttsa/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "ttsa/errors.hpp"

namespace ttsa::plot {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
constexpr int kPaletteSize = 8;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape_xml(const std::string& s) {
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

struct Axis {
  double lo = 0.0, hi = 1.0;
  bool log = false;

  double place(double v) const {
    if (log) return (std::log10(v) - lo) / (hi - lo);
    return (v - lo) / (hi - lo);
  }
};

Axis fit_axis(const std::vector<Series>& series, bool take_x, bool log) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& s : series) {
    const auto& vals = take_x ? s.x : s.y;
    const auto& other = take_x ? s.y : s.x;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double v = vals[i];
      const double o = i < other.size() ? other[i] : 0.0;
      if (!std::isfinite(v) || !std::isfinite(o)) continue;
      if (log && !(v > 0.0)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(lo <= hi)) {
    lo = log ? 1.0 : 0.0;
    hi = log ? 10.0 : 1.0;
  }
  Axis ax;
  ax.log = log;
  if (log) {
    ax.lo = std::log10(lo);
    ax.hi = std::log10(hi);
  } else {
    ax.lo = lo;
    ax.hi = hi;
  }
  if (!(ax.hi > ax.lo)) {
    ax.lo -= 0.5;
    ax.hi += 0.5;
  }
  const double pad = 0.04 * (ax.hi - ax.lo);
  ax.lo -= pad;
  ax.hi += pad;
  return ax;
}

}  // namespace

std::string render_line_chart(const ChartSpec& spec,
                              const std::vector<Series>& series) {
  const double ml = 64, mr = 16, mt = 34, mb = 46;
  const double w = spec.width, h = spec.height;
  const double pw = w - ml - mr, ph = h - mt - mb;

  const Axis ax = fit_axis(series, true, spec.log_x);
  const Axis ay = fit_axis(series, false, spec.log_y);
  const auto px = [&](double v) { return ml + ax.place(v) * pw; };
  const auto py = [&](double v) { return mt + (1.0 - ay.place(v)) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width
      << "\" height=\"" << spec.height << "\" viewBox=\"0 0 " << spec.width
      << " " << spec.height << "\">\n";
  svg << "<rect width=\"" << spec.width << "\" height=\"" << spec.height
      << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << fmt(w / 2) << "\" y=\"20\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"14\">"
      << escape_xml(spec.title) << "</text>\n";

  // Frame and ticks.
  svg << "<rect x=\"" << fmt(ml) << "\" y=\"" << fmt(mt) << "\" width=\""
      << fmt(pw) << "\" height=\"" << fmt(ph)
      << "\" fill=\"none\" stroke=\"#333333\"/>\n";
  const int n_ticks = 5;
  for (int i = 0; i < n_ticks; ++i) {
    const double f = static_cast<double>(i) / (n_ticks - 1);
    const double gx = ax.lo + f * (ax.hi - ax.lo);
    const double gy = ay.lo + f * (ay.hi - ay.lo);
    const double vx = spec.log_x ? std::pow(10.0, gx) : gx;
    const double vy = spec.log_y ? std::pow(10.0, gy) : gy;
    const double sx = ml + f * pw;
    const double sy = mt + (1.0 - f) * ph;
    svg << "<line x1=\"" << fmt(sx) << "\" y1=\"" << fmt(mt + ph) << "\" x2=\""
        << fmt(sx) << "\" y2=\"" << fmt(mt + ph + 4)
        << "\" stroke=\"#333333\"/>\n";
    svg << "<text x=\"" << fmt(sx) << "\" y=\"" << fmt(mt + ph + 16)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"10\">"
        << fmt_tick(vx) << "</text>\n";
    svg << "<line x1=\"" << fmt(ml - 4) << "\" y1=\"" << fmt(sy) << "\" x2=\""
        << fmt(ml) << "\" y2=\"" << fmt(sy) << "\" stroke=\"#333333\"/>\n";
    svg << "<text x=\"" << fmt(ml - 6) << "\" y=\"" << fmt(sy + 3)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"10\">"
        << fmt_tick(vy) << "</text>\n";
  }
  svg << "<text x=\"" << fmt(ml + pw / 2) << "\" y=\"" << fmt(h - 8)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">"
      << escape_xml(spec.x_label) << "</text>\n";
  svg << "<text x=\"14\" y=\"" << fmt(mt + ph / 2)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\" transform=\"rotate(-90 14 "
      << fmt(mt + ph / 2) << ")\">" << escape_xml(spec.y_label) << "</text>\n";

  // Series.
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % kPaletteSize];
    std::ostringstream pts;
    bool open = false;
    for (std::size_t i = 0; i < series[s].x.size() && i < series[s].y.size();
         ++i) {
      const double vx = series[s].x[i];
      const double vy = series[s].y[i];
      const bool ok = std::isfinite(vx) && std::isfinite(vy) &&
                      (!spec.log_x || vx > 0.0) && (!spec.log_y || vy > 0.0);
      if (!ok) {
        if (open) {
          svg << "<polyline points=\"" << pts.str()
              << "\" fill=\"none\" stroke=\"" << color
              << "\" stroke-width=\"1.5\"/>\n";
          pts.str("");
          open = false;
        }
        continue;
      }
      pts << fmt(px(vx)) << ',' << fmt(py(vy)) << ' ';
      open = true;
    }
    if (open) {
      svg << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\""
          << color << "\" stroke-width=\"1.5\"/>\n";
    }
  }

  // Legend.
  double ly = mt + 14;
  for (std::size_t s = 0; s < series.size(); ++s) {
    if (series[s].label.empty()) continue;
    const char* color = kPalette[s % kPaletteSize];
    svg << "<line x1=\"" << fmt(ml + 10) << "\" y1=\"" << fmt(ly - 4)
        << "\" x2=\"" << fmt(ml + 30) << "\" y2=\"" << fmt(ly - 4)
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << fmt(ml + 36) << "\" y=\"" << fmt(ly)
        << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << escape_xml(series[s].label) << "</text>\n";
    ly += 16;
  }

  svg << "</svg>\n";
  return svg.str();
}

void save_line_chart(const ChartSpec& spec, const std::vector<Series>& series,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  out << render_line_chart(spec, series);
}

}  // namespace ttsa::plot
