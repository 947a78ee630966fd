#pragma once

// Minimal self-contained SVG line charts.  Output is deterministic: no
// timestamps, no external resources, fixed palette and formatting.

#include <string>
#include <vector>

namespace ttsa::plot {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct ChartSpec {
  std::string title;
  std::string x_label, y_label;
  bool log_x = false;
  bool log_y = false;  // nonpositive values are dropped in log mode
  int width = 760;
  int height = 480;
};

std::string render_line_chart(const ChartSpec& spec,
                              const std::vector<Series>& series);
void save_line_chart(const ChartSpec& spec, const std::vector<Series>& series,
                     const std::string& path);

}  // namespace ttsa::plot
