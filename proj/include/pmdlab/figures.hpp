#pragma once

#include <string>
#include <vector>

namespace pmdlab {

struct FigureSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> stderr_half_width;  // band half-width; empty: no band
};

struct FigureOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  int width = 960;
  int height = 540;
};

// Self-contained SVG line plot: one polyline per series plus a translucent
// mean +/- stderr band, axes with tick labels and a legend.
std::string render_line_svg(const std::vector<FigureSeries>& series, const FigureOptions& options);

}  // namespace pmdlab
