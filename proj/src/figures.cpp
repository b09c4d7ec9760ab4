#include "pmdlab/figures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace pmdlab {
namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
constexpr int kPaletteSize = 6;

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  out.reserve(s.size());
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

// Largest {1,2,5}*10^k step not exceeding the raw spacing.
double nice_step(double range, int target_ticks) {
  const double raw = range / std::max(target_ticks, 1);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double frac = raw / mag;
  if (frac >= 5.0) return 5.0 * mag;
  if (frac >= 2.0) return 2.0 * mag;
  return mag;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finalize() {
    if (lo > hi) {
      lo = 0.0;
      hi = 1.0;
    }
    if (lo == hi) {
      lo -= 1.0;
      hi += 1.0;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

}  // namespace

std::string render_line_svg(const std::vector<FigureSeries>& series,
                            const FigureOptions& options) {
  const double width = options.width;
  const double height = options.height;
  const double left = 70.0, right = width - 20.0, top = 40.0, bottom = height - 50.0;

  Range xr, yr;
  for (const FigureSeries& s : series)
    for (size_t i = 0; i < s.x.size() && i < s.mean.size(); ++i) {
      xr.add(s.x[i]);
      yr.add(s.mean[i]);
      if (i < s.stderr_half_width.size()) {
        yr.add(s.mean[i] + s.stderr_half_width[i]);
        yr.add(s.mean[i] - s.stderr_half_width[i]);
      }
    }
  xr.finalize();
  yr.finalize();

  const auto px = [&](double x) {
    return left + (x - xr.lo) / (xr.hi - xr.lo) * (right - left);
  };
  const auto py = [&](double y) {
    return bottom - (y - yr.lo) / (yr.hi - yr.lo) * (bottom - top);
  };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << options.width << "\" height=\""
      << options.height << "\" viewBox=\"0 0 " << options.width << " " << options.height
      << "\">\n";
  out << "<rect width=\"" << options.width << "\" height=\"" << options.height
      << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << fmt2(0.5 * (left + right)) << "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"16\">"
      << escape_xml(options.title) << "</text>\n";

  // Axes, grid and tick labels.
  const double x_step = nice_step(xr.hi - xr.lo, 6);
  const double y_step = nice_step(yr.hi - yr.lo, 5);
  for (double t = std::ceil(xr.lo / x_step) * x_step; t <= xr.hi + 1e-9 * x_step; t += x_step) {
    out << "<line x1=\"" << fmt2(px(t)) << "\" y1=\"" << fmt2(top) << "\" x2=\"" << fmt2(px(t))
        << "\" y2=\"" << fmt2(bottom) << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << fmt2(px(t)) << "\" y=\"" << fmt2(bottom + 18.0)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << fmt_tick(t) << "</text>\n";
  }
  for (double t = std::ceil(yr.lo / y_step) * y_step; t <= yr.hi + 1e-9 * y_step; t += y_step) {
    out << "<line x1=\"" << fmt2(left) << "\" y1=\"" << fmt2(py(t)) << "\" x2=\"" << fmt2(right)
        << "\" y2=\"" << fmt2(py(t)) << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << fmt2(left - 8.0) << "\" y=\"" << fmt2(py(t) + 4.0)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_tick(t)
        << "</text>\n";
  }
  out << "<line x1=\"" << fmt2(left) << "\" y1=\"" << fmt2(bottom) << "\" x2=\"" << fmt2(right)
      << "\" y2=\"" << fmt2(bottom) << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
  out << "<line x1=\"" << fmt2(left) << "\" y1=\"" << fmt2(top) << "\" x2=\"" << fmt2(left)
      << "\" y2=\"" << fmt2(bottom) << "\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
  out << "<text x=\"" << fmt2(0.5 * (left + right)) << "\" y=\"" << fmt2(height - 12.0)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
      << escape_xml(options.x_label) << "</text>\n";
  out << "<text x=\"18\" y=\"" << fmt2(0.5 * (top + bottom))
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
         "transform=\"rotate(-90 18 "
      << fmt2(0.5 * (top + bottom)) << ")\">" << escape_xml(options.y_label) << "</text>\n";

  // Bands below lines so every mean stays visible.
  for (size_t k = 0; k < series.size(); ++k) {
    const FigureSeries& s = series[k];
    const size_t n = std::min(s.x.size(), s.mean.size());
    if (n == 0 || s.stderr_half_width.size() < n) continue;
    std::ostringstream points;
    for (size_t i = 0; i < n; ++i)
      points << fmt2(px(s.x[i])) << ',' << fmt2(py(s.mean[i] + s.stderr_half_width[i])) << ' ';
    for (size_t i = n; i-- > 0;)
      points << fmt2(px(s.x[i])) << ',' << fmt2(py(s.mean[i] - s.stderr_half_width[i])) << ' ';
    out << "<polygon points=\"" << points.str() << "\" fill=\"" << kPalette[k % kPaletteSize]
        << "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
  }
  for (size_t k = 0; k < series.size(); ++k) {
    const FigureSeries& s = series[k];
    const size_t n = std::min(s.x.size(), s.mean.size());
    if (n == 0) continue;
    std::ostringstream points;
    for (size_t i = 0; i < n; ++i) points << fmt2(px(s.x[i])) << ',' << fmt2(py(s.mean[i])) << ' ';
    out << "<polyline points=\"" << points.str() << "\" fill=\"none\" stroke=\""
        << kPalette[k % kPaletteSize] << "\" stroke-width=\"2\"/>\n";
  }

  // Legend, top right inside the plot area.
  double ly = top + 14.0;
  for (size_t k = 0; k < series.size(); ++k) {
    const double lx = right - 170.0;
    out << "<line x1=\"" << fmt2(lx) << "\" y1=\"" << fmt2(ly - 4.0) << "\" x2=\""
        << fmt2(lx + 26.0) << "\" y2=\"" << fmt2(ly - 4.0) << "\" stroke=\""
        << kPalette[k % kPaletteSize] << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << fmt2(lx + 32.0) << "\" y=\"" << fmt2(ly)
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << escape_xml(series[k].label)
        << "</text>\n";
    ly += 18.0;
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace pmdlab
