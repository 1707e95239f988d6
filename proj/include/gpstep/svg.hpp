#pragma once

#include "gpstep/common.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

namespace gpstep {
namespace svg {

struct Series {
  std::string name;
  std::string color = "#1f77b4";
  bool dashed = false;
  std::vector<double> x;
  std::vector<double> y;
};

struct LinePlot {
  std::string title;
  std::string x_label = "t [s]";
  std::string y_label;
  bool log_y = false;
  std::vector<Series> series;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline double tx(double v, double lo, double hi, double px0, double px1) {
  return px0 + (v - lo) / (hi - lo) * (px1 - px0);
}

}  // namespace detail

// Static polyline rendering, no external dependencies. Log-scale plots skip
// nonpositive samples.
inline void write_plot(const std::string& path, const LinePlot& plot) {
  const double w = 760, h = 420;
  const double m_left = 72, m_right = 160, m_top = 40, m_bottom = 52;

  double x_min = std::numeric_limits<double>::infinity(), x_max = -x_min;
  double y_min = x_min, y_max = -x_min;
  for (const auto& s : plot.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      double yv = s.y[i];
      if (plot.log_y) {
        if (!(yv > 0.0)) continue;
        yv = std::log10(yv);
      }
      if (!std::isfinite(yv) || !std::isfinite(s.x[i])) continue;
      x_min = std::min(x_min, s.x[i]);
      x_max = std::max(x_max, s.x[i]);
      y_min = std::min(y_min, yv);
      y_max = std::max(y_max, yv);
    }
  if (!std::isfinite(x_min) || !std::isfinite(y_min)) {
    x_min = 0;
    x_max = 1;
    y_min = 0;
    y_max = 1;
  }
  if (x_max == x_min) x_max = x_min + 1;
  if (y_max == y_min) y_max = y_min + 1;
  const double y_pad = 0.05 * (y_max - y_min);
  y_min -= y_pad;
  y_max += y_pad;

  std::ofstream f(path);
  if (!f) throw ConfigError("cannot open for writing: " + path);
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
    << "' viewBox='0 0 " << w << " " << h << "'>\n";
  f << "<rect width='" << w << "' height='" << h << "' fill='white'/>\n";
  f << "<text x='" << w / 2 << "' y='24' text-anchor='middle' font-size='15' "
       "font-family='sans-serif'>"
    << plot.title << "</text>\n";

  const double px0 = m_left, px1 = w - m_right;
  const double py0 = h - m_bottom, py1 = m_top;  // y axis grows upward

  // Frame and ticks.
  f << "<rect x='" << px0 << "' y='" << py1 << "' width='" << px1 - px0 << "' height='"
    << py0 - py1 << "' fill='none' stroke='#333'/>\n";
  const int n_ticks = 6;
  for (int i = 0; i <= n_ticks; ++i) {
    const double fx = x_min + (x_max - x_min) * i / n_ticks;
    const double px = detail::tx(fx, x_min, x_max, px0, px1);
    f << "<line x1='" << px << "' y1='" << py0 << "' x2='" << px << "' y2='" << py0 + 5
      << "' stroke='#333'/>\n";
    f << "<text x='" << px << "' y='" << py0 + 20
      << "' text-anchor='middle' font-size='11' font-family='sans-serif'>" << detail::num(fx)
      << "</text>\n";
  }
  for (int i = 0; i <= n_ticks; ++i) {
    const double fy = y_min + (y_max - y_min) * i / n_ticks;
    const double py = detail::tx(fy, y_min, y_max, py0, py1);
    f << "<line x1='" << px0 - 5 << "' y1='" << py << "' x2='" << px0 << "' y2='" << py
      << "' stroke='#333'/>\n";
    const std::string label = plot.log_y ? ("1e" + detail::num(fy)) : detail::num(fy);
    f << "<text x='" << px0 - 8 << "' y='" << py + 4
      << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << label << "</text>\n";
  }
  f << "<text x='" << (px0 + px1) / 2 << "' y='" << h - 12
    << "' text-anchor='middle' font-size='12' font-family='sans-serif'>" << plot.x_label
    << "</text>\n";
  f << "<text x='18' y='" << (py0 + py1) / 2 << "' text-anchor='middle' font-size='12' "
    << "font-family='sans-serif' transform='rotate(-90 18 " << (py0 + py1) / 2 << ")'>"
    << plot.y_label << "</text>\n";

  // Series polylines and legend.
  double legend_y = py1 + 12;
  for (const auto& s : plot.series) {
    f << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1.5'";
    if (s.dashed) f << " stroke-dasharray='6 4'";
    f << " points='";
    bool pen_up = true;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      double yv = s.y[i];
      if (plot.log_y) {
        if (!(yv > 0.0)) {
          pen_up = true;
          continue;
        }
        yv = std::log10(yv);
      }
      if (!std::isfinite(yv)) {
        pen_up = true;
        continue;
      }
      (void)pen_up;
      pen_up = false;
      f << detail::tx(s.x[i], x_min, x_max, px0, px1) << ","
        << detail::tx(yv, y_min, y_max, py0, py1) << " ";
    }
    f << "'/>\n";
    f << "<line x1='" << px1 + 10 << "' y1='" << legend_y << "' x2='" << px1 + 34 << "' y2='"
      << legend_y << "' stroke='" << s.color << "' stroke-width='2'";
    if (s.dashed) f << " stroke-dasharray='6 4'";
    f << "/>\n";
    f << "<text x='" << px1 + 40 << "' y='" << legend_y + 4
      << "' font-size='11' font-family='sans-serif'>" << s.name << "</text>\n";
    legend_y += 18;
  }
  f << "</svg>\n";
}

}  // namespace svg
}  // namespace gpstep
