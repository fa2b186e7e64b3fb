#pragma once

// Standalone SVG rendering of 1-D results: ground-truth polyline, observation
// markers, ensemble-mean polyline, and the shaded central 95% band. Output
// bytes are a pure function of the inputs.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cbc/density.hpp"
#include "cbc/process.hpp"

namespace cbc {

namespace detail {

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace detail

inline void emit_svg_plot(const Trajectory& truth, const ObservationSet& obs,
                          const EnsembleSummary& summary, const std::string& path) {
  if (!std::holds_alternative<Grid1D>(truth.domain)) {
    throw std::invalid_argument("emit_svg_plot: only 1-D trajectories can be plotted");
  }
  const auto& grid = std::get<Grid1D>(truth.domain);
  if (grid.n < 2) throw std::invalid_argument("emit_svg_plot: need at least 2 points");
  if (summary.mean.empty()) throw std::invalid_argument("emit_svg_plot: summary is empty");
  if (summary.mean.size() != truth.values.size()) {
    throw std::invalid_argument("emit_svg_plot: summary covers " +
                                std::to_string(summary.mean.size()) + " indices but the truth has " +
                                std::to_string(truth.values.size()));
  }
  if (obs.domain_size != grid.n) {
    throw std::invalid_argument("emit_svg_plot: observation domain size " +
                                std::to_string(obs.domain_size) + " does not match grid size " +
                                std::to_string(grid.n));
  }

  constexpr double width = 900.0, height = 480.0;
  constexpr double ml = 70.0, mr = 20.0, mt = 20.0, mb = 50.0;
  const double plot_w = width - ml - mr;
  const double plot_h = height - mt - mb;

  double y_lo = truth.values[0], y_hi = truth.values[0];
  auto widen = [&](double v) {
    y_lo = std::min(y_lo, v);
    y_hi = std::max(y_hi, v);
  };
  for (double v : truth.values) widen(v);
  for (double v : summary.q025) widen(v);
  for (double v : summary.q975) widen(v);
  for (const auto& e : obs.entries) widen(e.value);
  const double pad = (y_hi - y_lo) > 0.0 ? 0.05 * (y_hi - y_lo) : 1.0;
  y_lo -= pad;
  y_hi += pad;

  const double x_lo = grid.x_min, x_hi = grid.x_max;
  auto px = [&](double x) { return ml + (x - x_lo) / (x_hi - x_lo) * plot_w; };
  auto py = [&](double y) { return mt + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h; };

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("emit_svg_plot: cannot open " + path + " for writing");

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"#ffffff\"/>\n";

  // Central 95% band: q975 forward, q025 back, closed.
  out << "<path class=\"band\" fill=\"#4682b4\" fill-opacity=\"0.3\" stroke=\"none\" d=\"";
  for (int i = 0; i < grid.n; ++i) {
    out << (i == 0 ? 'M' : 'L') << detail::svg_num(px(grid.position(i))) << ','
        << detail::svg_num(py(summary.q975[static_cast<std::size_t>(i)]));
  }
  for (int i = grid.n - 1; i >= 0; --i) {
    out << 'L' << detail::svg_num(px(grid.position(i))) << ','
        << detail::svg_num(py(summary.q025[static_cast<std::size_t>(i)]));
  }
  out << "Z\"/>\n";

  out << "<polyline class=\"mean\" fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1.5\" points=\"";
  for (int i = 0; i < grid.n; ++i) {
    out << detail::svg_num(px(grid.position(i))) << ','
        << detail::svg_num(py(summary.mean[static_cast<std::size_t>(i)])) << ' ';
  }
  out << "\"/>\n";

  out << "<polyline class=\"truth\" fill=\"none\" stroke=\"#222222\" stroke-width=\"1.2\" points=\"";
  for (int i = 0; i < grid.n; ++i) {
    out << detail::svg_num(px(grid.position(i))) << ','
        << detail::svg_num(py(truth.values[static_cast<std::size_t>(i)])) << ' ';
  }
  out << "\"/>\n";

  for (const auto& e : obs.entries) {
    out << "<circle class=\"obs\" cx=\"" << detail::svg_num(px(grid.position(e.index))) << "\" cy=\""
        << detail::svg_num(py(e.value)) << "\" r=\"3\" fill=\"#cc2222\"/>\n";
  }

  // Axes with five ticks each.
  out << "<line x1=\"" << detail::svg_num(ml) << "\" y1=\"" << detail::svg_num(mt + plot_h)
      << "\" x2=\"" << detail::svg_num(ml + plot_w) << "\" y2=\"" << detail::svg_num(mt + plot_h)
      << "\" stroke=\"#000000\"/>\n";
  out << "<line x1=\"" << detail::svg_num(ml) << "\" y1=\"" << detail::svg_num(mt) << "\" x2=\""
      << detail::svg_num(ml) << "\" y2=\"" << detail::svg_num(mt + plot_h)
      << "\" stroke=\"#000000\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x_lo + (x_hi - x_lo) * k / 4.0;
    const double fy = y_lo + (y_hi - y_lo) * k / 4.0;
    out << "<line x1=\"" << detail::svg_num(px(fx)) << "\" y1=\"" << detail::svg_num(mt + plot_h)
        << "\" x2=\"" << detail::svg_num(px(fx)) << "\" y2=\"" << detail::svg_num(mt + plot_h + 5)
        << "\" stroke=\"#000000\"/>\n";
    out << "<text x=\"" << detail::svg_num(px(fx)) << "\" y=\"" << detail::svg_num(mt + plot_h + 18)
        << "\" font-size=\"11\" text-anchor=\"middle\">" << detail::tick_label(fx) << "</text>\n";
    out << "<line x1=\"" << detail::svg_num(ml - 5) << "\" y1=\"" << detail::svg_num(py(fy))
        << "\" x2=\"" << detail::svg_num(ml) << "\" y2=\"" << detail::svg_num(py(fy))
        << "\" stroke=\"#000000\"/>\n";
    out << "<text x=\"" << detail::svg_num(ml - 8) << "\" y=\"" << detail::svg_num(py(fy) + 4)
        << "\" font-size=\"11\" text-anchor=\"end\">" << detail::tick_label(fy) << "</text>\n";
  }
  out << "<text x=\"" << detail::svg_num(ml + plot_w / 2) << "\" y=\""
      << detail::svg_num(height - 12) << "\" font-size=\"13\" text-anchor=\"middle\">x</text>\n";
  out << "<text x=\"16\" y=\"" << detail::svg_num(mt + plot_h / 2)
      << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << detail::svg_num(mt + plot_h / 2) << ")\">value</text>\n";
  out << "</svg>\n";
  if (!out) throw std::runtime_error("emit_svg_plot: write to " + path + " failed");
}

}  // namespace cbc
