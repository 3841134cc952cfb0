#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "unit/metrics_log.hpp"

namespace unit {

struct CurveSeries {
  std::string task;
  std::string metric;
  std::vector<std::pair<double, double>> points;  // (iteration, value) in log order
};

/// Validation series grouped by (task, metric), in order of first appearance.
inline std::vector<CurveSeries> validation_series(const std::vector<MetricRecord>& records) {
  std::vector<CurveSeries> out;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  for (const auto& r : records) {
    if (r.split != "val") continue;
    auto key = std::make_pair(r.task, r.metric_name);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, out.size()).first;
      out.push_back({r.task, r.metric_name, {}});
    }
    out[it->second].points.emplace_back(static_cast<double>(r.iteration), r.value);
  }
  return out;
}

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
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

}  // namespace detail

/// Self-contained SVG, one panel per (task, metric): validation value against
/// iteration as a polyline with one vertex per evaluation.
inline std::string learning_curves_svg(const std::vector<MetricRecord>& records) {
  const auto series = validation_series(records);
  if (series.empty()) throw std::invalid_argument("learning curves: log has no validation records");
  constexpr double pw = 320, ph = 220, ml = 50, mr = 15, mt = 30, mb = 40;
  constexpr std::size_t columns = 2;
  const std::size_t rows = (series.size() + columns - 1) / columns;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::fmt(pw * columns) << "\" height=\""
     << detail::fmt(ph * static_cast<double>(rows)) << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& cs = series[s];
    const double ox = pw * static_cast<double>(s % columns), oy = ph * static_cast<double>(s / columns);
    double x0 = cs.points.front().first, x1 = x0, y0 = cs.points.front().second, y1 = y0;
    for (const auto& [x, y] : cs.points) {
      x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
    y0 = std::min(y0, 0.0);
    if (y1 <= y0) y1 = y0 + 1;
    if (x1 <= x0) x1 = x0 + 1;
    const double left = ox + ml, right = ox + pw - mr, top = oy + mt, bottom = oy + ph - mb;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (right - left); };
    auto py = [&](double y) { return bottom - (y - y0) / (y1 - y0) * (bottom - top); };
    os << "<g>\n";
    os << "<text x=\"" << detail::fmt(ox + pw / 2) << "\" y=\"" << detail::fmt(oy + 18)
       << "\" text-anchor=\"middle\" font-size=\"12\">" << detail::xml_escape(cs.task + " " + cs.metric) << "</text>\n";
    os << "<line x1=\"" << detail::fmt(left) << "\" y1=\"" << detail::fmt(bottom) << "\" x2=\"" << detail::fmt(right)
       << "\" y2=\"" << detail::fmt(bottom) << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << detail::fmt(left) << "\" y1=\"" << detail::fmt(top) << "\" x2=\"" << detail::fmt(left)
       << "\" y2=\"" << detail::fmt(bottom) << "\" stroke=\"black\"/>\n";
    for (double v : {y0, y1})
      os << "<text x=\"" << detail::fmt(left - 4) << "\" y=\"" << detail::fmt(py(v) + 3) << "\" text-anchor=\"end\">"
         << detail::fmt_tick(v) << "</text>\n";
    for (double v : {x0, x1})
      os << "<text x=\"" << detail::fmt(px(v)) << "\" y=\"" << detail::fmt(bottom + 12) << "\" text-anchor=\"middle\">"
         << detail::fmt_tick(v) << "</text>\n";
    os << "<text x=\"" << detail::fmt((left + right) / 2) << "\" y=\"" << detail::fmt(bottom + 28)
       << "\" text-anchor=\"middle\">iteration</text>\n";
    os << "<text x=\"" << detail::fmt(ox + 12) << "\" y=\"" << detail::fmt((top + bottom) / 2)
       << "\" text-anchor=\"middle\" transform=\"rotate(-90 " << detail::fmt(ox + 12) << ' '
       << detail::fmt((top + bottom) / 2) << ")\">" << detail::xml_escape(cs.metric) << "</text>\n";
    os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < cs.points.size(); ++i)
      os << (i ? " " : "") << detail::fmt(px(cs.points[i].first)) << ',' << detail::fmt(py(cs.points[i].second));
    os << "\"/>\n</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace unit
