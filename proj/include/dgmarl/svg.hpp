#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dgmarl/errors.hpp"

namespace dgmarl::svg {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct ChartOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  bool log_y = false;
  int width = 720;
  int height = 450;
  /// Emitted verbatim as XML comments after the chart body.
  std::vector<std::string> footer;
};

/// Trailing moving average over `window` points (window 1 is the identity);
/// non-finite values are skipped inside each window.
inline std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
  if (window == 0) throw ConfigError("smoothing window must be positive");
  std::vector<double> out(v.size(), std::nan(""));
  for (std::size_t k = 0; k < v.size(); ++k) {
    double s = 0.0;
    std::size_t cnt = 0;
    for (std::size_t j = k + 1 > window ? k + 1 - window : 0; j <= k; ++j) {
      if (std::isfinite(v[j])) {
        s += v[j];
        ++cnt;
      }
    }
    if (cnt) out[k] = s / static_cast<double>(cnt);
  }
  return out;
}

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

/// Comments may not contain "--".
inline std::string comment_safe(std::string s) {
  std::size_t p;
  while ((p = s.find("--")) != std::string::npos) s.replace(p, 2, "- -");
  return s;
}

struct Axis {
  double lo = 0.0, hi = 1.0;
  bool log = false;
  std::vector<double> ticks;

  double t(double v) const { return log ? std::log10(v) : v; }
  double frac(double v) const { return (t(v) - t(lo)) / (t(hi) - t(lo)); }
};

inline Axis make_axis(double lo, double hi, bool log) {
  Axis a;
  a.log = log;
  if (log) {
    double e0 = std::floor(std::log10(lo)), e1 = std::ceil(std::log10(hi));
    if (e1 <= e0) e1 = e0 + 1;
    a.lo = std::pow(10.0, e0);
    a.hi = std::pow(10.0, e1);
    for (double e = e0; e <= e1; e += 1.0) a.ticks.push_back(std::pow(10.0, e));
    return a;
  }
  if (hi <= lo) {
    const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
    lo -= pad;
    hi += pad;
  }
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  a.lo = std::floor(lo / step) * step;
  a.hi = std::ceil(hi / step) * step;
  for (double v = a.lo; v <= a.hi + step * 1e-9; v += step) a.ticks.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
  return a;
}

}  // namespace detail

/// Line chart with axes, ticks and a legend. Points that are non-finite (or
/// non-positive on a log axis) are dropped. Output depends only on inputs.
inline std::string line_chart(const std::vector<Series>& series, const ChartOptions& opt) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  auto usable = [&](double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return false;
    if (opt.log_x && x <= 0.0) return false;
    if (opt.log_y && y <= 0.0) return false;
    return true;
  };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ConfigError("series '" + s.name + "': x and y differ in length");
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (!usable(s.x[k], s.y[k])) continue;
      x0 = std::min(x0, s.x[k]);
      x1 = std::max(x1, s.x[k]);
      y0 = std::min(y0, s.y[k]);
      y1 = std::max(y1, s.y[k]);
    }
  }
  if (!std::isfinite(x0)) {
    x0 = opt.log_x ? 1.0 : 0.0;
    x1 = opt.log_x ? 10.0 : 1.0;
    y0 = opt.log_y ? 1.0 : 0.0;
    y1 = opt.log_y ? 10.0 : 1.0;
  }
  const detail::Axis ax = detail::make_axis(x0, x1, opt.log_x);
  const detail::Axis ay = detail::make_axis(y0, y1, opt.log_y);

  const double left = 70, right = 170, top = 40, bottom = 55;
  const double pw = opt.width - left - right, ph = opt.height - top - bottom;
  auto px = [&](double x) { return left + ax.frac(x) * pw; };
  auto py = [&](double y) { return top + (1.0 - ay.frac(y)) * ph; };

  using detail::fmt;
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\"" << opt.height
     << "\" viewBox=\"0 0 " << opt.width << " " << opt.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << opt.width << "\" height=\"" << opt.height << "\" fill=\"white\"/>\n";
  if (!opt.title.empty()) {
    os << "<text x=\"" << fmt(left + pw / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
       << detail::escape(opt.title) << "</text>\n";
  }
  os << "<g stroke=\"#dddddd\" stroke-width=\"1\">\n";
  for (double t : ax.ticks) os << "<line x1=\"" << fmt(px(t)) << "\" y1=\"" << fmt(top) << "\" x2=\"" << fmt(px(t)) << "\" y2=\"" << fmt(top + ph) << "\"/>\n";
  for (double t : ay.ticks) os << "<line x1=\"" << fmt(left) << "\" y1=\"" << fmt(py(t)) << "\" x2=\"" << fmt(left + pw) << "\" y2=\"" << fmt(py(t)) << "\"/>\n";
  os << "</g>\n";
  os << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(top) << "\" width=\"" << fmt(pw) << "\" height=\"" << fmt(ph)
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : ax.ticks) {
    os << "<text x=\"" << fmt(px(t)) << "\" y=\"" << fmt(top + ph + 18) << "\" text-anchor=\"middle\">"
       << detail::label(t) << "</text>\n";
  }
  for (double t : ay.ticks) {
    os << "<text x=\"" << fmt(left - 6) << "\" y=\"" << fmt(py(t) + 4) << "\" text-anchor=\"end\">" << detail::label(t)
       << "</text>\n";
  }
  if (!opt.x_label.empty()) {
    os << "<text x=\"" << fmt(left + pw / 2) << "\" y=\"" << fmt(opt.height - 12.0) << "\" text-anchor=\"middle\">"
       << detail::escape(opt.x_label) << "</text>\n";
  }
  if (!opt.y_label.empty()) {
    os << "<text x=\"16\" y=\"" << fmt(top + ph / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
       << fmt(top + ph / 2) << ")\">" << detail::escape(opt.y_label) << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = palette[s % (sizeof palette / sizeof *palette)];
    std::vector<std::pair<double, double>> pts;
    for (std::size_t k = 0; k < series[s].x.size(); ++k)
      if (usable(series[s].x[k], series[s].y[k])) pts.emplace_back(px(series[s].x[k]), py(series[s].y[k]));
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < pts.size(); ++k) os << (k ? " " : "") << fmt(pts[k].first) << "," << fmt(pts[k].second);
    os << "\"/>\n";
    if (pts.size() == 1) {
      os << "<circle cx=\"" << fmt(pts[0].first) << "\" cy=\"" << fmt(pts[0].second) << "\" r=\"3\" fill=\"" << color
         << "\"/>\n";
    }
    const double ly = top + 10 + 18.0 * static_cast<double>(s);
    os << "<line x1=\"" << fmt(left + pw + 12) << "\" y1=\"" << fmt(ly) << "\" x2=\"" << fmt(left + pw + 32)
       << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << fmt(left + pw + 38) << "\" y=\"" << fmt(ly + 4) << "\">" << detail::escape(series[s].name)
       << "</text>\n";
  }
  for (const auto& f : opt.footer) os << "<!-- " << detail::comment_safe(f) << " -->\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace dgmarl::svg
