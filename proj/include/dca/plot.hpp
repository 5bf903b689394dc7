#pragma once

// Minimal SVG emitters: latent scatter with trajectory overlays, and box
// plots of minimum crossing times.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <limits>
#include <string>
#include <vector>

#include "dca/barrier.hpp"
#include "dca/sde.hpp"
#include "dca/synthdata.hpp"

namespace dca {

struct SvgOptions {
  std::string title;
  std::string provenance;     // emitted as a comment
  bool deterministic = false;  // suppress the timestamp comment line
  int width = 640;
  int height = 640;
};

namespace detail {

inline const char* class_color(int k) {
  static const char* palette[] = {"#1f77b4", "#2ca02c", "#ff7f0e", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[static_cast<std::size_t>(k) % 10];
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string svg_header(const SvgOptions& o) {
  std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  if (!o.deterministic) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[64];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    s += std::string("<!-- generated ") + buf + " -->\n";
  }
  if (!o.provenance.empty()) s += "<!-- " + o.provenance + " -->\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(o.width) + "\" height=\"" +
       std::to_string(o.height) + "\" viewBox=\"0 0 " + std::to_string(o.width) + " " + std::to_string(o.height) +
       "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!o.title.empty())
    s += "<text x=\"" + std::to_string(o.width / 2) + "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"14\">" + o.title + "</text>\n";
  return s;
}

struct Frame {
  double x0, x1, y0, y1;
  double left = 50, right = 20, top = 35, bottom = 40;
  int width, height;
  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

}  // namespace detail

// Scatter of the first two coordinates, coloured by label, with trajectory
// polylines drawn on top.
inline std::string svg_latent_scatter(const Dataset& data, const std::vector<Trajectory>& trajectories,
                                      const SvgOptions& opt) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  auto extend = [&](const Vec& z) {
    x0 = std::min(x0, z[0]);
    x1 = std::max(x1, z[0]);
    y0 = std::min(y0, z[1]);
    y1 = std::max(y1, z[1]);
  };
  for (const auto& p : data.points) extend(p.z);
  for (const auto& t : trajectories)
    for (const auto& s : t.states) extend(s.z);
  if (!(x1 > x0)) x0 -= 1, x1 += 1;
  if (!(y1 > y0)) y0 -= 1, y1 += 1;
  const double mx = 0.05 * (x1 - x0), my = 0.05 * (y1 - y0);
  detail::Frame f{x0 - mx, x1 + mx, y0 - my, y1 + my};
  f.width = opt.width;
  f.height = opt.height;

  std::string s = detail::svg_header(opt);
  s += "<g fill-opacity=\"0.35\">\n";
  for (const auto& p : data.points)
    s += "<circle cx=\"" + detail::fmt(f.px(p.z[0])) + "\" cy=\"" + detail::fmt(f.py(p.z[1])) + "\" r=\"2\" fill=\"" +
         detail::class_color(p.label) + "\"/>\n";
  s += "</g>\n";
  for (const auto& t : trajectories) {
    s += "<polyline fill=\"none\" stroke=\"" + std::string(detail::class_color(t.y_prime)) +
         "\" stroke-width=\"1.2\" points=\"";
    for (const auto& st : t.states) s += detail::fmt(f.px(st.z[0])) + "," + detail::fmt(f.py(st.z[1])) + " ";
    s += "\"/>\n";
    if (t.states.empty()) continue;
    s += "<circle cx=\"" + detail::fmt(f.px(t.states.front().z[0])) + "\" cy=\"" +
         detail::fmt(f.py(t.states.front().z[1])) + "\" r=\"4\" fill=\"black\"/>\n";
  }
  s += "</svg>\n";
  return s;
}

// One box per direction in `stats` (q1..q3 box, median line, whiskers at
// mean +- std clipped to zero).
inline std::string svg_barrier_boxplot(const std::vector<PairStats>& stats, const SvgOptions& opt) {
  double ymax = 0.0;
  for (const auto& p : stats) ymax = std::max({ymax, p.q3, p.mean + p.std});
  if (ymax <= 0.0) ymax = 1.0;
  detail::Frame f{0.0, static_cast<double>(std::max<std::size_t>(stats.size(), 1)), 0.0, ymax * 1.1};
  f.width = opt.width;
  f.height = opt.height;
  std::string s = detail::svg_header(opt);
  s += "<line x1=\"" + detail::fmt(f.left) + "\" y1=\"" + detail::fmt(f.py(0)) + "\" x2=\"" +
       detail::fmt(f.width - f.right) + "\" y2=\"" + detail::fmt(f.py(0)) + "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const auto& p = stats[i];
    const double cx = f.px(static_cast<double>(i) + 0.5);
    const double half = 0.3 * (f.px(1.0) - f.px(0.0));
    const double lo = std::max(0.0, p.mean - p.std), hi = p.mean + p.std;
    s += "<line x1=\"" + detail::fmt(cx) + "\" y1=\"" + detail::fmt(f.py(lo)) + "\" x2=\"" + detail::fmt(cx) +
         "\" y2=\"" + detail::fmt(f.py(hi)) + "\" stroke=\"black\"/>\n";
    s += "<rect x=\"" + detail::fmt(cx - half) + "\" y=\"" + detail::fmt(f.py(p.q3)) + "\" width=\"" +
         detail::fmt(2 * half) + "\" height=\"" + detail::fmt(f.py(p.q1) - f.py(p.q3)) + "\" fill=\"" +
         detail::class_color(p.y_prime) + "\" fill-opacity=\"0.5\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + detail::fmt(cx - half) + "\" y1=\"" + detail::fmt(f.py(p.median)) + "\" x2=\"" +
         detail::fmt(cx + half) + "\" y2=\"" + detail::fmt(f.py(p.median)) + "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + detail::fmt(cx) + "\" y=\"" + detail::fmt(f.height - 15.0) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + std::to_string(p.y) + "&#8594;" +
         std::to_string(p.y_prime) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace dca
