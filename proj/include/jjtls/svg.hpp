#pragma once
// Minimal deterministic SVG charts: lines, markers, steps and horizontal bars.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace jjtls::svg {

enum class Style { Line, Markers, Steps, Bars };

struct Series {
  std::vector<double> x, y;
  std::string label;
  std::string color = "#1f77b4";
  Style style = Style::Line;
};

struct Plot {
  std::string title, xlabel, ylabel;
  std::vector<Series> series;
  std::vector<std::pair<double, std::string>> hlines;  // value, label
  std::vector<std::string> category_labels;            // Bars: one per x index
  double width = 640, height = 400;
};

namespace detail {

inline std::string f(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.2f", v);
  return b;
}

inline std::string tick(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.4g", v);
  return b;
}

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

}  // namespace detail

inline std::string render(const Plot& p) {
  using detail::f;
  const double ml = 70, mr = 20, mt = 36, mb = 50;
  const double W = p.width - ml - mr, H = p.height - mt - mb;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : p.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  for (const auto& h : p.hlines) {
    y0 = std::min(y0, h.first);
    y1 = std::max(y1, h.first);
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1;
  if (!(y0 <= y1)) y0 = 0, y1 = 1;
  bool bars = false;
  for (const auto& s : p.series) bars = bars || s.style == Style::Bars;
  if (bars) {
    y0 = std::min(y0, 0.0);
    x0 -= 0.5;
    x1 += 0.5;
  }
  if (x1 == x0) x0 -= 0.5, x1 += 0.5;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= bars ? 0 : pad;
  y1 += pad;
  auto X = [&](double v) { return ml + (v - x0) / (x1 - x0) * W; };
  auto Y = [&](double v) { return mt + (y1 - v) / (y1 - y0) * H; };

  std::string o;
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + f(p.width) + "\" height=\"" +
       f(p.height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + f(p.width / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
       detail::escape(p.title) + "</text>\n";
  o += "<rect x=\"" + f(ml) + "\" y=\"" + f(mt) + "\" width=\"" + f(W) + "\" height=\"" + f(H) +
       "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0;
    o += "<text x=\"" + f(ml - 6) + "\" y=\"" + f(Y(yv) + 4) + "\" text-anchor=\"end\">" +
         detail::tick(yv) + "</text>\n";
    if (!bars || p.category_labels.empty()) {
      const double xv = x0 + (x1 - x0) * i / 4.0;
      o += "<text x=\"" + f(X(xv)) + "\" y=\"" + f(mt + H + 16) + "\" text-anchor=\"middle\">" +
           detail::tick(xv) + "</text>\n";
    }
  }
  for (std::size_t i = 0; i < p.category_labels.size(); ++i)
    o += "<text x=\"" + f(X(static_cast<double>(i))) + "\" y=\"" + f(mt + H + 16) +
         "\" text-anchor=\"middle\">" + detail::escape(p.category_labels[i]) + "</text>\n";
  o += "<text x=\"" + f(ml + W / 2) + "\" y=\"" + f(p.height - 10) + "\" text-anchor=\"middle\">" +
       detail::escape(p.xlabel) + "</text>\n";
  o += "<text transform=\"translate(16," + f(mt + H / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">" + detail::escape(p.ylabel) + "</text>\n";

  for (const auto& h : p.hlines) {
    o += "<line x1=\"" + f(ml) + "\" x2=\"" + f(ml + W) + "\" y1=\"" + f(Y(h.first)) + "\" y2=\"" +
         f(Y(h.first)) + "\" stroke=\"#d62728\" stroke-dasharray=\"5,4\"/>\n";
    o += "<text x=\"" + f(ml + W - 4) + "\" y=\"" + f(Y(h.first) - 4) +
         "\" text-anchor=\"end\" fill=\"#d62728\">" + detail::escape(h.second) + "</text>\n";
  }

  double legend_y = mt + 14;
  for (const auto& s : p.series) {
    const std::size_t n = std::min(s.x.size(), s.y.size());
    if (s.style == Style::Line || s.style == Style::Steps) {
      std::string pts;
      for (std::size_t i = 0; i < n; ++i) {
        if (s.style == Style::Steps && i > 0) pts += f(X(s.x[i])) + "," + f(Y(s.y[i - 1])) + " ";
        pts += f(X(s.x[i])) + "," + f(Y(s.y[i])) + " ";
      }
      o += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\" points=\"" + pts +
           "\"/>\n";
    } else if (s.style == Style::Markers) {
      for (std::size_t i = 0; i < n; ++i)
        o += "<circle cx=\"" + f(X(s.x[i])) + "\" cy=\"" + f(Y(s.y[i])) + "\" r=\"3\" fill=\"" +
             s.color + "\"/>\n";
    } else {
      const double bw = 0.6 * W / (x1 - x0);
      for (std::size_t i = 0; i < n; ++i) {
        const double top = Y(std::max(s.y[i], 0.0)), base = Y(std::min(s.y[i], 0.0));
        o += "<rect x=\"" + f(X(s.x[i]) - bw / 2) + "\" y=\"" + f(top) + "\" width=\"" + f(bw) +
             "\" height=\"" + f(base - top) + "\" fill=\"" + s.color + "\"/>\n";
      }
    }
    if (!s.label.empty()) {
      o += "<text x=\"" + f(ml + 10) + "\" y=\"" + f(legend_y) + "\" fill=\"" + s.color + "\">" +
           detail::escape(s.label) + "</text>\n";
      legend_y += 14;
    }
  }
  o += "</svg>\n";
  return o;
}

}  // namespace jjtls::svg
