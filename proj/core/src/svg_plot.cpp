#include "mcpmix/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "mcpmix/error.hpp"

namespace mcpmix {

namespace {

constexpr double kLeft = 70.0, kRight = 150.0, kTop = 40.0, kBottom = 50.0;

std::string escape(const std::string& s) {
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

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void settle() {
    if (lo > hi) {
      lo = 0.0;
      hi = 1.0;
    } else if (lo == hi) {
      const double pad = lo == 0.0 ? 1.0 : std::abs(lo) * 0.5;
      lo -= pad;
      hi += pad;
    }
  }
};

}  // namespace

std::string render_line_chart(const LineChart& chart) {
  Range xr, yr;
  for (const auto& s : chart.series) {
    if (s.x.size() != s.y.size()) throw DomainError("render_line_chart: x and y lengths differ");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xr.add(s.x[i]);
      yr.add(s.y[i]);
    }
  }
  xr.settle();
  yr.settle();

  const double w = chart.width, h = chart.height;
  const double pw = w - kLeft - kRight, ph = h - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - yr.lo) / (yr.hi - yr.lo)) * ph; };

  std::string out;
  out += fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
      chart.width, chart.height, chart.width, chart.height);
  out += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", chart.width, chart.height);
  out += fmt::format("<text x=\"{:.2f}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                     "font-size=\"15\">{}</text>\n",
                     kLeft + pw / 2.0, escape(chart.title));
  out += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"none\" "
                     "stroke=\"#444\"/>\n",
                     kLeft, kTop, pw, ph);

  for (int k = 0; k <= 4; ++k) {
    const double fx = xr.lo + (xr.hi - xr.lo) * k / 4.0;
    const double fy = yr.lo + (yr.hi - yr.lo) * k / 4.0;
    out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                       "font-size=\"11\">{:.4g}</text>\n",
                       px(fx), kTop + ph + 16.0, fx);
    out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\" font-family=\"sans-serif\" "
                       "font-size=\"11\">{:.4g}</text>\n",
                       kLeft - 6.0, py(fy) + 4.0, fy);
    out += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#ddd\"/>\n",
                       kLeft, py(fy), kLeft + pw, py(fy));
  }
  out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                     "font-size=\"12\">{}</text>\n",
                     kLeft + pw / 2.0, h - 12.0, escape(chart.x_label));
  out += fmt::format("<text x=\"16\" y=\"{:.2f}\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                     "font-size=\"12\" transform=\"rotate(-90 16 {:.2f})\">{}</text>\n",
                     kTop + ph / 2.0, kTop + ph / 2.0, escape(chart.y_label));

  for (std::size_t si = 0; si < chart.series.size(); ++si) {
    const auto& s = chart.series[si];
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!points.empty()) points += ' ';
      points += fmt::format("{:.2f},{:.2f}", px(s.x[i]), py(s.y[i]));
    }
    out += fmt::format("<polyline class=\"series\" data-name=\"{}\" fill=\"none\" stroke=\"{}\" "
                       "stroke-width=\"1.5\"{} points=\"{}\"/>\n",
                       escape(s.name), escape(s.color), s.dashed ? " stroke-dasharray=\"6 4\"" : "", points);
    const double ly = kTop + 14.0 + 18.0 * static_cast<double>(si);
    out += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"{}\" "
                       "stroke-width=\"1.5\"{}/>\n",
                       kLeft + pw + 10.0, ly, kLeft + pw + 34.0, ly, escape(s.color),
                       s.dashed ? " stroke-dasharray=\"6 4\"" : "");
    out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
                       kLeft + pw + 40.0, ly + 4.0, escape(s.name));
  }
  out += "</svg>\n";
  return out;
}

}  // namespace mcpmix
