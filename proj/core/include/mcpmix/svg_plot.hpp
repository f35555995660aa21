#pragma once

#include <string>
#include <vector>

namespace mcpmix {

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool dashed = false;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<PlotSeries> series;
  int width = 640;
  int height = 400;
};

/// Self-contained SVG document. Output depends only on the chart, so equal
/// inputs give equal bytes. Non-finite points are skipped. A constant series
/// is drawn as a flat line in the middle of a padded range.
/// Throws DomainError when a series has mismatched x/y lengths.
std::string render_line_chart(const LineChart& chart);

}  // namespace mcpmix
