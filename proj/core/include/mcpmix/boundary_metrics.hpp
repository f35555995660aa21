#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mcpmix/tensor.hpp"

namespace mcpmix {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
  /// Same counts with background taken as the positive class.
  ConfusionCounts background_view() const noexcept { return {tn, fn, fp, tp}; }

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Region scores, all in percent. An empty denominator (0/0) scores 100:
/// nothing to find and nothing falsely found.
struct RegionMetrics {
  double miou = 0.0;
  double pa = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double dsc = 0.0;
};

struct Pixel {
  std::int32_t row = 0;
  std::int32_t col = 0;

  friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Inner boundary pixels in row-major order.
using BoundarySet = std::vector<Pixel>;

/// H x W Euclidean distances (px) to the nearest boundary pixel.
struct DistanceField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  double at(std::size_t row, std::size_t col) const { return data[row * width + col]; }
};

struct BoundaryPrf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt);

/// mIoU averages the foreground IoU (from fg) and background IoU (from bg).
RegionMetrics region_metrics(const ConfusionCounts& fg, const ConfusionCounts& bg);
RegionMetrics region_metrics(const ConfusionCounts& fg);

/// Foreground pixels with at least one 4-neighbour that is background or
/// lies outside the image.
BoundarySet boundary_extract(const BinaryMask& mask);

/// Exact Euclidean distance transform (separable squared-distance lower
/// envelope). Throws DomainError for an empty boundary.
DistanceField distance_field(const BoundarySet& boundary, std::size_t height, std::size_t width);

/// Linear interpolation between order statistics at rank q * (n - 1).
double percentile_linear(std::vector<double> values, double q);

// Distance-based metrics. Sentinels: if exactly one mask is empty, hd95 and
// assd return the image diagonal and the boundary scores are 0; if both are
// empty, hd95/assd return 0 and the boundary scores are perfect.

double hd95(const BinaryMask& pred, const BinaryMask& gt);
double assd(const BinaryMask& pred, const BinaryMask& gt);
/// B-P, B-R and B-F1 in percent at tolerance delta (px).
BoundaryPrf boundary_prf(const BinaryMask& pred, const BinaryMask& gt, double delta);
/// IoU of the bands {p : d(p, boundary) <= r}, in [0,1].
double biou(const BinaryMask& pred, const BinaryMask& gt, double r = 2.0);

/// One evaluation row: region metrics plus the boundary battery.
struct MetricRow {
  RegionMetrics region;
  double hd95 = 0.0;
  double assd = 0.0;
  BoundaryPrf at2, at5, at10;
  double biou2 = 0.0;
};

MetricRow evaluate_pair(const BinaryMask& pred, const BinaryMask& gt);

/// Element-wise mean in index order.
MetricRow mean_row(const std::vector<MetricRow>& rows);

/// CSV column names, in the order written by metric_row_values().
const std::vector<std::string>& metric_columns();
std::vector<double> metric_row_values(const MetricRow& row);

}  // namespace mcpmix
