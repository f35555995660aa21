#include "mcpmix/boundary_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mcpmix/error.hpp"

namespace mcpmix {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double percent(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 100.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

void check_same(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw ShapeError("metrics: mask shapes differ");
}

// Lower envelope of parabolas (q - v)^2 + f(v) over the finite sites of f.
void squared_edt_1d(const std::vector<double>& f, std::vector<double>& out) {
  const std::size_t n = f.size();
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const double fq = f[q] + static_cast<double>(q * q);
    if (!any) {
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      any = true;
      continue;
    }
    const auto intersect = [&](std::size_t p) {
      return (fq - (f[p] + static_cast<double>(p * p))) /
             (2.0 * static_cast<double>(q) - 2.0 * static_cast<double>(p));
    };
    double s = intersect(v[k]);
    // z[0] is -inf, so this stops at k == 0 at the latest.
    while (s <= z[k]) s = intersect(v[--k]);
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (!any) {
    std::fill(out.begin(), out.end(), kInf);
    return;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double d = static_cast<double>(q) - static_cast<double>(v[k]);
    out[q] = d * d + f[v[k]];
  }
}

std::vector<double> directed(const BoundarySet& from, const DistanceField& to) {
  std::vector<double> out;
  out.reserve(from.size());
  for (const auto& p : from) out.push_back(to.at(static_cast<std::size_t>(p.row), static_cast<std::size_t>(p.col)));
  return out;
}

double mean(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

double diagonal(const BinaryMask& m) {
  return std::hypot(static_cast<double>(m.height()), static_cast<double>(m.width()));
}

double fraction_within(const std::vector<double>& d, double delta) {
  std::size_t hits = 0;
  for (double x : d) hits += x <= delta;
  return static_cast<double>(hits) / static_cast<double>(d.size());
}

}  // namespace

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt);
  ConfusionCounts c;
  const auto p = pred.data();
  const auto g = gt.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] && g[i]) ++c.tp;
    else if (p[i]) ++c.fp;
    else if (g[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

RegionMetrics region_metrics(const ConfusionCounts& fg, const ConfusionCounts& bg) {
  RegionMetrics m;
  const double iou_fg = ratio(fg.tp, fg.tp + fg.fp + fg.fn);
  const double iou_bg = ratio(bg.tp, bg.tp + bg.fp + bg.fn);
  m.miou = 100.0 * (iou_fg + iou_bg) / 2.0;
  m.pa = percent(fg.tp + fg.tn, fg.total());
  m.recall = percent(fg.tp, fg.tp + fg.fn);
  m.precision = percent(fg.tp, fg.tp + fg.fp);
  m.dsc = percent(2 * fg.tp, 2 * fg.tp + fg.fp + fg.fn);
  return m;
}

RegionMetrics region_metrics(const ConfusionCounts& fg) { return region_metrics(fg, fg.background_view()); }

BoundarySet boundary_extract(const BinaryMask& mask) {
  BoundarySet out;
  const std::size_t H = mask.height(), W = mask.width();
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      if (!mask.at(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y + 1 == H || x + 1 == W || !mask.at(y - 1, x) ||
                        !mask.at(y + 1, x) || !mask.at(y, x - 1) || !mask.at(y, x + 1);
      if (edge) out.push_back({static_cast<std::int32_t>(y), static_cast<std::int32_t>(x)});
    }
  }
  return out;
}

DistanceField distance_field(const BoundarySet& boundary, std::size_t height, std::size_t width) {
  if (boundary.empty()) throw DomainError("distance_field: boundary is empty");
  std::vector<double> grid(height * width, kInf);
  for (const auto& p : boundary) {
    if (p.row < 0 || p.col < 0 || static_cast<std::size_t>(p.row) >= height ||
        static_cast<std::size_t>(p.col) >= width) {
      throw DomainError("distance_field: boundary pixel outside the grid");
    }
    grid[static_cast<std::size_t>(p.row) * width + static_cast<std::size_t>(p.col)] = 0.0;
  }
  std::vector<double> f(height), out(height);
  for (std::size_t x = 0; x < width; ++x) {
    for (std::size_t y = 0; y < height; ++y) f[y] = grid[y * width + x];
    squared_edt_1d(f, out);
    for (std::size_t y = 0; y < height; ++y) grid[y * width + x] = out[y];
  }
  f.resize(width);
  out.resize(width);
  for (std::size_t y = 0; y < height; ++y) {
    std::copy_n(grid.begin() + static_cast<std::ptrdiff_t>(y * width), width, f.begin());
    squared_edt_1d(f, out);
    for (std::size_t x = 0; x < width; ++x) grid[y * width + x] = std::sqrt(out[x]);
  }
  return DistanceField{height, width, std::move(grid)};
}

double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw DomainError("percentile_linear: no values");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double hd95(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt);
  const auto bp = boundary_extract(pred);
  const auto bg = boundary_extract(gt);
  if (bp.empty() && bg.empty()) return 0.0;
  if (bp.empty() || bg.empty()) return diagonal(gt);
  auto pooled = directed(bg, distance_field(bp, pred.height(), pred.width()));
  const auto other = directed(bp, distance_field(bg, gt.height(), gt.width()));
  pooled.insert(pooled.end(), other.begin(), other.end());
  return percentile_linear(std::move(pooled), 0.95);
}

double assd(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt);
  const auto bp = boundary_extract(pred);
  const auto bg = boundary_extract(gt);
  if (bp.empty() && bg.empty()) return 0.0;
  if (bp.empty() || bg.empty()) return diagonal(gt);
  const auto gt_to_pred = directed(bg, distance_field(bp, pred.height(), pred.width()));
  const auto pred_to_gt = directed(bp, distance_field(bg, gt.height(), gt.width()));
  return 0.5 * (mean(gt_to_pred) + mean(pred_to_gt));
}

BoundaryPrf boundary_prf(const BinaryMask& pred, const BinaryMask& gt, double delta) {
  check_same(pred, gt);
  const auto bp = boundary_extract(pred);
  const auto bg = boundary_extract(gt);
  if (bp.empty() && bg.empty()) return {100.0, 100.0, 100.0};
  if (bp.empty() || bg.empty()) return {0.0, 0.0, 0.0};
  BoundaryPrf out;
  out.recall = 100.0 * fraction_within(directed(bg, distance_field(bp, pred.height(), pred.width())), delta);
  out.precision = 100.0 * fraction_within(directed(bp, distance_field(bg, gt.height(), gt.width())), delta);
  const double sum = out.precision + out.recall;
  out.f1 = sum > 0.0 ? 2.0 * out.precision * out.recall / sum : 0.0;
  return out;
}

double biou(const BinaryMask& pred, const BinaryMask& gt, double r) {
  check_same(pred, gt);
  if (!(r >= 0.0)) throw DomainError("biou: r must be non-negative");
  const auto bp = boundary_extract(pred);
  const auto bg = boundary_extract(gt);
  if (bp.empty() && bg.empty()) return 1.0;
  if (bp.empty() || bg.empty()) return 0.0;
  const auto fp = distance_field(bp, pred.height(), pred.width());
  const auto fg = distance_field(bg, gt.height(), gt.width());
  std::uint64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < fp.data.size(); ++i) {
    const bool a = fp.data[i] <= r;
    const bool b = fg.data[i] <= r;
    inter += a && b;
    uni += a || b;
  }
  return ratio(inter, uni);
}

MetricRow evaluate_pair(const BinaryMask& pred, const BinaryMask& gt) {
  MetricRow row;
  row.region = region_metrics(confusion(pred, gt));
  row.hd95 = hd95(pred, gt);
  row.assd = assd(pred, gt);
  row.at2 = boundary_prf(pred, gt, 2.0);
  row.at5 = boundary_prf(pred, gt, 5.0);
  row.at10 = boundary_prf(pred, gt, 10.0);
  row.biou2 = biou(pred, gt, 2.0);
  return row;
}

const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols = {
      "miou", "pa",   "recall", "precision", "dsc",   "hd95",  "assd",    "bp_2",  "br_2",
      "bf1_2", "bp_5", "br_5",  "bf1_5",     "bp_10", "br_10", "bf1_10", "biou_2"};
  return cols;
}

std::vector<double> metric_row_values(const MetricRow& r) {
  return {r.region.miou, r.region.pa, r.region.recall, r.region.precision, r.region.dsc,
          r.hd95,        r.assd,      r.at2.precision, r.at2.recall,       r.at2.f1,
          r.at5.precision, r.at5.recall, r.at5.f1,     r.at10.precision,   r.at10.recall,
          r.at10.f1,     r.biou2};
}

MetricRow mean_row(const std::vector<MetricRow>& rows) {
  if (rows.empty()) throw DomainError("mean_row: no rows");
  std::vector<double> acc(metric_columns().size(), 0.0);
  for (const auto& r : rows) {
    const auto v = metric_row_values(r);
    for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
  }
  for (auto& a : acc) a /= static_cast<double>(rows.size());
  MetricRow m;
  m.region = {acc[0], acc[1], acc[2], acc[3], acc[4]};
  m.hd95 = acc[5];
  m.assd = acc[6];
  m.at2 = {acc[7], acc[8], acc[9]};
  m.at5 = {acc[10], acc[11], acc[12]};
  m.at10 = {acc[13], acc[14], acc[15]};
  m.biou2 = acc[16];
  return m;
}

}  // namespace mcpmix
