#pragma once

// Brute-force reference for the metric battery: direct enumeration over
// pixels and boundary pairs, sharing no code with the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "mcpmix/rng.hpp"
#include "mcpmix/tensor.hpp"

namespace mcpmix::testing {

inline std::uint8_t get(const BinaryMask& m, long y, long x) {
  if (y < 0 || x < 0 || y >= static_cast<long>(m.height()) || x >= static_cast<long>(m.width())) return 0;
  return m.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
}

inline std::vector<std::pair<long, long>> brute_boundary(const BinaryMask& m) {
  std::vector<std::pair<long, long>> out;
  for (long y = 0; y < static_cast<long>(m.height()); ++y) {
    for (long x = 0; x < static_cast<long>(m.width()); ++x) {
      if (get(m, y, x) && (!get(m, y - 1, x) || !get(m, y + 1, x) || !get(m, y, x - 1) || !get(m, y, x + 1))) {
        out.emplace_back(y, x);
      }
    }
  }
  return out;
}

inline double brute_dist(long y, long x, const std::vector<std::pair<long, long>>& set) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [by, bx] : set) best = std::min(best, std::hypot(double(y - by), double(x - bx)));
  return best;
}

inline std::vector<double> brute_directed(const std::vector<std::pair<long, long>>& from,
                                   const std::vector<std::pair<long, long>>& to) {
  std::vector<double> out;
  for (const auto& [y, x] : from) out.push_back(brute_dist(y, x, to));
  return out;
}

inline double pct(double num, double den) { return den == 0 ? 100.0 : 100.0 * num / den; }

inline std::vector<double> brute_row(const BinaryMask& pred, const BinaryMask& gt) {
  double tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.data()[i], g = gt.data()[i];
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
    tn += !p && !g;
  }
  std::vector<double> row = {(pct(tp, tp + fp + fn) + pct(tn, tn + fn + fp)) / 2, pct(tp + tn, tp + fp + fn + tn),
                             pct(tp, tp + fn), pct(tp, tp + fp), pct(2 * tp, 2 * tp + fp + fn)};

  const auto bp = brute_boundary(pred), bg = brute_boundary(gt);
  const double diag = std::hypot(double(gt.height()), double(gt.width()));
  if (bp.empty() && bg.empty()) {
    row.insert(row.end(), {0, 0, 100, 100, 100, 100, 100, 100, 100, 100, 100, 1});
    return row;
  }
  if (bp.empty() || bg.empty()) {
    row.insert(row.end(), {diag, diag, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
    return row;
  }
  const auto g2p = brute_directed(bg, bp), p2g = brute_directed(bp, bg);
  auto pooled = g2p;
  pooled.insert(pooled.end(), p2g.begin(), p2g.end());
  std::sort(pooled.begin(), pooled.end());
  const double pos = 0.95 * double(pooled.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, pooled.size() - 1);
  row.push_back(pooled[lo] + (pos - double(lo)) * (pooled[hi] - pooled[lo]));
  double sg = 0, sp = 0;
  for (double d : g2p) sg += d;
  for (double d : p2g) sp += d;
  row.push_back(0.5 * (sg / double(g2p.size()) + sp / double(p2g.size())));
  for (double delta : {2.0, 5.0, 10.0}) {
    double hp = 0, hr = 0;
    for (double d : p2g) hp += d <= delta;
    for (double d : g2p) hr += d <= delta;
    const double P = 100 * hp / double(p2g.size()), R = 100 * hr / double(g2p.size());
    row.insert(row.end(), {P, R, P + R > 0 ? 2 * P * R / (P + R) : 0.0});
  }
  double inter = 0, uni = 0;
  for (long y = 0; y < long(gt.height()); ++y) {
    for (long x = 0; x < long(gt.width()); ++x) {
      const bool a = brute_dist(y, x, bp) <= 2.0, b = brute_dist(y, x, bg) <= 2.0;
      inter += a && b;
      uni += a || b;
    }
  }
  row.push_back(uni == 0 ? 1.0 : inter / uni);
  return row;
}

inline BinaryMask random_mask(std::size_t h, std::size_t w, Rng& rng) {
  std::vector<std::uint8_t> bits(h * w, 0);
  switch (rng.below(4)) {
    case 0:  // salt and pepper
      for (auto& b : bits) b = rng.uniform() < 0.3;
      break;
    case 1: {  // rectangle
      const auto y0 = rng.below(h), x0 = rng.below(w);
      const auto y1 = y0 + rng.below(h - y0) + 1, x1 = x0 + rng.below(w - x0) + 1;
      for (auto y = y0; y < y1; ++y)
        for (auto x = x0; x < x1; ++x) bits[y * w + x] = 1;
      break;
    }
    case 2: {  // disc
      const double cy = rng.uniform(0, double(h)), cx = rng.uniform(0, double(w));
      const double r = rng.uniform(1, double(std::max(h, w)) / 2);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) bits[y * w + x] = std::hypot(y - cy, x - cx) <= r;
      break;
    }
    default:  // left empty
      break;
  }
  return BinaryMask(h, w, std::move(bits));
}

}  // namespace mcpmix::testing
