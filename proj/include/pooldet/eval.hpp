// Copyright 2026 The pooldet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

// COCO-style box AP and GT-relative heatmaps of responsible features.
//
// The protocol follows the reference COCO evaluator for boxes: greedy
// highest-IoU matching in descending score order per (image, class),
// ignore semantics for objects outside an area range, precision made
// monotone from the right and sampled at 101 recall points, and means over
// IoU thresholds 0.50:0.05:0.95 and over classes that have ground truth.
// Undefined metrics (no ground truth in range) are reported as empty.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pooldet/aggregation.hpp"
#include "pooldet/assignment.hpp"
#include "pooldet/errors.hpp"
#include "pooldet/geometry.hpp"
#include "pooldet/image.hpp"

namespace pooldet {

struct ScoredBox {
  Box box;
  double score = 0.0;
};

namespace detail {

// numpy.linspace(start, stop, num): start + i * step, last value pinned.
inline std::vector<double> linspace(double start, double stop, int num) {
  std::vector<double> out(static_cast<std::size_t>(num));
  const double step = (stop - start) / (num - 1);
  for (int i = 0; i < num; ++i) out[i] = i * step + start;
  out.back() = stop;
  return out;
}

inline std::vector<std::size_t> score_order(std::span<const ScoredBox> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return order;
}

// Greedy matching of score-sorted detections against ground truth sorted
// with ignored entries last. Returns the matched GT index per detection.
inline std::vector<int> greedy_match(std::span<const ScoredBox> sorted_dets,
                                     std::span<const Box> sorted_gts,
                                     std::span<const char> gt_ignore, double threshold) {
  std::vector<int> det_match(sorted_dets.size(), -1);
  std::vector<char> gt_taken(sorted_gts.size(), 0);
  for (std::size_t d = 0; d < sorted_dets.size(); ++d) {
    double best = std::min(threshold, 1.0 - 1e-10);
    int m = -1;
    for (std::size_t g = 0; g < sorted_gts.size(); ++g) {
      if (gt_taken[g]) continue;
      if (m > -1 && !gt_ignore[m] && gt_ignore[g]) break;
      const double o = iou(sorted_dets[d].box, sorted_gts[g]);
      if (o < best) continue;
      best = o;
      m = static_cast<int>(g);
    }
    if (m == -1) continue;
    det_match[d] = m;
    gt_taken[m] = 1;
  }
  return det_match;
}

}  // namespace detail

// Greedy matching for one image and class: detections in descending score
// order each take the unmatched GT with the highest IoU >= threshold.
// Returns, per detection in input order, the matched GT index or -1.
inline std::vector<int> match_detections(std::span<const ScoredBox> dets, std::span<const Box> gts,
                                         double iou_threshold) {
  const auto order = detail::score_order(dets);
  std::vector<ScoredBox> sorted;
  for (std::size_t k : order) sorted.push_back(dets[k]);
  const std::vector<char> no_ignore(gts.size(), 0);
  const auto m = detail::greedy_match(sorted, gts, no_ignore, iou_threshold);
  std::vector<int> out(dets.size(), -1);
  for (std::size_t r = 0; r < order.size(); ++r) out[order[r]] = m[r];
  return out;
}

// 101-point interpolated AP from per-detection TP flags. Empty when there is
// no ground truth.
inline std::optional<double> average_precision(std::span<const bool> tp,
                                               std::span<const double> scores,
                                               std::size_t num_gt) {
  if (tp.size() != scores.size()) throw ContractViolation("average_precision: size mismatch");
  if (num_gt == 0) return std::nullopt;
  std::vector<std::size_t> order(tp.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double eps = std::numeric_limits<double>::epsilon();
  std::vector<double> rc, pr;
  double ctp = 0.0, cfp = 0.0;
  for (std::size_t k : order) {
    (tp[k] ? ctp : cfp) += 1.0;
    rc.push_back(ctp / static_cast<double>(num_gt));
    pr.push_back(ctp / (ctp + cfp + eps));
  }
  for (std::size_t i = pr.size(); i-- > 1;) pr[i - 1] = std::max(pr[i - 1], pr[i]);
  const auto thresholds = detail::linspace(0.0, 1.0, 101);
  double sum = 0.0;
  for (double r : thresholds) {
    const auto it = std::lower_bound(rc.begin(), rc.end(), r);
    if (it == rc.end()) break;
    sum += pr[static_cast<std::size_t>(it - rc.begin())];
  }
  return sum / static_cast<double>(thresholds.size());
}

// Area cutoffs for the small / medium / large buckets.
struct SizeBuckets {
  double small_max_area = 32.0 * 32.0;
  double medium_max_area = 96.0 * 96.0;

  // COCO's 32^2 / 96^2 cutoffs scaled by image area relative to a nominal
  // 640 x 480 COCO image.
  static SizeBuckets scaled_for(int image_width, int image_height) {
    const double f = static_cast<double>(image_width) * image_height / (640.0 * 480.0);
    return {32.0 * 32.0 * f, 96.0 * 96.0 * f};
  }
};

struct ImageDetections {
  int image_id = 0;
  std::vector<Detection> detections;
};

struct ImageTruth {
  int image_id = 0;
  std::vector<GroundTruth> gts;
};

struct ApReport {
  std::optional<double> ap, ap50, ap75, ap_small, ap_medium, ap_large;
  std::vector<std::optional<double>> per_class;  // AP per class

  friend bool operator==(const ApReport&, const ApReport&) = default;
};

struct EvalParams {
  int num_classes = 1;
  SizeBuckets buckets;
  int max_detections = 100;
};

namespace detail {

struct AreaRange {
  double lo, hi;
  bool contains(double a) const { return !(a < lo || a > hi); }
};

// Per (image, class, area range): detections in score order with their
// match / ignore flags per IoU threshold.
struct EvalEntry {
  std::vector<double> scores;
  std::vector<std::vector<char>> matched;  // [t][d]
  std::vector<std::vector<char>> ignored;  // [t][d]
  int num_gt = 0;                          // non-ignored ground truth
};

inline EvalEntry evaluate_entry(std::span<const ScoredBox> dets, std::span<const Box> gts,
                                AreaRange range, std::span<const double> thresholds,
                                int max_detections) {
  EvalEntry e;
  // Ground truth: non-ignored first, stable.
  std::vector<std::size_t> gorder(gts.size());
  std::iota(gorder.begin(), gorder.end(), std::size_t{0});
  std::stable_sort(gorder.begin(), gorder.end(), [&](std::size_t a, std::size_t b) {
    return range.contains(gts[a].area()) > range.contains(gts[b].area());
  });
  std::vector<Box> sgts;
  std::vector<char> gign;
  for (std::size_t g : gorder) {
    sgts.push_back(gts[g]);
    gign.push_back(range.contains(gts[g].area()) ? 0 : 1);
    e.num_gt += range.contains(gts[g].area());
  }
  auto dorder = score_order(dets);
  if (dorder.size() > static_cast<std::size_t>(max_detections)) dorder.resize(max_detections);
  std::vector<ScoredBox> sdets;
  for (std::size_t d : dorder) {
    sdets.push_back(dets[d]);
    e.scores.push_back(dets[d].score);
  }
  for (double t : thresholds) {
    const auto m = greedy_match(sdets, sgts, gign, t);
    std::vector<char> matched(sdets.size(), 0), ignored(sdets.size(), 0);
    for (std::size_t d = 0; d < sdets.size(); ++d) {
      if (m[d] >= 0) {
        matched[d] = 1;
        ignored[d] = gign[m[d]];
      } else {
        ignored[d] = range.contains(sdets[d].box.area()) ? 0 : 1;
      }
    }
    e.matched.push_back(std::move(matched));
    e.ignored.push_back(std::move(ignored));
  }
  return e;
}

// Interpolated precision at the 101 recall points; empty if no ground truth.
inline std::optional<std::vector<double>> accumulate(std::span<const EvalEntry> entries,
                                                     std::size_t t) {
  int npig = 0;
  std::vector<double> scores;
  std::vector<char> matched, ignored;
  for (const EvalEntry& e : entries) {
    npig += e.num_gt;
    scores.insert(scores.end(), e.scores.begin(), e.scores.end());
    matched.insert(matched.end(), e.matched[t].begin(), e.matched[t].end());
    ignored.insert(ignored.end(), e.ignored[t].begin(), e.ignored[t].end());
  }
  if (npig == 0) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double eps = std::numeric_limits<double>::epsilon();
  std::vector<double> rc, pr;
  double tp = 0.0, fp = 0.0;
  for (std::size_t k : order) {
    if (ignored[k]) {
      // Ignored detections leave the cumulative counts unchanged but still
      // occupy a slot on the curve.
    } else if (matched[k]) {
      tp += 1.0;
    } else {
      fp += 1.0;
    }
    rc.push_back(tp / npig);
    pr.push_back(tp / (fp + tp + eps));
  }
  for (std::size_t i = pr.size(); i-- > 1;) pr[i - 1] = std::max(pr[i - 1], pr[i]);
  const auto rec = linspace(0.0, 1.0, 101);
  std::vector<double> q(rec.size(), 0.0);
  for (std::size_t r = 0; r < rec.size(); ++r) {
    const auto it = std::lower_bound(rc.begin(), rc.end(), rec[r]);
    if (it == rc.end()) break;
    q[r] = pr[static_cast<std::size_t>(it - rc.begin())];
  }
  return q;
}

}  // namespace detail

// Dataset-level AP summary. Images are matched by id; an image missing from
// `detections` has no detections.
inline ApReport summarize(std::span<const ImageDetections> detections,
                          std::span<const ImageTruth> truths, const EvalParams& params) {
  if (params.num_classes < 1) throw InvalidParameter("summarize: num_classes must be >= 1");
  const auto thresholds = detail::linspace(0.5, 0.95, 10);
  const std::array<detail::AreaRange, 4> ranges{{
      {0.0, 1e10},
      {0.0, params.buckets.small_max_area},
      {params.buckets.small_max_area, params.buckets.medium_max_area},
      {params.buckets.medium_max_area, 1e10},
  }};

  std::map<int, const ImageDetections*> dets_by_id;
  for (const auto& d : detections) {
    if (!dets_by_id.emplace(d.image_id, &d).second) {
      throw ContractViolation("summarize: duplicate detections for image " + std::to_string(d.image_id));
    }
  }

  // precision[area][class][threshold] -> 101 values, or empty.
  using Curve = std::optional<std::vector<double>>;
  std::vector<std::vector<std::vector<Curve>>> curves(
      ranges.size(), std::vector<std::vector<Curve>>(params.num_classes));

  for (std::size_t a = 0; a < ranges.size(); ++a) {
    for (int c = 0; c < params.num_classes; ++c) {
      std::vector<detail::EvalEntry> entries;
      for (const ImageTruth& truth : truths) {
        std::vector<Box> gts;
        for (const auto& gt : truth.gts)
          if (gt.class_id == c) gts.push_back(gt.box);
        std::vector<ScoredBox> dets;
        if (auto it = dets_by_id.find(truth.image_id); it != dets_by_id.end()) {
          for (const auto& d : it->second->detections)
            if (d.class_id == c) dets.push_back({d.box, d.score});
        }
        if (gts.empty() && dets.empty()) continue;
        entries.push_back(detail::evaluate_entry(dets, gts, ranges[a], thresholds,
                                                 params.max_detections));
      }
      for (std::size_t t = 0; t < thresholds.size(); ++t) {
        curves[a][c].push_back(entries.empty() ? std::nullopt : detail::accumulate(entries, t));
      }
    }
  }

  auto mean_of = [&](std::size_t a, std::optional<std::size_t> only_t,
                     std::optional<int> only_c) -> std::optional<double> {
    double sum = 0.0;
    std::size_t n = 0;
    for (int c = 0; c < params.num_classes; ++c) {
      if (only_c && c != *only_c) continue;
      for (std::size_t t = 0; t < thresholds.size(); ++t) {
        if (only_t && t != *only_t) continue;
        const Curve& q = curves[a][c][t];
        if (!q) continue;
        for (double v : *q) sum += v;
        n += q->size();
      }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  };

  ApReport r;
  r.ap = mean_of(0, std::nullopt, std::nullopt);
  r.ap50 = mean_of(0, 0, std::nullopt);
  r.ap75 = mean_of(0, 5, std::nullopt);
  r.ap_small = mean_of(1, std::nullopt, std::nullopt);
  r.ap_medium = mean_of(2, std::nullopt, std::nullopt);
  r.ap_large = mean_of(3, std::nullopt, std::nullopt);
  for (int c = 0; c < params.num_classes; ++c) r.per_class.push_back(mean_of(0, std::nullopt, c));
  return r;
}

// Voter weight accumulated over GT-normalized coordinates. The unit GT box
// occupies the central part of the grid, with `margin` box-widths on each
// side; voters outside that frame land in the border cells.
struct HeatmapAccumulator {
  int resolution = 64;
  double margin = 0.5;
  std::vector<double> cells;
  double total_mass = 0.0;
  int detections = 0;

  explicit HeatmapAccumulator(int res = 64, double m = 0.5)
      : resolution(res), margin(m), cells(static_cast<std::size_t>(res) * res, 0.0) {
    if (res < 2 || !(m >= 0.0)) throw InvalidParameter("heatmap: bad resolution or margin");
  }

  int cell_index(double u) const {
    const double f = (u + margin) / (1.0 + 2.0 * margin);
    return std::clamp(static_cast<int>(std::floor(f * resolution)), 0, resolution - 1);
  }

  double at(int row, int col) const { return cells[static_cast<std::size_t>(row) * resolution + col]; }

  void add(const Point& p, const Box& gt, double weight) {
    const double u = (p.x - gt.x1) / gt.width();
    const double v = (p.y - gt.y1) / gt.height();
    cells[static_cast<std::size_t>(cell_index(v)) * resolution + cell_index(u)] += weight;
    total_mass += weight;
  }

  // "Hot" color map (black -> red -> yellow -> white) scaled to the largest
  // cell, upscaled by `scale`, with the unit GT box outlined in green.
  RgbImage render(int scale = 4) const {
    const int size = resolution * scale;
    RgbImage img(size, size);
    const double peak = *std::max_element(cells.begin(), cells.end());
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double v = peak > 0.0 ? at(y / scale, x / scale) / peak : 0.0;
        auto channel = [&](double lo) {
          return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp((v - lo) * 3.0, 0.0, 1.0)));
        };
        img.set(x, y, channel(0.0), channel(1.0 / 3.0), channel(2.0 / 3.0));
      }
    }
    const double span = 1.0 + 2.0 * margin;
    const int lo = static_cast<int>(std::lround(margin / span * size));
    const int hi = std::min(size - 1, static_cast<int>(std::lround((1.0 + margin) / span * size)));
    for (int k = lo; k <= hi; ++k) {
      img.set(k, lo, 0, 255, 0);
      img.set(k, hi, 0, 255, 0);
      img.set(lo, k, 0, 255, 0);
      img.set(hi, k, 0, 255, 0);
    }
    return img;
  }
};

// Adds the voters of every true-positive detection (IoU >= iou_threshold
// against a same-class GT, greedy matching) to the accumulator of its class.
inline void accumulate_heatmap(std::span<const PooledDetection> dets,
                               std::span<const GroundTruth> gts, const PyramidSpec& pyramid,
                               std::vector<HeatmapAccumulator>& per_class,
                               double iou_threshold = 0.5) {
  for (int c = 0; c < static_cast<int>(per_class.size()); ++c) {
    std::vector<ScoredBox> sdets;
    std::vector<std::size_t> src;
    for (std::size_t k = 0; k < dets.size(); ++k) {
      if (dets[k].detection.class_id != c) continue;
      sdets.push_back({dets[k].detection.box, dets[k].detection.score});
      src.push_back(k);
    }
    std::vector<Box> cgts;
    for (const auto& gt : gts)
      if (gt.class_id == c) cgts.push_back(gt.box);
    const auto match = match_detections(sdets, cgts, iou_threshold);
    for (std::size_t d = 0; d < sdets.size(); ++d) {
      if (match[d] < 0) continue;
      const Box& gt = cgts[static_cast<std::size_t>(match[d])];
      for (const Voter& v : dets[src[d]].voters) {
        per_class[c].add(pyramid.levels[v.source.level].center(v.source.i, v.source.j), gt, v.weight);
      }
      ++per_class[c].detections;
    }
  }
}

}  // namespace pooldet
