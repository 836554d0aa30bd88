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

// Inference: decode per-location predictions, drop background, let
// overlapping same-class detections vote for each other, then run
// class-aware NMS.
//
// Voting is a single simultaneous pass over the pre-vote scores:
//
//   s'_i = s_i + sum_{j != i, class_j == class_i, IoU_ij > t} k^(IoU_ij - 1) * s_j
//
// Boxes are never moved; only scores change.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "pooldet/assignment.hpp"
#include "pooldet/box_coding.hpp"
#include "pooldet/errors.hpp"
#include "pooldet/geometry.hpp"
#include "pooldet/losses.hpp"
#include "pooldet/model.hpp"
#include "pooldet/tensor.hpp"

namespace pooldet {

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0.0;
  Location source;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct InferenceConfig {
  double k = 40.0;
  double vote_iou_threshold = 0.6;
  double nms_iou_threshold = 0.5;
  double score_threshold = 0.05;
  int per_level_topk = 1000;
  int max_detections = 100;
  bool pooling_enabled = true;

  void validate() const {
    if (!(k > 1.0)) throw InvalidParameter("inference.k must be > 1");
    auto unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!unit(vote_iou_threshold)) throw InvalidParameter("inference.vote_iou_threshold must lie in (0, 1)");
    if (!unit(nms_iou_threshold)) throw InvalidParameter("inference.nms_iou_threshold must lie in (0, 1)");
    if (!unit(score_threshold)) throw InvalidParameter("inference.score_threshold must lie in (0, 1)");
    if (per_level_topk < 1) throw InvalidParameter("inference.per_level_topk must be >= 1");
    if (max_detections < 1) throw InvalidParameter("inference.max_detections must be >= 1");
  }
};

// Canonical detection order: by source location, then class.
inline bool canonical_less(const Detection& a, const Detection& b) {
  if (a.source != b.source) return a.source < b.source;
  return a.class_id < b.class_id;
}

// Per location: score = max class probability, class = its argmax. Keeps
// scores above the threshold, the top-k per level, and returns them in
// canonical order.
inline std::vector<Detection> collect_detections(std::span<const FeatureMap> logits,
                                                 std::span<const FeatureMap> regression,
                                                 const PyramidSpec& pyramid,
                                                 const InferenceConfig& config) {
  config.validate();
  if (logits.size() != pyramid.levels.size() || regression.size() != pyramid.levels.size()) {
    throw ContractViolation("collect_detections: maps do not match the pyramid");
  }
  const Box image = pyramid.image_box();
  std::vector<Detection> out;
  for (const GridSpec& g : pyramid.levels) {
    const FeatureMap& lm = logits[g.level];
    const FeatureMap& rm = regression[g.level];
    if (lm.height() != g.height || lm.width() != g.width || rm.height() != g.height ||
        rm.width() != g.width || rm.channels() != 4) {
      throw ContractViolation("collect_detections: shape mismatch at level " +
                              std::to_string(g.level));
    }
    std::vector<Detection> level;
    for (int i = 0; i < g.height; ++i) {
      for (int j = 0; j < g.width; ++j) {
        const auto cell = lm.cell(i, j);
        const auto best = std::max_element(cell.begin(), cell.end());
        const double score = sigmoid(*best);
        if (!(score > config.score_threshold)) continue;
        const Location loc{g.level, i, j};
        const auto r = rm.cell(i, j);
        level.push_back({decode_box(loc, {r[0], r[1], r[2], r[3]}, g, image),
                         static_cast<int>(best - cell.begin()), score, loc});
      }
    }
    if (level.size() > static_cast<std::size_t>(config.per_level_topk)) {
      std::stable_sort(level.begin(), level.end(),
                       [](const Detection& a, const Detection& b) { return a.score > b.score; });
      level.resize(static_cast<std::size_t>(config.per_level_topk));
      std::sort(level.begin(), level.end(), canonical_less);
    }
    out.insert(out.end(), level.begin(), level.end());
  }
  return out;
}

// Votes received by one detection.
struct Voter {
  Location source;
  double weight = 0.0;

  friend bool operator==(const Voter&, const Voter&) = default;
};

struct VoteResult {
  std::vector<Detection> detections;         // same order as input, updated scores
  std::vector<std::vector<Voter>> voters;    // per detection, self first, unnormalized
};

// Simultaneous vote aggregation. Partners are summed in input order, so
// callers wanting reproducible sums should pass canonically ordered input.
inline VoteResult vote_aggregate_with_voters(std::span<const Detection> dets,
                                             const InferenceConfig& config) {
  config.validate();
  VoteResult out;
  out.detections.assign(dets.begin(), dets.end());
  out.voters.resize(dets.size());

  // Bucket by class so each detection only scans its own class.
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].class_id < dets[b].class_id;
  });

  std::size_t begin = 0;
  while (begin < order.size()) {
    std::size_t end = begin;
    while (end < order.size() && dets[order[end]].class_id == dets[order[begin]].class_id) ++end;
    for (std::size_t a = begin; a < end; ++a) {
      const std::size_t i = order[a];
      double score = dets[i].score;
      out.voters[i].push_back({dets[i].source, dets[i].score});
      for (std::size_t b = begin; b < end; ++b) {
        const std::size_t j = order[b];
        if (j == i) continue;
        const double o = iou(dets[i].box, dets[j].box);
        if (!(o > config.vote_iou_threshold)) continue;
        const double w = std::pow(config.k, o - 1.0) * dets[j].score;
        score += w;
        out.voters[i].push_back({dets[j].source, w});
      }
      out.detections[i].score = score;
    }
    begin = end;
  }
  return out;
}

inline std::vector<Detection> vote_aggregate(std::span<const Detection> dets,
                                             const InferenceConfig& config) {
  return vote_aggregate_with_voters(dets, config).detections;
}

// Greedy NMS per class over a score-descending order (ties keep input
// order), then the best `max_detections` overall, returned by descending
// score. Returns indices into `dets`.
inline std::vector<std::size_t> class_aware_nms_indices(std::span<const Detection> dets,
                                                        double iou_threshold,
                                                        std::size_t max_detections) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    bool keep = true;
    for (std::size_t k : kept) {
      if (dets[k].class_id == dets[idx].class_id && iou(dets[k].box, dets[idx].box) > iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(idx);
  }
  if (kept.size() > max_detections) kept.resize(max_detections);
  return kept;
}

inline std::vector<Detection> class_aware_nms(std::span<const Detection> dets,
                                              double iou_threshold,
                                              std::size_t max_detections = 100) {
  std::vector<Detection> out;
  for (std::size_t k : class_aware_nms_indices(dets, iou_threshold, max_detections)) {
    out.push_back(dets[k]);
  }
  return out;
}

struct PooledDetection {
  Detection detection;
  std::vector<Voter> voters;  // weights sum to 1
};

// Full pipeline on precomputed head outputs.
inline std::vector<PooledDetection> infer(const HeadOutputs& outputs, const PyramidSpec& pyramid,
                                          const InferenceConfig& config) {
  const std::vector<Detection> raw =
      collect_detections(outputs.logits, outputs.regression, pyramid, config);
  VoteResult votes;
  if (config.pooling_enabled) {
    votes = vote_aggregate_with_voters(raw, config);
  } else {
    votes.detections = raw;
    votes.voters.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) votes.voters[i] = {{raw[i].source, raw[i].score}};
  }
  std::vector<PooledDetection> out;
  for (std::size_t k : class_aware_nms_indices(votes.detections, config.nms_iou_threshold,
                                               static_cast<std::size_t>(config.max_detections))) {
    PooledDetection pd{votes.detections[k], votes.voters[k]};
    double total = 0.0;
    for (const Voter& v : pd.voters) total += v.weight;
    for (Voter& v : pd.voters) v.weight /= total;
    out.push_back(std::move(pd));
  }
  return out;
}

inline std::vector<PooledDetection> infer(const ToyHeadParams& params, const Image& image,
                                          const PyramidSpec& pyramid,
                                          const DescriptorConfig& descriptor,
                                          const InferenceConfig& config) {
  return infer(forward(params, image, pyramid, descriptor), pyramid, config);
}

}  // namespace pooldet
