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

// Feature-pyramid geometry and the positive-area labeling of feature
// locations.
//
// Every ground-truth box is routed to exactly one pyramid level by its
// scale. On that level, the box is shrunk around its center by the shrink
// factor; feature locations whose image-space centers fall inside the
// shrunk box become positives of that instance. A location claimed by
// several instances goes to the instance whose box center is nearest
// (smallest instance id on exact ties). Everything else is negative; there
// is no ignore band.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pooldet/errors.hpp"
#include "pooldet/geometry.hpp"

namespace pooldet {

struct GridSpec {
  int level = 0;
  double stride = 1.0;
  int width = 1;
  int height = 1;

  // Image-space center of feature location (row i, column j).
  Point center(int i, int j) const { return Point{(j + 0.5) * stride, (i + 0.5) * stride}; }
  int size() const { return width * height; }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

struct PyramidSpec {
  std::vector<GridSpec> levels;
  double base_scale = 10.0;
  int min_level = 0;
  int max_level = 0;
  int image_width = 0;
  int image_height = 0;

  int num_levels() const { return static_cast<int>(levels.size()); }
  int total_locations() const {
    int n = 0;
    for (const auto& g : levels) n += g.size();
    return n;
  }
  Box image_box() const {
    return Box{0.0, 0.0, static_cast<double>(image_width), static_cast<double>(image_height)};
  }

  void validate() const {
    if (levels.empty()) throw InvalidParameter("pyramid: at least one level is required");
    if (!(base_scale > 0.0)) throw InvalidParameter("pyramid.base_scale must be positive");
    if (min_level < 0 || max_level >= num_levels() || min_level > max_level) {
      throw InvalidParameter("pyramid: level bounds out of range");
    }
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const GridSpec& g = levels[l];
      if (g.level != static_cast<int>(l)) {
        throw InvalidParameter("pyramid: level indices must be 0..L-1 in order");
      }
      if (!(g.stride > 0.0) || g.width <= 0 || g.height <= 0) {
        throw InvalidParameter("pyramid: level " + std::to_string(l) +
                               " needs positive stride and dimensions");
      }
      if (l > 0 && g.stride != 2.0 * levels[l - 1].stride) {
        throw InvalidParameter("pyramid: each stride must double the previous one");
      }
    }
  }

  // Power-of-two pyramid covering an image; grid dims are ceil(image / stride).
  static PyramidSpec make(int image_width, int image_height, double base_stride,
                          int num_levels, double base_scale) {
    if (image_width <= 0 || image_height <= 0) {
      throw InvalidParameter("pyramid: image dimensions must be positive");
    }
    if (num_levels <= 0) throw InvalidParameter("pyramid.num_levels must be positive");
    PyramidSpec p;
    p.base_scale = base_scale;
    p.min_level = 0;
    p.max_level = num_levels - 1;
    p.image_width = image_width;
    p.image_height = image_height;
    double stride = base_stride;
    for (int l = 0; l < num_levels; ++l, stride *= 2.0) {
      p.levels.push_back(GridSpec{l, stride, static_cast<int>(std::ceil(image_width / stride)),
                                  static_cast<int>(std::ceil(image_height / stride))});
    }
    p.validate();
    return p;
  }
};

struct GroundTruth {
  Box box;
  int class_id = 0;
  int instance_id = 0;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct Location {
  int level = 0;
  int i = 0;
  int j = 0;

  friend auto operator<=>(const Location&, const Location&) = default;
};

// Stride-normalized distances from a location center to the four box sides.
using SideDistances = std::array<double, 4>;

inline constexpr int kNegative = -1;

// Labels and regression targets for one pyramid level.
struct LevelAssignment {
  GridSpec grid;
  std::vector<int> labels;             // H*W, kNegative or an instance id
  std::vector<SideDistances> targets;  // H*W, meaningful only at positives

  int label(int i, int j) const { return labels[static_cast<std::size_t>(i) * grid.width + j]; }
  const SideDistances& target(int i, int j) const {
    return targets[static_cast<std::size_t>(i) * grid.width + j];
  }
};

struct AssignmentMap {
  std::vector<LevelAssignment> levels;
  // Instances holding no positive location: nothing captured, or every
  // captured center went to a nearer instance.
  std::vector<int> unassigned_instances;

  int label(const Location& loc) const { return levels[loc.level].label(loc.i, loc.j); }

  std::size_t num_positive() const {
    std::size_t n = 0;
    for (const auto& lv : levels)
      for (int v : lv.labels) n += (v != kNegative);
    return n;
  }
  std::size_t num_negative() const {
    std::size_t n = 0;
    for (const auto& lv : levels)
      for (int v : lv.labels) n += (v == kNegative);
    return n;
  }

  // Positive locations of one instance, in (level, i, j) order.
  std::vector<Location> members(int instance_id) const {
    std::vector<Location> out;
    for (const auto& lv : levels)
      for (int i = 0; i < lv.grid.height; ++i)
        for (int j = 0; j < lv.grid.width; ++j)
          if (lv.label(i, j) == instance_id) out.push_back({lv.grid.level, i, j});
    return out;
  }

  // Ids of instances holding at least one positive location, ascending.
  std::vector<int> positive_instances() const {
    std::set<int> ids;
    for (const auto& lv : levels)
      for (int v : lv.labels)
        if (v != kNegative) ids.insert(v);
    return {ids.begin(), ids.end()};
  }
};

// Scale-based level routing: log2 buckets of sqrt(area) relative to
// base_scale, clamped to the pyramid's level bounds.
inline int assign_level(const GroundTruth& gt, const PyramidSpec& pyramid) {
  const double area = gt.box.area();
  if (!gt.box.valid() || !(area > 0.0)) {
    throw InvalidAnnotation("instance " + std::to_string(gt.instance_id) +
                            " has a zero-area or invalid box");
  }
  const double raw =
      pyramid.min_level + std::floor(std::log2(std::sqrt(area) / pyramid.base_scale));
  return static_cast<int>(
      std::clamp(raw, static_cast<double>(pyramid.min_level), static_cast<double>(pyramid.max_level)));
}

inline SideDistances encode_sides(const Point& p, const Box& b, double stride) {
  return {(p.x - b.x1) / stride, (p.y - b.y1) / stride, (b.x2 - p.x) / stride,
          (b.y2 - p.y) / stride};
}

inline AssignmentMap label_grid(std::span<const GroundTruth> gts, const PyramidSpec& pyramid,
                                double shrink) {
  if (!(shrink > 0.0 && shrink <= 1.0)) {
    throw InvalidParameter("shrink factor must lie in (0, 1]");
  }
  {
    std::set<int> seen;
    for (const auto& gt : gts) {
      if (!seen.insert(gt.instance_id).second) {
        throw InvalidAnnotation("duplicate instance id " + std::to_string(gt.instance_id));
      }
    }
  }

  AssignmentMap map;
  map.levels.reserve(pyramid.levels.size());
  for (const auto& g : pyramid.levels) {
    const auto n = static_cast<std::size_t>(g.size());
    map.levels.push_back(LevelAssignment{g, std::vector<int>(n, kNegative),
                                         std::vector<SideDistances>(n, SideDistances{})});
  }

  // Distance of the current owner, per location, for conflict resolution.
  std::vector<std::vector<double>> best(pyramid.levels.size());
  for (std::size_t l = 0; l < best.size(); ++l) {
    best[l].assign(static_cast<std::size_t>(pyramid.levels[l].size()), 0.0);
  }

  for (const auto& gt : gts) {
    const int level = assign_level(gt, pyramid);
    const GridSpec& g = pyramid.levels[level];
    const Box area = shrink_box(gt.box, shrink);
    LevelAssignment& lv = map.levels[level];

    // Candidate window; the exact test below decides membership.
    const int j0 = std::max(0, static_cast<int>(std::floor(area.x1 / g.stride - 0.5)) - 1);
    const int j1 = std::min(g.width - 1, static_cast<int>(std::ceil(area.x2 / g.stride - 0.5)) + 1);
    const int i0 = std::max(0, static_cast<int>(std::floor(area.y1 / g.stride - 0.5)) - 1);
    const int i1 = std::min(g.height - 1, static_cast<int>(std::ceil(area.y2 / g.stride - 0.5)) + 1);

    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) {
        const Point p = g.center(i, j);
        if (!contains(area, p)) continue;
        const std::size_t idx = static_cast<std::size_t>(i) * g.width + j;
        const double d = center_distance(p, gt.box);
        int& owner = lv.labels[idx];
        if (owner == kNegative || d < best[level][idx] ||
            (d == best[level][idx] && gt.instance_id < owner)) {
          owner = gt.instance_id;
          best[level][idx] = d;
          lv.targets[idx] = encode_sides(p, gt.box, g.stride);
        }
      }
    }
  }

  const auto owned = map.positive_instances();
  for (const auto& gt : gts) {
    if (!std::binary_search(owned.begin(), owned.end(), gt.instance_id)) {
      map.unassigned_instances.push_back(gt.instance_id);
    }
  }
  return map;
}

}  // namespace pooldet
