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

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include "pooldet/errors.hpp"

namespace pooldet {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

// Axis-aligned box in image pixel coordinates, corner-pair form.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  static Box from_xywh(double x, double y, double w, double h) {
    return Box{x, y, x + w, y + h};
  }

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  Point center() const { return Point{0.5 * (x1 + x2), 0.5 * (y1 + y2)}; }

  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
           std::isfinite(y2) && x1 <= x2 && y1 <= y2;
  }

  friend bool operator==(const Box&, const Box&) = default;
};

inline std::ostream& operator<<(std::ostream& os, const Box& b) {
  return os << "(" << b.x1 << ", " << b.y1 << ", " << b.x2 << ", " << b.y2 << ")";
}

// Intersection over union. Zero whenever the union has no area, so a
// degenerate box never overlaps anything, itself included.
inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

// Co-centric box with width and height scaled by `s`.
inline Box shrink_box(const Box& b, double s) {
  if (!(s > 0.0 && s <= 1.0)) {
    throw InvalidParameter("shrink factor must lie in (0, 1], got " + std::to_string(s));
  }
  if (s == 1.0) return b;
  const Point c = b.center();
  const double hw = 0.5 * b.width() * s;
  const double hh = 0.5 * b.height() * s;
  return Box{c.x - hw, c.y - hh, c.x + hw, c.y + hh};
}

inline double center_distance(const Point& p, const Box& b) {
  const Point c = b.center();
  return std::hypot(p.x - c.x, p.y - c.y);
}

// Closed-box containment; points on the boundary are inside.
inline bool contains(const Box& b, const Point& p) {
  return b.x1 <= p.x && p.x <= b.x2 && b.y1 <= p.y && p.y <= b.y2;
}

}  // namespace pooldet
