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
#include <optional>

#include "pooldet/assignment.hpp"
#include "pooldet/geometry.hpp"

namespace pooldet {

// Inverse of encode_sides: side distances (l, t, r, b) in stride units
// around the location center, optionally clipped to `clip`.
inline Box decode_box(const Location& loc, const SideDistances& sides, const GridSpec& grid,
                      const std::optional<Box>& clip = std::nullopt) {
  const Point p = grid.center(loc.i, loc.j);
  const double s = grid.stride;
  Box b{p.x - sides[0] * s, p.y - sides[1] * s, p.x + sides[2] * s, p.y + sides[3] * s};
  if (clip) {
    b.x1 = std::clamp(b.x1, clip->x1, clip->x2);
    b.x2 = std::clamp(b.x2, clip->x1, clip->x2);
    b.y1 = std::clamp(b.y1, clip->y1, clip->y2);
    b.y2 = std::clamp(b.y2, clip->y1, clip->y2);
  }
  return b;
}

}  // namespace pooldet
