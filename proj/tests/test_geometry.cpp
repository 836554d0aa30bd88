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

#include <gtest/gtest.h>

#include <random>

#include "pooldet/geometry.hpp"
#include "test_support.hpp"

namespace pooldet {
namespace {

using testing::random_box;
using testing::uniform;

TEST(Iou, IdenticalBoxes) { EXPECT_DOUBLE_EQ(iou({0, 0, 4, 4}, {0, 0, 4, 4}), 1.0); }

TEST(Iou, DisjointBoxes) { EXPECT_EQ(iou({0, 0, 1, 1}, {5, 5, 6, 6}), 0.0); }

TEST(Iou, PartialOverlap) { EXPECT_NEAR(iou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0, 1e-15); }

TEST(Iou, TouchingEdgesDoNotOverlap) { EXPECT_EQ(iou({0, 0, 2, 2}, {2, 0, 4, 2}), 0.0); }

TEST(Iou, DegenerateBoxesGiveZero) {
  const Box line{1, 1, 1, 5};
  EXPECT_EQ(iou(line, line), 0.0);
  EXPECT_EQ(iou(line, {0, 0, 4, 4}), 0.0);
  const Box point{2, 2, 2, 2};
  EXPECT_EQ(iou(point, point), 0.0);
}

TEST(Iou, PropertySymmetricAndBounded) {
  std::mt19937_64 rng(11);
  for (int n = 0; n < 2000; ++n) {
    const Box a = random_box(rng, 50, 50, 0.5, 30);
    const Box b = random_box(rng, 50, 50, 0.5, 30);
    const double ab = iou(a, b);
    EXPECT_EQ(ab, iou(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  }
}

TEST(ShrinkBox, Examples) {
  EXPECT_EQ(shrink_box({0, 0, 10, 10}, 0.4), (Box{3, 3, 7, 7}));
  EXPECT_EQ(shrink_box({2, 2, 8, 8}, 1.0), (Box{2, 2, 8, 8}));
  const Box b = shrink_box({0, 0, 5, 3}, 0.6);
  EXPECT_NEAR(b.x1, 1.0, 1e-12);
  EXPECT_NEAR(b.y1, 0.6, 1e-12);
  EXPECT_NEAR(b.x2, 4.0, 1e-12);
  EXPECT_NEAR(b.y2, 2.4, 1e-12);
}

TEST(ShrinkBox, RejectsFactorsOutsideUnitInterval) {
  const Box b{0, 0, 4, 4};
  EXPECT_THROW(shrink_box(b, 0.0), InvalidParameter);
  EXPECT_THROW(shrink_box(b, -0.1), InvalidParameter);
  EXPECT_THROW(shrink_box(b, 1.0001), InvalidParameter);
  EXPECT_THROW(shrink_box(b, std::nan("")), InvalidParameter);
}

TEST(ShrinkBox, PropertyCenterAspectAndIou) {
  std::mt19937_64 rng(12);
  for (int n = 0; n < 2000; ++n) {
    const Box b = random_box(rng, 100, 100, 0.5, 60);
    const double s = uniform(rng, 0.01, 1.0);
    const Box r = shrink_box(b, s);
    EXPECT_NEAR(r.center().x, b.center().x, 1e-12);
    EXPECT_NEAR(r.center().y, b.center().y, 1e-12);
    EXPECT_NEAR(r.width() / r.height(), b.width() / b.height(), 1e-9 * b.width() / b.height());
    EXPECT_NEAR(iou(r, b), s * s, 1e-9);
  }
}

TEST(ShrinkBox, PropertyMonotone) {
  std::mt19937_64 rng(13);
  for (int n = 0; n < 2000; ++n) {
    const Box b = random_box(rng, 100, 100, 0.5, 60);
    double s1 = uniform(rng, 0.01, 1.0);
    double s2 = uniform(rng, 0.01, 1.0);
    if (s1 > s2) std::swap(s1, s2);
    if (s1 == s2) continue;
    const Box inner = shrink_box(b, s1);
    const Box outer = shrink_box(b, s2);
    EXPECT_GT(inner.x1, outer.x1);
    EXPECT_GT(inner.y1, outer.y1);
    EXPECT_LT(inner.x2, outer.x2);
    EXPECT_LT(inner.y2, outer.y2);
  }
}

TEST(CenterDistance, Examples) {
  EXPECT_EQ(center_distance({5, 5}, {0, 0, 10, 10}), 0.0);
  EXPECT_DOUBLE_EQ(center_distance({0, 0}, {0, 0, 6, 8}), 5.0);
  EXPECT_EQ(center_distance({1, 1}, {0, 0, 2, 2}), 0.0);
}

TEST(Contains, BoundaryInclusive) {
  const Box b{0, 0, 4, 4};
  EXPECT_TRUE(contains(b, {2, 2}));
  EXPECT_TRUE(contains(b, {4, 4}));
  EXPECT_TRUE(contains(b, {0, 0}));
  EXPECT_FALSE(contains(b, {5, 2}));
  EXPECT_FALSE(contains(b, {2, -1e-12}));
}

TEST(Box, Accessors) {
  const Box b = Box::from_xywh(1, 2, 3, 4);
  EXPECT_EQ(b, (Box{1, 2, 4, 6}));
  EXPECT_EQ(b.area(), 12.0);
  EXPECT_TRUE(b.valid());
  EXPECT_FALSE((Box{2, 0, 1, 1}).valid());
}

}  // namespace
}  // namespace pooldet
