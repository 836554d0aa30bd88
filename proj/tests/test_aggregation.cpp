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

#include <algorithm>
#include <cmath>
#include <random>

#include "pooldet/aggregation.hpp"
#include "pooldet/assignment.hpp"
#include "pooldet/box_coding.hpp"
#include "test_support.hpp"

namespace pooldet {
namespace {

using testing::uniform;
using testing::uniform_int;

Detection det(Box b, int cls, double score, Location src = {}) { return {b, cls, score, src}; }

InferenceConfig defaults() { return InferenceConfig{}; }

double logit(double p) { return std::log(p / (1.0 - p)); }

TEST(DecodeBox, ZeroSidesGiveThePointAtTheCenter) {
  const GridSpec g{0, 8.0, 16, 16};
  const Box b = decode_box({0, 5, 5}, {0, 0, 0, 0}, g);
  EXPECT_EQ(b, (Box{44, 44, 44, 44}));
}

TEST(DecodeBox, DirectArithmetic) {
  const GridSpec g{0, 8.0, 16, 16};
  EXPECT_EQ(decode_box({0, 5, 5}, {1, 1, 2, 2}, g), (Box{36, 36, 60, 60}));
}

TEST(DecodeBox, ClipsToImage) {
  const GridSpec g{0, 8.0, 16, 16};
  EXPECT_EQ(decode_box({0, 0, 0}, {3, 3, 1, 1}, g, Box{0, 0, 128, 128}), (Box{0, 0, 12, 12}));
}

TEST(DecodeBox, RoundTripsEncodedBoxes) {
  std::mt19937_64 rng(61);
  const GridSpec g{1, 8.0, 16, 16};
  for (int n = 0; n < 200; ++n) {
    const Box gt = testing::random_box(rng, 128, 128, 10, 100);
    for (int i = 0; i < g.height; ++i)
      for (int j = 0; j < g.width; ++j) {
        if (!contains(gt, g.center(i, j))) continue;
        const Box b = decode_box({1, i, j}, encode_sides(g.center(i, j), gt, g.stride), g);
        EXPECT_NEAR(b.x1, gt.x1, 1e-12);
        EXPECT_NEAR(b.y1, gt.y1, 1e-12);
        EXPECT_NEAR(b.x2, gt.x2, 1e-12);
        EXPECT_NEAR(b.y2, gt.y2, 1e-12);
      }
  }
}

struct Maps {
  PyramidSpec pyramid = PyramidSpec::make(32, 32, 8.0, 2, 10.0);  // 4x4 and 2x2
  LevelMaps logits;
  LevelMaps regression;

  explicit Maps(double fill = -10.0) {
    for (const GridSpec& g : pyramid.levels) {
      logits.emplace_back(g.height, g.width, 3);
      for (double& v : logits.back().data()) v = fill;
      regression.emplace_back(g.height, g.width, 4);
      for (double& v : regression.back().data()) v = 1.0;
    }
  }
};

TEST(CollectDetections, StronglyNegativeLogitsGiveNothing) {
  const Maps m;
  EXPECT_TRUE(collect_detections(m.logits, m.regression, m.pyramid, defaults()).empty());
}

TEST(CollectDetections, SingleConfidentLocation) {
  Maps m;
  m.logits[0].at(1, 2, 1) = logit(0.9);
  m.logits[0].at(1, 2, 2) = logit(0.3);
  const auto dets = collect_detections(m.logits, m.regression, m.pyramid, defaults());
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].class_id, 1);
  EXPECT_NEAR(dets[0].score, 0.9, 1e-12);
  EXPECT_EQ(dets[0].source, (Location{0, 1, 2}));
  EXPECT_EQ(dets[0].box, (Box{12, 4, 28, 20}));
}

TEST(CollectDetections, PerLevelTopK) {
  Maps m;
  const double probs[5] = {0.3, 0.9, 0.5, 0.8, 0.2};
  for (int k = 0; k < 5; ++k) m.logits[0].at(k / 4, k % 4, 0) = logit(probs[k]);
  m.logits[1].at(0, 0, 2) = logit(0.1);
  InferenceConfig cfg;
  cfg.per_level_topk = 2;
  const auto dets = collect_detections(m.logits, m.regression, m.pyramid, cfg);
  ASSERT_EQ(dets.size(), 3u);
  EXPECT_EQ(dets[0].source, (Location{0, 0, 1}));
  EXPECT_EQ(dets[1].source, (Location{0, 0, 3}));
  EXPECT_EQ(dets[2].source, (Location{1, 0, 0}));
}

TEST(CollectDetections, ThresholdIsStrict) {
  Maps m;
  m.logits[0].at(0, 0, 0) = 0.0;  // 0.5
  InferenceConfig cfg;
  cfg.score_threshold = 0.5;
  EXPECT_TRUE(collect_detections(m.logits, m.regression, m.pyramid, cfg).empty());
}

TEST(Vote, SingleDetectionUnchanged) {
  const std::vector<Detection> d{det({0, 0, 10, 10}, 0, 0.7)};
  EXPECT_EQ(vote_aggregate(d, defaults())[0].score, 0.7);
}

TEST(Vote, CoincidentBoxesAddFullScores) {
  const std::vector<Detection> d{det({0, 0, 10, 10}, 0, 0.5), det({0, 0, 10, 10}, 0, 0.4)};
  const auto out = vote_aggregate(d, defaults());
  EXPECT_DOUBLE_EQ(out[0].score, 0.9);
  EXPECT_DOUBLE_EQ(out[1].score, 0.9);
}

TEST(Vote, PartialOverlapUsesKToTheIouMinusOne) {
  const std::vector<Detection> d{det({0, 0, 10, 10}, 0, 0.5), det({0, 0, 10, 8}, 0, 0.4)};
  ASSERT_EQ(iou(d[0].box, d[1].box), 0.8);
  const auto r = vote_aggregate_with_voters(d, defaults());
  EXPECT_NEAR(r.detections[0].score, testing::kScoreA08, 1e-12);
  EXPECT_NEAR(r.detections[1].score, testing::kScoreB08, 1e-12);
  EXPECT_NEAR(r.voters[0][1].weight, testing::kMultiplier08 * 0.4, 1e-12);
  EXPECT_NEAR(r.detections[0].score, 0.691270, 1e-6);
  EXPECT_NEAR(r.detections[1].score, 0.639088, 1e-6);
}

TEST(Vote, DifferentClassesDoNotVote) {
  const std::vector<Detection> d{det({0, 0, 10, 10}, 0, 0.5), det({0, 0, 10, 10}, 1, 0.4)};
  const auto out = vote_aggregate(d, defaults());
  EXPECT_EQ(out[0].score, 0.5);
  EXPECT_EQ(out[1].score, 0.4);
}

TEST(Vote, ThresholdIsStrict) {
  const std::vector<Detection> d{det({0, 0, 10, 10}, 0, 0.5), det({0, 0, 10, 6}, 0, 0.4)};
  ASSERT_EQ(iou(d[0].box, d[1].box), 0.6);
  const auto out = vote_aggregate(d, defaults());
  EXPECT_EQ(out[0].score, 0.5);
  EXPECT_EQ(out[1].score, 0.4);
}

TEST(Vote, BoxesAndClassesNeverChange) {
  std::mt19937_64 rng(62);
  const auto d = testing::random_detections(rng, 40, 3);
  const auto out = vote_aggregate(d, defaults());
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(out[i].box, d[i].box);
    EXPECT_EQ(out[i].class_id, d[i].class_id);
    EXPECT_EQ(out[i].source, d[i].source);
  }
}

TEST(Vote, PropertyMatchesReferenceExactly) {
  std::mt19937_64 rng(63);
  for (int trial = 0; trial < 300; ++trial) {
    const auto d = testing::random_detections(rng, uniform_int(rng, 0, 50), uniform_int(rng, 1, 3));
    InferenceConfig cfg;
    cfg.k = uniform(rng, 1.5, 100);
    cfg.vote_iou_threshold = uniform(rng, 0.3, 0.9);
    const auto out = vote_aggregate(d, cfg);
    const auto ref = testing::reference_vote(d, cfg.k, cfg.vote_iou_threshold);
    for (std::size_t i = 0; i < d.size(); ++i) ASSERT_EQ(out[i].score, ref[i]) << trial;
  }
}

TEST(Vote, PropertyPermutationInvariance) {
  std::mt19937_64 rng(64);
  for (int trial = 0; trial < 100; ++trial) {
    auto d = testing::random_detections(rng, 40, 2);
    std::sort(d.begin(), d.end(), canonical_less);
    d.erase(std::unique(d.begin(), d.end(),
                        [](const Detection& a, const Detection& b) {
                          return a.source == b.source && a.class_id == b.class_id;
                        }),
            d.end());
    const auto base = vote_aggregate(d, defaults());
    auto shuffled = d;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto out = vote_aggregate(shuffled, defaults());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto it = std::find_if(shuffled.begin(), shuffled.end(), [&](const Detection& x) {
        return x.source == d[i].source && x.class_id == d[i].class_id;
      });
      EXPECT_NEAR(out[static_cast<std::size_t>(it - shuffled.begin())].score, base[i].score, 1e-12);
    }
    // Under a canonical sort the sums are bit-identical.
    std::sort(shuffled.begin(), shuffled.end(), canonical_less);
    out = vote_aggregate(shuffled, defaults());
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(out[i].score, base[i].score);
  }
}

TEST(Vote, PropertyMonotoneWithEqualityIffNoPartner) {
  std::mt19937_64 rng(65);
  const InferenceConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    const auto d = testing::random_detections(rng, 30, 2);
    const auto r = vote_aggregate_with_voters(d, cfg);
    for (std::size_t i = 0; i < d.size(); ++i) {
      EXPECT_GE(r.detections[i].score, d[i].score);
      bool partner = false;
      for (std::size_t j = 0; j < d.size(); ++j)
        partner |= j != i && d[j].class_id == d[i].class_id &&
                   iou(d[i].box, d[j].box) > cfg.vote_iou_threshold;
      EXPECT_EQ(r.detections[i].score == d[i].score, !partner);
      EXPECT_EQ(r.voters[i].size() > 1, partner);
    }
  }
}

TEST(Vote, PropertySymmetricMultipliers) {
  std::mt19937_64 rng(66);
  for (int trial = 0; trial < 50; ++trial) {
    auto d = testing::random_detections(rng, 30, 1);
    for (std::size_t i = 0; i < d.size(); ++i) d[i].source = Location{0, static_cast<int>(i), 0};
    const auto r = vote_aggregate_with_voters(d, defaults());
    for (std::size_t i = 0; i < d.size(); ++i) {
      for (std::size_t v = 1; v < r.voters[i].size(); ++v) {
        const auto j = static_cast<std::size_t>(r.voters[i][v].source.i);
        const double m_ij = r.voters[i][v].weight / d[j].score;
        const auto back = std::find_if(r.voters[j].begin() + 1, r.voters[j].end(),
                                       [&](const Voter& w) { return w.source == d[i].source; });
        ASSERT_NE(back, r.voters[j].end());
        EXPECT_DOUBLE_EQ(back->weight / d[i].score, m_ij);
      }
    }
  }
}

TEST(Vote, PropertyCoincidentMembersSumLikePooling) {
  std::mt19937_64 rng(67);
  for (int trial = 0; trial < 50; ++trial) {
    const Box b = testing::random_box(rng, 128, 128, 10, 60);
    std::vector<Detection> d;
    double sum = 0.0;
    for (int k = 0; k < uniform_int(rng, 1, 8); ++k) {
      d.push_back(det(b, 0, uniform(rng, 0.05, 1.0), Location{0, k, 0}));
      sum += d.back().score;
    }
    for (const auto& x : vote_aggregate(d, defaults())) EXPECT_NEAR(x.score, sum, 1e-12);
  }
}

TEST(Nms, IdenticalSameClassBoxesKeepOne) {
  const std::vector<Detection> d{det({0, 0, 10, 10}, 0, 0.5), det({0, 0, 10, 10}, 0, 0.7)};
  const auto out = class_aware_nms(d, 0.5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].score, 0.7);
}

TEST(Nms, DifferentClassesBothSurvive) {
  const std::vector<Detection> d{det({0, 0, 10, 10}, 0, 0.5), det({0, 0, 10, 10}, 1, 0.7)};
  EXPECT_EQ(class_aware_nms(d, 0.5).size(), 2u);
}

TEST(Nms, ChainKeepsEnds) {
  // A overlaps B, B overlaps C, A and C disjoint. Two disjoint boxes cannot
  // both exceed IoU 0.5 with a third, so the chain uses threshold 0.3.
  const Box a{0, 0, 10, 10}, b{5, 0, 15, 10}, c{10, 0, 20, 10};
  ASSERT_GT(iou(a, b), 0.3);
  ASSERT_GT(iou(b, c), 0.3);
  ASSERT_EQ(iou(a, c), 0.0);
  const std::vector<Detection> d{det(c, 0, 0.5), det(a, 0, 0.9), det(b, 0, 0.7)};
  EXPECT_EQ(class_aware_nms_indices(d, 0.3, 100), (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(class_aware_nms_indices(d, 0.3, 100), testing::reference_nms(d, 0.3, 100));
}

TEST(Nms, TiesKeepInputOrder) {
  const std::vector<Detection> d{det({0, 0, 10, 10}, 0, 0.5, {0, 0, 1}),
                                 det({0, 0, 10, 10}, 0, 0.5, {0, 0, 0})};
  EXPECT_EQ(class_aware_nms_indices(d, 0.5, 100), (std::vector<std::size_t>{0}));
}

TEST(Nms, TruncatesToMaxDetectionsByScore) {
  std::vector<Detection> d;
  for (int k = 0; k < 10; ++k) d.push_back(det({k * 20.0, 0, k * 20.0 + 10, 10}, 0, 0.1 * (k + 1)));
  const auto out = class_aware_nms(d, 0.5, 3);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_DOUBLE_EQ(out[0].score, 1.0);
  EXPECT_DOUBLE_EQ(out[2].score, 0.8);
}

TEST(Nms, PropertyMatchesReferenceExactly) {
  std::mt19937_64 rng(68);
  for (int trial = 0; trial < 300; ++trial) {
    const auto d = testing::random_detections(rng, uniform_int(rng, 0, 50), uniform_int(rng, 1, 3));
    const double t = uniform(rng, 0.2, 0.8);
    const auto cap = static_cast<std::size_t>(uniform_int(rng, 1, 60));
    ASSERT_EQ(class_aware_nms_indices(d, t, cap), testing::reference_nms(d, t, cap)) << trial;
  }
}

TEST(Nms, PropertySurvivorsDoNotOverlapWithinClass) {
  std::mt19937_64 rng(69);
  for (int trial = 0; trial < 100; ++trial) {
    const auto out = class_aware_nms(testing::random_detections(rng, 50, 2), 0.5);
    for (std::size_t a = 0; a < out.size(); ++a) {
      if (a > 0) {
        EXPECT_GE(out[a - 1].score, out[a].score);
      }
      for (std::size_t b = a + 1; b < out.size(); ++b) {
        if (out[a].class_id == out[b].class_id) {
          EXPECT_LE(iou(out[a].box, out[b].box), 0.5);
        }
      }
    }
  }
}

HeadOutputs random_outputs(std::mt19937_64& rng, const PyramidSpec& p) {
  return {testing::random_maps(rng, p, 3, -4, 3), testing::random_maps(rng, p, 4, 0.5, 3)};
}

TEST(Infer, WithoutPoolingReducesToCollectPlusNms) {
  std::mt19937_64 rng(70);
  const PyramidSpec p = PyramidSpec::make(64, 64, 8.0, 2, 10.0);
  InferenceConfig cfg;
  cfg.pooling_enabled = false;
  for (int trial = 0; trial < 30; ++trial) {
    const HeadOutputs o = random_outputs(rng, p);
    const auto raw = collect_detections(o.logits, o.regression, p, cfg);
    const auto expected = class_aware_nms(raw, cfg.nms_iou_threshold, 100);
    const auto got = infer(o, p, cfg);
    ASSERT_EQ(got.size(), expected.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      EXPECT_EQ(got[k].detection, expected[k]);
      ASSERT_EQ(got[k].voters.size(), 1u);
      EXPECT_EQ(got[k].voters[0].weight, 1.0);
    }
  }
}

TEST(Infer, PoolingChangesOnlyScoresBeforeNms) {
  std::mt19937_64 rng(71);
  const PyramidSpec p = PyramidSpec::make(64, 64, 8.0, 2, 10.0);
  for (int trial = 0; trial < 30; ++trial) {
    const HeadOutputs o = random_outputs(rng, p);
    const auto raw = collect_detections(o.logits, o.regression, p, defaults());
    const auto pooled = infer(o, p, defaults());
    for (const auto& pd : pooled) {
      const auto it = std::find_if(raw.begin(), raw.end(), [&](const Detection& d) {
        return d.source == pd.detection.source;
      });
      ASSERT_NE(it, raw.end());
      EXPECT_EQ(it->box, pd.detection.box);
      EXPECT_EQ(it->class_id, pd.detection.class_id);
      EXPECT_GE(pd.detection.score, it->score);
    }
  }
}

TEST(Infer, VoterWeightsSumToOne) {
  std::mt19937_64 rng(72);
  const PyramidSpec p = PyramidSpec::make(64, 64, 8.0, 2, 10.0);
  for (int trial = 0; trial < 30; ++trial) {
    const auto pooled = infer(random_outputs(rng, p), p, defaults());
    for (const auto& pd : pooled) {
      double s = 0.0;
      for (const Voter& v : pd.voters) {
        EXPECT_GT(v.weight, 0.0);
        s += v.weight;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
      EXPECT_EQ(pd.voters[0].source, pd.detection.source);
    }
  }
}

TEST(Infer, LonelyDetectionHasItselfAsOnlyVoter) {
  Maps m;
  m.logits[0].at(1, 1, 0) = logit(0.8);
  const auto out = infer(HeadOutputs{m.logits, m.regression}, m.pyramid, defaults());
  ASSERT_EQ(out.size(), 1u);
  ASSERT_EQ(out[0].voters.size(), 1u);
  EXPECT_EQ(out[0].voters[0].weight, 1.0);
  EXPECT_NEAR(out[0].detection.score, 0.8, 1e-12);
}

TEST(InferenceConfigTest, RejectsBadValues) {
  InferenceConfig c;
  c.k = 1.0;
  EXPECT_THROW(c.validate(), InvalidParameter);
  c = InferenceConfig{};
  c.vote_iou_threshold = 1.0;
  EXPECT_THROW(c.validate(), InvalidParameter);
  c = InferenceConfig{};
  c.nms_iou_threshold = 0.0;
  EXPECT_THROW(c.validate(), InvalidParameter);
  c = InferenceConfig{};
  c.max_detections = 0;
  EXPECT_THROW(c.validate(), InvalidParameter);
}

}  // namespace
}  // namespace pooldet
