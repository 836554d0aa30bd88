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

#include <cmath>
#include <fstream>
#include <random>

#include "pooldet/checkpoint.hpp"
#include "pooldet/losses.hpp"
#include "pooldet/model.hpp"
#include "test_support.hpp"

namespace pooldet {
namespace {

using testing::central_difference;
using testing::rel_error;
using testing::uniform;

Image random_image(std::mt19937_64& rng, int w, int h) {
  Image img(w, h);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(testing::uniform_int(rng, 0, 255));
  return img;
}

HeadConfig small_head() {
  HeadConfig h;
  h.hidden = 8;
  return h;
}

TEST(Descriptor, BlackImageIsZeroPlusCoordinates) {
  const Image img(128, 128, 0);
  const GridSpec g{0, 8.0, 16, 16};
  const auto d = extract_descriptor(img, g, 3, 5, DescriptorConfig{});
  ASSERT_EQ(d.size(), 66u);
  for (int k = 0; k < 64; ++k) EXPECT_EQ(d[k], 0.0);
  EXPECT_DOUBLE_EQ(d[64], 44.0 / 128.0);
  EXPECT_DOUBLE_EQ(d[65], 28.0 / 128.0);
}

TEST(Descriptor, ImageCenterHasHalfCoordinates) {
  const Image img(120, 120, 200);
  const GridSpec g{0, 8.0, 15, 15};
  const auto d = extract_descriptor(img, g, 7, 7, DescriptorConfig{});
  EXPECT_DOUBLE_EQ(d[64], 0.5);
  EXPECT_DOUBLE_EQ(d[65], 0.5);
}

TEST(Descriptor, UniformInteriorPatchAveragesToIntensity) {
  const Image img(128, 128, 255);
  const GridSpec g{1, 8.0, 16, 16};
  const auto d = extract_descriptor(img, g, 8, 8, DescriptorConfig{});
  for (int k = 0; k < 64; ++k) EXPECT_NEAR(d[k], 1.0, 1e-12);
}

TEST(Descriptor, OutOfImagePixelsReadZero) {
  const Image img(128, 128, 255);
  const GridSpec g{0, 8.0, 16, 16};
  // Window spans 48 px around (4, 4): the top-left cells lie outside.
  const auto d = extract_descriptor(img, g, 0, 0, DescriptorConfig{});
  EXPECT_EQ(d[0], 0.0);
  EXPECT_NEAR(d[63], 1.0, 1e-12);
}

TEST(Descriptor, ShiftByOneStrideShiftsThePatch) {
  std::mt19937_64 rng(41);
  const double stride = 8.0;
  // Content only in the left half, so nothing is lost by shifting right.
  Image orig(128, 128, 0);
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 64; ++x) orig.at(x, y) = static_cast<std::uint8_t>(testing::uniform_int(rng, 0, 255));
  Image shifted(128, 128, 0);
  for (int y = 0; y < 128; ++y)
    for (int x = 8; x < 128; ++x) shifted.at(x, y) = orig.at(x - 8, y);
  const GridSpec g{0, stride, 16, 16};
  const DescriptorConfig cfg;
  for (int i = 0; i < g.height; ++i) {
    for (int j = 1; j < g.width; ++j) {
      const auto a = extract_descriptor(shifted, g, i, j, cfg);
      const auto b = extract_descriptor(orig, g, i, j - 1, cfg);
      for (int k = 0; k < 64; ++k) ASSERT_EQ(a[k], b[k]) << i << "," << j << " cell " << k;
    }
  }
}

TEST(Descriptor, RejectsOutOfGridLocation) {
  const Image img(32, 32);
  const GridSpec g{0, 8.0, 4, 4};
  EXPECT_THROW(extract_descriptor(img, g, 4, 0, DescriptorConfig{}), ContractViolation);
  EXPECT_THROW(extract_descriptor(img, g, 0, -1, DescriptorConfig{}), ContractViolation);
}

TEST(Forward, OutputShapesMatchGrids) {
  std::mt19937_64 rng(42);
  const PyramidSpec p = PyramidSpec::make(128, 128, 4.0, 3, 10.0);
  const ToyHeadParams params = init_params(HeadConfig{}, 66, 1);
  const HeadOutputs out = forward(params, random_image(rng, 128, 128), p, DescriptorConfig{});
  ASSERT_EQ(out.logits.size(), 3u);
  ASSERT_EQ(out.regression.size(), 3u);
  for (const GridSpec& g : p.levels) {
    EXPECT_EQ(out.logits[g.level].height(), g.height);
    EXPECT_EQ(out.logits[g.level].width(), g.width);
    EXPECT_EQ(out.logits[g.level].channels(), 3);
    EXPECT_EQ(out.regression[g.level].height(), g.height);
    EXPECT_EQ(out.regression[g.level].width(), g.width);
    EXPECT_EQ(out.regression[g.level].channels(), 4);
  }
}

TEST(Forward, FreshInitHasPriorProbabilities) {
  std::mt19937_64 rng(43);
  const PyramidSpec p = PyramidSpec::make(128, 128, 4.0, 3, 10.0);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ToyHeadParams params = init_params(HeadConfig{}, 66, seed);
    const HeadOutputs out = forward(params, random_image(rng, 128, 128), p, DescriptorConfig{});
    for (const auto& m : out.logits)
      for (double z : m.data()) {
        EXPECT_GT(sigmoid(z), 0.005);
        EXPECT_LT(sigmoid(z), 0.02);
      }
    for (const auto& m : out.regression)
      for (double r : m.data()) EXPECT_GE(r, 0.0);
  }
}

TEST(Forward, IdenticalDescriptorsGiveIdenticalOutputs) {
  std::mt19937_64 rng(44);
  const PyramidSpec p = PyramidSpec::make(16, 8, 8.0, 1, 10.0);  // 2 x 1 grid
  DescriptorBatch batch;
  batch.features.resize(66, 2);
  for (int k = 0; k < 66; ++k) batch.features(k, 0) = batch.features(k, 1) = uniform(rng, 0, 1);
  batch.level_offset = {0};
  const HeadOutputs out = forward(init_params(HeadConfig{}, 66, 2), batch, p);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(out.logits[0].at(0, 0, c), out.logits[0].at(0, 1, c));
  for (int k = 0; k < 4; ++k) EXPECT_EQ(out.regression[0].at(0, 0, k), out.regression[0].at(0, 1, k));
}

TEST(Forward, RejectsMismatchedDescriptorWidth) {
  const PyramidSpec p = PyramidSpec::make(32, 32, 8.0, 1, 10.0);
  const ToyHeadParams params = init_params(HeadConfig{}, 10, 0);
  EXPECT_THROW(forward(params, Image(32, 32), p, DescriptorConfig{}), ContractViolation);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(45);
  const PyramidSpec p = PyramidSpec::make(32, 32, 8.0, 2, 10.0);
  const ToyHeadParams params = init_params(small_head(), 66, 3);
  const Image img = random_image(rng, 32, 32);
  const HeadOutputs out = forward(params, img, p, DescriptorConfig{});
  const ToyHeadParams g = backward(params, img, p, DescriptorConfig{}, detail::zeros_like(out.logits),
                                   detail::zeros_like(out.regression));
  for (const auto& t : g.tensors())
    for (double v : t) EXPECT_EQ(v, 0.0);
}

TEST(Backward, RejectsShapeMismatch) {
  std::mt19937_64 rng(46);
  const PyramidSpec p = PyramidSpec::make(32, 32, 8.0, 2, 10.0);
  const ToyHeadParams params = init_params(small_head(), 66, 3);
  const Image img = random_image(rng, 32, 32);
  const HeadOutputs out = forward(params, img, p, DescriptorConfig{});
  LevelMaps bad = detail::zeros_like(out.logits);
  bad[1] = FeatureMap(1, 1, 3);
  EXPECT_THROW(backward(params, img, p, DescriptorConfig{}, bad, detail::zeros_like(out.regression)),
               ContractViolation);
  LevelMaps short_maps(1, FeatureMap(4, 4, 3));
  EXPECT_THROW(
      backward(params, img, p, DescriptorConfig{}, short_maps, detail::zeros_like(out.regression)),
      ContractViolation);
}

// Objective sum_l <U_l, logits_l> + <V_l, regression_l> with U, V zero
// except at one random location.
TEST(Backward, SingleLocationUpstreamMatchesFiniteDifferences) {
  std::mt19937_64 rng(47);
  const PyramidSpec p = PyramidSpec::make(32, 32, 8.0, 2, 10.0);
  const DescriptorConfig dc;
  for (int trial = 0; trial < 3; ++trial) {
    ToyHeadParams params = init_params(small_head(), 66, 10 + trial);
    const Image img = random_image(rng, 32, 32);
    const HeadOutputs out0 = forward(params, img, p, dc);
    LevelMaps u = detail::zeros_like(out0.logits);
    LevelMaps v = detail::zeros_like(out0.regression);
    const int l = testing::uniform_int(rng, 0, 1);
    const int i = testing::uniform_int(rng, 0, p.levels[l].height - 1);
    const int j = testing::uniform_int(rng, 0, p.levels[l].width - 1);
    for (int c = 0; c < 3; ++c) u[l].at(i, j, c) = uniform(rng, -1, 1);
    for (int k = 0; k < 4; ++k) v[l].at(i, j, k) = uniform(rng, -1, 1);
    const ToyHeadParams g = backward(params, img, p, dc, u, v);
    const DescriptorBatch batch = extract_all(img, p, dc);
    auto f = [&] {
      const HeadOutputs o = forward(params, batch, p);
      double s = 0.0;
      for (std::size_t m = 0; m < o.logits.size(); ++m) {
        for (std::size_t k = 0; k < o.logits[m].data().size(); ++k) s += u[m].data()[k] * o.logits[m].data()[k];
        for (std::size_t k = 0; k < o.regression[m].data().size(); ++k)
          s += v[m].data()[k] * o.regression[m].data()[k];
      }
      return s;
    };
    auto pt = params.tensors();
    const auto gt = g.tensors();
    for (std::size_t t = 0; t < pt.size(); ++t)
      for (std::size_t k = 0; k < pt[t].size(); ++k) {
        const double n = central_difference(f, pt[t][k], 1e-5);
        EXPECT_LE(rel_error(gt[t][k], n, 1e-5), 1e-4) << "tensor " << t << " index " << k;
      }
  }
}

TEST(Backward, GradientsAreAdditiveOverImages) {
  std::mt19937_64 rng(48);
  const PyramidSpec p = PyramidSpec::make(32, 32, 8.0, 2, 10.0);
  const DescriptorConfig dc;
  const ToyHeadParams params = init_params(small_head(), 66, 5);
  const Image a = random_image(rng, 32, 32);
  const Image b = random_image(rng, 32, 32);
  const LevelMaps ua = testing::random_maps(rng, p, 3, -1, 1);
  const LevelMaps va = testing::random_maps(rng, p, 4, -1, 1);
  const LevelMaps ub = testing::random_maps(rng, p, 3, -1, 1);
  const LevelMaps vb = testing::random_maps(rng, p, 4, -1, 1);
  const ToyHeadParams ga = backward(params, a, p, dc, ua, va);
  const ToyHeadParams gb = backward(params, b, p, dc, ub, vb);
  ToyHeadParams sum = params.zeros_like();
  accumulate(sum, ga);
  accumulate(sum, gb);
  const auto ts = sum.tensors();
  const auto ta = ga.tensors();
  const auto tb = gb.tensors();
  for (std::size_t t = 0; t < ts.size(); ++t)
    for (std::size_t k = 0; k < ts[t].size(); ++k) EXPECT_EQ(ts[t][k], ta[t][k] + tb[t][k]);
}

// Descriptor -> head -> total loss on a 24 x 24 image with 6 x 6 and 3 x 3
// levels; every parameter is checked.
TEST(Pipeline, FiniteDifferencesThroughTotalLoss) {
  std::mt19937_64 rng(49);
  const PyramidSpec p = PyramidSpec::make(24, 24, 4.0, 2, 6.0);
  ASSERT_EQ(p.levels[0].width, 6);
  ASSERT_EQ(p.levels[1].width, 3);
  const DescriptorConfig dc;
  LossConfig lc;
  for (int trial = 0; trial < 3; ++trial) {
    ToyHeadParams params = init_params(small_head(), 66, 20 + trial);
    // Random hidden biases keep pre-activations off the rectifier kink, and
    // a spread classification prior keeps pooled sums inside the clamp.
    for (auto* stack : {&params.cls, &params.reg})
      for (auto& layer : *stack)
        for (double& b : layer.bias) b = uniform(rng, -0.1, 0.1);
    for (double& b : params.cls.back().bias) b = uniform(rng, -2, 0);
    const Image img = random_image(rng, 24, 24);
    const auto gts = testing::random_gts(rng, testing::uniform_int(rng, 1, 3), 24, 24, 4, 20, 3);
    const AssignmentMap a = label_grid(gts, p, 0.6);
    const DescriptorBatch batch = extract_all(img, p, dc);

    ForwardCache cache;
    const HeadOutputs out = forward(params, batch, p, &cache);
    const TotalLoss loss = total_loss(out.logits, out.regression, a, gts, lc);
    for (const auto& pp : loss.pooled)
      for (bool c : pp.clamped) ASSERT_FALSE(c);
    const ToyHeadParams g = backward(params, cache, p, loss.logit_grad, loss.regression_grad);

    auto f = [&] {
      const HeadOutputs o = forward(params, batch, p);
      return total_loss(o.logits, o.regression, a, gts, lc).total;
    };
    auto pt = params.tensors();
    const auto gt = g.tensors();
    double worst = 0.0;
    for (std::size_t t = 0; t < pt.size(); ++t)
      for (std::size_t k = 0; k < pt[t].size(); ++k) {
        const double n = central_difference(f, pt[t][k], 1e-5);
        worst = std::max(worst, rel_error(gt[t][k], n, 1e-5));
      }
    EXPECT_LE(worst, 1e-4) << "trial " << trial;
  }
}

TEST(Init, DeterministicUnderSeed) {
  EXPECT_TRUE(init_params(HeadConfig{}, 66, 7) == init_params(HeadConfig{}, 66, 7));
  EXPECT_FALSE(init_params(HeadConfig{}, 66, 7) == init_params(HeadConfig{}, 66, 8));
}

TEST(Init, ShapesFollowConfig) {
  HeadConfig h;
  h.hidden = 16;
  h.depth = 3;
  h.num_classes = 5;
  const ToyHeadParams p = init_params(h, 66, 0);
  ASSERT_EQ(p.cls.size(), 4u);
  ASSERT_EQ(p.reg.size(), 4u);
  EXPECT_EQ(p.input_dim(), 66);
  EXPECT_EQ(p.num_classes(), 5);
  EXPECT_EQ(p.reg.back().weight.rows(), 4);
  EXPECT_EQ(p.cls[1].weight.rows(), 16);
  EXPECT_TRUE(p.all_finite());
}

TEST(Sgd, ZeroGradientZeroDecayLeavesParamsUnchanged) {
  ToyHeadParams params = init_params(small_head(), 66, 1);
  const ToyHeadParams before = params;
  OptimState s;
  s.weight_decay = 0.0;
  sgd_step(params, params.zeros_like(), s);
  EXPECT_TRUE(params == before);
}

TEST(Sgd, PlainGradientStepWithoutMomentumOrDecay) {
  ToyHeadParams params = init_params(small_head(), 66, 1);
  const ToyHeadParams before = params;
  ToyHeadParams grads = params.zeros_like();
  std::mt19937_64 rng(50);
  for (auto& t : grads.tensors())
    for (double& v : t) v = uniform(rng, -1, 1);
  OptimState s;
  s.momentum = 0.0;
  s.weight_decay = 0.0;
  s.lr = 0.1;
  sgd_step(params, grads, s);
  const auto pa = params.tensors();
  const auto pb = before.tensors();
  const auto gg = grads.tensors();
  for (std::size_t t = 0; t < pa.size(); ++t)
    for (std::size_t k = 0; k < pa[t].size(); ++k) EXPECT_EQ(pa[t][k], pb[t][k] - 0.1 * gg[t][k]);
}

TEST(Sgd, MomentumAndWeightDecayRecurrence) {
  ToyHeadParams params = init_params(small_head(), 66, 1);
  ToyHeadParams grads = params.zeros_like();
  for (auto& t : grads.tensors()) std::fill(t.begin(), t.end(), 0.5);
  OptimState s;
  s.lr = 0.01;
  s.momentum = 0.9;
  s.weight_decay = 1e-4;
  const double w0 = params.cls[0].weight(0, 0);
  sgd_step(params, grads, s);
  const double b1 = 0.5 + 1e-4 * w0;
  const double w1 = w0 - 0.01 * b1;
  EXPECT_DOUBLE_EQ(params.cls[0].weight(0, 0), w1);
  sgd_step(params, grads, s);
  const double b2 = 0.9 * b1 + 0.5 + 1e-4 * w1;
  EXPECT_DOUBLE_EQ(params.cls[0].weight(0, 0), w1 - 0.01 * b2);
}

TEST(Sgd, MilestonesDropTheRateTenfold) {
  OptimState s;
  s.base_lr = 0.01;
  s.milestones = {8, 11};
  s.set_epoch(0);
  EXPECT_DOUBLE_EQ(s.lr, 0.01);
  s.set_epoch(7);
  EXPECT_DOUBLE_EQ(s.lr, 0.01);
  s.set_epoch(8);
  EXPECT_DOUBLE_EQ(s.lr, 0.001);
  s.set_epoch(10);
  EXPECT_DOUBLE_EQ(s.lr, 0.001);
  s.set_epoch(11);
  EXPECT_DOUBLE_EQ(s.lr, 0.0001);
}

TEST(Sgd, RejectsShapeMismatch) {
  ToyHeadParams params = init_params(small_head(), 66, 1);
  const ToyHeadParams other = init_params(HeadConfig{}, 66, 1);
  OptimState s;
  EXPECT_THROW(sgd_step(params, other, s), ContractViolation);
}

TEST(Checkpoint, RoundTripsBitExactly) {
  testing::TempDir dir("ckpt");
  HeadConfig h;
  h.depth = 3;
  const Checkpoint ckpt{0x0123456789abcdefULL, init_params(h, 66, 9)};
  save_checkpoint(ckpt, dir / "a.ckpt");
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(back.config_hash, ckpt.config_hash);
  EXPECT_TRUE(back.params == ckpt.params);
}

TEST(Checkpoint, RejectsBadMagicAndTruncation) {
  testing::TempDir dir("ckpt");
  {
    std::ofstream out(dir / "bad.ckpt", std::ios::binary);
    out << "not a checkpoint at all";
  }
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), IoError);
  save_checkpoint({1, init_params(small_head(), 66, 1)}, dir / "full.ckpt");
  const auto size = std::filesystem::file_size(dir / "full.ckpt");
  std::filesystem::copy_file(dir / "full.ckpt", dir / "cut.ckpt");
  std::filesystem::resize_file(dir / "cut.ckpt", size / 2);
  EXPECT_THROW(load_checkpoint(dir / "cut.ckpt"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}

}  // namespace
}  // namespace pooldet
