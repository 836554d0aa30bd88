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

// Toy detection head.
//
// A fixed patch descriptor stands in for the backbone: for each feature
// location, a square window centered on the location's image point (side =
// window_strides * stride) is box-filtered down to cells x cells, flattened,
// and followed by the location's normalized image coordinates. Two parallel
// MLP stacks, shared across all locations and levels, map a descriptor to C
// classification logits and to 4 non-negative side distances (softplus).
// This is a 1x1 convolution head over a hand-crafted feature map.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pooldet/assignment.hpp"
#include "pooldet/errors.hpp"
#include "pooldet/image.hpp"
#include "pooldet/losses.hpp"
#include "pooldet/tensor.hpp"

namespace pooldet {

struct DescriptorConfig {
  int cells = 8;
  double window_strides = 6.0;

  int length() const { return cells * cells + 2; }

  void validate() const {
    if (cells <= 0) throw InvalidParameter("descriptor.cells must be positive");
    if (!(window_strides > 0.0)) throw InvalidParameter("descriptor.window_strides must be > 0");
  }
};

struct HeadConfig {
  int num_classes = 3;
  int hidden = 64;
  int depth = 2;
  double prior = 0.01;

  void validate() const {
    if (num_classes < 1) throw InvalidParameter("head.num_classes must be >= 1");
    if (hidden < 1) throw InvalidParameter("head.hidden must be >= 1");
    if (depth < 0) throw InvalidParameter("head.depth must be >= 0");
    if (!(prior > 0.0 && prior < 1.0)) throw InvalidParameter("head.prior must lie in (0, 1)");
  }
};

namespace detail {

// Pixel overlaps of the 1-D interval [lo, hi): (pixel index, overlap length).
inline void interval_weights(double lo, double hi, std::vector<std::pair<int, double>>& out) {
  out.clear();
  const int first = static_cast<int>(std::floor(lo));
  const int last = static_cast<int>(std::ceil(hi)) - 1;
  for (int p = first; p <= last; ++p) {
    const double w = std::min(hi, p + 1.0) - std::max(lo, static_cast<double>(p));
    if (w > 0.0) out.emplace_back(p, w);
  }
}

}  // namespace detail

// Descriptor of location (i, j) on `grid`; `out` must hold config.length()
// values. Pixels outside the image read as 0.
inline void extract_descriptor(const Image& image, const GridSpec& grid, int i, int j,
                               const DescriptorConfig& config, std::span<double> out) {
  if (i < 0 || j < 0 || i >= grid.height || j >= grid.width) {
    throw ContractViolation("extract_descriptor: location outside the grid");
  }
  if (out.size() != static_cast<std::size_t>(config.length())) {
    throw ContractViolation("extract_descriptor: output has wrong length");
  }
  const Point c = grid.center(i, j);
  const double extent = config.window_strides * grid.stride;
  const double cell = extent / config.cells;
  const double x0 = c.x - 0.5 * extent;
  const double y0 = c.y - 0.5 * extent;
  const double inv_area = 1.0 / (cell * cell);

  std::vector<std::pair<int, double>> wx, wy;
  for (int a = 0; a < config.cells; ++a) {
    detail::interval_weights(y0 + a * cell, y0 + (a + 1) * cell, wy);
    for (int b = 0; b < config.cells; ++b) {
      detail::interval_weights(x0 + b * cell, x0 + (b + 1) * cell, wx);
      double acc = 0.0;
      for (const auto& [py, hy] : wy) {
        if (py < 0 || py >= image.height) continue;
        double row = 0.0;
        for (const auto& [px, hx] : wx) row += hx * image.value(px, py);
        acc += hy * row;
      }
      out[static_cast<std::size_t>(a) * config.cells + b] = acc * inv_area;
    }
  }
  out[out.size() - 2] = c.x / image.width;
  out[out.size() - 1] = c.y / image.height;
}

inline std::vector<double> extract_descriptor(const Image& image, const GridSpec& grid, int i,
                                              int j, const DescriptorConfig& config) {
  std::vector<double> out(static_cast<std::size_t>(config.length()));
  extract_descriptor(image, grid, i, j, config, out);
  return out;
}

// Descriptors of every location of every level, one column per location in
// (level, i, j) order.
struct DescriptorBatch {
  Eigen::MatrixXd features;
  std::vector<int> level_offset;  // first column of each level

  int column(const Location& loc, const PyramidSpec& pyramid) const {
    return level_offset[loc.level] + loc.i * pyramid.levels[loc.level].width + loc.j;
  }
};

inline DescriptorBatch extract_all(const Image& image, const PyramidSpec& pyramid,
                                   const DescriptorConfig& config) {
  config.validate();
  DescriptorBatch batch;
  batch.features.resize(config.length(), pyramid.total_locations());
  int col = 0;
  for (const GridSpec& g : pyramid.levels) {
    batch.level_offset.push_back(col);
    for (int i = 0; i < g.height; ++i) {
      for (int j = 0; j < g.width; ++j, ++col) {
        extract_descriptor(image, g, i, j, config,
                           std::span<double>(batch.features.col(col).data(),
                                             static_cast<std::size_t>(config.length())));
      }
    }
  }
  return batch;
}

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

struct ToyHeadParams {
  std::vector<DenseLayer> cls;
  std::vector<DenseLayer> reg;

  int input_dim() const { return static_cast<int>(cls.front().weight.cols()); }
  int num_classes() const { return static_cast<int>(cls.back().weight.rows()); }

  // Every weight and bias as a flat view, classification stack first.
  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> out;
    for (auto* stack : {&cls, &reg}) {
      for (auto& layer : *stack) {
        out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
        out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
      }
    }
    return out;
  }
  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> out;
    for (auto* stack : {&cls, &reg}) {
      for (const auto& layer : *stack) {
        out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
        out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
      }
    }
    return out;
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += t.size();
    return n;
  }

  bool same_shape(const ToyHeadParams& o) const {
    if (cls.size() != o.cls.size() || reg.size() != o.reg.size()) return false;
    auto eq = [](const std::vector<DenseLayer>& a, const std::vector<DenseLayer>& b) {
      for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k].weight.rows() != b[k].weight.rows() || a[k].weight.cols() != b[k].weight.cols())
          return false;
      }
      return true;
    };
    return eq(cls, o.cls) && eq(reg, o.reg);
  }

  bool all_finite() const {
    for (const auto& t : tensors())
      for (double v : t)
        if (!std::isfinite(v)) return false;
    return true;
  }

  ToyHeadParams zeros_like() const {
    ToyHeadParams z = *this;
    for (auto& t : z.tensors()) std::fill(t.begin(), t.end(), 0.0);
    return z;
  }

  friend bool operator==(const ToyHeadParams& a, const ToyHeadParams& b) {
    if (!a.same_shape(b)) return false;
    const auto ta = a.tensors();
    const auto tb = b.tensors();
    for (std::size_t k = 0; k < ta.size(); ++k)
      if (!std::equal(ta[k].begin(), ta[k].end(), tb[k].begin())) return false;
    return true;
  }
};

// Subtracted from every descriptor value before the first layer, so that
// the head sees roughly zero-centred inputs.
inline constexpr double kInputOffset = 0.5;

inline double inverse_softplus(double y) { return std::log(std::expm1(y)); }

// He-normal hidden layers. The last classification layer starts near zero
// with its bias at the logit of `prior`; the last regression layer starts
// near zero with outputs of about two strides per side.
inline ToyHeadParams init_params(const HeadConfig& head, int input_dim, std::uint64_t seed) {
  head.validate();
  std::mt19937_64 rng(seed);
  auto make_stack = [&](int out_dim, double final_bias) {
    std::vector<DenseLayer> stack;
    int in = input_dim;
    for (int d = 0; d < head.depth; ++d) {
      std::normal_distribution<double> n(0.0, std::sqrt(2.0 / in));
      DenseLayer layer{Eigen::MatrixXd(head.hidden, in), Eigen::VectorXd::Zero(head.hidden)};
      for (Eigen::Index k = 0; k < layer.weight.size(); ++k) layer.weight.data()[k] = n(rng);
      stack.push_back(std::move(layer));
      in = head.hidden;
    }
    std::normal_distribution<double> n(0.0, 0.01);
    DenseLayer last{Eigen::MatrixXd(out_dim, in), Eigen::VectorXd::Constant(out_dim, final_bias)};
    for (Eigen::Index k = 0; k < last.weight.size(); ++k) last.weight.data()[k] = n(rng);
    stack.push_back(std::move(last));
    return stack;
  };
  ToyHeadParams p;
  p.cls = make_stack(head.num_classes, -std::log((1.0 - head.prior) / head.prior));
  p.reg = make_stack(4, inverse_softplus(2.0));
  return p;
}

// Intermediate activations of both stacks, kept for backward.
struct ForwardCache {
  Eigen::MatrixXd input;                 // centred descriptors
  std::vector<Eigen::MatrixXd> cls_act;  // post-ReLU outputs of hidden layers
  std::vector<Eigen::MatrixXd> reg_act;
  Eigen::MatrixXd reg_raw;               // pre-softplus regression outputs
};

struct HeadOutputs {
  LevelMaps logits;      // per level H x W x C
  LevelMaps regression;  // per level H x W x 4, non-negative
};

namespace detail {

inline Eigen::MatrixXd run_stack(const std::vector<DenseLayer>& stack, const Eigen::MatrixXd& x,
                                 std::vector<Eigen::MatrixXd>* acts) {
  Eigen::MatrixXd h = x;
  for (std::size_t k = 0; k < stack.size(); ++k) {
    Eigen::MatrixXd z = stack[k].weight * h;
    z.colwise() += stack[k].bias;
    if (k + 1 < stack.size()) {
      h = z.cwiseMax(0.0);
      if (acts) acts->push_back(h);
    } else {
      h = std::move(z);
    }
  }
  return h;
}

inline void backprop_stack(const std::vector<DenseLayer>& stack, const Eigen::MatrixXd& input,
                           const std::vector<Eigen::MatrixXd>& acts, Eigen::MatrixXd delta,
                           std::vector<DenseLayer>& grads) {
  for (std::size_t k = stack.size(); k-- > 0;) {
    const Eigen::MatrixXd& below = k == 0 ? input : acts[k - 1];
    grads[k].weight.noalias() += delta * below.transpose();
    grads[k].bias.noalias() += delta.rowwise().sum();
    if (k == 0) break;
    Eigen::MatrixXd next = stack[k].weight.transpose() * delta;
    delta = next.cwiseProduct((acts[k - 1].array() > 0.0).cast<double>().matrix());
  }
}

inline void check_head(const ToyHeadParams& params, int input_dim) {
  if (params.cls.empty() || params.reg.empty()) throw ContractViolation("head: empty stack");
  if (params.input_dim() != input_dim || params.reg.front().weight.cols() != input_dim) {
    throw ContractViolation("head: input width " + std::to_string(params.input_dim()) +
                            " does not match descriptor length " + std::to_string(input_dim));
  }
  if (params.reg.back().weight.rows() != 4) {
    throw ContractViolation("head: regression stack must output 4 values");
  }
}

}  // namespace detail

inline HeadOutputs forward(const ToyHeadParams& params, const DescriptorBatch& batch,
                           const PyramidSpec& pyramid, ForwardCache* cache = nullptr) {
  detail::check_head(params, static_cast<int>(batch.features.rows()));
  if (batch.features.cols() != pyramid.total_locations()) {
    throw ContractViolation("forward: descriptor batch does not cover the pyramid");
  }
  std::vector<Eigen::MatrixXd> cls_acts, reg_acts;
  Eigen::MatrixXd input = batch.features.array() - kInputOffset;
  const Eigen::MatrixXd logits = detail::run_stack(params.cls, input, cache ? &cls_acts : nullptr);
  const Eigen::MatrixXd raw = detail::run_stack(params.reg, input, cache ? &reg_acts : nullptr);

  HeadOutputs out;
  const int C = params.num_classes();
  for (const GridSpec& g : pyramid.levels) {
    FeatureMap lm(g.height, g.width, C);
    FeatureMap rm(g.height, g.width, 4);
    const int off = batch.level_offset[g.level];
    for (int i = 0; i < g.height; ++i) {
      for (int j = 0; j < g.width; ++j) {
        const int col = off + i * g.width + j;
        for (int c = 0; c < C; ++c) lm.at(i, j, c) = logits(c, col);
        for (int k = 0; k < 4; ++k) rm.at(i, j, k) = softplus(raw(k, col));
      }
    }
    out.logits.push_back(std::move(lm));
    out.regression.push_back(std::move(rm));
  }
  if (cache) {
    cache->input = std::move(input);
    cache->cls_act = std::move(cls_acts);
    cache->reg_act = std::move(reg_acts);
    cache->reg_raw = raw;
  }
  return out;
}

inline HeadOutputs forward(const ToyHeadParams& params, const Image& image,
                           const PyramidSpec& pyramid, const DescriptorConfig& descriptor) {
  return forward(params, extract_all(image, pyramid, descriptor), pyramid);
}

// Parameter gradients given upstream gradients with respect to the logits
// and to the (post-softplus) regression outputs. Summed over all locations.
inline ToyHeadParams backward(const ToyHeadParams& params, const ForwardCache& cache,
                              const PyramidSpec& pyramid, std::span<const FeatureMap> dlogits,
                              std::span<const FeatureMap> dregression) {
  const int C = params.num_classes();
  const auto n = static_cast<Eigen::Index>(pyramid.total_locations());
  if (dlogits.size() != pyramid.levels.size() || dregression.size() != pyramid.levels.size()) {
    throw ContractViolation("backward: upstream gradients must cover every level");
  }
  if (cache.input.cols() != n) throw ContractViolation("backward: cache does not match pyramid");

  Eigen::MatrixXd dcls(C, n);
  Eigen::MatrixXd draw(4, n);
  Eigen::Index col = 0;
  for (const GridSpec& g : pyramid.levels) {
    const FeatureMap& dl = dlogits[g.level];
    const FeatureMap& dr = dregression[g.level];
    if (dl.height() != g.height || dl.width() != g.width || dl.channels() != C ||
        dr.height() != g.height || dr.width() != g.width || dr.channels() != 4) {
      throw ContractViolation("backward: upstream gradient shape mismatch at level " +
                              std::to_string(g.level));
    }
    for (int i = 0; i < g.height; ++i) {
      for (int j = 0; j < g.width; ++j, ++col) {
        for (int c = 0; c < C; ++c) dcls(c, col) = dl.at(i, j, c);
        for (int k = 0; k < 4; ++k) draw(k, col) = dr.at(i, j, k) * sigmoid(cache.reg_raw(k, col));
      }
    }
  }

  ToyHeadParams grads = params.zeros_like();
  detail::backprop_stack(params.cls, cache.input, cache.cls_act, std::move(dcls), grads.cls);
  detail::backprop_stack(params.reg, cache.input, cache.reg_act, std::move(draw), grads.reg);
  return grads;
}

inline ToyHeadParams backward(const ToyHeadParams& params, const Image& image,
                              const PyramidSpec& pyramid, const DescriptorConfig& descriptor,
                              std::span<const FeatureMap> dlogits,
                              std::span<const FeatureMap> dregression) {
  ForwardCache cache;
  forward(params, extract_all(image, pyramid, descriptor), pyramid, &cache);
  return backward(params, cache, pyramid, dlogits, dregression);
}

inline void accumulate(ToyHeadParams& into, const ToyHeadParams& g, double scale = 1.0) {
  if (!into.same_shape(g)) throw ContractViolation("accumulate: parameter shapes differ");
  auto dst = into.tensors();
  const auto src = g.tensors();
  for (std::size_t t = 0; t < dst.size(); ++t)
    for (std::size_t k = 0; k < dst[t].size(); ++k) dst[t][k] += scale * src[t][k];
}

struct OptimState {
  double base_lr = 0.01;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int> milestones;  // epochs at which lr drops
  double decay = 0.1;
  ToyHeadParams buffers;        // momentum buffers; empty until first step

  void validate() const {
    if (!(base_lr > 0.0)) throw InvalidParameter("optim.lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidParameter("optim.momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw InvalidParameter("optim.weight_decay must be >= 0");
  }

  // Learning rate for a 0-based epoch: base_lr * decay^(#milestones <= epoch).
  void set_epoch(int epoch) {
    lr = base_lr;
    for (int m : milestones)
      if (epoch >= m) lr *= decay;
  }
};

// buffer <- momentum * buffer + grad + weight_decay * param
// param  <- param - lr * buffer
inline void sgd_step(ToyHeadParams& params, const ToyHeadParams& grads, OptimState& state) {
  if (!params.same_shape(grads)) throw ContractViolation("sgd_step: gradient shapes differ");
  if (state.buffers.cls.empty()) state.buffers = params.zeros_like();
  if (!params.same_shape(state.buffers)) throw ContractViolation("sgd_step: buffer shapes differ");
  auto p = params.tensors();
  const auto g = grads.tensors();
  auto b = state.buffers.tensors();
  for (std::size_t t = 0; t < p.size(); ++t) {
    for (std::size_t k = 0; k < p[t].size(); ++k) {
      b[t][k] = state.momentum * b[t][k] + g[t][k] + state.weight_decay * p[t][k];
      p[t][k] -= state.lr * b[t][k];
    }
  }
}

}  // namespace pooldet
