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

// Training losses with closed-form gradients.
//
// Classification: every instance contributes a single focal-loss term
// evaluated on the sum of its member locations' per-class sigmoid
// probabilities; each negative location contributes its own per-class focal
// terms. The pooled vector is clamped to [eps, 1 - eps] and the gradient
// through an active clamp is zero. The classification total is divided by
// max(1, #instances).
//
// Regression: smooth-L1 on stride-normalized side distances, averaged over
// positive locations and the four components (not pooled).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pooldet/assignment.hpp"
#include "pooldet/box_coding.hpp"
#include "pooldet/errors.hpp"
#include "pooldet/tensor.hpp"

namespace pooldet {

enum class PoolingMode { kSum, kMax };

inline std::string to_string(PoolingMode m) { return m == PoolingMode::kSum ? "sum" : "max"; }

inline PoolingMode pooling_mode_from_string(const std::string& s) {
  if (s == "sum") return PoolingMode::kSum;
  if (s == "max") return PoolingMode::kMax;
  throw InvalidParameter("loss.pooling_mode must be 'sum' or 'max', got '" + s + "'");
}

struct LossConfig {
  double alpha = 0.4;
  double gamma = 1.5;
  double regression_weight = 0.75;
  double smooth_l1_beta = 1.0;
  double prob_clamp_epsilon = 1e-4;
  PoolingMode pooling_mode = PoolingMode::kSum;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidParameter("loss.alpha must lie in (0, 1)");
    if (!(gamma >= 0.0)) throw InvalidParameter("loss.gamma must be >= 0");
    if (!(regression_weight > 0.0)) throw InvalidParameter("loss.regression_weight must be > 0");
    if (!(smooth_l1_beta > 0.0)) throw InvalidParameter("loss.smooth_l1_beta must be > 0");
    if (!(prob_clamp_epsilon > 0.0 && prob_clamp_epsilon < 0.5)) {
      throw InvalidParameter("loss.prob_clamp_epsilon must lie in (0, 0.5)");
    }
  }
};

// A scalar loss and its derivative with respect to the argument.
struct ValueGrad {
  double value = 0.0;
  double grad = 0.0;
};

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// Focal loss of probability p against binary target y; grad is d/dp.
inline ValueGrad focal_term(double p, int y, double alpha, double gamma) {
  if (!(p > 0.0 && p < 1.0)) {
    throw DomainError("focal_term: probability must lie in (0, 1), got " + std::to_string(p));
  }
  if (y == 1) {
    const double q = 1.0 - p;
    const double lp = std::log(p);
    const double mod = std::pow(q, gamma);
    const double dmod = gamma == 0.0 ? 0.0 : -gamma * std::pow(q, gamma - 1.0);
    return {-alpha * mod * lp, -alpha * (dmod * lp + mod / p)};
  }
  const double lq = std::log1p(-p);
  const double mod = std::pow(p, gamma);
  const double dmod = gamma == 0.0 ? 0.0 : gamma * std::pow(p, gamma - 1.0);
  return {-(1.0 - alpha) * mod * lq, -(1.0 - alpha) * (dmod * lq - mod / (1.0 - p))};
}

// Focal loss of sigmoid(z) against y, evaluated in logit space so that it
// stays finite for saturated logits; grad is d/dz.
inline ValueGrad focal_term_logit(double z, int y, double alpha, double gamma) {
  if (y == 1) {
    const double p = sigmoid(z);
    const double sp = softplus(-z);             // -log p
    const double mod = std::exp(-gamma * softplus(z));  // (1-p)^gamma
    return {alpha * mod * sp, -alpha * mod * (gamma * p * sp + (1.0 - p))};
  }
  const double p = sigmoid(z);
  const double sp = softplus(z);               // -log(1-p)
  const double mod = std::exp(-gamma * softplus(-z));  // p^gamma
  return {(1.0 - alpha) * mod * sp, (1.0 - alpha) * mod * (gamma * (1.0 - p) * sp + p)};
}

inline ValueGrad smooth_l1(double pred, double target, double beta) {
  if (!(beta > 0.0)) throw InvalidParameter("smooth_l1: beta must be > 0");
  const double d = pred - target;
  const double ad = std::abs(d);
  if (ad < beta) return {0.5 * d * d / beta, d / beta};
  return {ad - 0.5 * beta, d > 0.0 ? 1.0 : -1.0};
}

// One instance's pooled prediction as seen by the loss.
struct PooledPrediction {
  int instance_id = 0;
  int class_id = 0;
  std::vector<double> pooled;       // clamped per-class probabilities
  std::vector<bool> clamped;        // clamp active, per class
  std::vector<Location> members;    // locations whose probabilities were summed
};

struct ClassificationLoss {
  double loss = 0.0;  // normalized
  LevelMaps grad;     // d(loss)/d(logit)
  double positive_sum = 0.0;  // unnormalized instance terms
  double negative_sum = 0.0;  // unnormalized negative terms
  std::vector<PooledPrediction> pooled;
};

namespace detail {

inline void check_logit_maps(std::span<const FeatureMap> maps, const AssignmentMap& assignment,
                             const std::string& what) {
  if (maps.size() != assignment.levels.size()) {
    throw ContractViolation(what + ": expected " + std::to_string(assignment.levels.size()) +
                            " levels, got " + std::to_string(maps.size()));
  }
  for (std::size_t l = 0; l < maps.size(); ++l) {
    const GridSpec& g = assignment.levels[l].grid;
    if (maps[l].height() != g.height || maps[l].width() != g.width) {
      throw ContractViolation(what + ": level " + std::to_string(l) + " map is " +
                              std::to_string(maps[l].height()) + "x" +
                              std::to_string(maps[l].width()) + ", grid is " +
                              std::to_string(g.height) + "x" + std::to_string(g.width));
    }
  }
}

inline LevelMaps zeros_like(std::span<const FeatureMap> maps) {
  LevelMaps out;
  out.reserve(maps.size());
  for (const auto& m : maps) out.emplace_back(m.height(), m.width(), m.channels());
  return out;
}

inline SideDistances sides_at(const FeatureMap& reg, int i, int j) {
  const auto c = reg.cell(i, j);
  return {c[0], c[1], c[2], c[3]};
}

}  // namespace detail

// Pooled focal classification loss. In max mode, `regression` must be
// supplied: each instance is represented by the single member whose decoded
// box overlaps its ground truth most.
inline ClassificationLoss pooled_classification_loss(std::span<const FeatureMap> logits,
                                                     const AssignmentMap& assignment,
                                                     std::span<const GroundTruth> gts,
                                                     const LossConfig& config,
                                                     std::span<const FeatureMap> regression = {}) {
  config.validate();
  detail::check_logit_maps(logits, assignment, "classification logits");
  if (logits.empty()) throw ContractViolation("classification logits: no levels");
  const int num_classes = logits.front().channels();
  for (const auto& m : logits) {
    if (m.channels() != num_classes) {
      throw ContractViolation("classification logits: class count differs across levels");
    }
  }
  if (config.pooling_mode == PoolingMode::kMax) {
    detail::check_logit_maps(regression, assignment, "regression outputs (max pooling)");
  }

  std::map<int, const GroundTruth*> by_id;
  for (const auto& gt : gts) {
    if (gt.class_id < 0 || gt.class_id >= num_classes) {
      throw ContractViolation("instance " + std::to_string(gt.instance_id) + " has class " +
                              std::to_string(gt.class_id) + " outside [0, " +
                              std::to_string(num_classes) + ")");
    }
    by_id[gt.instance_id] = &gt;
  }

  ClassificationLoss out;
  out.grad = detail::zeros_like(logits);
  const double norm = 1.0 / std::max<double>(1.0, static_cast<double>(gts.size()));
  const double eps = config.prob_clamp_epsilon;

  // Negatives: independent per-location, per-class terms.
  std::map<int, std::vector<Location>> members;
  for (std::size_t l = 0; l < assignment.levels.size(); ++l) {
    const LevelAssignment& lv = assignment.levels[l];
    for (int i = 0; i < lv.grid.height; ++i) {
      for (int j = 0; j < lv.grid.width; ++j) {
        const int owner = lv.label(i, j);
        if (owner != kNegative) {
          if (!by_id.count(owner)) {
            throw ContractViolation("assignment refers to unknown instance " +
                                    std::to_string(owner));
          }
          members[owner].push_back({static_cast<int>(l), i, j});
          continue;
        }
        for (int c = 0; c < num_classes; ++c) {
          const ValueGrad t = focal_term_logit(logits[l].at(i, j, c), 0, config.alpha, config.gamma);
          out.negative_sum += t.value;
          out.grad[l].at(i, j, c) = t.grad * norm;
        }
      }
    }
  }

  // Instances: one focal term per class on the pooled probability vector.
  for (auto& [id, locs] : members) {
    const GroundTruth& gt = *by_id.at(id);
    if (config.pooling_mode == PoolingMode::kMax) {
      std::size_t pick = 0;
      double best = -1.0;
      for (std::size_t m = 0; m < locs.size(); ++m) {
        const Location& loc = locs[m];
        const Box pred = decode_box(loc, detail::sides_at(regression[loc.level], loc.i, loc.j),
                                    assignment.levels[loc.level].grid);
        const double o = iou(pred, gt.box);
        if (o > best) {
          best = o;
          pick = m;
        }
      }
      locs = {locs[pick]};
    }

    PooledPrediction pp;
    pp.instance_id = id;
    pp.class_id = gt.class_id;
    pp.members = locs;
    pp.pooled.assign(num_classes, 0.0);
    pp.clamped.assign(num_classes, false);
    for (int c = 0; c < num_classes; ++c) {
      double sum = 0.0;
      for (const auto& loc : locs) sum += sigmoid(logits[loc.level].at(loc.i, loc.j, c));
      const bool active = sum < eps || sum > 1.0 - eps;
      const double pooled = std::clamp(sum, eps, 1.0 - eps);
      const int y = c == gt.class_id ? 1 : 0;
      const ValueGrad t = focal_term(pooled, y, config.alpha, config.gamma);
      out.positive_sum += t.value;
      pp.pooled[c] = pooled;
      pp.clamped[c] = active;
      if (active) continue;
      for (const auto& loc : locs) {
        const double p = sigmoid(logits[loc.level].at(loc.i, loc.j, c));
        out.grad[loc.level].at(loc.i, loc.j, c) = t.grad * p * (1.0 - p) * norm;
      }
    }
    out.pooled.push_back(std::move(pp));
  }

  out.loss = (out.positive_sum + out.negative_sum) * norm;
  return out;
}

struct RegressionLoss {
  double loss = 0.0;  // mean over positive locations x 4 components
  LevelMaps grad;
  std::size_t num_positive = 0;
};

inline RegressionLoss regression_loss(std::span<const FeatureMap> regression,
                                      const AssignmentMap& assignment, const LossConfig& config) {
  detail::check_logit_maps(regression, assignment, "regression outputs");
  for (const auto& m : regression) {
    if (m.channels() != 4) throw ContractViolation("regression outputs must have 4 channels");
  }
  RegressionLoss out;
  out.grad = detail::zeros_like(regression);
  out.num_positive = assignment.num_positive();
  if (out.num_positive == 0) return out;
  const double norm = 1.0 / (4.0 * static_cast<double>(out.num_positive));
  for (std::size_t l = 0; l < assignment.levels.size(); ++l) {
    const LevelAssignment& lv = assignment.levels[l];
    for (int i = 0; i < lv.grid.height; ++i) {
      for (int j = 0; j < lv.grid.width; ++j) {
        if (lv.label(i, j) == kNegative) continue;
        const SideDistances& target = lv.target(i, j);
        for (int k = 0; k < 4; ++k) {
          const ValueGrad t = smooth_l1(regression[l].at(i, j, k), target[k], config.smooth_l1_beta);
          out.loss += t.value;
          out.grad[l].at(i, j, k) = t.grad * norm;
        }
      }
    }
  }
  out.loss *= norm;
  return out;
}

struct TotalLoss {
  double total = 0.0;
  double classification = 0.0;
  double regression = 0.0;  // unweighted
  LevelMaps logit_grad;
  LevelMaps regression_grad;
  std::size_t num_pooled_terms = 0;
  std::size_t num_positive = 0;
  std::vector<PooledPrediction> pooled;
};

inline TotalLoss total_loss(std::span<const FeatureMap> logits,
                            std::span<const FeatureMap> regression,
                            const AssignmentMap& assignment, std::span<const GroundTruth> gts,
                            const LossConfig& config) {
  ClassificationLoss cls = pooled_classification_loss(logits, assignment, gts, config, regression);
  RegressionLoss reg = regression_loss(regression, assignment, config);
  TotalLoss out;
  out.classification = cls.loss;
  out.regression = reg.loss;
  out.total = cls.loss + config.regression_weight * reg.loss;
  out.logit_grad = std::move(cls.grad);
  out.regression_grad = std::move(reg.grad);
  for (auto& m : out.regression_grad)
    for (double& v : m.data()) v *= config.regression_weight;
  out.num_pooled_terms = cls.pooled.size();
  out.num_positive = reg.num_positive;
  out.pooled = std::move(cls.pooled);
  return out;
}

}  // namespace pooldet
