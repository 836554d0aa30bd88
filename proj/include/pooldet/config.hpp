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

// Run configuration: every experiment knob as a named JSON key. Missing keys
// take their defaults; unknown keys are rejected by name.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "pooldet/aggregation.hpp"
#include "pooldet/assignment.hpp"
#include "pooldet/data.hpp"
#include "pooldet/errors.hpp"
#include "pooldet/losses.hpp"
#include "pooldet/model.hpp"

namespace pooldet {

struct PyramidConfig {
  double base_stride = 4.0;
  int num_levels = 3;
  double base_scale = 10.0;
};

struct TrainConfig {
  int epochs = 40;
  int batch_size = 1;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int> milestones{30, 36};
  double decay = 0.1;
  double grad_clip = 2.0;  // max global gradient norm; 0 disables
  bool hflip = false;      // also train on mirrored copies of every image
};

struct RunConfig {
  std::uint64_t seed = 0;
  int train_count = 200;
  int test_count = 100;
  SceneConfig scene;
  PyramidConfig pyramid;
  double shrink = 0.4;
  DescriptorConfig descriptor;
  HeadConfig head;
  LossConfig loss;
  InferenceConfig inference;
  TrainConfig train;

  PyramidSpec make_pyramid() const {
    return PyramidSpec::make(scene.image_width, scene.image_height, pyramid.base_stride,
                             pyramid.num_levels, pyramid.base_scale);
  }

  HeadConfig head_config() const {
    HeadConfig h = head;
    h.num_classes = scene.num_classes;
    return h;
  }

  OptimState make_optimizer() const {
    OptimState s;
    s.base_lr = s.lr = train.lr;
    s.momentum = train.momentum;
    s.weight_decay = train.weight_decay;
    s.milestones = train.milestones;
    s.decay = train.decay;
    return s;
  }

  void validate() const {
    scene.validate();
    if (!(pyramid.base_stride > 0.0)) throw InvalidParameter("pyramid.base_stride must be > 0");
    if (pyramid.num_levels < 1) throw InvalidParameter("pyramid.num_levels must be >= 1");
    if (!(pyramid.base_scale > 0.0)) throw InvalidParameter("pyramid.base_scale must be > 0");
    if (!(shrink > 0.0 && shrink <= 1.0)) throw InvalidParameter("shrink must lie in (0, 1]");
    descriptor.validate();
    head_config().validate();
    loss.validate();
    inference.validate();
    make_optimizer().validate();
    if (train.epochs < 0) throw InvalidParameter("train.epochs must be >= 0");
    if (train.batch_size < 1) throw InvalidParameter("train.batch_size must be >= 1");
    if (!(train.decay > 0.0 && train.decay <= 1.0)) throw InvalidParameter("train.decay must lie in (0, 1]");
    if (!(train.grad_clip >= 0.0)) throw InvalidParameter("train.grad_clip must be >= 0");
    if (train_count < 0) throw InvalidParameter("train_count must be >= 0");
    if (test_count < 0) throw InvalidParameter("test_count must be >= 0");
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  return json{
      {"seed", c.seed},
      {"train_count", c.train_count},
      {"test_count", c.test_count},
      {"shrink", c.shrink},
      {"scene",
       {{"image_width", c.scene.image_width},
        {"image_height", c.scene.image_height},
        {"num_classes", c.scene.num_classes},
        {"min_objects", c.scene.min_objects},
        {"max_objects", c.scene.max_objects},
        {"min_size", c.scene.min_size},
        {"max_size", c.scene.max_size},
        {"occlusion_probability", c.scene.occlusion_probability},
        {"noise_amplitude", c.scene.noise_amplitude},
        {"background_level", c.scene.background_level}}},
      {"pyramid",
       {{"base_stride", c.pyramid.base_stride},
        {"num_levels", c.pyramid.num_levels},
        {"base_scale", c.pyramid.base_scale}}},
      {"descriptor", {{"cells", c.descriptor.cells}, {"window_strides", c.descriptor.window_strides}}},
      {"head", {{"hidden", c.head.hidden}, {"depth", c.head.depth}, {"prior", c.head.prior}}},
      {"loss",
       {{"alpha", c.loss.alpha},
        {"gamma", c.loss.gamma},
        {"regression_weight", c.loss.regression_weight},
        {"smooth_l1_beta", c.loss.smooth_l1_beta},
        {"prob_clamp_epsilon", c.loss.prob_clamp_epsilon},
        {"pooling_mode", to_string(c.loss.pooling_mode)}}},
      {"inference",
       {{"k", c.inference.k},
        {"vote_iou_threshold", c.inference.vote_iou_threshold},
        {"nms_iou_threshold", c.inference.nms_iou_threshold},
        {"score_threshold", c.inference.score_threshold},
        {"per_level_topk", c.inference.per_level_topk},
        {"max_detections", c.inference.max_detections},
        {"pooling_enabled", c.inference.pooling_enabled}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"lr", c.train.lr},
        {"momentum", c.train.momentum},
        {"weight_decay", c.train.weight_decay},
        {"milestones", c.train.milestones},
        {"decay", c.train.decay},
        {"grad_clip", c.train.grad_clip},
        {"hflip", c.train.hflip}}},
  };
}

namespace detail {

// Overwrites `out` with j[key] if present, naming the key on type errors.
template <typename T>
void read_field(const nlohmann::json& j, const std::string& section, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InvalidParameter("config: field '" + (section.empty() ? "" : section + ".") + key +
                           "' has the wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::string& section,
                           std::initializer_list<const char*> known) {
  if (!j.is_object()) {
    throw InvalidParameter("config: '" + (section.empty() ? std::string("<root>") : section) +
                           "' must be an object");
  }
  const std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) {
      throw InvalidParameter("config: unknown field '" + (section.empty() ? "" : section + ".") + k + "'");
    }
  }
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  using detail::read_field;
  using detail::reject_unknown;
  RunConfig c;
  reject_unknown(j, "", {"seed", "train_count", "test_count", "shrink", "scene", "pyramid",
                         "descriptor", "head", "loss", "inference", "train"});
  read_field(j, "", "seed", c.seed);
  read_field(j, "", "train_count", c.train_count);
  read_field(j, "", "test_count", c.test_count);
  read_field(j, "", "shrink", c.shrink);
  if (j.contains("scene")) {
    const auto& s = j["scene"];
    reject_unknown(s, "scene", {"image_width", "image_height", "num_classes", "min_objects",
                                "max_objects", "min_size", "max_size", "occlusion_probability",
                                "noise_amplitude", "background_level"});
    read_field(s, "scene", "image_width", c.scene.image_width);
    read_field(s, "scene", "image_height", c.scene.image_height);
    read_field(s, "scene", "num_classes", c.scene.num_classes);
    read_field(s, "scene", "min_objects", c.scene.min_objects);
    read_field(s, "scene", "max_objects", c.scene.max_objects);
    read_field(s, "scene", "min_size", c.scene.min_size);
    read_field(s, "scene", "max_size", c.scene.max_size);
    read_field(s, "scene", "occlusion_probability", c.scene.occlusion_probability);
    read_field(s, "scene", "noise_amplitude", c.scene.noise_amplitude);
    read_field(s, "scene", "background_level", c.scene.background_level);
  }
  if (j.contains("pyramid")) {
    const auto& s = j["pyramid"];
    reject_unknown(s, "pyramid", {"base_stride", "num_levels", "base_scale"});
    read_field(s, "pyramid", "base_stride", c.pyramid.base_stride);
    read_field(s, "pyramid", "num_levels", c.pyramid.num_levels);
    read_field(s, "pyramid", "base_scale", c.pyramid.base_scale);
  }
  if (j.contains("descriptor")) {
    const auto& s = j["descriptor"];
    reject_unknown(s, "descriptor", {"cells", "window_strides"});
    read_field(s, "descriptor", "cells", c.descriptor.cells);
    read_field(s, "descriptor", "window_strides", c.descriptor.window_strides);
  }
  if (j.contains("head")) {
    const auto& s = j["head"];
    reject_unknown(s, "head", {"hidden", "depth", "prior"});
    read_field(s, "head", "hidden", c.head.hidden);
    read_field(s, "head", "depth", c.head.depth);
    read_field(s, "head", "prior", c.head.prior);
  }
  if (j.contains("loss")) {
    const auto& s = j["loss"];
    reject_unknown(s, "loss", {"alpha", "gamma", "regression_weight", "smooth_l1_beta",
                               "prob_clamp_epsilon", "pooling_mode"});
    read_field(s, "loss", "alpha", c.loss.alpha);
    read_field(s, "loss", "gamma", c.loss.gamma);
    read_field(s, "loss", "regression_weight", c.loss.regression_weight);
    read_field(s, "loss", "smooth_l1_beta", c.loss.smooth_l1_beta);
    read_field(s, "loss", "prob_clamp_epsilon", c.loss.prob_clamp_epsilon);
    std::string mode = to_string(c.loss.pooling_mode);
    read_field(s, "loss", "pooling_mode", mode);
    c.loss.pooling_mode = pooling_mode_from_string(mode);
  }
  if (j.contains("inference")) {
    const auto& s = j["inference"];
    reject_unknown(s, "inference", {"k", "vote_iou_threshold", "nms_iou_threshold",
                                    "score_threshold", "per_level_topk", "max_detections",
                                    "pooling_enabled"});
    read_field(s, "inference", "k", c.inference.k);
    read_field(s, "inference", "vote_iou_threshold", c.inference.vote_iou_threshold);
    read_field(s, "inference", "nms_iou_threshold", c.inference.nms_iou_threshold);
    read_field(s, "inference", "score_threshold", c.inference.score_threshold);
    read_field(s, "inference", "per_level_topk", c.inference.per_level_topk);
    read_field(s, "inference", "max_detections", c.inference.max_detections);
    read_field(s, "inference", "pooling_enabled", c.inference.pooling_enabled);
  }
  if (j.contains("train")) {
    const auto& s = j["train"];
    reject_unknown(s, "train", {"epochs", "batch_size", "lr", "momentum", "weight_decay",
                                "milestones", "decay", "grad_clip", "hflip"});
    read_field(s, "train", "epochs", c.train.epochs);
    read_field(s, "train", "batch_size", c.train.batch_size);
    read_field(s, "train", "lr", c.train.lr);
    read_field(s, "train", "momentum", c.train.momentum);
    read_field(s, "train", "weight_decay", c.train.weight_decay);
    read_field(s, "train", "milestones", c.train.milestones);
    read_field(s, "train", "decay", c.train.decay);
    read_field(s, "train", "grad_clip", c.train.grad_clip);
    read_field(s, "train", "hflip", c.train.hflip);
  }
  c.scene.seed = c.seed;
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path.string());
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
}

inline void save_config(const RunConfig& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("config: cannot write " + path.string());
  out << to_json(c).dump(2) << "\n";
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Hash of everything that fixes the head's input/output contract: image
// size, pyramid, descriptor and head architecture.
inline std::uint64_t model_config_hash(const RunConfig& c) {
  const auto j = to_json(c);
  const nlohmann::json model{{"image_width", c.scene.image_width},
                             {"image_height", c.scene.image_height},
                             {"num_classes", c.scene.num_classes},
                             {"pyramid", j["pyramid"]},
                             {"descriptor", j["descriptor"]},
                             {"head", j["head"]}};
  return fnv1a(model.dump());
}

}  // namespace pooldet
