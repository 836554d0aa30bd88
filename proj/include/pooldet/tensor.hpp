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

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pooldet/errors.hpp"

namespace pooldet {

// Dense H x W x K map stored row-major with the channel index fastest.
// Holds one pyramid level of classification logits (K = C) or regression
// outputs (K = 4), and their gradients.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int height, int width, int channels, double fill = 0.0)
      : height_(height), width_(width), channels_(channels),
        data_(static_cast<std::size_t>(height) * width * channels, fill) {
    if (height <= 0 || width <= 0 || channels <= 0) {
      throw InvalidParameter("FeatureMap dimensions must be positive");
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }

  double& at(int i, int j, int k) { return data_[index(i, j, k)]; }
  double at(int i, int j, int k) const { return data_[index(i, j, k)]; }

  std::span<double> cell(int i, int j) {
    return {data_.data() + index(i, j, 0), static_cast<std::size_t>(channels_)};
  }
  std::span<const double> cell(int i, int j) const {
    return {data_.data() + index(i, j, 0), static_cast<std::size_t>(channels_)};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const FeatureMap& o) const {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * width_ + j) * channels_ + k;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

// One map per pyramid level.
using LevelMaps = std::vector<FeatureMap>;

inline void require_same_shapes(std::span<const FeatureMap> a, std::span<const FeatureMap> b,
                                const std::string& what) {
  if (a.size() != b.size()) {
    throw ContractViolation(what + ": level count mismatch (" + std::to_string(a.size()) +
                            " vs " + std::to_string(b.size()) + ")");
  }
  for (std::size_t l = 0; l < a.size(); ++l) {
    if (!a[l].same_shape(b[l])) {
      throw ContractViolation(what + ": shape mismatch at level " + std::to_string(l));
    }
  }
}

}  // namespace pooldet
