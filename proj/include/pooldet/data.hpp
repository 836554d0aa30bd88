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

// Synthetic shape scenes and their on-disk dataset form.
//
// Layout of a dataset directory:
//
//   annotations.json   {"format": "pooldet-dataset", "version": 1,
//                       "categories": [{"id", "name"}...],
//                       "images": [{"id", "file_name", "width", "height"}...],
//                       "annotations": [{"id", "image_id", "category_id",
//                                        "bbox": [x, y, width, height]}...]}
//   images/NNNNNN.pgm  binary 8-bit graymaps
//
// Annotation boxes use corner + size; they become corner-pair boxes on load.
// Instance ids are the annotation order within each image.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pooldet/assignment.hpp"
#include "pooldet/errors.hpp"
#include "pooldet/geometry.hpp"
#include "pooldet/image.hpp"

namespace pooldet {

enum class Shape { kDisk = 0, kSquare = 1, kTriangle = 2 };

inline const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> names{"disk", "square", "triangle"};
  return names;
}

struct SceneConfig {
  int image_width = 128;
  int image_height = 128;
  int num_classes = 3;
  int min_objects = 1;
  int max_objects = 4;
  double min_size = 0.1;  // fraction of the shorter image side
  double max_size = 0.5;
  double occlusion_probability = 0.3;
  double noise_amplitude = 0.05;
  double background_level = 0.15;
  std::uint64_t seed = 0;

  void validate() const {
    if (image_width <= 0 || image_height <= 0) {
      throw InvalidParameter("scene.image_width/image_height must be positive");
    }
    if (num_classes < 1 || num_classes > static_cast<int>(shape_names().size())) {
      throw InvalidParameter("scene.num_classes must lie in [1, 3]");
    }
    if (min_objects < 0 || max_objects < min_objects) {
      throw InvalidParameter("scene.min_objects/max_objects must form a non-empty range");
    }
    if (!(min_size > 0.0 && min_size <= max_size && max_size <= 1.0)) {
      throw InvalidParameter("scene.min_size/max_size must satisfy 0 < min <= max <= 1");
    }
    if (!(occlusion_probability >= 0.0 && occlusion_probability <= 1.0)) {
      throw InvalidParameter("scene.occlusion_probability must lie in [0, 1]");
    }
    if (!(noise_amplitude >= 0.0 && noise_amplitude < 0.5)) {
      throw InvalidParameter("scene.noise_amplitude must lie in [0, 0.5)");
    }
    if (!(background_level >= 0.0 && background_level <= 1.0)) {
      throw InvalidParameter("scene.background_level must lie in [0, 1]");
    }
  }
};

struct Scene {
  Image image;
  std::vector<GroundTruth> gts;
};

// splitmix64; derives independent per-image seeds from a dataset seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace detail {

inline bool inside_shape(Shape shape, const Box& b, double x, double y) {
  switch (shape) {
    case Shape::kDisk: {
      const Point c = b.center();
      const double r = 0.5 * b.width();
      return (x - c.x) * (x - c.x) + (y - c.y) * (y - c.y) <= r * r;
    }
    case Shape::kSquare:
      return contains(b, Point{x, y});
    case Shape::kTriangle: {
      // Apex at top center, base along the bottom edge.
      if (y < b.y1 || y > b.y2) return false;
      const double t = (y - b.y1) / b.height();
      const double half = 0.5 * b.width() * t;
      const double cx = 0.5 * (b.x1 + b.x2);
      return x >= cx - half && x <= cx + half;
    }
  }
  return false;
}

inline double quantize(double v) { return std::floor(v * 64.0) / 64.0; }

}  // namespace detail

// Renders 0..N filled shapes over a noisy background. Shapes are drawn in
// list order, so a later shape may cover part of an earlier one; the earlier
// ground-truth box is left unchanged.
inline Scene generate_scene(std::mt19937_64& rng, const SceneConfig& config) {
  config.validate();
  using Uniform = std::uniform_real_distribution<double>;
  const double side = std::min(config.image_width, config.image_height);
  const int count =
      std::uniform_int_distribution<int>(config.min_objects, config.max_objects)(rng);

  struct Placed {
    Shape shape;
    Box box;
    double intensity;
  };
  std::vector<Placed> placed;
  for (int k = 0; k < count; ++k) {
    const auto shape =
        static_cast<Shape>(std::uniform_int_distribution<int>(0, config.num_classes - 1)(rng));
    // Coordinates are kept on a 1/64 pixel lattice so that corner + size
    // arithmetic is exact and annotations round-trip bit-for-bit.
    const double s = detail::quantize(Uniform(config.min_size, config.max_size)(rng) * side);
    const double max_x = config.image_width - s;
    const double max_y = config.image_height - s;

    Box box;
    const bool occlude = !placed.empty() && Uniform(0.0, 1.0)(rng) < config.occlusion_probability;
    if (occlude) {
      const Box& target =
          placed[std::uniform_int_distribution<std::size_t>(0, placed.size() - 1)(rng)].box;
      const double angle = Uniform(0.0, 2.0 * M_PI)(rng);
      const double reach = Uniform(0.35, 0.6)(rng) * 0.5 * (target.width() + s);
      const Point c = target.center();
      const double x = std::clamp(c.x + reach * std::cos(angle) - 0.5 * s, 0.0, max_x);
      const double y = std::clamp(c.y + reach * std::sin(angle) - 0.5 * s, 0.0, max_y);
      box = Box::from_xywh(detail::quantize(x), detail::quantize(y), s, s);
    } else {
      for (int attempt = 0; attempt < 32; ++attempt) {
        const double x = detail::quantize(Uniform(0.0, max_x)(rng));
        const double y = detail::quantize(Uniform(0.0, max_y)(rng));
        box = Box::from_xywh(x, y, s, s);
        const bool clear = std::none_of(placed.begin(), placed.end(),
                                        [&](const Placed& p) { return iou(p.box, box) > 0.0; });
        if (clear) break;
      }
    }

    double intensity = 0.0;
    for (int attempt = 0; attempt < 32; ++attempt) {
      intensity = Uniform(0.45, 1.0)(rng);
      const bool distinct = std::none_of(placed.begin(), placed.end(), [&](const Placed& p) {
        return std::abs(p.intensity - intensity) < 0.1;
      });
      if (distinct) break;
    }
    placed.push_back({shape, box, intensity});
  }

  std::vector<double> canvas(static_cast<std::size_t>(config.image_width) * config.image_height);
  Uniform noise(-config.noise_amplitude, config.noise_amplitude);
  for (double& v : canvas) v = config.background_level + noise(rng);
  for (const Placed& p : placed) {
    const int x0 = std::max(0, static_cast<int>(std::floor(p.box.x1)));
    const int x1 = std::min(config.image_width - 1, static_cast<int>(std::ceil(p.box.x2)));
    const int y0 = std::max(0, static_cast<int>(std::floor(p.box.y1)));
    const int y1 = std::min(config.image_height - 1, static_cast<int>(std::ceil(p.box.y2)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (detail::inside_shape(p.shape, p.box, x + 0.5, y + 0.5))
          canvas[static_cast<std::size_t>(y) * config.image_width + x] = p.intensity;
  }

  Scene scene;
  scene.image = Image(config.image_width, config.image_height);
  for (std::size_t k = 0; k < canvas.size(); ++k) {
    scene.image.pixels[k] =
        static_cast<std::uint8_t>(std::lround(std::clamp(canvas[k], 0.0, 1.0) * 255.0));
  }
  for (std::size_t k = 0; k < placed.size(); ++k) {
    scene.gts.push_back({placed[k].box, static_cast<int>(placed[k].shape), static_cast<int>(k)});
  }
  return scene;
}

struct Sample {
  int image_id = 0;
  std::string file_name;  // relative to the dataset directory
  Image image;
  std::vector<GroundTruth> gts;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Sample> samples;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::size_t num_instances() const {
    std::size_t n = 0;
    for (const auto& s : samples) n += s.gts.size();
    return n;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Left-right mirror of a sample. Every shape is mirror-symmetric, so the
// class labels stay valid.
inline Sample flip_horizontal(const Sample& s) {
  Sample f = s;
  for (int y = 0; y < s.image.height; ++y)
    for (int x = 0; x < s.image.width; ++x) f.image.at(x, y) = s.image.at(s.image.width - 1 - x, y);
  const double w = s.image.width;
  for (GroundTruth& g : f.gts) g.box = Box{w - g.box.x2, g.box.y1, w - g.box.x1, g.box.y2};
  return f;
}

inline std::string image_file_name(int image_id) {
  std::ostringstream os;
  os << "images/" << std::setw(6) << std::setfill('0') << image_id << ".pgm";
  return os.str();
}

// `count` scenes, image k seeded from (config.seed, first_id + k).
inline Dataset generate_dataset(const SceneConfig& config, int count, int first_id = 0) {
  config.validate();
  if (count < 0) throw InvalidParameter("dataset count must be >= 0");
  Dataset ds;
  ds.class_names.assign(shape_names().begin(), shape_names().begin() + config.num_classes);
  for (int k = 0; k < count; ++k) {
    const int id = first_id + k;
    std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(id)));
    Scene scene = generate_scene(rng, config);
    ds.samples.push_back({id, image_file_name(id), std::move(scene.image), std::move(scene.gts)});
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  nlohmann::json doc;
  doc["format"] = "pooldet-dataset";
  doc["version"] = 1;
  doc["categories"] = nlohmann::json::array();
  for (int c = 0; c < ds.num_classes(); ++c) {
    doc["categories"].push_back({{"id", c}, {"name", ds.class_names[c]}});
  }
  doc["images"] = nlohmann::json::array();
  doc["annotations"] = nlohmann::json::array();
  int ann_id = 0;
  for (const Sample& s : ds.samples) {
    doc["images"].push_back({{"id", s.image_id},
                             {"file_name", s.file_name},
                             {"width", s.image.width},
                             {"height", s.image.height}});
    write_pgm(s.image, dir / s.file_name);
    for (const GroundTruth& gt : s.gts) {
      doc["annotations"].push_back(
          {{"id", ann_id++},
           {"image_id", s.image_id},
           {"category_id", gt.class_id},
           {"bbox", {gt.box.x1, gt.box.y1, gt.box.width(), gt.box.height()}}});
    }
  }
  std::ofstream out(dir / "annotations.json");
  if (!out) throw IoError("cannot write " + (dir / "annotations.json").string());
  out << doc.dump(1) << "\n";
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto ann_path = dir / "annotations.json";
  std::ifstream in(ann_path);
  if (!in) throw IoError("dataset: missing " + ann_path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset: " + ann_path.string() + " is not valid JSON: " + e.what());
  }

  auto require = [&](const nlohmann::json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) {
      throw IoError("dataset: " + where + " is missing field '" + key + "'");
    }
    return obj.at(key);
  };

  Dataset ds;
  try {
    if (doc.value("format", "") != "pooldet-dataset") {
      throw IoError("dataset: unknown format tag in " + ann_path.string());
    }
    const auto cats = require(doc, "categories", "annotations file");
    for (std::size_t c = 0; c < cats.size(); ++c) {
      const auto id = require(cats[c], "id", "category #" + std::to_string(c)).get<int>();
      if (id != static_cast<int>(c)) {
        throw IoError("dataset: category ids must be 0..C-1 in order (got " + std::to_string(id) +
                      " at position " + std::to_string(c) + ")");
      }
      ds.class_names.push_back(require(cats[c], "name", "category " + std::to_string(id)));
    }

    std::map<int, std::size_t> index;
    for (const auto& im : require(doc, "images", "annotations file")) {
      Sample s;
      s.image_id = require(im, "id", "image record").get<int>();
      const std::string where = "image " + std::to_string(s.image_id);
      s.file_name = require(im, "file_name", where).get<std::string>();
      const int w = require(im, "width", where).get<int>();
      const int h = require(im, "height", where).get<int>();
      if (index.count(s.image_id)) throw IoError("dataset: duplicate " + where);
      const auto path = dir / s.file_name;
      if (!std::filesystem::exists(path)) {
        throw IoError("dataset: " + where + " refers to missing file " + path.string());
      }
      s.image = read_pgm(path);
      if (s.image.width != w || s.image.height != h) {
        throw IoError("dataset: " + where + " size does not match its file");
      }
      index[s.image_id] = ds.samples.size();
      ds.samples.push_back(std::move(s));
    }

    for (const auto& a : require(doc, "annotations", "annotations file")) {
      const int aid = require(a, "id", "annotation record").get<int>();
      const std::string where = "annotation " + std::to_string(aid);
      const int image_id = require(a, "image_id", where).get<int>();
      auto it = index.find(image_id);
      if (it == index.end()) {
        throw IoError("dataset: " + where + " refers to unknown image " + std::to_string(image_id));
      }
      Sample& s = ds.samples[it->second];
      const int cls = require(a, "category_id", where).get<int>();
      if (cls < 0 || cls >= ds.num_classes()) {
        throw IoError("dataset: " + where + " has unknown category " + std::to_string(cls));
      }
      const auto bbox = require(a, "bbox", where);
      if (!bbox.is_array() || bbox.size() != 4) {
        throw IoError("dataset: " + where + " bbox must be [x, y, width, height]");
      }
      const double x = bbox[0], y = bbox[1], bw = bbox[2], bh = bbox[3];
      if (!(bw > 0.0 && bh > 0.0)) {
        throw IoError("dataset: " + where + " has non-positive width or height");
      }
      const Box box = Box::from_xywh(x, y, bw, bh);
      constexpr double kSlack = 1e-9;
      if (box.x1 < -kSlack || box.y1 < -kSlack || box.x2 > s.image.width + kSlack ||
          box.y2 > s.image.height + kSlack) {
        throw IoError("dataset: " + where + " lies outside image " + std::to_string(image_id));
      }
      s.gts.push_back({box, cls, static_cast<int>(s.gts.size())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset: malformed record in " + ann_path.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace pooldet
