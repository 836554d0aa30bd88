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

// Detection files are JSON Lines, one detection per line:
//
//   {"image_id": 3, "class_id": 1, "box": [x1, y1, x2, y2], "score": 0.93,
//    "source": [level, i, j],
//    "voters": [[level, i, j, weight], ...]}      <- optional
//
// Lines are grouped by image in dataset order and, within an image, sorted
// by descending score. Doubles are printed with round-trip precision.

#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pooldet/aggregation.hpp"
#include "pooldet/errors.hpp"

namespace pooldet {

struct ImagePooledDetections {
  int image_id = 0;
  std::vector<PooledDetection> detections;
};

inline void write_detections(std::span<const ImagePooledDetections> images,
                             const std::filesystem::path& path, bool with_voters) {
  std::ofstream out(path);
  if (!out) throw IoError("detections: cannot write " + path.string());
  for (const auto& im : images) {
    for (const auto& pd : im.detections) {
      const Detection& d = pd.detection;
      nlohmann::json rec{{"image_id", im.image_id},
                         {"class_id", d.class_id},
                         {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
                         {"score", d.score},
                         {"source", {d.source.level, d.source.i, d.source.j}}};
      if (with_voters) {
        auto voters = nlohmann::json::array();
        for (const Voter& v : pd.voters) {
          voters.push_back({v.source.level, v.source.i, v.source.j, v.weight});
        }
        rec["voters"] = std::move(voters);
      }
      out << rec.dump() << "\n";
    }
  }
  if (!out) throw IoError("detections: failed writing " + path.string());
}

// Reads a detection file; images appear in order of first occurrence.
inline std::vector<ImagePooledDetections> read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("detections: cannot open " + path.string());
  std::vector<ImagePooledDetections> out;
  std::map<int, std::size_t> index;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    try {
      const auto rec = nlohmann::json::parse(line);
      PooledDetection pd;
      Detection& d = pd.detection;
      const int image_id = rec.at("image_id").get<int>();
      d.class_id = rec.at("class_id").get<int>();
      const auto& b = rec.at("box");
      if (!b.is_array() || b.size() != 4) throw IoError(where + ": box must have 4 numbers");
      d.box = Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
      if (!d.box.valid()) throw IoError(where + ": invalid box");
      d.score = rec.at("score").get<double>();
      if (!(d.score >= 0.0)) throw IoError(where + ": score must be >= 0");
      if (rec.contains("source")) {
        const auto& s = rec["source"];
        d.source = {s.at(0).get<int>(), s.at(1).get<int>(), s.at(2).get<int>()};
      }
      if (rec.contains("voters")) {
        for (const auto& v : rec["voters"]) {
          pd.voters.push_back({{v.at(0).get<int>(), v.at(1).get<int>(), v.at(2).get<int>()},
                               v.at(3).get<double>()});
        }
      }
      auto [it, fresh] = index.emplace(image_id, out.size());
      if (fresh) out.push_back({image_id, {}});
      out[it->second].detections.push_back(std::move(pd));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(where + ": malformed detection record: " + e.what());
    }
  }
  return out;
}

}  // namespace pooldet
