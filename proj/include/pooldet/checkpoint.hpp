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

// Binary parameter checkpoints (little-endian):
//
//   char[8]   magic "PDETCKPT"
//   u32       format version (1)
//   u64       model config hash
//   u32       #classification layers, u32 #regression layers
//   per layer (classification stack first):
//     u32 rows, u32 cols, f64[rows*cols] weight (column-major), f64[rows] bias
//
// Values are stored as raw IEEE-754 doubles, so save/load is bit-exact.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "pooldet/errors.hpp"
#include "pooldet/model.hpp"

namespace pooldet {

struct Checkpoint {
  std::uint64_t config_hash = 0;
  ToyHeadParams params;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint " + path + ": truncated");
  return v;
}

constexpr char kMagic[8] = {'P', 'D', 'E', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot write " + path.string());
  out.write(detail::kMagic, sizeof(detail::kMagic));
  detail::put<std::uint32_t>(out, detail::kVersion);
  detail::put<std::uint64_t>(out, ckpt.config_hash);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.cls.size()));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.reg.size()));
  for (const auto* stack : {&ckpt.params.cls, &ckpt.params.reg}) {
    for (const DenseLayer& layer : *stack) {
      detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(layer.weight.rows()));
      detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(layer.weight.cols()));
      out.write(reinterpret_cast<const char*>(layer.weight.data()),
                static_cast<std::streamsize>(layer.weight.size() * sizeof(double)));
      out.write(reinterpret_cast<const char*>(layer.bias.data()),
                static_cast<std::streamsize>(layer.bias.size() * sizeof(double)));
    }
  }
  if (!out) throw IoError("checkpoint: failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string name = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + name);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kMagic, sizeof(magic)) != 0) {
    throw IoError("checkpoint " + name + ": bad magic");
  }
  if (const auto v = detail::get<std::uint32_t>(in, name); v != detail::kVersion) {
    throw IoError("checkpoint " + name + ": unsupported version " + std::to_string(v));
  }
  Checkpoint ckpt;
  ckpt.config_hash = detail::get<std::uint64_t>(in, name);
  const auto ncls = detail::get<std::uint32_t>(in, name);
  const auto nreg = detail::get<std::uint32_t>(in, name);
  if (ncls == 0 || nreg == 0 || ncls > 64 || nreg > 64) {
    throw IoError("checkpoint " + name + ": implausible layer counts");
  }
  auto read_stack = [&](std::uint32_t n, std::vector<DenseLayer>& stack) {
    for (std::uint32_t k = 0; k < n; ++k) {
      const auto rows = detail::get<std::uint32_t>(in, name);
      const auto cols = detail::get<std::uint32_t>(in, name);
      if (rows == 0 || cols == 0 || rows > 1u << 16 || cols > 1u << 16) {
        throw IoError("checkpoint " + name + ": implausible layer shape");
      }
      DenseLayer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
      in.read(reinterpret_cast<char*>(layer.weight.data()),
              static_cast<std::streamsize>(layer.weight.size() * sizeof(double)));
      in.read(reinterpret_cast<char*>(layer.bias.data()),
              static_cast<std::streamsize>(layer.bias.size() * sizeof(double)));
      if (!in) throw IoError("checkpoint " + name + ": truncated");
      stack.push_back(std::move(layer));
    }
  };
  read_stack(ncls, ckpt.params.cls);
  read_stack(nreg, ckpt.params.reg);
  return ckpt;
}

}  // namespace pooldet
