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

// End-to-end experiment steps shared by the CLI and the acceptance suite:
// training, batch inference, evaluation, ablation sweeps and heatmaps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <tuple>
#include <string>
#include <vector>

#include <json.hpp>

#include "pooldet/aggregation.hpp"
#include "pooldet/assignment.hpp"
#include "pooldet/checkpoint.hpp"
#include "pooldet/config.hpp"
#include "pooldet/data.hpp"
#include "pooldet/detection_file.hpp"
#include "pooldet/eval.hpp"
#include "pooldet/losses.hpp"
#include "pooldet/model.hpp"

namespace pooldet {

// Per-image training inputs that never change during training.
struct PreparedSample {
  DescriptorBatch descriptors;
  AssignmentMap assignment;
  std::vector<GroundTruth> gts;
};

// With train.hflip, mirrored copies follow the originals.
inline std::vector<PreparedSample> prepare_samples(const Dataset& ds, const RunConfig& config,
                                                   const PyramidSpec& pyramid) {
  std::vector<PreparedSample> out;
  out.reserve(ds.samples.size());
  for (const Sample& s : ds.samples) {
    if (s.image.width != pyramid.image_width || s.image.height != pyramid.image_height) {
      throw InvalidParameter("image " + std::to_string(s.image_id) +
                             " does not match scene.image_width/image_height");
    }
    out.push_back({extract_all(s.image, pyramid, config.descriptor),
                   label_grid(s.gts, pyramid, config.shrink), s.gts});
  }
  if (config.train.hflip) {
    for (const Sample& s : ds.samples) {
      const Sample f = flip_horizontal(s);
      out.push_back({extract_all(f.image, pyramid, config.descriptor),
                     label_grid(f.gts, pyramid, config.shrink), f.gts});
    }
  }
  return out;
}

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  double classification = 0.0;
  double regression = 0.0;
  double positives_per_image = 0.0;   // pooled positive terms per image
  double instances_per_image = 0.0;
  std::size_t unassigned_instances = 0;
};

struct TrainResult {
  ToyHeadParams final_params;
  ToyHeadParams best_params;
  int best_epoch = -1;
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
};

// Mini-batch SGD over the dataset. Per-image losses are averaged over the
// batch; gradients are reduced in a fixed order. `log` receives one JSON
// record per step and per epoch.
inline TrainResult train(const RunConfig& config, const Dataset& ds,
                         const std::function<void(const nlohmann::json&)>& log = {}) {
  config.validate();
  if (ds.num_classes() != config.scene.num_classes) {
    throw InvalidParameter("dataset has " + std::to_string(ds.num_classes()) +
                           " classes but scene.num_classes is " +
                           std::to_string(config.scene.num_classes));
  }
  const PyramidSpec pyramid = config.make_pyramid();
  const auto samples = prepare_samples(ds, config, pyramid);

  TrainResult result;
  ToyHeadParams params =
      init_params(config.head_config(), config.descriptor.length(), mix_seed(config.seed, 0x5eed));
  OptimState optim = config.make_optimizer();
  std::mt19937_64 shuffle_rng(mix_seed(config.seed, 0x5e0f1e));
  double best_loss = std::numeric_limits<double>::infinity();
  result.best_params = params;

  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  int step = 0;
  for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
    optim.set_epoch(epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = optim.lr;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.train.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config.train.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);
      ToyHeadParams grads = params.zeros_like();
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const PreparedSample& s = samples[order[b]];
        ForwardCache cache;
        const HeadOutputs out = forward(params, s.descriptors, pyramid, &cache);
        const TotalLoss loss =
            total_loss(out.logits, out.regression, s.assignment, s.gts, config.loss);
        accumulate(grads, backward(params, cache, pyramid, loss.logit_grad, loss.regression_grad),
                   scale);
        batch_loss += loss.total * scale;
        rec.total += loss.total;
        rec.classification += loss.classification;
        rec.regression += loss.regression;
        rec.positives_per_image += static_cast<double>(loss.num_pooled_terms);
        rec.instances_per_image += static_cast<double>(s.gts.size());
        rec.unassigned_instances += s.assignment.unassigned_instances.size();
      }
      if (config.train.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& t : grads.tensors())
          for (double v : t) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm > config.train.grad_clip) {
          for (auto& t : grads.tensors())
            for (double& v : t) v *= config.train.grad_clip / norm;
        }
      }
      sgd_step(params, grads, optim);
      if (!params.all_finite()) {
        throw DomainError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                          std::to_string(step));
      }
      result.step_losses.push_back(batch_loss);
      if (log) {
        log({{"type", "step"}, {"epoch", epoch}, {"step", step}, {"loss", batch_loss}});
      }
      ++step;
    }
    const double n = std::max<double>(1.0, static_cast<double>(samples.size()));
    rec.total /= n;
    rec.classification /= n;
    rec.regression /= n;
    rec.positives_per_image /= n;
    rec.instances_per_image /= n;
    if (log) {
      log({{"type", "epoch"},
           {"epoch", rec.epoch},
           {"lr", rec.lr},
           {"total", rec.total},
           {"cls", rec.classification},
           {"reg", rec.regression},
           {"positives_per_image", rec.positives_per_image},
           {"instances_per_image", rec.instances_per_image},
           {"unassigned_instances", rec.unassigned_instances}});
    }
    if (rec.total < best_loss) {
      best_loss = rec.total;
      result.best_params = params;
      result.best_epoch = epoch;
    }
    result.epochs.push_back(rec);
  }
  result.final_params = std::move(params);
  if (result.best_epoch < 0) result.best_params = result.final_params;
  return result;
}

inline std::vector<ImagePooledDetections> run_inference(const ToyHeadParams& params,
                                                        const Dataset& ds,
                                                        const RunConfig& config) {
  config.validate();
  const PyramidSpec pyramid = config.make_pyramid();
  std::vector<ImagePooledDetections> out;
  for (const Sample& s : ds.samples) {
    out.push_back({s.image_id, infer(params, s.image, pyramid, config.descriptor, config.inference)});
  }
  return out;
}

inline ApReport evaluate(std::span<const ImagePooledDetections> dets, const Dataset& ds) {
  std::vector<ImageDetections> plain;
  for (const auto& im : dets) {
    ImageDetections d{im.image_id, {}};
    for (const auto& pd : im.detections) d.detections.push_back(pd.detection);
    // Canonical order so that the report does not depend on file order.
    std::sort(d.detections.begin(), d.detections.end(), [](const Detection& a, const Detection& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.class_id != b.class_id) return a.class_id < b.class_id;
      if (a.source != b.source) return a.source < b.source;
      return std::tie(a.box.x1, a.box.y1, a.box.x2, a.box.y2) <
             std::tie(b.box.x1, b.box.y1, b.box.x2, b.box.y2);
    });
    plain.push_back(std::move(d));
  }
  std::vector<ImageTruth> truths;
  int w = 0, h = 0;
  for (const Sample& s : ds.samples) {
    truths.push_back({s.image_id, s.gts});
    w = s.image.width;
    h = s.image.height;
  }
  EvalParams params;
  params.num_classes = std::max(1, ds.num_classes());
  params.buckets = ds.samples.empty() ? SizeBuckets{} : SizeBuckets::scaled_for(w, h);
  return summarize(plain, truths, params);
}

inline nlohmann::json report_to_json(const ApReport& r, const std::vector<std::string>& names) {
  auto val = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    per_class[c < names.size() ? names[c] : std::to_string(c)] = val(r.per_class[c]);
  }
  return {{"AP", val(r.ap)},         {"AP50", val(r.ap50)},       {"AP75", val(r.ap75)},
          {"AP_S", val(r.ap_small)}, {"AP_M", val(r.ap_medium)},  {"AP_L", val(r.ap_large)},
          {"per_class", per_class}};
}

inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *v;
  return os.str();
}

inline std::string report_to_text(const ApReport& r, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << "AP    " << format_metric(r.ap) << "\n"
     << "AP50  " << format_metric(r.ap50) << "\n"
     << "AP75  " << format_metric(r.ap75) << "\n"
     << "AP_S  " << format_metric(r.ap_small) << "\n"
     << "AP_M  " << format_metric(r.ap_medium) << "\n"
     << "AP_L  " << format_metric(r.ap_large) << "\n";
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    os << "AP[" << (c < names.size() ? names[c] : std::to_string(c)) << "]  "
       << format_metric(r.per_class[c]) << "\n";
  }
  return os.str();
}

struct AblationRow {
  std::string setting;
  ApReport report;
};

enum class Sweep { kShrink, kRegressionWeight, kPooling };

inline Sweep sweep_from_string(const std::string& s) {
  if (s == "shrink") return Sweep::kShrink;
  if (s == "reg-weight") return Sweep::kRegressionWeight;
  if (s == "pooling") return Sweep::kPooling;
  throw InvalidParameter("sweep must be one of shrink, reg-weight, pooling (got '" + s + "')");
}

inline std::vector<std::string> default_sweep_values(Sweep sweep) {
  switch (sweep) {
    case Sweep::kShrink: return {"1.0", "0.8", "0.6", "0.4", "0.2"};
    case Sweep::kRegressionWeight: return {"1.0", "0.9", "0.75", "0.6"};
    case Sweep::kPooling: return {"sum", "max"};
  }
  return {};
}

inline RunConfig apply_sweep(RunConfig c, Sweep sweep, const std::string& value) {
  try {
    switch (sweep) {
      case Sweep::kShrink: c.shrink = std::stod(value); break;
      case Sweep::kRegressionWeight: c.loss.regression_weight = std::stod(value); break;
      case Sweep::kPooling: c.loss.pooling_mode = pooling_mode_from_string(value); break;
    }
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const InvalidParameter*>(&e)) throw;
    throw InvalidParameter("sweep value '" + value + "' is not a number");
  }
  c.validate();
  return c;
}

// Trains and evaluates one model per setting, all from the same seed.
inline std::vector<AblationRow> ablate(const RunConfig& config, const Dataset& train_set,
                                       const Dataset& test_set, Sweep sweep,
                                       const std::vector<std::string>& values) {
  std::vector<AblationRow> rows;
  for (const std::string& v : values) {
    const RunConfig c = apply_sweep(config, sweep, v);
    const TrainResult tr = train(c, train_set);
    rows.push_back({v, evaluate(run_inference(tr.final_params, test_set, c), test_set)});
  }
  return rows;
}

inline std::string ablation_table(const std::string& header, const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "| " << header << " | AP | AP50 | AP75 | AP_S | AP_M | AP_L |\n"
     << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    os << "| " << r.setting << " | " << format_metric(r.report.ap) << " | "
       << format_metric(r.report.ap50) << " | " << format_metric(r.report.ap75) << " | "
       << format_metric(r.report.ap_small) << " | " << format_metric(r.report.ap_medium) << " | "
       << format_metric(r.report.ap_large) << " |\n";
  }
  return os.str();
}

inline std::vector<HeatmapAccumulator> build_heatmaps(std::span<const ImagePooledDetections> dets,
                                                      const Dataset& ds, const RunConfig& config,
                                                      int resolution = 64) {
  const PyramidSpec pyramid = config.make_pyramid();
  std::vector<HeatmapAccumulator> maps(static_cast<std::size_t>(ds.num_classes()),
                                       HeatmapAccumulator(resolution));
  std::map<int, const Sample*> by_id;
  for (const Sample& s : ds.samples) by_id[s.image_id] = &s;
  for (const auto& im : dets) {
    auto it = by_id.find(im.image_id);
    if (it == by_id.end()) continue;
    accumulate_heatmap(im.detections, it->second->gts, pyramid, maps);
  }
  return maps;
}

}  // namespace pooldet
