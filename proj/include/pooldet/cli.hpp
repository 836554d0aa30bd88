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

// The `pooldet` command line. Verbs:
//
//   gen-data   synthesize a dataset directory
//   train      fit the detection head, write checkpoints and a JSONL log
//   infer      run the detector and write a detection file
//   eval       score a detection file against a dataset
//   ablate     train/evaluate one model per setting of a sweep
//   heatmap    render per-class voter heatmaps
//
// Common flags: --config, --seed, --out.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pooldet/checkpoint.hpp"
#include "pooldet/config.hpp"
#include "pooldet/data.hpp"
#include "pooldet/detection_file.hpp"
#include "pooldet/pipeline.hpp"

namespace pooldet {

namespace cli_detail {

namespace fs = std::filesystem;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

inline void add_common(CLI::App* cmd, Common& c, bool needs_out) {
  cmd->add_option("--config", c.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "override the configured seed");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (needs_out) out->required();
}

inline RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.scene.seed = *c.seed;
  }
  cfg.validate();
  return cfg;
}

inline fs::path ensure_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
  return p;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace cli_detail

// Runs the CLI; returns the process exit code. Errors are reported on `err`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"Prediction-pooling object detection on synthetic scenes", "pooldet"};
  app.require_subcommand(1);

  // gen-data
  Common gen;
  int gen_count = 0;
  int gen_first = 0;
  auto* gen_cmd = app.add_subcommand("gen-data", "synthesize a dataset directory");
  add_common(gen_cmd, gen, true);
  gen_cmd->add_option("--count", gen_count, "number of images")->required()->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--first-id", gen_first, "id of the first image")->check(CLI::NonNegativeNumber);

  // train
  Common tr;
  std::string tr_data;
  std::optional<std::string> tr_pooling;
  std::optional<double> tr_shrink;
  std::optional<int> tr_epochs;
  auto* tr_cmd = app.add_subcommand("train", "train the detection head");
  add_common(tr_cmd, tr, true);
  tr_cmd->add_option("--data", tr_data, "training dataset directory")->required();
  tr_cmd->add_option("--pooling-mode", tr_pooling, "sum or max");
  tr_cmd->add_option("--shrink", tr_shrink, "positive-area shrink factor");
  tr_cmd->add_option("--epochs", tr_epochs, "number of epochs");

  // infer
  Common inf;
  std::string inf_ckpt, inf_data;
  bool inf_no_pooling = false;
  bool inf_voters = false;
  auto* inf_cmd = app.add_subcommand("infer", "run the detector over a dataset");
  add_common(inf_cmd, inf, true);
  inf_cmd->add_option("--checkpoint", inf_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  inf_cmd->add_option("--data", inf_data, "dataset directory")->required();
  inf_cmd->add_flag("--no-pooling", inf_no_pooling, "disable vote aggregation");
  inf_cmd->add_flag("--voters", inf_voters, "record voter lists");

  // eval
  Common ev;
  std::string ev_dets, ev_data;
  auto* ev_cmd = app.add_subcommand("eval", "score a detection file");
  add_common(ev_cmd, ev, false);
  ev_cmd->add_option("--detections", ev_dets, "detection file")->required()->check(CLI::ExistingFile);
  ev_cmd->add_option("--data", ev_data, "dataset directory")->required();

  // ablate
  Common ab;
  std::string ab_sweep, ab_train, ab_test;
  std::vector<std::string> ab_values;
  auto* ab_cmd = app.add_subcommand("ablate", "train and evaluate one model per setting");
  add_common(ab_cmd, ab, true);
  ab_cmd->add_option("--sweep", ab_sweep, "shrink, reg-weight or pooling")->required();
  ab_cmd->add_option("--values", ab_values, "settings to run (default: the standard sweep)");
  ab_cmd->add_option("--train-data", ab_train, "training dataset (default: generated from config)");
  ab_cmd->add_option("--test-data", ab_test, "test dataset (default: generated from config)");

  // heatmap
  Common hm;
  std::string hm_ckpt, hm_data;
  int hm_resolution = 64;
  int hm_scale = 4;
  auto* hm_cmd = app.add_subcommand("heatmap", "render per-class voter heatmaps");
  add_common(hm_cmd, hm, true);
  hm_cmd->add_option("--checkpoint", hm_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  hm_cmd->add_option("--data", hm_data, "dataset directory")->required();
  hm_cmd->add_option("--resolution", hm_resolution, "grid cells per side")->check(CLI::Range(2, 1024));
  hm_cmd->add_option("--scale", hm_scale, "pixels per cell")->check(CLI::Range(1, 64));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*gen_cmd) {
      const RunConfig cfg = resolve_config(gen);
      const Dataset ds = generate_dataset(cfg.scene, gen_count, gen_first);
      save_dataset(ds, ensure_dir(gen.out));
      std::vector<int> counts(ds.class_names.size(), 0);
      for (const auto& s : ds.samples)
        for (const auto& g : s.gts) ++counts[static_cast<std::size_t>(g.class_id)];
      out << "images " << ds.samples.size() << "\n";
      for (std::size_t c = 0; c < counts.size(); ++c) out << ds.class_names[c] << " " << counts[c] << "\n";
      return 0;
    }

    if (*tr_cmd) {
      RunConfig cfg = resolve_config(tr);
      if (tr_pooling) cfg.loss.pooling_mode = pooling_mode_from_string(*tr_pooling);
      if (tr_shrink) cfg.shrink = *tr_shrink;
      if (tr_epochs) cfg.train.epochs = *tr_epochs;
      cfg.validate();
      const Dataset ds = load_dataset(tr_data);
      const fs::path dir = ensure_dir(tr.out);
      std::ofstream log(dir / "train_log.jsonl");
      if (!log) throw IoError("cannot write " + (dir / "train_log.jsonl").string());
      const TrainResult result = train(cfg, ds, [&](const nlohmann::json& rec) {
        log << rec.dump() << "\n";
        if (rec.at("type") == "epoch") out << rec.dump() << "\n";
      });
      const std::uint64_t hash = model_config_hash(cfg);
      save_checkpoint({hash, result.final_params}, dir / "final.ckpt");
      save_checkpoint({hash, result.best_params}, dir / "best.ckpt");
      save_config(cfg, dir / "config.json");
      return 0;
    }

    if (*inf_cmd) {
      RunConfig cfg = resolve_config(inf);
      if (inf_no_pooling) cfg.inference.pooling_enabled = false;
      const Checkpoint ckpt = load_checkpoint(inf_ckpt);
      if (ckpt.config_hash != model_config_hash(cfg)) {
        throw InvalidParameter("checkpoint " + inf_ckpt +
                               " was trained with a different model configuration");
      }
      const Dataset ds = load_dataset(inf_data);
      const auto dets = run_inference(ckpt.params, ds, cfg);
      const fs::path dir = ensure_dir(inf.out);
      write_detections(dets, dir / "detections.jsonl", inf_voters);
      std::size_t n = 0;
      for (const auto& im : dets) n += im.detections.size();
      out << "detections " << n << " images " << dets.size() << "\n";
      return 0;
    }

    if (*ev_cmd) {
      const Dataset ds = load_dataset(ev_data);
      const auto dets = read_detections(ev_dets);
      const ApReport report = evaluate(dets, ds);
      out << report_to_text(report, ds.class_names);
      if (!ev.out.empty()) {
        write_text(ensure_dir(ev.out) / "report.json",
                   report_to_json(report, ds.class_names).dump(2) + "\n");
      }
      return 0;
    }

    if (*ab_cmd) {
      const RunConfig cfg = resolve_config(ab);
      const Sweep sweep = sweep_from_string(ab_sweep);
      if (ab_values.empty()) ab_values = default_sweep_values(sweep);
      const Dataset train_set = ab_train.empty()
                                    ? generate_dataset(cfg.scene, cfg.train_count, 0)
                                    : load_dataset(ab_train);
      const Dataset test_set = ab_test.empty()
                                   ? generate_dataset(cfg.scene, cfg.test_count, cfg.train_count)
                                   : load_dataset(ab_test);
      const auto rows = ablate(cfg, train_set, test_set, sweep, ab_values);
      const std::string table = ablation_table(ab_sweep, rows);
      out << table;
      const fs::path dir = ensure_dir(ab.out);
      write_text(dir / "ablation.md", table);
      nlohmann::json j = nlohmann::json::array();
      for (const auto& r : rows) {
        j.push_back({{"setting", r.setting}, {"report", report_to_json(r.report, train_set.class_names)}});
      }
      write_text(dir / "ablation.json", j.dump(2) + "\n");
      return 0;
    }

    if (*hm_cmd) {
      const RunConfig cfg = resolve_config(hm);
      const Checkpoint ckpt = load_checkpoint(hm_ckpt);
      if (ckpt.config_hash != model_config_hash(cfg)) {
        throw InvalidParameter("checkpoint " + hm_ckpt +
                               " was trained with a different model configuration");
      }
      const Dataset ds = load_dataset(hm_data);
      const auto maps = build_heatmaps(run_inference(ckpt.params, ds, cfg), ds, cfg, hm_resolution);
      const fs::path dir = ensure_dir(hm.out);
      for (std::size_t c = 0; c < maps.size(); ++c) {
        write_ppm(maps[c].render(hm_scale), dir / ("heatmap_" + ds.class_names[c] + ".ppm"));
        out << ds.class_names[c] << " detections " << maps[c].detections << " mass "
            << maps[c].total_mass << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    err << "pooldet: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace pooldet
