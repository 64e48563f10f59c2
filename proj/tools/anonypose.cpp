/* Copyright 2026 The AnonyPose Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// anonypose: train, anonymize, recover and report from the command line.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "anonypose/config.hpp"
#include "anonypose/datasets.hpp"
#include "anonypose/errors.hpp"
#include "anonypose/experiment.hpp"
#include "anonypose/image_io.hpp"
#include "anonypose/metrics.hpp"
#include "anonypose/report.hpp"
#include "anonypose/scene.hpp"
#include "anonypose/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace anonypose;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;
constexpr const char* kSidecar = "boxes.json";

// Usage problems detected after argument parsing.
struct UsageError : Error {
  using Error::Error;
};

void apply_thread_cap() {
  const char* env = std::getenv("ANONYPOSE_THREADS");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) {
    throw UsageError(fmt::format("ANONYPOSE_THREADS must be a positive integer, got '{}'", env));
  }
  torch::set_num_threads(static_cast<int>(n));
}

// ---- train -----------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string output;
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
};

int cmd_train(const TrainArgs& a) {
  if (!fs::exists(a.config)) throw ConfigError("--config", fmt::format("'{}' does not exist", a.config));
  ExperimentConfig config = load_experiment_config(a.config);
  if (a.seed) config.train.seed = *a.seed;
  if (!a.output.empty()) config.output_dir = fs::absolute(a.output);
  if (config.output_dir.empty()) config.output_dir = fs::absolute(fs::path("runs") / config.name);
  config.validate();
  if (a.dry_run) {
    std::cout << to_json(config).dump(2) << '\n';
    std::cerr << "configuration valid; dry run, nothing trained\n";
    return kOk;
  }
  ExperimentHooks hooks;
  hooks.on_phase = [](const std::string& phase) { std::cerr << "[anonypose] " << phase << '\n'; };
  hooks.on_step = [](const TrainState& s, const LossReport& r, const StepEvents&) {
    if (s.step % 100 == 0) {
      std::cerr << fmt::format("[anonypose] step {} L_total {:.4f} L1 {:.4f}\n", s.step,
                               r["L_total"], r["L1"]);
    }
  };
  const ExperimentResult result = run_experiment(config, hooks);
  std::cout << result.to_json().dump(2) << '\n';
  return kOk;
}

// ---- anonymize / recover ------------------------------------------------------------

struct Inputs {
  std::vector<Scene> scenes;
  std::vector<std::string> files;
};

Inputs read_inputs(const fs::path& dir, const std::string& schema) {
  if (!fs::is_directory(dir)) throw UsageError(fmt::format("--input '{}' is not a directory", dir.string()));
  Inputs in;
  const fs::path annotations = dir / "annotations.json";
  if (!fs::exists(annotations)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.path().extension() == ".png") {
        throw DataError(fmt::format(
            "'{}' has images but no annotations.json; person boxes are required "
            "(ground_truth mode, no external detector configured)",
            dir.string()));
      }
    }
    return in;
  }
  in.scenes = load_coco_keypoints(annotations, dir, schema);
  const json doc = read_json_file(annotations);
  std::map<std::string, std::string> file_of;
  for (const auto& img : doc.at("images")) {
    file_of[std::to_string(img.at("id").get<std::int64_t>())] = img.at("file_name").get<std::string>();
  }
  for (const auto& s : in.scenes) in.files.push_back(file_of.at(s.id));
  return in;
}


// Runs `generator` on every portrait of `scene` cut at `boxes`.
ImageBuffer translate(Generator& generator, const Scene& scene, const std::vector<BoundingBox>& boxes,
                      int portrait_size) {
  PortraitBatch batch = extract_portraits(scene, boxes, portrait_size, portrait_size);
  if (batch.portraits.empty()) return scene.image;
  std::vector<ImageBuffer> images;
  for (const auto& p : batch.portraits) images.push_back(p.image);
  torch::NoGradGuard no_grad;
  const torch::Tensor out = generator->forward(stack_images(images));
  for (std::size_t i = 0; i < batch.portraits.size(); ++i) {
    batch.portraits[i].image = to_image(out[static_cast<std::int64_t>(i)]);
  }
  return composite(scene, batch);
}

json box_json(const BoundingBox& b) { return {b.x_min, b.y_min, b.x_max, b.y_max}; }

struct IoArgs {
  std::string checkpoint;
  std::string input;
  std::string output;
};

LoadedCheckpoint open_checkpoint(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  LoadedCheckpoint ck = load_checkpoint(path);
  ck.state.models.train(false);
  return ck;
}

int cmd_anonymize(const IoArgs& a) {
  LoadedCheckpoint ck = open_checkpoint(a.checkpoint);
  const Inputs in = read_inputs(a.input, ck.state.models.config.pose.schema_id);
  if (in.scenes.empty()) {
    std::cerr << "no input scenes; nothing written\n";
    return kOk;
  }
  const int ps = ck.config.portrait_size;
  fs::create_directories(a.output);
  json sidecar = {{"format", "anonypose-sidecar"},
                  {"version", 1},
                  {"portrait_size", ps},
                  {"source_dir", fs::absolute(a.input).string()},
                  {"scenes", json::array()}};
  for (std::size_t i = 0; i < in.scenes.size(); ++i) {
    const Scene& s = in.scenes[i];
    const auto boxes = detect_persons(s);
    write_png(fs::path(a.output) / in.files[i], translate(ck.state.models.gx, s, boxes, ps));
    json record = {{"id", s.id}, {"file", in.files[i]}, {"width", s.image.width()},
                   {"height", s.image.height()}, {"boxes", json::array()}};
    for (const auto& b : boxes) record["boxes"].push_back(box_json(b));
    sidecar["scenes"].push_back(record);
  }
  std::ofstream(fs::path(a.output) / kSidecar) << sidecar.dump(2) << '\n';
  std::cerr << fmt::format("anonymized {} scenes into '{}'\n", in.scenes.size(), a.output);
  return kOk;
}

int cmd_recover(const IoArgs& a) {
  LoadedCheckpoint ck = open_checkpoint(a.checkpoint);
  const fs::path sidecar_path = fs::path(a.input) / kSidecar;
  if (!fs::exists(sidecar_path)) {
    throw DataError(fmt::format("sidecar '{}' not found; run anonymize first", sidecar_path.string()));
  }
  const json sidecar = read_json_file(sidecar_path);
  if (sidecar.value("format", std::string()) != "anonypose-sidecar") {
    throw DataError(fmt::format("'{}' is not an anonymize sidecar", sidecar_path.string()));
  }
  const int ps = sidecar.at("portrait_size").get<int>();
  const fs::path source = sidecar.value("source_dir", std::string());
  fs::create_directories(a.output);
  json summary = {{"scenes", json::array()}};
  double psnr_sum = 0;
  int psnr_count = 0;
  for (const auto& rec : sidecar.at("scenes")) {
    const std::string file = rec.at("file").get<std::string>();
    Scene s;
    s.id = rec.at("id").get<std::string>();
    s.image = read_png(fs::path(a.input) / file);
    std::vector<BoundingBox> boxes;
    for (const auto& b : rec.at("boxes")) {
      const auto v = b.get<std::vector<double>>();
      if (v.size() != 4) throw DataError(fmt::format("sidecar scene {}: box needs 4 values", s.id));
      boxes.push_back({v[0], v[1], v[2], v[3]});
    }
    const ImageBuffer recovered = translate(ck.state.models.gy, s, boxes, ps);
    write_png(fs::path(a.output) / file, recovered);
    json entry = {{"id", s.id}, {"file", file}};
    if (!source.empty() && fs::exists(source / file)) {
      const ImageBuffer original = read_png(source / file);
      if (original.same_shape(recovered)) {
        const double v = psnr(original, quantize_u8(recovered));
        entry["psnr_or"] = std::isinf(v) ? json("inf") : json(v);
        if (std::isfinite(v)) {
          psnr_sum += v;
          ++psnr_count;
        }
      }
    }
    summary["scenes"].push_back(entry);
  }
  if (psnr_count > 0) summary["mean_psnr_or"] = psnr_sum / psnr_count;
  std::ofstream(fs::path(a.output) / "summary.json") << summary.dump(2) << '\n';
  std::cerr << fmt::format("recovered {} scenes into '{}'\n", summary["scenes"].size(), a.output);
  return kOk;
}

// ---- report ------------------------------------------------------------------------

int cmd_report(const std::vector<std::string>& runs, const std::string& output) {
  if (runs.empty()) throw UsageError("report needs at least one run directory (--input)");
  std::vector<RunRecord> records;
  for (const auto& r : runs) {
    if (!fs::is_directory(r)) throw UsageError(fmt::format("run directory '{}' does not exist", r));
    records.push_back(read_run(r));
  }
  const auto tables = build_report(records);
  for (const auto& t : tables) std::cout << t.to_text() << '\n';
  if (!output.empty()) write_report(tables, output);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Privacy-enhancing portrait translation with pose estimation"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "run the training and evaluation protocol");
  train_cmd->add_option("--config", train.config, "experiment JSON")->required();
  train_cmd->add_option("--output", train.output, "run directory (overrides output_dir)");
  train_cmd->add_option("--seed", train.seed, "training seed override");
  train_cmd->add_flag("--dry-run", train.dry_run, "validate the configuration only");

  IoArgs anon, rec;
  auto* anon_cmd = app.add_subcommand("anonymize", "write privacy-enhanced scenes");
  anon_cmd->add_option("--checkpoint", anon.checkpoint, "training checkpoint")->required();
  anon_cmd->add_option("--input", anon.input, "directory with PNGs and annotations.json")->required();
  anon_cmd->add_option("--output", anon.output, "output directory")->required();

  auto* rec_cmd = app.add_subcommand("recover", "restore scenes written by anonymize");
  rec_cmd->add_option("--checkpoint", rec.checkpoint, "training checkpoint")->required();
  rec_cmd->add_option("--input", rec.input, "anonymize output directory")->required();
  rec_cmd->add_option("--output", rec.output, "output directory")->required();

  std::vector<std::string> runs;
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "render result tables from run directories");
  report_cmd->add_option("--input,runs", runs, "run directories");
  report_cmd->add_option("--output", report_out, "directory for report.txt and CSV tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    apply_thread_cap();
    if (*train_cmd) return cmd_train(train);
    if (*anon_cmd) return cmd_anonymize(anon);
    if (*rec_cmd) return cmd_recover(rec);
    if (*report_cmd) return cmd_report(runs, report_out);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kUsageError;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kUsageError;
}
