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

#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anonypose/datasets.hpp"
#include "anonypose/metrics.hpp"
#include "anonypose/trainer.hpp"

namespace anonypose {

inline constexpr int kExperimentSchemaVersion = 1;

// Pose-only phases around joint training: pretraining on originals and the
// baseline finetuned on conventionally desensitized scenes.
struct PoseSchedule {
  int batch_size = 8;
  std::int64_t pretrain_steps = 2000;
  double pretrain_lr = 2e-3;
  std::int64_t finetune_steps = 2000;
  double finetune_lr = 1e-3;
  bool conventional_baseline = true;
  // Reuse a pretrained estimator ("pose_pretrained.anpk" of another run).
  std::optional<std::filesystem::path> pretrained_from;
};

struct ExperimentConfig {
  int schema_version = kExperimentSchemaVersion;
  std::string name = "experiment";
  DatasetManifest dataset;
  ModelConfig models;
  TrainConfig train;  // train.guidance holds the guidance spec
  PoseSchedule pose;
  std::string eval_split = "test";  // "val" or "test"
  std::filesystem::path output_dir;

  // Full validation, including model/portrait compatibility.
  void validate() const;
};

// Parses and validates; unknown keys anywhere raise ConfigError naming them.
// Relative paths resolve against `base_dir`.
ExperimentConfig experiment_config_from(const nlohmann::json& j,
                                        const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& c);

// ---- evaluation ------------------------------------------------------------------

// Scenes passed through the generators portrait-wise (ground-truth boxes),
// plus the portrait triples used for image-quality metrics.
struct TranslatedScenes {
  std::vector<Scene> enhanced;   // Y' composites
  std::vector<Scene> recovered;  // X' composites
  std::vector<ImageBuffer> portraits_o, portraits_p, portraits_r;
  double generator_ms_per_portrait = 0.0;
};

TranslatedScenes translate_scenes(ModelBundle& models, std::span<const Scene> scenes,
                                  int portrait_size);

// Conventionally desensitized composites A(x), portrait-wise.
Scene desensitize_scene(const Scene& scene, const GuidanceSpec& guidance, int portrait_size);

std::vector<std::vector<ScoredPose>> detect_poses(PoseNet& pose, std::span<const Scene> scenes,
                                                  const DecodeOptions& options = {});
ApAr evaluate_pose(PoseNet& pose, std::span<const Scene> scenes,
                   const DecodeOptions& options = {});

struct QualityPair {
  double psnr = 0.0;  // mean over portraits, +inf when every pair is identical
  double ssim = 0.0;
};
QualityPair mean_quality(std::span<const ImageBuffer> a, std::span<const ImageBuffer> b);

// ---- protocol ------------------------------------------------------------------

// Condition labels used in result tables.
inline constexpr const char* kPreO = "pre,o";
inline constexpr const char* kPreP = "pre,p";
inline constexpr const char* kConvP = "conv,p";
inline constexpr const char* kJointP = "joint,p";
inline constexpr const char* kJointR = "joint,r";
inline constexpr const char* kJointO = "joint,o";

struct ExperimentResult {
  std::string name;
  GuidanceSpec guidance;
  std::string backbone;
  std::string eval_split;
  int eval_scenes = 0;
  QualityPair op;              // original vs privacy-enhanced
  QualityPair orr;             // original vs recovered
  QualityPair og;              // original vs conventional guidance
  std::map<std::string, ApAr> pose;  // keyed by condition label
  double threshold = 0.0;
  double l1_first_mean = 0.0;  // mean guidance L1 over the first 100 steps
  double l1_tail_mean = 0.0;   // ... and over the last 100
  bool gated_l1_converged = false;  // tail mean below 2T
  std::int64_t steps = 0;
  std::int64_t clip_events = 0;
  double train_seconds = 0.0;
  double generator_ms_per_portrait = 0.0;

  nlohmann::json to_json() const;
  static ExperimentResult from_json(const nlohmann::json& j);
};

struct ExperimentHooks {
  std::function<void(const std::string& phase)> on_phase;
  std::function<void(const TrainState&, const LossReport&, const StepEvents&)> on_step;
};

// Pretrain pose on originals, optional conventional baseline, joint training
// initialized from the pretrained estimator, then evaluation of every
// condition on the evaluation split. Writes checkpoints, logs and
// "metrics.json" under output_dir when it is set.
ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentHooks& hooks = {});

// Archive holding only a pose estimator.
void save_pose(PoseNet& pose, const PoseHeadConfig& config, const std::filesystem::path& path);
PoseNet load_pose(const std::filesystem::path& path);

}  // namespace anonypose
