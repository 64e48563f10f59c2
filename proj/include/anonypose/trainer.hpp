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

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "anonypose/checkpoint.hpp"
#include "anonypose/domain.hpp"
#include "anonypose/guidance.hpp"
#include "anonypose/nets.hpp"
#include "anonypose/objectives.hpp"
#include "anonypose/optim.hpp"
#include "anonypose/scene.hpp"

namespace anonypose {

// ---- configuration ------------------------------------------------------------

struct OptimizerSettings {
  AdamOptions generators{0.5, 0.999, 1e-8, 0.0};
  AdamOptions discriminators{0.5, 0.999, 1e-8, 0.0};
  AdamOptions pose{0.9, 0.999, 1e-8, 0.01};

  friend bool operator==(const OptimizerSettings&, const OptimizerSettings&) = default;
};

struct TrainConfig {
  int batch_size = 16;
  double lr0 = 3.5e-5;
  double pose_lr0 = 0.0;      // pose estimator base rate; 0 means lr0
  double decay = 0.99;        // per epoch
  int epochs = 1;
  std::int64_t max_steps = 0;  // stop early once reached; 0 disables the cap
  OptimizerSettings optimizers;
  std::uint64_t seed = 0;
  LossWeights weights;
  // When set, T = threshold_fraction * mean L1(x, A(x)) over the training
  // portraits, computed once before the first step; otherwise weights.threshold.
  bool auto_threshold = true;
  double threshold_fraction = 0.3;
  GuidanceSpec guidance;
  int portrait_size = 128;
  int warmup_epochs_without_pe = 0;
  bool pe_grad_to_generators = true;
  bool freeze_discriminators = false;
  bool augment = true;
  double clip_norm = 10.0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from(const nlohmann::json& j, const std::string& path);

// lr0 * decay^epoch
double lr_at(const TrainConfig& config, int epoch);
double pose_lr_at(const TrainConfig& config, int epoch);

// ---- augmentation ----------------------------------------------------------------

struct AugmentParams {
  bool flip = false;
  double hue = 0.0;         // fraction of the hue circle
  double saturation = 1.0;  // multiplicative
  double brightness = 1.0;  // multiplicative on value

  // flip with p = 0.5, hue U(-0.05, 0.05), saturation and brightness U(0.8, 1.2).
  static AugmentParams sample(std::uint64_t seed);
};

// Mirrors x -> W - 1 - x, swaps left/right keypoint labels of each person's
// schema and maps box [x0, x1) to [W - x1, W - x0); then jitters color in HSV.
Scene augment(const Scene& scene, const AugmentParams& params);
Portrait augment(const Portrait& portrait, const AugmentParams& params);

// Counter-based seed derivation: a pure function of its inputs.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

// ---- models ----------------------------------------------------------------------

struct ModelConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  PoseHeadConfig pose;

  void validate(int portrait_size) const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from(const nlohmann::json& j, const std::string& path);

struct ModelBundle {
  ModelConfig config;
  Generator gx{nullptr};
  Generator gy{nullptr};
  PatchDiscriminator dx{nullptr};
  PatchDiscriminator dy{nullptr};
  PoseNet pose{nullptr};
  Adam opt_gx, opt_gy, opt_dx, opt_dy, opt_pose;

  // Seeds torch's generator with `seed` before building the modules.
  static ModelBundle create(const ModelConfig& config, const OptimizerSettings& optimizers,
                            std::uint64_t seed);
  // Independent deep copy, optimizer moments included.
  ModelBundle clone(const OptimizerSettings& optimizers) const;

  void train(bool on);
  void export_to(Archive& archive) const;
  void import_from(const Archive& archive);
};

// ---- state and steps ----------------------------------------------------------------

struct TrainState {
  std::int64_t step = 0;
  int epoch = 0;
  int batch_in_epoch = 0;  // resume position inside the current epoch
  double threshold = 0.0;
  std::deque<double> recent_l1;  // last kRecentWindow guidance L1 values
  double l1_sum = 0.0;
  std::int64_t l1_count = 0;
  std::int64_t clip_events = 0;
  std::uint64_t seed = 0;
  ModelBundle models;

  static constexpr std::size_t kRecentWindow = 100;
  double recent_l1_mean() const;
};

// One batch of the joint pipeline: scene tensors, ground-truth portraits and
// their guidance, plus where each portrait sits in its scene.
struct TrainBatch {
  std::string id;
  torch::Tensor scenes;   // [B, 3, H, W]
  torch::Tensor x;        // [N, 3, P, P] original portraits
  torch::Tensor y;        // [N, 3, P, P] guidance A(x)
  std::vector<PixelRect> rects;
  std::vector<std::int64_t> owner;  // scene index of each portrait
  std::vector<std::vector<PersonAnnotation>> targets;
};

// Builds a batch from `scenes` (augmented with seeds derived from
// `batch_seed` when config.augment is set).
TrainBatch make_train_batch(std::span<const Scene> scenes, const TrainConfig& config,
                            std::uint64_t batch_seed, std::string id);

// Differentiable paste of `portraits` into copies of `scenes`, each portrait
// bilinearly resized (corner-aligned) onto its rectangle.
torch::Tensor composite_tensor(const torch::Tensor& scenes, const torch::Tensor& portraits,
                               std::span<const PixelRect> rects,
                               std::span<const std::int64_t> owner);

struct StepEvents {
  std::vector<std::string> clipped;  // modules whose gradients were clipped
  // Invoked right after each optimizer update with the module name
  // ("dy", "dx", "gx", "gy", "pose").
  std::function<void(std::string_view module)> after_update;
};

// One joint update, in order: y' = G_X(x); D_Y update; x' = G_Y(y'); D_X
// update; then one backward pass of the generator-side objective
// L_GX + l1 * L_XY + L_GY + l2 * L_cons + l3 * L_PE into G_X, G_Y and P
// with discriminator weights held fixed. On a non-finite loss every model and
// optimizer is restored to its pre-step state and NonFiniteLoss names the batch.
LossReport train_step(TrainState& state, const TrainBatch& batch, const TrainConfig& config,
                      StepEvents* events = nullptr);

// Mean L1 between training portraits and their guidance (no augmentation).
double mean_guidance_l1(std::span<const Scene> scenes, const TrainConfig& config);

// ---- checkpoints -------------------------------------------------------------------

void save_checkpoint(const TrainState& state, const TrainConfig& config,
                     const std::filesystem::path& path);
struct LoadedCheckpoint {
  TrainState state;
  TrainConfig config;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// ---- fit --------------------------------------------------------------------------

struct FitOptions {
  std::filesystem::path output_dir;  // empty: nothing is written
  std::optional<std::filesystem::path> resume_from;
  bool keep_epoch_checkpoints = false;
  int eval_every = 0;
  std::function<void(const TrainState&)> on_eval;
  // Called once on freshly created models (not on resume).
  std::function<void(ModelBundle&)> on_init;
  std::function<void(const TrainState&, const LossReport&, const StepEvents&)> on_step;
};

struct FitResult {
  TrainState state;
  std::vector<LossReport> history;
};

// Trains the joint pipeline on `train`. Writes "<output_dir>/checkpoint.anpk"
// after every epoch (and once for zero epochs) and appends one JSON line per
// step to "<output_dir>/train_log.jsonl".
FitResult fit(const ModelConfig& models, const TrainConfig& config, std::span<const Scene> train,
              const FitOptions& options = {});

// Pose-only training of `pose` for config.max_steps steps (or config.epochs
// epochs) on `scenes`, after augmentation and `transform`.
using SceneTransform = std::function<Scene(const Scene&)>;
std::vector<double> fit_pose(PoseNet& pose, Adam& optimizer, std::span<const Scene> scenes,
                             const TrainConfig& config, const SceneTransform& transform = {});

}  // namespace anonypose
