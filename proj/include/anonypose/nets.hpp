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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "anonypose/domain.hpp"
#include "anonypose/metrics.hpp"

namespace anonypose {

// ---- ImageBuffer <-> tensor -------------------------------------------------

// [C, H, W] float tensor holding the pixels of `image`.
torch::Tensor to_tensor(const ImageBuffer& image);
// [N, C, H, W] stack; all images must share a shape.
torch::Tensor stack_images(std::span<const ImageBuffer> images);
// Clamped copy of a [C, H, W] tensor.
ImageBuffer to_image(const torch::Tensor& chw);

// ---- generators --------------------------------------------------------------

enum class BackboneFamily : std::uint8_t { kUNet, kResNet };

struct GeneratorConfig {
  BackboneFamily family = BackboneFamily::kUNet;
  int depth = 7;          // U-Net levels or ResNet residual blocks
  int base_width = 16;
  int in_channels = 3;
  int out_channels = 3;

  // "unet_7", "unet_8", "resnet_6", "resnet_9"; any unet_<d> / resnet_<k>
  // with d in [1, 9], k in [1, 16] is accepted.
  static GeneratorConfig parse(std::string_view backbone, int base_width = 16);
  std::string backbone_name() const;
  // Input height and width must be multiples of this.
  int required_multiple() const noexcept;
  void validate() const;

  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

// U-Net with a skip connection at every level; channel widths double per level
// up to 8x base. Output passes through a logistic map into [0, 1].
class UNetGeneratorImpl : public torch::nn::Module {
 public:
  explicit UNetGeneratorImpl(const GeneratorConfig& config);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int depth_;
  std::vector<torch::nn::Conv2d> down_;
  std::vector<torch::nn::InstanceNorm2d> down_norm_;
  std::vector<torch::nn::ConvTranspose2d> up_;
  std::vector<torch::nn::InstanceNorm2d> up_norm_;
};
TORCH_MODULE(UNetGenerator);

class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(ResidualBlock);

class ResNetGeneratorImpl : public torch::nn::Module {
 public:
  explicit ResNetGeneratorImpl(const GeneratorConfig& config);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(ResNetGenerator);

// Backbone-agnostic generator; checks the divisibility contract.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const GeneratorConfig& config);
  torch::Tensor forward(const torch::Tensor& x);
  const GeneratorConfig& config() const noexcept { return config_; }

 private:
  GeneratorConfig config_;
  UNetGenerator unet_{nullptr};
  ResNetGenerator resnet_{nullptr};
};
TORCH_MODULE(Generator);

// ---- discriminators ----------------------------------------------------------

struct DiscriminatorConfig {
  int patch_levels = 3;
  int base_width = 16;
  bool conditional = true;
  int channels = 3;  // per image; doubled when conditional

  // Receptive field of one output logit, in input pixels.
  int receptive_field() const noexcept;
  void validate() const;

  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

// PatchGAN: `patch_levels` stride-2 4x4 convolutions followed by a 3x3
// stride-1 logit layer, so an H x W input yields an (H / 2^L) x (W / 2^L)
// grid of logits.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(const DiscriminatorConfig& config);
  // Logits; the condition is channel-concatenated when the config is conditional.
  torch::Tensor forward(const torch::Tensor& candidate, const torch::Tensor& condition);
  const DiscriminatorConfig& config() const noexcept { return config_; }
  void zero_final_layer();

 private:
  DiscriminatorConfig config_;
  torch::nn::Sequential body_{nullptr};
  torch::nn::Conv2d logits_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

// ---- pose estimator ------------------------------------------------------------

struct PoseHeadConfig {
  int grid_stride = 8;
  int keypoints = 13;
  int base_width = 16;
  std::string schema_id = std::string(kSynth13);

  int channels_per_cell() const noexcept { return 6 + 3 * keypoints; }
  void validate() const;

  friend bool operator==(const PoseHeadConfig&, const PoseHeadConfig&) = default;
};

// Channel layout of one grid cell.
namespace cell {
inline constexpr int kBoxX = 0;   // center offset from the cell center, in strides
inline constexpr int kBoxY = 1;
inline constexpr int kBoxW = 2;   // log(width / stride)
inline constexpr int kBoxH = 3;
inline constexpr int kObj = 4;
inline constexpr int kCls = 5;
inline constexpr int kFirstKeypoint = 6;  // then (dx, dy, visibility logit) per keypoint
}  // namespace cell

// Single-scale anchor-free detector: strided convolutional trunk and a 1x1
// head emitting channels_per_cell() raw values per stride x stride cell.
class PoseNetImpl : public torch::nn::Module {
 public:
  explicit PoseNetImpl(const PoseHeadConfig& config);
  torch::Tensor forward(const torch::Tensor& images);
  const PoseHeadConfig& config() const noexcept { return config_; }

 private:
  PoseHeadConfig config_;
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(PoseNet);

// Grid cell owning an object centered at (x, y) (pixel units).
struct CellIndex {
  int row = 0;
  int col = 0;
};
// Throws DataError when the center falls outside the rows x cols grid.
CellIndex assign_cell(double cx, double cy, int stride, int rows, int cols);

// Raw cell channels that decode exactly to `person`, with objectness and
// class logits set to `logit` and visibility logits to +/-`logit`.
std::vector<float> encode_person(const PersonAnnotation& person, CellIndex cell, int stride,
                                 float logit);

struct DecodeOptions {
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  int max_detections = 20;
};

// Decodes one [C, rows, cols] grid into scored poses after greedy box NMS.
// The score is sigmoid(objectness) * sigmoid(class); cells with objectness
// -inf never produce a detection.
std::vector<ScoredPose> decode_grid(const torch::Tensor& grid, int stride,
                                    const DecodeOptions& options = {});

std::vector<ScoredPose> greedy_nms(std::vector<ScoredPose> poses, double iou_threshold,
                                   int max_detections);

std::int64_t count_parameters(const torch::nn::Module& module);

}  // namespace anonypose
