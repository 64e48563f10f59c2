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

#include "anonypose/nets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "anonypose/errors.hpp"
#include "anonypose/scene.hpp"

namespace anonypose {

namespace nn = torch::nn;

torch::Tensor to_tensor(const ImageBuffer& image) {
  const auto data = image.data();
  auto hwc = torch::from_blob(const_cast<float*>(data.data()),
                              {image.height(), image.width(), image.channels()},
                              torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous();
}

torch::Tensor stack_images(std::span<const ImageBuffer> images) {
  std::vector<torch::Tensor> parts;
  parts.reserve(images.size());
  for (const auto& img : images) {
    if (!img.same_shape(images.front())) {
      throw ShapeError("stack_images: images differ in shape");
    }
    parts.push_back(to_tensor(img));
  }
  return torch::stack(parts);
}

ImageBuffer to_image(const torch::Tensor& chw) {
  if (chw.dim() != 3) throw ShapeError("to_image: expected a [C, H, W] tensor");
  auto hwc = chw.detach().to(torch::kFloat32).clamp(0, 1).permute({1, 2, 0}).contiguous();
  const auto h = static_cast<int>(hwc.size(0));
  const auto w = static_cast<int>(hwc.size(1));
  const auto c = static_cast<int>(hwc.size(2));
  const float* p = hwc.data_ptr<float>();
  return ImageBuffer(h, w, c, std::vector<float>(p, p + hwc.numel()));
}

// ---- GeneratorConfig ----------------------------------------------------------

GeneratorConfig GeneratorConfig::parse(std::string_view backbone, int base_width) {
  GeneratorConfig cfg;
  cfg.base_width = base_width;
  std::string_view digits;
  if (backbone.starts_with("unet_")) {
    cfg.family = BackboneFamily::kUNet;
    digits = backbone.substr(5);
  } else if (backbone.starts_with("resnet_")) {
    cfg.family = BackboneFamily::kResNet;
    digits = backbone.substr(7);
  } else {
    throw ParameterError(fmt::format("unknown generator backbone '{}'", backbone));
  }
  int depth = 0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), depth);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) {
    throw ParameterError(fmt::format("unknown generator backbone '{}'", backbone));
  }
  cfg.depth = depth;
  cfg.validate();
  return cfg;
}

std::string GeneratorConfig::backbone_name() const {
  return fmt::format("{}_{}", family == BackboneFamily::kUNet ? "unet" : "resnet", depth);
}

int GeneratorConfig::required_multiple() const noexcept {
  return family == BackboneFamily::kUNet ? (1 << depth) : 4;
}

void GeneratorConfig::validate() const {
  if (family == BackboneFamily::kUNet && (depth < 1 || depth > 9)) {
    throw ParameterError(fmt::format("unet depth {} outside [1, 9]", depth));
  }
  if (family == BackboneFamily::kResNet && (depth < 1 || depth > 16)) {
    throw ParameterError(fmt::format("resnet blocks {} outside [1, 16]", depth));
  }
  if (base_width < 1 || in_channels < 1 || out_channels < 1) {
    throw ParameterError("generator widths must be positive");
  }
}

// ---- U-Net ---------------------------------------------------------------------

namespace {

int unet_width(int base, int level) { return base * std::min(1 << level, 8); }

nn::Conv2dOptions conv(int in, int out, int kernel, int stride, int padding) {
  return nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding);
}

nn::InstanceNorm2d instance_norm(int channels) {
  return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(true));
}

}  // namespace

UNetGeneratorImpl::UNetGeneratorImpl(const GeneratorConfig& config) : depth_(config.depth) {
  const int d = config.depth;
  const int b = config.base_width;
  for (int i = 0; i < d; ++i) {
    const int in = i == 0 ? config.in_channels : unet_width(b, i - 1);
    // A bias in front of instance norm would be cancelled by it.
    const bool norm = i > 0 && i < d - 1;
    down_.push_back(register_module(fmt::format("down{}", i),
                                    nn::Conv2d(conv(in, unet_width(b, i), 4, 2, 1).bias(!norm))));
    down_norm_.push_back(norm ? register_module(fmt::format("down{}_norm", i), instance_norm(unet_width(b, i)))
                              : nn::InstanceNorm2d{nullptr});
  }
  for (int i = 0; i < d; ++i) {
    const bool innermost = i == d - 1;
    const int in = innermost ? unet_width(b, i) : 2 * unet_width(b, i);
    const int out = i == 0 ? config.out_channels : unet_width(b, i - 1);
    up_.push_back(register_module(
        fmt::format("up{}", i),
        nn::ConvTranspose2d(nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1).bias(i == 0))));
    up_norm_.push_back(i > 0 ? register_module(fmt::format("up{}_norm", i), instance_norm(out))
                             : nn::InstanceNorm2d{nullptr});
  }
}

torch::Tensor UNetGeneratorImpl::forward(const torch::Tensor& x) {
  std::vector<torch::Tensor> skips;
  skips.reserve(depth_);
  torch::Tensor h = x;
  for (int i = 0; i < depth_; ++i) {
    if (i > 0) h = torch::leaky_relu(h, 0.2);
    h = down_[i]->forward(h);
    if (!down_norm_[i].is_empty()) h = down_norm_[i]->forward(h);
    skips.push_back(h);
  }
  torch::Tensor u = skips.back();
  for (int i = depth_ - 1; i >= 0; --i) {
    if (i != depth_ - 1) u = torch::cat({u, skips[i]}, 1);
    u = up_[i]->forward(torch::relu(u));
    if (!up_norm_[i].is_empty()) u = up_norm_[i]->forward(u);
  }
  return torch::sigmoid(u);
}

// ---- ResNet ---------------------------------------------------------------------

ResidualBlockImpl::ResidualBlockImpl(int channels) {
  body_ = register_module(
      "body", nn::Sequential(nn::ReflectionPad2d(1), nn::Conv2d(conv(channels, channels, 3, 1, 0).bias(false)),
                             instance_norm(channels), nn::ReLU(), nn::ReflectionPad2d(1),
                             nn::Conv2d(conv(channels, channels, 3, 1, 0).bias(false)),
                             instance_norm(channels)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) { return x + body_->forward(x); }

ResNetGeneratorImpl::ResNetGeneratorImpl(const GeneratorConfig& config) {
  const int b = config.base_width;
  nn::Sequential seq;
  seq->push_back(nn::ReflectionPad2d(3));
  seq->push_back(nn::Conv2d(conv(config.in_channels, b, 7, 1, 0).bias(false)));
  seq->push_back(instance_norm(b));
  seq->push_back(nn::ReLU());
  seq->push_back(nn::Conv2d(conv(b, 2 * b, 3, 2, 1).bias(false)));
  seq->push_back(instance_norm(2 * b));
  seq->push_back(nn::ReLU());
  seq->push_back(nn::Conv2d(conv(2 * b, 4 * b, 3, 2, 1).bias(false)));
  seq->push_back(instance_norm(4 * b));
  seq->push_back(nn::ReLU());
  for (int i = 0; i < config.depth; ++i) seq->push_back(ResidualBlock(4 * b));
  seq->push_back(nn::ConvTranspose2d(
      nn::ConvTranspose2dOptions(4 * b, 2 * b, 3).stride(2).padding(1).output_padding(1).bias(false)));
  seq->push_back(instance_norm(2 * b));
  seq->push_back(nn::ReLU());
  seq->push_back(nn::ConvTranspose2d(
      nn::ConvTranspose2dOptions(2 * b, b, 3).stride(2).padding(1).output_padding(1).bias(false)));
  seq->push_back(instance_norm(b));
  seq->push_back(nn::ReLU());
  seq->push_back(nn::ReflectionPad2d(3));
  seq->push_back(nn::Conv2d(conv(b, config.out_channels, 7, 1, 0)));
  seq->push_back(nn::Sigmoid());
  body_ = register_module("body", seq);
}

torch::Tensor ResNetGeneratorImpl::forward(const torch::Tensor& x) { return body_->forward(x); }

GeneratorImpl::GeneratorImpl(const GeneratorConfig& config) : config_(config) {
  config_.validate();
  if (config_.family == BackboneFamily::kUNet) {
    unet_ = register_module("unet", UNetGenerator(config_));
  } else {
    resnet_ = register_module("resnet", ResNetGenerator(config_));
  }
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != config_.in_channels) {
    throw ShapeError(fmt::format("generator: expected [N, {}, H, W] input", config_.in_channels));
  }
  const int m = config_.required_multiple();
  if (x.size(2) % m != 0 || x.size(3) % m != 0) {
    throw ShapeError(fmt::format("generator {}: input {}x{} not divisible by {}",
                                 config_.backbone_name(), x.size(2), x.size(3), m));
  }
  return config_.family == BackboneFamily::kUNet ? unet_->forward(x) : resnet_->forward(x);
}

// ---- PatchGAN ----------------------------------------------------------------------

int DiscriminatorConfig::receptive_field() const noexcept {
  int rf = 3;  // logit layer
  for (int i = 0; i < patch_levels; ++i) rf = (rf - 1) * 2 + 4;
  return rf;
}

void DiscriminatorConfig::validate() const {
  if (patch_levels < 1 || patch_levels > 8) {
    throw ParameterError(fmt::format("discriminator patch_levels {} outside [1, 8]", patch_levels));
  }
  if (base_width < 1 || channels < 1) throw ParameterError("discriminator widths must be positive");
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const DiscriminatorConfig& config)
    : config_(config) {
  config_.validate();
  const int b = config_.base_width;
  int in = config_.conditional ? 2 * config_.channels : config_.channels;
  nn::Sequential seq;
  for (int i = 0; i < config_.patch_levels; ++i) {
    const int out = unet_width(b, i);
    seq->push_back(nn::Conv2d(conv(in, out, 4, 2, 1).bias(i == 0)));
    if (i > 0) seq->push_back(instance_norm(out));
    seq->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    in = out;
  }
  body_ = register_module("body", seq);
  logits_ = register_module("logits", nn::Conv2d(conv(in, 1, 3, 1, 1)));
}

void PatchDiscriminatorImpl::zero_final_layer() {
  torch::NoGradGuard guard;
  logits_->weight.zero_();
  logits_->bias.zero_();
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& candidate,
                                             const torch::Tensor& condition) {
  if (config_.conditional && !candidate.sizes().equals(condition.sizes())) {
    throw ShapeError("discriminator: candidate and condition shapes differ");
  }
  const int rf = config_.receptive_field();
  if (candidate.size(2) <= rf || candidate.size(3) <= rf) {
    throw ShapeError(fmt::format("discriminator: receptive field {} not smaller than input {}x{}",
                                 rf, candidate.size(2), candidate.size(3)));
  }
  const int m = 1 << config_.patch_levels;
  if (candidate.size(2) % m != 0 || candidate.size(3) % m != 0) {
    throw ShapeError(fmt::format("discriminator: input {}x{} not divisible by {}",
                                 candidate.size(2), candidate.size(3), m));
  }
  torch::Tensor in = config_.conditional ? torch::cat({candidate, condition}, 1) : candidate;
  return logits_->forward(body_->forward(in));
}

// ---- pose estimator ---------------------------------------------------------------

void PoseHeadConfig::validate() const {
  if (grid_stride < 1 || (grid_stride & (grid_stride - 1)) != 0) {
    throw ParameterError(fmt::format("pose grid_stride {} must be a power of two", grid_stride));
  }
  if (keypoints < 1) throw ParameterError("pose head needs at least one keypoint");
  if (base_width < 1) throw ParameterError("pose base_width must be positive");
  if (keypoint_schema(schema_id).size() != keypoints) {
    throw ParameterError(fmt::format("pose head K={} does not match schema {}", keypoints, schema_id));
  }
}

PoseNetImpl::PoseNetImpl(const PoseHeadConfig& config) : config_(config) {
  config_.validate();
  const int b = config_.base_width;
  nn::Sequential seq;
  auto block = [&](int cout, nn::Conv2dOptions opts) {
    seq->push_back(nn::Conv2d(opts));
    seq->push_back(nn::GroupNorm(nn::GroupNormOptions(std::min(8, cout / 2), cout)));
    seq->push_back(nn::SiLU());
  };
  block(b, conv(3, b, 3, 1, 1));
  int in = b;
  int width = b;
  for (int s = config_.grid_stride; s > 1; s /= 2) {
    width = std::min(width * 2, 8 * b);
    block(width, conv(in, width, 3, 2, 1));
    block(width, conv(width, width, 3, 1, 1));
    in = width;
  }
  block(in, conv(in, in, 3, 1, 2).dilation(2));
  block(in, conv(in, in, 3, 1, 1));
  trunk_ = register_module("trunk", seq);
  head_ = register_module("head", nn::Conv2d(conv(in, config_.channels_per_cell(), 1, 1, 0)));
  torch::NoGradGuard guard;
  head_->weight.mul_(0.1);
  head_->bias.zero_();
  head_->bias[cell::kObj].fill_(-4.0);
}

torch::Tensor PoseNetImpl::forward(const torch::Tensor& images) {
  const int s = config_.grid_stride;
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) % s != 0 ||
      images.size(3) % s != 0) {
    throw ShapeError(fmt::format("pose: input {} must be [N, 3, H, W] with H, W divisible by {}",
                                 c10::str(images.sizes()), s));
  }
  return head_->forward(trunk_->forward(images));
}

CellIndex assign_cell(double cx, double cy, int stride, int rows, int cols) {
  const int col = static_cast<int>(std::floor(cx / stride));
  const int row = static_cast<int>(std::floor(cy / stride));
  if (!std::isfinite(cx) || !std::isfinite(cy) || col < 0 || row < 0 || col >= cols ||
      row >= rows) {
    throw DataError(fmt::format("target center ({}, {}) outside the {}x{} grid", cx, cy, rows, cols));
  }
  return {row, col};
}

std::vector<float> encode_person(const PersonAnnotation& person, CellIndex c, int stride,
                                 float logit) {
  const int k = static_cast<int>(person.keypoints.size());
  std::vector<float> out(6 + 3 * k, 0.0f);
  const double ox = (c.col + 0.5) * stride;
  const double oy = (c.row + 0.5) * stride;
  const auto& b = person.bbox;
  out[cell::kBoxX] = static_cast<float>(((b.x_min + b.x_max) / 2 - ox) / stride);
  out[cell::kBoxY] = static_cast<float>(((b.y_min + b.y_max) / 2 - oy) / stride);
  out[cell::kBoxW] = static_cast<float>(std::log(b.width() / stride));
  out[cell::kBoxH] = static_cast<float>(std::log(b.height() / stride));
  out[cell::kObj] = logit;
  out[cell::kCls] = logit;
  for (int i = 0; i < k; ++i) {
    const auto& kp = person.keypoints[i];
    out[cell::kFirstKeypoint + 3 * i] = static_cast<float>((kp.x - ox) / stride);
    out[cell::kFirstKeypoint + 3 * i + 1] = static_cast<float>((kp.y - oy) / stride);
    out[cell::kFirstKeypoint + 3 * i + 2] =
        kp.visibility == Visibility::kVisible ? logit : -logit;
  }
  return out;
}

std::vector<ScoredPose> greedy_nms(std::vector<ScoredPose> poses, double iou_threshold,
                                   int max_detections) {
  std::ranges::stable_sort(poses, [](const ScoredPose& a, const ScoredPose& b) {
    return a.score > b.score;
  });
  std::vector<ScoredPose> kept;
  for (auto& p : poses) {
    if (static_cast<int>(kept.size()) >= max_detections) break;
    const bool suppressed = std::ranges::any_of(
        kept, [&](const ScoredPose& k) { return box_iou(k.box, p.box) > iou_threshold; });
    if (!suppressed) kept.push_back(std::move(p));
  }
  return kept;
}

std::vector<ScoredPose> decode_grid(const torch::Tensor& grid, int stride,
                                    const DecodeOptions& options) {
  if (grid.dim() != 3 || (grid.size(0) - 6) % 3 != 0) {
    throw ShapeError("decode_grid: expected a [6 + 3K, rows, cols] tensor");
  }
  const auto g = grid.detach().to(torch::kFloat64).contiguous();
  const int channels = static_cast<int>(g.size(0));
  const int rows = static_cast<int>(g.size(1));
  const int cols = static_cast<int>(g.size(2));
  const int k = (channels - 6) / 3;
  const auto acc = g.accessor<double, 3>();
  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  std::vector<ScoredPose> poses;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double obj = acc[cell::kObj][r][c];
      if (std::isinf(obj) && obj < 0) continue;
      const double score = sigmoid(obj) * sigmoid(acc[cell::kCls][r][c]);
      if (!(score >= options.score_threshold)) continue;
      const double ox = (c + 0.5) * stride;
      const double oy = (r + 0.5) * stride;
      const double cx = ox + acc[cell::kBoxX][r][c] * stride;
      const double cy = oy + acc[cell::kBoxY][r][c] * stride;
      const double w = std::exp(std::clamp(acc[cell::kBoxW][r][c], -10.0, 10.0)) * stride;
      const double h = std::exp(std::clamp(acc[cell::kBoxH][r][c], -10.0, 10.0)) * stride;
      ScoredPose p;
      p.score = score;
      p.box = {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
      for (int i = 0; i < k; ++i) {
        const int base = cell::kFirstKeypoint + 3 * i;
        const bool visible = acc[base + 2][r][c] >= 0;
        p.keypoints.push_back({ox + acc[base][r][c] * stride, oy + acc[base + 1][r][c] * stride,
                               visible ? Visibility::kVisible : Visibility::kLabeledInvisible});
      }
      poses.push_back(std::move(p));
    }
  }
  return greedy_nms(std::move(poses), options.nms_iou, options.max_detections);
}

std::int64_t count_parameters(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace anonypose
