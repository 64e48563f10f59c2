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

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "anonypose/domain.hpp"

namespace anonypose {

struct LossWeights {
  double lambda1 = 100.0;  // gated guidance L1
  double lambda2 = 10.0;   // consistency
  double lambda3 = 1.0;    // pose estimation
  double threshold = 0.0;  // gate T, mean absolute difference in [0, 1] pixel units

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// All adversarial losses take raw logits and use log-sigmoid forms:
// -log(sigmoid(l)) = softplus(-l), -log(1 - sigmoid(l)) = softplus(l).
// Non-finite logits throw NonFiniteLoss.

// -E[log D(y|x)] - E[log(1 - D(G(x)|x))]. The caller detaches the generator
// output before computing `fake_logits`.
torch::Tensor loss_d_y(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);
// -E[log D(G(x)|x)]
torch::Tensor loss_g_x(const torch::Tensor& fake_logits);
// Mean |y_fake - y_guidance|.
torch::Tensor loss_l1_guidance(const torch::Tensor& y_fake, const torch::Tensor& y_guidance);
// L1 when L1 >= T, otherwise exactly zero with zero gradient.
torch::Tensor loss_gated_l1(const torch::Tensor& y_fake, const torch::Tensor& y_guidance,
                            double threshold);
// Recovery generator: -E[log D_X(G_Y(y')|y')].
torch::Tensor loss_g_y(const torch::Tensor& fake_logits);
// Recovery discriminator: -E[log D_X(x|y')] - E[log(1 - D_X(G_Y(y')|y'))].
torch::Tensor loss_d_x(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);
// Mean |G_Y(G_X(x)) - x|.
torch::Tensor loss_consistency(const torch::Tensor& x, const torch::Tensor& x_cycled);

template <class T>
T loss_enhance(const T& l_dy, const T& l_gx, const T& l_xy, double lambda1) {
  return l_dy + l_gx + lambda1 * l_xy;
}
template <class T>
T loss_recovery(const T& l_gy, const T& l_dx, const T& l_consistency, double lambda2) {
  return l_gy + l_dx + lambda2 * l_consistency;
}
template <class T>
T loss_pe_total(const T& l_pe_x, const T& l_pe_y) {
  return l_pe_x + l_pe_y;
}
template <class T>
T loss_total(const T& l_enhance, const T& l_recovery, const T& l_pe, double lambda3) {
  return l_enhance + l_recovery + lambda3 * l_pe;
}

struct PoseLossTerms {
  torch::Tensor bbox;  // 1 - IoU over positive cells
  torch::Tensor pose;  // OKS-normalized squared keypoint error on visible keypoints
  torch::Tensor obj;   // objectness BCE over all cells + keypoint visibility BCE
  torch::Tensor cls;   // "human" class BCE over positive cells
  torch::Tensor sum;
};

// Detection loss of a [B, 6 + 3K, rows, cols] prediction grid against the
// persons of each image. Each person is assigned to the cell containing its
// box center; when two persons share a cell the later one wins.
PoseLossTerms loss_pose(const torch::Tensor& predictions,
                        std::span<const std::vector<PersonAnnotation>> targets, int stride);

// Per-step values of every loss term, in logging order.
struct LossReport {
  static constexpr std::array<std::string_view, 17> kNames = {
      "L_DY", "L_GX", "L1", "L_XY", "L_enhance", "L_GY", "L_DX", "L_consistency",
      "L_recovery", "L_bbox", "L_pose", "L_obj", "L_cls", "L_PE_X", "L_PE_Y", "L_PE",
      "L_total"};

  std::array<double, 17> values{};

  double& operator[](std::string_view name);
  double operator[](std::string_view name) const;

  bool all_finite() const noexcept;
  // Largest deviation of a composite term from the sum of its components.
  double composite_residual(const LossWeights& weights) const;

  friend bool operator==(const LossReport&, const LossReport&) = default;
};

}  // namespace anonypose
