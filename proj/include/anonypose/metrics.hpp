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

#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "anonypose/domain.hpp"

namespace anonypose {

// Reported when two images are identical after 8-bit quantization.
inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

// 10 log10(255^2 / MSE) on 8-bit quantized copies.
double psnr(const ImageBuffer& a, const ImageBuffer& b);

// Mean local SSIM over the valid region of an 11x11 Gaussian window
// (sigma 1.5), L = 255, averaged over channels. Requires min(H, W) >= 11.
double ssim(const ImageBuffer& a, const ImageBuffer& b);

// PSNR >= 30 dB and SSIM >= 0.9.
bool high_similarity(double psnr_db, double ssim_value) noexcept;

// Per-keypoint OKS falloff constants k_i.
struct KeypointSigmas {
  std::vector<double> k;

  static KeypointSigmas for_schema(std::string_view schema_id);
};

// Mean over labeled GT keypoints of exp(-d^2 / (2 s^2 k^2)), s^2 = GT box
// area. Throws DataError("unlabeled instance") without labeled keypoints.
double oks(std::span<const Keypoint> predicted, const PersonAnnotation& truth,
           const KeypointSigmas& sigmas);

struct ScoredPose {
  double score = 0;
  BoundingBox box;
  std::vector<Keypoint> keypoints;
};

struct SceneEvalDetail {
  std::string scene_id;
  int ground_truth = 0;
  int detections = 0;
  int true_positives = 0;
};

struct ApAr {
  double ap = 0;
  double ar = 0;
  std::vector<SceneEvalDetail> details;
};

inline constexpr double kOksMatchThreshold = 0.5;

// Single-class AP/AR at OKS >= 0.5. Predictions are matched greedily within
// each scene in descending score order, each to the unmatched GT with the
// highest OKS; AP is the area under the all-points interpolated PR curve and
// AR the final recall. `detections[s]` belongs to `truth[s]`.
ApAr ap_ar_at_50(std::span<const std::vector<ScoredPose>> detections,
                 std::span<const Scene> truth);

// Area under the precision envelope for cumulative TP flags in rank order.
double interpolated_ap(const std::vector<bool>& ranked_tp, int num_ground_truth);

struct EvalResult {
  double psnr = 0;
  double ssim = 0;
  double map50 = 0;
  double mar50 = 0;
  std::vector<SceneEvalDetail> details;
};

std::string to_json(const EvalResult& result);

}  // namespace anonypose
