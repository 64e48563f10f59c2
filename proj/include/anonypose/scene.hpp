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

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anonypose/domain.hpp"

namespace anonypose {

// Bilinear resize with corner-aligned sampling: output pixel j reads source
// coordinate j * (in - 1) / (out - 1), so corner pixels map onto each other.
ImageBuffer resize_bilinear(const ImageBuffer& image, int out_height, int out_width);

// Maps between scene coordinates and the coordinates of a resized crop.
struct PortraitTransform {
  PixelRect rect;           // crop rectangle in the scene
  int out_width = 0;        // portrait resolution
  int out_height = 0;

  double scale_x() const noexcept;
  double scale_y() const noexcept;
  Keypoint forward(const Keypoint& k) const noexcept;
  Keypoint inverse(const Keypoint& k) const noexcept;
  BoundingBox forward(const BoundingBox& b) const noexcept;
};

struct Portrait {
  ImageBuffer image;
  PersonAnnotation annotation;   // in portrait coordinates
  std::string scene_id;
  int index = 0;                 // position of the source box
  std::optional<PortraitTransform> transform;
  DomainTag tag = DomainTag::kOriginalX;
};

struct PortraitBatch {
  std::vector<Portrait> portraits;
  int height = 0;
  int width = 0;
  std::vector<std::string> warnings;
};

struct Detection {
  BoundingBox box;
  double confidence = 0;
};

// Pluggable person detector: consumes PNG bytes and answers a JSON array of
// {"box": [x_min, y_min, x_max, y_max], "confidence": c}.
class PersonDetector {
 public:
  virtual ~PersonDetector() = default;
  virtual std::string detect(std::span<const std::uint8_t> png) = 0;
};

// Throws DataError on malformed detector output.
std::vector<Detection> parse_detections(const std::string& json);

enum class DetectionMode { kGroundTruth, kExternalDetector };

struct DetectOptions {
  DetectionMode mode = DetectionMode::kGroundTruth;
  PersonDetector* detector = nullptr;
  double confidence_threshold = 0.5;
};

std::vector<BoundingBox> detect_persons(const Scene& scene,
                                        const DetectOptions& options = {});

// Crops every box, resizes it to height x width and maps the matching person
// annotation (highest IoU with the box) into portrait coordinates.
PortraitBatch extract_portraits(const Scene& scene, std::span<const BoundingBox> boxes,
                                int height, int width);

// Pastes each processed portrait, resized back to its crop rectangle, into
// the scene in index order; pixels outside every rectangle are untouched.
ImageBuffer composite(const Scene& scene, const PortraitBatch& processed);

double box_iou(const BoundingBox& a, const BoundingBox& b) noexcept;

}  // namespace anonypose
