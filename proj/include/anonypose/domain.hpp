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
#include <utility>
#include <vector>

namespace anonypose {

// H x W x C raster of reals in [0, 1], row-major with interleaved channels.
// Every store clamps into [0, 1]; non-finite values are rejected.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int height, int width, int channels, float fill = 0.0f);
  ImageBuffer(int height, int width, int channels, std::vector<float> data);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float at(int y, int x, int c) const noexcept {
    return data_[index(y, x, c)];
  }
  void set(int y, int x, int c, float value);

  std::span<const float> data() const noexcept { return data_; }

  bool same_shape(const ImageBuffer& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

// Real-valued half-open box [x_min, x_max) x [y_min, y_max) in pixel units.
struct BoundingBox {
  double x_min = 0;
  double y_min = 0;
  double x_max = 0;
  double y_max = 0;

  double width() const noexcept { return x_max - x_min; }
  double height() const noexcept { return y_max - y_min; }
  double area() const noexcept { return width() * height(); }
  bool valid() const noexcept { return x_min < x_max && y_min < y_max; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// Integer half-open pixel rectangle, always inside its parent image.
struct PixelRect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const noexcept { return x1 - x0; }
  int height() const noexcept { return y1 - y0; }
  bool empty() const noexcept { return x1 <= x0 || y1 <= y0; }
  bool contains(int x, int y) const noexcept {
    return x >= x0 && x < x1 && y >= y0 && y < y1;
  }

  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

// Smallest pixel rectangle covering `box`, clamped to a width x height image.
// The result may be empty when the box lies outside the image.
PixelRect to_pixel_rect(const BoundingBox& box, int width, int height);

// Matches the COCO triplet encoding 0/1/2.
enum class Visibility : std::uint8_t {
  kNotLabeled = 0,
  kLabeledInvisible = 1,
  kVisible = 2,
};

// Keypoint coordinates use the pixel-index convention: pixel (i, j) has its
// center at (x = j, y = i).
struct Keypoint {
  double x = 0;
  double y = 0;
  Visibility visibility = Visibility::kNotLabeled;

  bool labeled() const noexcept {
    return visibility != Visibility::kNotLabeled;
  }

  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct KeypointSchema {
  std::string id;
  std::vector<std::string> names;
  // Index pairs exchanged by a horizontal flip (left <-> right).
  std::vector<std::pair<int, int>> flip_pairs;

  int size() const noexcept { return static_cast<int>(names.size()); }
};

inline constexpr std::string_view kCoco17 = "coco-17";
inline constexpr std::string_view kSynth13 = "synth-13";

// Throws ParameterError for unknown ids.
const KeypointSchema& keypoint_schema(std::string_view id);

struct PersonAnnotation {
  BoundingBox bbox;
  std::vector<Keypoint> keypoints;
  std::string keypoint_schema;

  int num_labeled() const noexcept;
  int num_visible() const noexcept;
  // K matches the schema and at least one keypoint is visible.
  bool trainable() const;

  friend bool operator==(const PersonAnnotation&,
                         const PersonAnnotation&) = default;
};

struct Scene {
  ImageBuffer image;
  std::vector<PersonAnnotation> persons;
  std::string id;

  friend bool operator==(const Scene&, const Scene&) = default;
};

enum class DomainTag : std::uint8_t {
  kOriginalX,
  kDesensitizedY,
  kEnhancedYPrime,
  kRecoveredXPrime,
};

std::string_view to_string(DomainTag tag);

struct TaggedImage {
  ImageBuffer image;
  DomainTag tag = DomainTag::kOriginalX;
};

// Validates the structural invariants of a scene (box bounds, schema sizes).
// Throws DataError naming the scene and person on violation.
void validate_scene(const Scene& scene);

// Pixels of the box intersection. Throws ParameterError("degenerate crop")
// when the clamped box is empty.
ImageBuffer crop(const ImageBuffer& image, const BoundingBox& box);
ImageBuffer crop(const ImageBuffer& image, const PixelRect& rect);

// Copy of `target` with `patch` written over the clamped box. The patch must
// match the clamped box dimensions exactly.
ImageBuffer paste(const ImageBuffer& target, const ImageBuffer& patch,
                  const BoundingBox& box);
ImageBuffer paste(const ImageBuffer& target, const ImageBuffer& patch,
                  const PixelRect& rect);

// Per-pixel count of person boxes covering the pixel (row-major H x W).
// Background pixels have count zero.
std::vector<int> person_coverage(const Scene& scene);

// 8-bit conversion with round-half-up.
std::uint8_t to_u8(float value) noexcept;
inline float from_u8(std::uint8_t value) noexcept { return value / 255.0f; }

}  // namespace anonypose
