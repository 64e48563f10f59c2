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

#include "anonypose/domain.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "anonypose/errors.hpp"

namespace anonypose {

namespace {

float checked_clamp(float value) {
  if (!std::isfinite(value)) {
    throw ParameterError("ImageBuffer: non-finite pixel value");
  }
  return std::clamp(value, 0.0f, 1.0f);
}

void check_dims(int height, int width, int channels) {
  if (height < 1 || width < 1) {
    throw ShapeError(fmt::format("ImageBuffer: invalid size {}x{}", height, width));
  }
  if (channels != 1 && channels != 3) {
    throw ShapeError(fmt::format("ImageBuffer: {} channels (expected 1 or 3)", channels));
  }
}

KeypointSchema make_schema(std::string id, std::vector<std::string> names,
                           std::vector<std::pair<int, int>> pairs) {
  return KeypointSchema{std::move(id), std::move(names), std::move(pairs)};
}

}  // namespace

ImageBuffer::ImageBuffer(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
  check_dims(height, width, channels);
  data_.assign(static_cast<std::size_t>(height) * width * channels,
               checked_clamp(fill));
}

ImageBuffer::ImageBuffer(int height, int width, int channels,
                         std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  check_dims(height, width, channels);
  if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw ShapeError(fmt::format("ImageBuffer: {} values for {}x{}x{}",
                                 data_.size(), height, width, channels));
  }
  for (float& v : data_) v = checked_clamp(v);
}

void ImageBuffer::set(int y, int x, int c, float value) {
  data_[index(y, x, c)] = checked_clamp(value);
}

PixelRect to_pixel_rect(const BoundingBox& box, int width, int height) {
  auto lo = [](double v, int limit) {
    return static_cast<int>(std::clamp(std::floor(v), 0.0, static_cast<double>(limit)));
  };
  auto hi = [](double v, int limit) {
    return static_cast<int>(std::clamp(std::ceil(v), 0.0, static_cast<double>(limit)));
  };
  if (!std::isfinite(box.x_min) || !std::isfinite(box.x_max) ||
      !std::isfinite(box.y_min) || !std::isfinite(box.y_max)) {
    return {};
  }
  return PixelRect{lo(box.x_min, width), lo(box.y_min, height),
                   hi(box.x_max, width), hi(box.y_max, height)};
}

const KeypointSchema& keypoint_schema(std::string_view id) {
  static const KeypointSchema coco = make_schema(
      std::string(kCoco17),
      {"nose", "left_eye", "right_eye", "left_ear", "right_ear",
       "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
       "left_wrist", "right_wrist", "left_hip", "right_hip", "left_knee",
       "right_knee", "left_ankle", "right_ankle"},
      {{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}, {13, 14}, {15, 16}});
  static const KeypointSchema synth = make_schema(
      std::string(kSynth13),
      {"head", "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
       "left_wrist", "right_wrist", "left_hip", "right_hip", "left_knee",
       "right_knee", "left_ankle", "right_ankle"},
      {{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}});
  static const KeypointSchema mpii = make_schema(
      "mpii-16",
      {"right_ankle", "right_knee", "right_hip", "left_hip", "left_knee",
       "left_ankle", "pelvis", "thorax", "upper_neck", "head_top",
       "right_wrist", "right_elbow", "right_shoulder", "left_shoulder",
       "left_elbow", "left_wrist"},
      {{0, 5}, {1, 4}, {2, 3}, {10, 15}, {11, 14}, {12, 13}});
  if (id == coco.id) return coco;
  if (id == synth.id) return synth;
  if (id == mpii.id) return mpii;
  throw ParameterError(fmt::format("unknown keypoint schema '{}'", id));
}

int PersonAnnotation::num_labeled() const noexcept {
  return static_cast<int>(std::ranges::count_if(
      keypoints, [](const Keypoint& k) { return k.labeled(); }));
}

int PersonAnnotation::num_visible() const noexcept {
  return static_cast<int>(std::ranges::count_if(keypoints, [](const Keypoint& k) {
    return k.visibility == Visibility::kVisible;
  }));
}

bool PersonAnnotation::trainable() const {
  return static_cast<int>(keypoints.size()) == anonypose::keypoint_schema(keypoint_schema).size() &&
         num_visible() > 0;
}

std::string_view to_string(DomainTag tag) {
  switch (tag) {
    case DomainTag::kOriginalX: return "original_X";
    case DomainTag::kDesensitizedY: return "desensitized_Y";
    case DomainTag::kEnhancedYPrime: return "enhanced_Yprime";
    case DomainTag::kRecoveredXPrime: return "recovered_Xprime";
  }
  return "unknown";
}

void validate_scene(const Scene& scene) {
  if (scene.image.empty()) {
    throw DataError(fmt::format("scene '{}': empty image", scene.id));
  }
  const double w = scene.image.width();
  const double h = scene.image.height();
  for (std::size_t i = 0; i < scene.persons.size(); ++i) {
    const auto& p = scene.persons[i];
    const auto& b = p.bbox;
    if (!b.valid() || b.x_min < 0 || b.y_min < 0 || b.x_max > w || b.y_max > h) {
      throw DataError(fmt::format("scene '{}' person {}: bbox outside image", scene.id, i));
    }
    const auto& schema = keypoint_schema(p.keypoint_schema);
    if (static_cast<int>(p.keypoints.size()) != schema.size()) {
      throw DataError(fmt::format("scene '{}' person {}: {} keypoints for schema {}",
                                  scene.id, i, p.keypoints.size(), schema.id));
    }
    for (const auto& k : p.keypoints) {
      if (!std::isfinite(k.x) || !std::isfinite(k.y)) {
        throw DataError(fmt::format("scene '{}' person {}: non-finite keypoint", scene.id, i));
      }
    }
  }
}

ImageBuffer crop(const ImageBuffer& image, const PixelRect& rect) {
  if (rect.empty() || rect.x0 < 0 || rect.y0 < 0 || rect.x1 > image.width() ||
      rect.y1 > image.height()) {
    throw ParameterError("degenerate crop");
  }
  const int c = image.channels();
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(rect.width()) * rect.height() * c);
  const auto src = image.data();
  for (int y = rect.y0; y < rect.y1; ++y) {
    const auto row = src.subspan((static_cast<std::size_t>(y) * image.width() + rect.x0) * c,
                                 static_cast<std::size_t>(rect.width()) * c);
    out.insert(out.end(), row.begin(), row.end());
  }
  return ImageBuffer(rect.height(), rect.width(), c, std::move(out));
}

ImageBuffer crop(const ImageBuffer& image, const BoundingBox& box) {
  return crop(image, to_pixel_rect(box, image.width(), image.height()));
}

ImageBuffer paste(const ImageBuffer& target, const ImageBuffer& patch,
                  const PixelRect& rect) {
  if (rect.empty() || patch.height() != rect.height() || patch.width() != rect.width() ||
      patch.channels() != target.channels()) {
    throw ShapeError(fmt::format("paste: patch {}x{}x{} does not match box {}x{}x{}",
                                 patch.height(), patch.width(), patch.channels(),
                                 rect.height(), rect.width(), target.channels()));
  }
  ImageBuffer out = target;
  for (int y = 0; y < rect.height(); ++y) {
    for (int x = 0; x < rect.width(); ++x) {
      for (int c = 0; c < target.channels(); ++c) {
        out.set(rect.y0 + y, rect.x0 + x, c, patch.at(y, x, c));
      }
    }
  }
  return out;
}

ImageBuffer paste(const ImageBuffer& target, const ImageBuffer& patch,
                  const BoundingBox& box) {
  return paste(target, patch, to_pixel_rect(box, target.width(), target.height()));
}

std::vector<int> person_coverage(const Scene& scene) {
  const int w = scene.image.width();
  const int h = scene.image.height();
  std::vector<int> counts(static_cast<std::size_t>(w) * h, 0);
  for (const auto& p : scene.persons) {
    const PixelRect r = to_pixel_rect(p.bbox, w, h);
    for (int y = r.y0; y < r.y1; ++y) {
      for (int x = r.x0; x < r.x1; ++x) ++counts[static_cast<std::size_t>(y) * w + x];
    }
  }
  return counts;
}

std::uint8_t to_u8(float value) noexcept {
  // The product is exact in double, so the rounding is too.
  const double v = std::clamp(static_cast<double>(value), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
}

}  // namespace anonypose
