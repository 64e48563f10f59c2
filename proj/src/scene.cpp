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

#include "anonypose/scene.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "anonypose/errors.hpp"
#include "anonypose/image_io.hpp"

namespace anonypose {

namespace {

double aligned_scale(int in, int out) {
  if (in > 1 && out > 1) return static_cast<double>(out - 1) / (in - 1);
  return static_cast<double>(out) / in;
}

}  // namespace

ImageBuffer resize_bilinear(const ImageBuffer& image, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1) {
    throw ShapeError(fmt::format("resize: invalid target {}x{}", out_height, out_width));
  }
  const int in_h = image.height();
  const int in_w = image.width();
  const int ch = image.channels();
  if (in_h == out_height && in_w == out_width) return image;
  const double sy = out_height > 1 ? static_cast<double>(in_h - 1) / (out_height - 1) : 0.0;
  const double sx = out_width > 1 ? static_cast<double>(in_w - 1) / (out_width - 1) : 0.0;
  std::vector<float> out(static_cast<std::size_t>(out_height) * out_width * ch);
  for (int y = 0; y < out_height; ++y) {
    const double fy = y * sy;
    const int y0 = std::min(static_cast<int>(fy), in_h - 1);
    const int y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_width; ++x) {
      const double fx = x * sx;
      const int x0 = std::min(static_cast<int>(fx), in_w - 1);
      const int x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - x0;
      for (int c = 0; c < ch; ++c) {
        const double top = (1 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c);
        const double bottom = (1 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c);
        out[(static_cast<std::size_t>(y) * out_width + x) * ch + c] =
            static_cast<float>((1 - wy) * top + wy * bottom);
      }
    }
  }
  return ImageBuffer(out_height, out_width, ch, std::move(out));
}

double PortraitTransform::scale_x() const noexcept {
  return aligned_scale(rect.width(), out_width);
}
double PortraitTransform::scale_y() const noexcept {
  return aligned_scale(rect.height(), out_height);
}

Keypoint PortraitTransform::forward(const Keypoint& k) const noexcept {
  return {(k.x - rect.x0) * scale_x(), (k.y - rect.y0) * scale_y(), k.visibility};
}

Keypoint PortraitTransform::inverse(const Keypoint& k) const noexcept {
  return {k.x / scale_x() + rect.x0, k.y / scale_y() + rect.y0, k.visibility};
}

BoundingBox PortraitTransform::forward(const BoundingBox& b) const noexcept {
  const double sx = out_width / static_cast<double>(rect.width());
  const double sy = out_height / static_cast<double>(rect.height());
  auto cx = [&](double v) { return std::clamp((v - rect.x0) * sx, 0.0, double(out_width)); };
  auto cy = [&](double v) { return std::clamp((v - rect.y0) * sy, 0.0, double(out_height)); };
  return {cx(b.x_min), cy(b.y_min), cx(b.x_max), cy(b.y_max)};
}

double box_iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

std::vector<Detection> parse_detections(const std::string& json) {
  std::vector<Detection> out;
  try {
    const auto doc = nlohmann::json::parse(json);
    if (!doc.is_array()) throw DataError("detector output must be a JSON array");
    for (const auto& item : doc) {
      const auto& box = item.at("box");
      if (!box.is_array() || box.size() != 4) throw DataError("detector box must have 4 numbers");
      Detection d;
      d.box = {box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
               box[3].get<double>()};
      d.confidence = item.at("confidence").get<double>();
      out.push_back(d);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("malformed detector output: {}", e.what()));
  }
  return out;
}

std::vector<BoundingBox> detect_persons(const Scene& scene, const DetectOptions& options) {
  std::vector<BoundingBox> boxes;
  if (options.mode == DetectionMode::kGroundTruth) {
    for (const auto& p : scene.persons) boxes.push_back(p.bbox);
    return boxes;
  }
  if (options.detector == nullptr) {
    throw Error("external person detector unavailable; fall back to ground_truth mode");
  }
  const auto png = encode_png(scene.image);
  for (const auto& d : parse_detections(options.detector->detect(png))) {
    if (d.confidence >= options.confidence_threshold) boxes.push_back(d.box);
  }
  return boxes;
}

PortraitBatch extract_portraits(const Scene& scene, std::span<const BoundingBox> boxes,
                                int height, int width) {
  PortraitBatch batch;
  batch.height = height;
  batch.width = width;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const PixelRect rect = to_pixel_rect(boxes[i], scene.image.width(), scene.image.height());
    if (rect.empty()) {
      batch.warnings.push_back(
          fmt::format("scene '{}': box {} is degenerate, skipped", scene.id, i));
      continue;
    }
    Portrait p;
    p.scene_id = scene.id;
    p.index = static_cast<int>(i);
    p.transform = PortraitTransform{rect, width, height};
    p.image = resize_bilinear(crop(scene.image, rect), height, width);

    const PersonAnnotation* match = nullptr;
    double best = 0;
    for (const auto& person : scene.persons) {
      const double iou = box_iou(person.bbox, boxes[i]);
      if (iou > best) {
        best = iou;
        match = &person;
      }
    }
    if (match != nullptr) {
      p.annotation.keypoint_schema = match->keypoint_schema;
      p.annotation.bbox = p.transform->forward(match->bbox);
      for (const auto& k : match->keypoints) {
        p.annotation.keypoints.push_back(p.transform->forward(k));
      }
    }
    batch.portraits.push_back(std::move(p));
  }
  return batch;
}

ImageBuffer composite(const Scene& scene, const PortraitBatch& processed) {
  std::vector<const Portrait*> order;
  for (const auto& p : processed.portraits) {
    if (p.scene_id != scene.id) {
      throw DataError(fmt::format("composite: portrait from scene '{}' given for scene '{}'",
                                  p.scene_id, scene.id));
    }
    if (!p.transform) {
      throw DataError(fmt::format("composite: portrait {} of scene '{}' has no transform",
                                  p.index, scene.id));
    }
    order.push_back(&p);
  }
  std::ranges::stable_sort(order, {}, [](const Portrait* p) { return p->index; });
  ImageBuffer out = scene.image;
  for (const Portrait* p : order) {
    const PixelRect& r = p->transform->rect;
    if (r.x1 > out.width() || r.y1 > out.height()) {
      throw DataError(fmt::format("composite: portrait {} rectangle outside scene '{}'",
                                  p->index, scene.id));
    }
    out = paste(out, resize_bilinear(p->image, r.height(), r.width()), r);
  }
  return out;
}

}  // namespace anonypose
