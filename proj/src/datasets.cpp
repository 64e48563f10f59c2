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

#include "anonypose/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "anonypose/errors.hpp"
#include "anonypose/image_io.hpp"

namespace anonypose {

using nlohmann::json;

std::vector<Scene> load_coco_keypoints(const std::filesystem::path& annotation_file,
                                       const std::filesystem::path& image_dir,
                                       std::string_view schema_id) {
  std::ifstream in(annotation_file);
  if (!in) throw DataError(fmt::format("cannot open annotations '{}'", annotation_file.string()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(fmt::format("malformed JSON in '{}': {}", annotation_file.string(), e.what()));
  }
  std::string schema_name(schema_id);
  if (doc.contains("keypoint_schema")) schema_name = doc["keypoint_schema"].get<std::string>();
  const auto& schema = keypoint_schema(schema_name);
  const std::size_t k = schema.size();

  std::vector<Scene> scenes;
  std::map<std::int64_t, std::size_t> by_id;
  try {
    for (const auto& img : doc.at("images")) {
      const auto id = img.at("id").get<std::int64_t>();
      const auto file = img.at("file_name").get<std::string>();
      const auto path = image_dir / file;
      if (!std::filesystem::exists(path)) {
        throw DataError(fmt::format("image {}: missing file '{}'", id, path.string()));
      }
      Scene scene;
      scene.id = std::to_string(id);
      scene.image = read_png(path);
      const int w = img.at("width").get<int>();
      const int h = img.at("height").get<int>();
      if (scene.image.width() != w || scene.image.height() != h) {
        throw DataError(fmt::format("image {}: file is {}x{}, record says {}x{}", id,
                                    scene.image.width(), scene.image.height(), w, h));
      }
      if (!by_id.emplace(id, scenes.size()).second) {
        throw DataError(fmt::format("image {}: duplicate id", id));
      }
      scenes.push_back(std::move(scene));
    }
    std::size_t record = 0;
    for (const auto& ann : doc.at("annotations")) {
      const auto image_id = ann.at("image_id").get<std::int64_t>();
      const std::string rid = ann.contains("id") ? ann["id"].dump() : std::to_string(record);
      ++record;
      auto it = by_id.find(image_id);
      if (it == by_id.end()) {
        throw DataError(fmt::format("annotation {}: unknown image_id {}", rid, image_id));
      }
      Scene& scene = scenes[it->second];
      const auto bbox = ann.at("bbox").get<std::vector<double>>();
      if (bbox.size() != 4) throw DataError(fmt::format("annotation {}: bbox needs 4 values", rid));
      const auto kps = ann.at("keypoints").get<std::vector<double>>();
      if (kps.size() != 3 * k) {
        throw DataError(fmt::format("annotation {}: malformed record, {} keypoint values for "
                                    "K={} (expected {})", rid, kps.size(), k, 3 * k));
      }
      PersonAnnotation person;
      person.keypoint_schema = schema.id;
      const double w = scene.image.width();
      const double h = scene.image.height();
      person.bbox = {std::clamp(bbox[0], 0.0, w), std::clamp(bbox[1], 0.0, h),
                     std::clamp(bbox[0] + bbox[2], 0.0, w), std::clamp(bbox[1] + bbox[3], 0.0, h)};
      if (!person.bbox.valid()) {
        throw DataError(fmt::format("annotation {}: empty bbox", rid));
      }
      for (std::size_t i = 0; i < k; ++i) {
        const double v = kps[3 * i + 2];
        if (v != 0 && v != 1 && v != 2) {
          throw DataError(fmt::format("annotation {}: visibility {} not in {{0,1,2}}", rid, v));
        }
        person.keypoints.push_back({kps[3 * i], kps[3 * i + 1], static_cast<Visibility>(v)});
      }
      scene.persons.push_back(std::move(person));
    }
  } catch (const json::exception& e) {
    throw DataError(fmt::format("malformed record in '{}': {}", annotation_file.string(), e.what()));
  }
  return scenes;
}

void export_coco_keypoints(std::span<const Scene> scenes,
                           const std::filesystem::path& annotation_file,
                           const std::filesystem::path& image_dir) {
  std::filesystem::create_directories(image_dir);
  json doc;
  doc["images"] = json::array();
  doc["annotations"] = json::array();
  std::string schema;
  std::int64_t ann_id = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const Scene& scene = scenes[s];
    const std::int64_t id = static_cast<std::int64_t>(s);
    const std::string file = fmt::format("{:06d}.png", id);
    write_png(image_dir / file, scene.image);
    doc["images"].push_back({{"id", id}, {"file_name", file},
                             {"width", scene.image.width()}, {"height", scene.image.height()}});
    for (const auto& p : scene.persons) {
      schema = p.keypoint_schema;
      std::vector<double> kps;
      for (const auto& kp : p.keypoints) {
        kps.insert(kps.end(), {kp.x, kp.y, static_cast<double>(kp.visibility)});
      }
      doc["annotations"].push_back({{"id", ann_id++},
                                    {"image_id", id},
                                    {"bbox", {p.bbox.x_min, p.bbox.y_min, p.bbox.width(),
                                              p.bbox.height()}},
                                    {"keypoints", kps},
                                    {"num_keypoints", p.num_labeled()}});
    }
  }
  if (!schema.empty()) doc["keypoint_schema"] = schema;
  std::ofstream out(annotation_file);
  if (!out) throw DataError(fmt::format("cannot write '{}'", annotation_file.string()));
  out << doc.dump(1) << '\n';
}

namespace {

struct Rgb {
  float r, g, b;
};

class Painter {
 public:
  explicit Painter(ImageBuffer& image) : image_(image) {}

  // Anti-aliased capsule between (x0, y0) and (x1, y1).
  void capsule(double x0, double y0, double x1, double y1, double thickness, Rgb color) {
    const double half = thickness / 2;
    const int xa = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - half - 1)));
    const int xb = std::min(image_.width() - 1, static_cast<int>(std::ceil(std::max(x0, x1) + half + 1)));
    const int ya = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - half - 1)));
    const int yb = std::min(image_.height() - 1, static_cast<int>(std::ceil(std::max(y0, y1) + half + 1)));
    const double dx = x1 - x0;
    const double dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    for (int y = ya; y <= yb; ++y) {
      for (int x = xa; x <= xb; ++x) {
        double t = len2 > 0 ? ((x - x0) * dx + (y - y0) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double px = x0 + t * dx - x;
        const double py = y0 + t * dy - y;
        const double d = std::sqrt(px * px + py * py);
        blend(y, x, std::clamp(half - d + 0.5, 0.0, 1.0), color);
      }
    }
  }

  void disk(double cx, double cy, double radius, Rgb color) {
    capsule(cx, cy, cx, cy, 2 * radius, color);
  }

 private:
  void blend(int y, int x, double alpha, Rgb color) {
    if (alpha <= 0) return;
    const float a = static_cast<float>(alpha);
    image_.set(y, x, 0, (1 - a) * image_.at(y, x, 0) + a * color.r);
    image_.set(y, x, 1, (1 - a) * image_.at(y, x, 1) + a * color.g);
    image_.set(y, x, 2, (1 - a) * image_.at(y, x, 2) + a * color.b);
  }

  ImageBuffer& image_;
};

class SceneRng {
 public:
  explicit SceneRng(std::uint64_t seed) : rng_(seed) {}
  double uniform(double lo, double hi) {
    // 53-bit mantissa from the raw engine keeps the stream platform independent.
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }
  int integer(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(uniform(0, 1) * (hi - lo + 1) - 1e-12);
  }
  Rgb color(double lo, double hi) {
    return {static_cast<float>(uniform(lo, hi)), static_cast<float>(uniform(lo, hi)),
            static_cast<float>(uniform(lo, hi))};
  }

 private:
  std::mt19937_64 rng_;
};

void paint_background(ImageBuffer& image, SceneRng& rng) {
  const Rgb base = rng.color(0.25, 0.75);
  const Rgb tint = rng.color(-0.2, 0.2);
  const double fx = rng.uniform(0.05, 0.35);
  const double fy = rng.uniform(0.05, 0.35);
  const double phase = rng.uniform(0, 2 * std::numbers::pi);
  const double grain = rng.uniform(0.01, 0.05);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const double wave = std::sin(fx * x + phase) * std::cos(fy * y);
      image.set(y, x, 0, static_cast<float>(base.r + tint.r * wave + rng.uniform(-grain, grain)));
      image.set(y, x, 1, static_cast<float>(base.g + tint.g * wave + rng.uniform(-grain, grain)));
      image.set(y, x, 2, static_cast<float>(base.b + tint.b * wave + rng.uniform(-grain, grain)));
    }
  }
  // A few flat blocks of clutter.
  const int blocks = rng.integer(1, 3);
  for (int i = 0; i < blocks; ++i) {
    const Rgb c = rng.color(0.15, 0.85);
    const int bw = rng.integer(4, std::max(5, image.width() / 4));
    const int bh = rng.integer(4, std::max(5, image.height() / 4));
    const int x0 = rng.integer(0, image.width() - bw);
    const int y0 = rng.integer(0, image.height() - bh);
    for (int y = y0; y < y0 + bh; ++y)
      for (int x = x0; x < x0 + bw; ++x) {
        image.set(y, x, 0, c.r);
        image.set(y, x, 1, c.g);
        image.set(y, x, 2, c.b);
      }
  }
}

struct Figure {
  std::vector<Keypoint> keypoints;  // synth-13 order
  double head_radius = 0;
  double thickness = 0;
  BoundingBox box;
};

// Frontal stick figure of the given height with its head center at (cx, top + r).
// The person's left side is drawn at +x.
Figure pose_figure(double cx, double top, double height, SceneRng& rng) {
  Figure f;
  f.head_radius = 0.085 * height;
  f.thickness = std::max(1.5, 0.05 * height);
  const double deg = std::numbers::pi / 180.0;
  const double head_y = top + f.head_radius;
  const double shoulder_y = top + 0.22 * height;
  const double hip_y = top + 0.55 * height;
  const double shoulder_half = 0.13 * height;
  const double hip_half = 0.075 * height;
  const double upper_arm = 0.17 * height;
  const double forearm = 0.15 * height;
  const double thigh = 0.23 * height;
  const double shin = 0.21 * height;
  const double lean = rng.uniform(-0.04, 0.04) * height;

  std::vector<Keypoint> k(13, Keypoint{0, 0, Visibility::kVisible});
  k[0] = {cx + lean, head_y, Visibility::kVisible};
  for (int side = 0; side < 2; ++side) {
    const double dir = side == 0 ? 1.0 : -1.0;  // left at +x
    const double sx = cx + lean * 0.6 + dir * shoulder_half;
    const double hx = cx + dir * hip_half;
    // Angles from straight down, positive = outward.
    const double arm = rng.uniform(15, 160) * deg;
    const double bend = arm + rng.uniform(-50, 50) * deg;
    const double leg = rng.uniform(-5, 35) * deg;
    const double knee = leg + rng.uniform(-25, 15) * deg;
    const double ex = sx + dir * upper_arm * std::sin(arm);
    const double ey = shoulder_y + upper_arm * std::cos(arm);
    const double wx = ex + dir * forearm * std::sin(bend);
    const double wy = ey + forearm * std::cos(bend);
    const double kx = hx + dir * thigh * std::sin(leg);
    const double ky = hip_y + thigh * std::cos(leg);
    const double ax = kx + dir * shin * std::sin(knee);
    const double ay = ky + shin * std::cos(knee);
    k[1 + side] = {sx, shoulder_y, Visibility::kVisible};
    k[3 + side] = {ex, ey, Visibility::kVisible};
    k[5 + side] = {wx, wy, Visibility::kVisible};
    k[7 + side] = {hx, hip_y, Visibility::kVisible};
    k[9 + side] = {kx, ky, Visibility::kVisible};
    k[11 + side] = {ax, ay, Visibility::kVisible};
  }
  f.keypoints = std::move(k);

  const double margin = f.thickness / 2 + 1.0;
  double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
  for (const auto& p : f.keypoints) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  x0 = std::min(x0, f.keypoints[0].x - f.head_radius);
  x1 = std::max(x1, f.keypoints[0].x + f.head_radius);
  y0 = std::min(y0, f.keypoints[0].y - f.head_radius);
  f.box = {std::floor(x0 - margin), std::floor(y0 - margin), std::ceil(x1 + margin) + 1,
           std::ceil(y1 + margin) + 1};
  return f;
}

void draw_figure(ImageBuffer& image, const Figure& f, SceneRng& rng) {
  Painter paint(image);
  const Rgb skin = rng.color(0.35, 0.95);
  const Rgb shirt = rng.color(0.0, 1.0);
  const Rgb pants = rng.color(0.0, 1.0);
  const auto& k = f.keypoints;
  const double t = f.thickness;
  const double neck_x = (k[1].x + k[2].x) / 2;
  const double neck_y = k[1].y;
  const double pelvis_x = (k[7].x + k[8].x) / 2;
  const double pelvis_y = k[7].y;
  // torso
  paint.capsule(neck_x, neck_y, pelvis_x, pelvis_y, 2.2 * t, shirt);
  paint.capsule(k[1].x, k[1].y, k[2].x, k[2].y, t, shirt);
  paint.capsule(k[7].x, k[7].y, k[8].x, k[8].y, t, pants);
  for (int side = 0; side < 2; ++side) {
    paint.capsule(k[7 + side].x, k[7 + side].y, k[9 + side].x, k[9 + side].y, t, pants);
    paint.capsule(k[9 + side].x, k[9 + side].y, k[11 + side].x, k[11 + side].y, t, pants);
    paint.capsule(k[1 + side].x, k[1 + side].y, k[3 + side].x, k[3 + side].y, t, shirt);
    paint.capsule(k[3 + side].x, k[3 + side].y, k[5 + side].x, k[5 + side].y, t * 0.9, skin);
  }
  paint.capsule(neck_x, neck_y, k[0].x, k[0].y, t * 0.8, skin);
  paint.disk(k[0].x, k[0].y, f.head_radius, skin);
  // Face detail: identity-bearing eyes and hair.
  const Rgb eyes = rng.color(0.0, 0.3);
  const Rgb hair = rng.color(0.0, 0.6);
  const double r = f.head_radius;
  paint.capsule(k[0].x - 0.6 * r, k[0].y - 0.75 * r, k[0].x + 0.6 * r, k[0].y - 0.75 * r,
                0.5 * r, hair);
  paint.disk(k[0].x - 0.4 * r, k[0].y - 0.1 * r, std::max(0.5, 0.18 * r), eyes);
  paint.disk(k[0].x + 0.4 * r, k[0].y - 0.1 * r, std::max(0.5, 0.18 * r), eyes);
}

bool overlaps(const BoundingBox& a, const BoundingBox& b) {
  return a.x_min < b.x_max && b.x_min < a.x_max && a.y_min < b.y_max && b.y_min < a.y_max;
}

}  // namespace

std::vector<Scene> synth_generate(int count, int canvas_height, int canvas_width,
                                  std::uint64_t seed) {
  if (count < 1) throw ParameterError(fmt::format("synth_generate: count {} < 1", count));
  if (canvas_height < kMinSyntheticCanvas || canvas_width < kMinSyntheticCanvas) {
    throw ParameterError(fmt::format("synth_generate: canvas {}x{} smaller than the minimum "
                                     "figure canvas {}x{}", canvas_height, canvas_width,
                                     kMinSyntheticCanvas, kMinSyntheticCanvas));
  }
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (int n = 0; n < count; ++n) {
    SceneRng rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(n) + 1);
    Scene scene;
    scene.id = fmt::format("synth-{}-{:05d}", seed, n);
    scene.image = ImageBuffer(canvas_height, canvas_width, 3);
    paint_background(scene.image, rng);

    const int wanted = rng.integer(1, 3);
    std::vector<Figure> figures;
    for (int attempt = 0; attempt < 40 && static_cast<int>(figures.size()) < wanted; ++attempt) {
      const double height = rng.uniform(0.2, 0.6) * canvas_height;
      const double cx = rng.uniform(0, canvas_width);
      const double top = rng.uniform(0, canvas_height);
      Figure f = pose_figure(cx, top, height, rng);
      const auto& b = f.box;
      if (b.x_min < 0 || b.y_min < 0 || b.x_max > canvas_width || b.y_max > canvas_height) {
        continue;
      }
      if (std::ranges::any_of(figures, [&](const Figure& o) { return overlaps(o.box, b); })) {
        continue;
      }
      figures.push_back(std::move(f));
    }
    if (figures.empty()) {
      // Guaranteed placement: a central figure at the smallest height.
      const double height = 0.3 * canvas_height;
      figures.push_back(pose_figure(canvas_width / 2.0, canvas_height * 0.3, height, rng));
    }
    for (const auto& f : figures) {
      draw_figure(scene.image, f, rng);
      scene.persons.push_back({f.box, f.keypoints, std::string(kSynth13)});
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

Split split(std::vector<Scene> scenes, std::array<double, 3> fractions, std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (!(total > 0) || fractions[0] < 0 || fractions[1] < 0 || fractions[2] < 0) {
    throw ParameterError("split: fractions must be non-negative with a positive sum");
  }
  std::set<std::string> ids;
  for (const auto& s : scenes) {
    if (!ids.insert(s.id).second) throw DataError(fmt::format("split: duplicate scene id '{}'", s.id));
  }
  std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
  // Fisher-Yates with the raw engine output (libstdc++ independent of distributions).
  for (std::size_t i = scenes.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(scenes[i - 1], scenes[j]);
  }
  const std::size_t n = scenes.size();
  auto share = [&](double f) {
    return static_cast<std::size_t>(std::floor(f / total * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_val = share(fractions[1]);
  const std::size_t n_test = std::min(n - n_val, share(fractions[2]));
  const std::size_t n_train = n - n_val - n_test;
  Split out;
  auto first = std::make_move_iterator(scenes.begin());
  out.train.assign(first, first + n_train);
  out.val.assign(first + n_train, first + n_train + n_val);
  out.test.assign(first + n_train + n_val, std::make_move_iterator(scenes.end()));
  return out;
}

std::vector<Scene> load_dataset(const DatasetManifest& manifest) {
  if (manifest.kind == "synthetic") {
    return synth_generate(manifest.count, manifest.canvas_height, manifest.canvas_width,
                          manifest.seed);
  }
  if (manifest.kind == "coco") {
    return load_coco_keypoints(manifest.annotation_file, manifest.image_dir, manifest.schema_id);
  }
  throw ParameterError(fmt::format("unknown dataset kind '{}'", manifest.kind));
}

}  // namespace anonypose
