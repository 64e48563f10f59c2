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

// Tiny configurations that keep training tests to seconds on one core.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <torch/torch.h>

#include "anonypose/datasets.hpp"
#include "anonypose/metrics.hpp"
#include "anonypose/trainer.hpp"

namespace fixtures {

inline anonypose::ModelConfig tiny_models() {
  anonypose::ModelConfig m;
  m.generator = anonypose::GeneratorConfig::parse("unet_3", 8);
  m.discriminator.patch_levels = 1;
  m.discriminator.base_width = 8;
  m.pose.base_width = 8;
  return m;
}

inline anonypose::TrainConfig tiny_train() {
  anonypose::TrainConfig c;
  c.batch_size = 4;
  c.lr0 = 1e-3;
  c.epochs = 1;
  c.portrait_size = 16;
  c.seed = 11;
  c.guidance.radius = 2;
  return c;
}

inline std::vector<anonypose::Scene> tiny_scenes(int count = 8, std::uint64_t seed = 3) {
  return anonypose::synth_generate(count, 32, 32, seed);
}

inline anonypose::ImageBuffer random_image(std::mt19937& rng, int h, int w, int c) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  anonypose::ImageBuffer img(h, w, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) img.set(y, x, k, u(rng));
  return img;
}

inline anonypose::ImageBuffer perturbed(std::mt19937& rng, const anonypose::ImageBuffer& src,
                                        float amount) {
  std::normal_distribution<float> n(0.0f, amount);
  anonypose::ImageBuffer out = src;
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x)
      for (int k = 0; k < src.channels(); ++k)
        out.set(y, x, k, std::clamp(src.at(y, x, k) + n(rng), 0.0f, 1.0f));
  return out;
}

// A small detection problem plus its OKS matrix computed by the literal
// formula. Predictions are listed scene-major, the order in which the
// library pools them.
struct ApFixture {
  std::vector<anonypose::Scene> truth;
  std::vector<std::vector<anonypose::ScoredPose>> detections;
  std::vector<double> scores;
  std::vector<int> scene_of_pred;
  std::vector<int> scene_of_gt;
  std::vector<std::vector<double>> oks;
};

// At most 4 ground-truth persons and 5 predictions across 1 or 2 scenes.
inline ApFixture random_ap_fixture(std::mt19937& rng) {
  using namespace anonypose;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto sigmas = KeypointSigmas::for_schema(kSynth13);
  ApFixture fx;
  const int scenes = 1 + static_cast<int>(u(rng) * 2);
  const int ng = static_cast<int>(u(rng) * 5);
  const int np = static_cast<int>(u(rng) * 6);
  fx.truth.resize(scenes);
  fx.detections.resize(scenes);
  for (int s = 0; s < scenes; ++s) fx.truth[s].id = "s" + std::to_string(s);
  for (int g = 0; g < ng; ++g) {
    const int s = static_cast<int>(u(rng) * scenes);
    const double x = 10 + 40 * u(rng), y = 10 + 40 * u(rng);
    PersonAnnotation p;
    p.bbox = {x, y, x + 12, y + 24};
    p.keypoint_schema = std::string(kSynth13);
    for (int k = 0; k < 13; ++k) {
      const auto vis = u(rng) < 0.2 ? Visibility::kNotLabeled : Visibility::kVisible;
      p.keypoints.push_back({x + 10 * u(rng), y + 20 * u(rng), vis});
    }
    p.keypoints[0].visibility = Visibility::kVisible;
    fx.truth[s].persons.push_back(std::move(p));
  }
  std::vector<const PersonAnnotation*> gts;
  for (int s = 0; s < scenes; ++s) {
    for (const auto& p : fx.truth[s].persons) {
      gts.push_back(&p);
      fx.scene_of_gt.push_back(s);
    }
  }
  for (int p = 0; p < np; ++p) {
    const int s = static_cast<int>(u(rng) * scenes);
    ScoredPose det;
    det.score = u(rng);
    // Jitter around a random person of the scene, or noise when it has none.
    const PersonAnnotation* anchor = nullptr;
    if (!fx.truth[s].persons.empty()) {
      anchor = &fx.truth[s].persons[static_cast<std::size_t>(u(rng) * fx.truth[s].persons.size())];
    }
    const double spread = 6.0 * u(rng);
    for (int k = 0; k < 13; ++k) {
      const double bx = anchor ? anchor->keypoints[k].x : 30;
      const double by = anchor ? anchor->keypoints[k].y : 30;
      det.keypoints.push_back({bx + spread * (u(rng) - 0.5), by + spread * (u(rng) - 0.5),
                               Visibility::kVisible});
    }
    fx.detections[s].push_back(std::move(det));
  }
  for (int s = 0; s < scenes; ++s) {
    for (const auto& det : fx.detections[s]) {
      std::vector<double> row;
      for (const auto* gt : gts) {
        double sum = 0;
        int n = 0;
        for (int k = 0; k < 13; ++k) {
          if (gt->keypoints[k].visibility == Visibility::kNotLabeled) continue;
          const double d2 = std::pow(det.keypoints[k].x - gt->keypoints[k].x, 2) +
                            std::pow(det.keypoints[k].y - gt->keypoints[k].y, 2);
          sum += std::exp(-d2 / (2 * gt->bbox.area() * sigmas.k[k] * sigmas.k[k]));
          ++n;
        }
        row.push_back(sum / n);
      }
      fx.oks.push_back(std::move(row));
      fx.scores.push_back(det.score);
      fx.scene_of_pred.push_back(s);
    }
  }
  return fx;
}

// FNV-1a over the raw bytes of every parameter and buffer.
inline std::uint64_t module_hash(const torch::nn::Module& m) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const torch::Tensor& t) {
    const auto c = t.detach().contiguous().to(torch::kCPU);
    const auto* p = static_cast<const unsigned char*>(c.data_ptr());
    for (std::size_t i = 0; i < c.nbytes(); ++i) h = (h ^ p[i]) * 1099511628211ULL;
  };
  for (const auto& t : m.parameters()) mix(t);
  for (const auto& t : m.buffers()) mix(t);
  return h;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("anonypose-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
