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
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "anonypose/domain.hpp"

namespace anonypose {

struct DatasetManifest {
  std::string name;
  // "synthetic" or "coco"
  std::string kind = "synthetic";
  std::string schema_id = std::string(kSynth13);
  std::filesystem::path annotation_file;
  std::filesystem::path image_dir;
  int count = 500;            // synthetic only
  int canvas_height = 64;     // synthetic only
  int canvas_width = 64;      // synthetic only
  std::uint64_t seed = 0;     // synthetic generation and split shuffling
  std::array<double, 3> split_fractions = {0.8, 0.1, 0.1};
};

// Reads the COCO-keypoints JSON subset:
//   images[{id, file_name, width, height}]
//   annotations[{image_id, bbox [x, y, w, h], keypoints [x, y, v]*K, num_keypoints}]
// An optional top-level "keypoint_schema" overrides `schema_id`.
std::vector<Scene> load_coco_keypoints(const std::filesystem::path& annotation_file,
                                       const std::filesystem::path& image_dir,
                                       std::string_view schema_id = kCoco17);

// Writes scenes as PNG images plus the JSON subset read by load_coco_keypoints.
void export_coco_keypoints(std::span<const Scene> scenes,
                           const std::filesystem::path& annotation_file,
                           const std::filesystem::path& image_dir);

inline constexpr int kMinSyntheticCanvas = 32;

// Seeded stick-figure scenes (synth-13 schema): 1-3 figures per scene on a
// textured background, annotations exact by construction.
std::vector<Scene> synth_generate(int count, int canvas_height, int canvas_width,
                                  std::uint64_t seed);

struct Split {
  std::vector<Scene> train;
  std::vector<Scene> val;
  std::vector<Scene> test;
};

// Deterministic shuffled partition into train/val/test by `fractions`.
Split split(std::vector<Scene> scenes, std::array<double, 3> fractions, std::uint64_t seed);

// Loads or generates the scenes described by `manifest`.
std::vector<Scene> load_dataset(const DatasetManifest& manifest);

}  // namespace anonypose
