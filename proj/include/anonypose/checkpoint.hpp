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
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace anonypose {

inline constexpr std::uint32_t kArchiveVersion = 1;

// Versioned container: a JSON manifest plus named contiguous CPU tensors,
// sealed with a checksum of every preceding byte.
struct Archive {
  nlohmann::json manifest = nlohmann::json::object();
  std::map<std::string, torch::Tensor> tensors;
};

std::vector<std::uint8_t> encode_archive(const Archive& archive);
// Throws CheckpointError for bad magic, version mismatch, truncation or a
// checksum failure.
Archive decode_archive(const std::vector<std::uint8_t>& bytes);

void write_archive(const Archive& archive, const std::filesystem::path& path);
Archive read_archive(const std::filesystem::path& path);

// Adds `prefix + name` entries for every parameter and buffer of `module`.
void export_module(const torch::nn::Module& module, const std::string& prefix, Archive& archive);
// Copies matching entries into `module`; names absent from the archive throw,
// extra archive entries are ignored.
void import_module(torch::nn::Module& module, const std::string& prefix, const Archive& archive);

}  // namespace anonypose
