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

#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "anonypose/datasets.hpp"
#include "anonypose/errors.hpp"
#include "anonypose/guidance.hpp"
#include "anonypose/nets.hpp"
#include "anonypose/objectives.hpp"
#include "anonypose/optim.hpp"

namespace anonypose {

using nlohmann::json;

// Reads fields of one JSON object, tracking which keys were consumed so that
// leftovers can be rejected. Errors carry the dotted path of the field.
class StrictObject {
 public:
  StrictObject(const json& object, std::string path);

  bool has(std::string_view key) const;
  const json& raw(std::string_view key);
  std::string child_path(std::string_view key) const;

  template <class T>
  T get(std::string_view key, T fallback) {
    if (!has(key)) return fallback;
    return as<T>(key);
  }
  template <class T>
  T require(std::string_view key) {
    if (!has(key)) throw ConfigError(child_path(key), "required field is missing");
    return as<T>(key);
  }
  // Throws ConfigError naming the first unknown key.
  void finish() const;

 private:
  template <class T>
  T as(std::string_view key) {
    const json& v = raw(key);
    bool ok = true;
    if constexpr (std::is_same_v<T, bool>) {
      ok = v.is_boolean();
    } else if constexpr (std::is_integral_v<T>) {
      ok = v.is_number_integer() && (std::is_signed_v<T> || v.is_number_unsigned());
    } else if constexpr (std::is_floating_point_v<T>) {
      ok = v.is_number();
    }
    if (!ok) throw ConfigError(child_path(key), "wrong type: " + v.dump());
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      throw ConfigError(child_path(key), "wrong type: " + v.dump());
    }
  }

  const json& object_;
  std::string path_;
  std::set<std::string, std::less<>> used_;
};

json to_json(const GeneratorConfig& c);
json to_json(const DiscriminatorConfig& c);
json to_json(const PoseHeadConfig& c);
json to_json(const GuidanceSpec& c);
json to_json(const LossWeights& c);
json to_json(const AdamOptions& c);
json to_json(const DatasetManifest& c);

GeneratorConfig generator_config_from(const json& j, const std::string& path);
DiscriminatorConfig discriminator_config_from(const json& j, const std::string& path);
PoseHeadConfig pose_head_config_from(const json& j, const std::string& path);
GuidanceSpec guidance_spec_from(const json& j, const std::string& path);
LossWeights loss_weights_from(const json& j, const std::string& path);
AdamOptions adam_options_from(const json& j, const std::string& path, AdamOptions defaults);
DatasetManifest dataset_manifest_from(const json& j, const std::string& path,
                                      const std::filesystem::path& base_dir);

json read_json_file(const std::filesystem::path& path);

}  // namespace anonypose
