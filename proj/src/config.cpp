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

#include "anonypose/config.hpp"

#include <fstream>

#include <fmt/format.h>

#include "anonypose/errors.hpp"

namespace anonypose {

StrictObject::StrictObject(const json& object, std::string path)
    : object_(object), path_(std::move(path)) {
  if (!object_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
}

bool StrictObject::has(std::string_view key) const {
  return object_.contains(std::string(key));
}

const json& StrictObject::raw(std::string_view key) {
  used_.emplace(key);
  return object_.at(std::string(key));
}

std::string StrictObject::child_path(std::string_view key) const {
  return path_.empty() ? std::string(key) : fmt::format("{}.{}", path_, key);
}

void StrictObject::finish() const {
  for (const auto& [key, value] : object_.items()) {
    if (!used_.contains(key)) throw ConfigError(child_path(key), "unknown key");
  }
}

namespace {

template <class F>
auto validated(const std::string& path, F&& make) {
  auto value = make();
  try {
    value.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
  return value;
}

}  // namespace

json to_json(const GeneratorConfig& c) {
  return {{"backbone", c.backbone_name()}, {"base_width", c.base_width}};
}

json to_json(const DiscriminatorConfig& c) {
  return {{"patch_levels", c.patch_levels}, {"base_width", c.base_width},
          {"conditional", c.conditional}};
}

json to_json(const PoseHeadConfig& c) {
  return {{"grid_stride", c.grid_stride}, {"keypoints", c.keypoints},
          {"base_width", c.base_width}, {"schema", c.schema_id}};
}

json to_json(const GuidanceSpec& c) {
  return {{"method", std::string(to_string(c.method))}, {"radius", c.radius},
          {"sigma", c.sigma}, {"seed", c.seed}};
}

json to_json(const LossWeights& c) {
  return {{"lambda1", c.lambda1}, {"lambda2", c.lambda2}, {"lambda3", c.lambda3},
          {"threshold", c.threshold}};
}

json to_json(const AdamOptions& c) {
  return {{"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps},
          {"weight_decay", c.weight_decay}};
}

json to_json(const DatasetManifest& c) {
  json j = {{"name", c.name},         {"kind", c.kind},
            {"schema", c.schema_id},  {"count", c.count},
            {"canvas", {c.canvas_height, c.canvas_width}},
            {"seed", c.seed},         {"split", c.split_fractions}};
  if (c.kind == "coco") {
    j["annotation_file"] = c.annotation_file.string();
    j["image_dir"] = c.image_dir.string();
  }
  return j;
}

GeneratorConfig generator_config_from(const json& j, const std::string& path) {
  StrictObject o(j, path);
  const auto backbone = o.get<std::string>("backbone", "unet_7");
  const int width = o.get<int>("base_width", 16);
  o.finish();
  return validated(path, [&] {
    try {
      return GeneratorConfig::parse(backbone, width);
    } catch (const Error& e) {
      throw ConfigError(o.child_path("backbone"), e.what());
    }
  });
}

DiscriminatorConfig discriminator_config_from(const json& j, const std::string& path) {
  StrictObject o(j, path);
  DiscriminatorConfig c;
  c.patch_levels = o.get("patch_levels", c.patch_levels);
  c.base_width = o.get("base_width", c.base_width);
  c.conditional = o.get("conditional", c.conditional);
  o.finish();
  return validated(path, [&] { return c; });
}

PoseHeadConfig pose_head_config_from(const json& j, const std::string& path) {
  StrictObject o(j, path);
  PoseHeadConfig c;
  c.grid_stride = o.get("grid_stride", c.grid_stride);
  c.keypoints = o.get("keypoints", c.keypoints);
  c.base_width = o.get("base_width", c.base_width);
  c.schema_id = o.get("schema", c.schema_id);
  o.finish();
  return validated(path, [&] { return c; });
}

GuidanceSpec guidance_spec_from(const json& j, const std::string& path) {
  StrictObject o(j, path);
  GuidanceSpec c;
  if (o.has("method")) {
    const auto name = o.require<std::string>("method");
    try {
      c.method = parse_guidance_method(name);
    } catch (const Error& e) {
      throw ConfigError(o.child_path("method"), e.what());
    }
  }
  c.radius = o.get("radius", c.radius);
  c.sigma = o.get("sigma", c.sigma);
  c.seed = o.get("seed", c.seed);
  o.finish();
  return validated(path, [&] { return c; });
}

LossWeights loss_weights_from(const json& j, const std::string& path) {
  StrictObject o(j, path);
  LossWeights c;
  c.lambda1 = o.get("lambda1", c.lambda1);
  c.lambda2 = o.get("lambda2", c.lambda2);
  c.lambda3 = o.get("lambda3", c.lambda3);
  c.threshold = o.get("threshold", c.threshold);
  o.finish();
  return validated(path, [&] { return c; });
}

AdamOptions adam_options_from(const json& j, const std::string& path, AdamOptions c) {
  StrictObject o(j, path);
  c.beta1 = o.get("beta1", c.beta1);
  c.beta2 = o.get("beta2", c.beta2);
  c.eps = o.get("eps", c.eps);
  c.weight_decay = o.get("weight_decay", c.weight_decay);
  o.finish();
  if (!(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1 && c.eps > 0 &&
        c.weight_decay >= 0)) {
    throw ConfigError(path, "betas must lie in [0, 1), eps > 0, weight_decay >= 0");
  }
  return c;
}

DatasetManifest dataset_manifest_from(const json& j, const std::string& path,
                                      const std::filesystem::path& base_dir) {
  StrictObject o(j, path);
  DatasetManifest c;
  c.name = o.get("name", std::string("synthetic"));
  c.kind = o.get("kind", c.kind);
  c.schema_id = o.get("schema", c.schema_id);
  c.count = o.get("count", c.count);
  if (o.has("canvas")) {
    const auto canvas = o.require<std::vector<int>>("canvas");
    if (canvas.size() != 2) throw ConfigError(o.child_path("canvas"), "expected [height, width]");
    c.canvas_height = canvas[0];
    c.canvas_width = canvas[1];
  }
  c.seed = o.get("seed", c.seed);
  if (o.has("split")) {
    const auto f = o.require<std::vector<double>>("split");
    if (f.size() != 3) throw ConfigError(o.child_path("split"), "expected [train, val, test]");
    c.split_fractions = {f[0], f[1], f[2]};
  }
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base_dir / fp;
  };
  if (o.has("annotation_file")) c.annotation_file = resolve(o.require<std::string>("annotation_file"));
  if (o.has("image_dir")) c.image_dir = resolve(o.require<std::string>("image_dir"));
  o.finish();

  if (c.kind != "synthetic" && c.kind != "coco") {
    throw ConfigError(o.child_path("kind"), "must be \"synthetic\" or \"coco\"");
  }
  if (c.kind == "synthetic") {
    if (c.count < 1) throw ConfigError(o.child_path("count"), "must be >= 1");
    if (c.canvas_height < kMinSyntheticCanvas || c.canvas_width < kMinSyntheticCanvas) {
      throw ConfigError(o.child_path("canvas"),
                        fmt::format("synthetic canvas must be at least {0}x{0}", kMinSyntheticCanvas));
    }
  } else if (c.annotation_file.empty() || c.image_dir.empty()) {
    throw ConfigError(path, "coco datasets need annotation_file and image_dir");
  }
  double total = 0;
  for (double f : c.split_fractions) {
    if (!(f >= 0 && f <= 1)) throw ConfigError(o.child_path("split"), "fractions must lie in [0, 1]");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError(o.child_path("split"), "fractions must sum to 1");
  return c;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open file");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string(), fmt::format("malformed JSON: {}", e.what()));
  }
}

}  // namespace anonypose
