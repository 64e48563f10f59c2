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

#include "anonypose/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>

#include "anonypose/checkpoint.hpp"
#include "anonypose/config.hpp"
#include "anonypose/errors.hpp"
#include "anonypose/nets.hpp"
#include "anonypose/scene.hpp"

namespace anonypose {

// ---- configuration ------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (schema_version != kExperimentSchemaVersion) {
    throw ConfigError("schema_version", fmt::format("expected {}, got {}",
                                                    kExperimentSchemaVersion, schema_version));
  }
  if (name.empty()) throw ConfigError("name", "must not be empty");
  train.validate();
  models.validate(train.portrait_size);
  if (models.pose.schema_id != dataset.schema_id) {
    throw ConfigError("models.pose.schema",
                      fmt::format("'{}' does not match the dataset schema '{}'",
                                  models.pose.schema_id, dataset.schema_id));
  }
  if (keypoint_schema(models.pose.schema_id).size() != models.pose.keypoints) {
    throw ConfigError("models.pose.keypoints", "does not match the schema size");
  }
  if (dataset.kind == "synthetic" && (dataset.canvas_height % models.pose.grid_stride != 0 ||
                                      dataset.canvas_width % models.pose.grid_stride != 0)) {
    throw ConfigError("dataset.canvas", fmt::format("must be divisible by the pose grid stride {}",
                                                    models.pose.grid_stride));
  }
  if (pose.batch_size < 1) throw ConfigError("pose.batch_size", "must be >= 1");
  if (pose.pretrain_steps < 0) throw ConfigError("pose.pretrain_steps", "must be >= 0");
  if (pose.finetune_steps < 0) throw ConfigError("pose.finetune_steps", "must be >= 0");
  if (!(pose.pretrain_lr > 0)) throw ConfigError("pose.pretrain_lr", "must be > 0");
  if (!(pose.finetune_lr > 0)) throw ConfigError("pose.finetune_lr", "must be > 0");
  if (eval_split != "val" && eval_split != "test") {
    throw ConfigError("eval_split", "must be \"val\" or \"test\"");
  }
}

ExperimentConfig experiment_config_from(const nlohmann::json& j,
                                        const std::filesystem::path& base_dir) {
  StrictObject o(j, "");
  ExperimentConfig c;
  c.schema_version = o.require<int>("schema_version");
  if (c.schema_version != kExperimentSchemaVersion) {
    throw ConfigError("schema_version", fmt::format("unsupported version {} (expected {})",
                                                    c.schema_version, kExperimentSchemaVersion));
  }
  c.name = o.get("name", c.name);
  if (o.has("dataset")) c.dataset = dataset_manifest_from(o.raw("dataset"), "dataset", base_dir);
  if (o.has("models")) c.models = model_config_from(o.raw("models"), "models");
  if (o.has("train")) c.train = train_config_from(o.raw("train"), "train");
  if (o.has("guidance")) {
    if (j.contains("train") && j.at("train").is_object() && j.at("train").contains("guidance")) {
      throw ConfigError("guidance", "given both at top level and in train");
    }
    c.train.guidance = guidance_spec_from(o.raw("guidance"), "guidance");
  }
  if (o.has("pose")) {
    StrictObject p(o.raw("pose"), "pose");
    PoseSchedule& s = c.pose;
    s.batch_size = p.get("batch_size", s.batch_size);
    s.pretrain_steps = p.get("pretrain_steps", s.pretrain_steps);
    s.pretrain_lr = p.get("pretrain_lr", s.pretrain_lr);
    s.finetune_steps = p.get("finetune_steps", s.finetune_steps);
    s.finetune_lr = p.get("finetune_lr", s.finetune_lr);
    s.conventional_baseline = p.get("conventional_baseline", s.conventional_baseline);
    if (p.has("pretrained_from")) {
      const std::filesystem::path f(p.require<std::string>("pretrained_from"));
      s.pretrained_from = f.is_absolute() ? f : base_dir / f;
    }
    p.finish();
  }
  c.eval_split = o.get("eval_split", c.eval_split);
  if (o.has("output_dir")) {
    const std::filesystem::path out(o.require<std::string>("output_dir"));
    c.output_dir = out.is_absolute() ? out : base_dir / out;
  }
  o.finish();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return experiment_config_from(read_json_file(path),
                                std::filesystem::absolute(path).parent_path());
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json train = to_json(c.train);
  train.erase("guidance");
  nlohmann::json pose = {{"batch_size", c.pose.batch_size},
                         {"pretrain_steps", c.pose.pretrain_steps},
                         {"pretrain_lr", c.pose.pretrain_lr},
                         {"finetune_steps", c.pose.finetune_steps},
                         {"finetune_lr", c.pose.finetune_lr},
                         {"conventional_baseline", c.pose.conventional_baseline}};
  if (c.pose.pretrained_from) pose["pretrained_from"] = c.pose.pretrained_from->string();
  return {{"schema_version", c.schema_version},
          {"name", c.name},
          {"dataset", to_json(c.dataset)},
          {"models", to_json(c.models)},
          {"train", train},
          {"guidance", to_json(c.train.guidance)},
          {"pose", pose},
          {"eval_split", c.eval_split},
          {"output_dir", c.output_dir.string()}};
}

// ---- evaluation ------------------------------------------------------------------

namespace {

PortraitBatch portraits_of(const Scene& scene, int portrait_size) {
  return extract_portraits(scene, detect_persons(scene), portrait_size, portrait_size);
}

Scene with_image(const Scene& scene, ImageBuffer image) {
  Scene out;
  out.id = scene.id;
  out.persons = scene.persons;
  out.image = std::move(image);
  return out;
}

}  // namespace

TranslatedScenes translate_scenes(ModelBundle& models, std::span<const Scene> scenes,
                                  int portrait_size) {
  torch::NoGradGuard no_grad;
  models.train(false);
  TranslatedScenes out;
  double seconds = 0;
  std::int64_t count = 0;
  for (const auto& scene : scenes) {
    PortraitBatch batch = portraits_of(scene, portrait_size);
    if (batch.portraits.empty()) {
      out.enhanced.push_back(scene);
      out.recovered.push_back(scene);
      continue;
    }
    std::vector<ImageBuffer> images;
    for (const auto& p : batch.portraits) images.push_back(p.image);
    const auto t0 = std::chrono::steady_clock::now();
    const torch::Tensor yp = models.gx->forward(stack_images(images));
    seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    count += yp.size(0);
    const torch::Tensor xp = models.gy->forward(yp);

    PortraitBatch enhanced = batch, recovered = batch;
    for (std::size_t i = 0; i < batch.portraits.size(); ++i) {
      enhanced.portraits[i].image = to_image(yp[static_cast<std::int64_t>(i)]);
      enhanced.portraits[i].tag = DomainTag::kEnhancedYPrime;
      recovered.portraits[i].image = to_image(xp[static_cast<std::int64_t>(i)]);
      recovered.portraits[i].tag = DomainTag::kRecoveredXPrime;
      out.portraits_o.push_back(batch.portraits[i].image);
      out.portraits_p.push_back(enhanced.portraits[i].image);
      out.portraits_r.push_back(recovered.portraits[i].image);
    }
    out.enhanced.push_back(with_image(scene, composite(scene, enhanced)));
    out.recovered.push_back(with_image(scene, composite(scene, recovered)));
  }
  out.generator_ms_per_portrait = count > 0 ? 1000.0 * seconds / static_cast<double>(count) : 0.0;
  return out;
}

Scene desensitize_scene(const Scene& scene, const GuidanceSpec& guidance, int portrait_size) {
  PortraitBatch batch = portraits_of(scene, portrait_size);
  for (auto& p : batch.portraits) {
    p.image = make_guidance(p.image, guidance,
                            portrait_stream_seed(guidance.seed, scene.id, p.index))
                  .image;
    p.tag = DomainTag::kDesensitizedY;
  }
  return with_image(scene, composite(scene, batch));
}

std::vector<std::vector<ScoredPose>> detect_poses(PoseNet& pose, std::span<const Scene> scenes,
                                                  const DecodeOptions& options) {
  torch::NoGradGuard no_grad;
  pose->train(false);
  std::vector<std::vector<ScoredPose>> out;
  const int stride = pose->config().grid_stride;
  constexpr std::size_t kChunk = 16;
  for (std::size_t begin = 0; begin < scenes.size(); begin += kChunk) {
    const std::size_t end = std::min(scenes.size(), begin + kChunk);
    bool uniform = true;
    for (std::size_t i = begin + 1; i < end; ++i) {
      uniform = uniform && scenes[i].image.same_shape(scenes[begin].image);
    }
    if (uniform) {
      std::vector<ImageBuffer> images;
      for (std::size_t i = begin; i < end; ++i) images.push_back(scenes[i].image);
      const torch::Tensor grid = pose->forward(stack_images(images));
      for (std::size_t i = begin; i < end; ++i) {
        out.push_back(decode_grid(grid[static_cast<std::int64_t>(i - begin)], stride, options));
      }
    } else {
      for (std::size_t i = begin; i < end; ++i) {
        const torch::Tensor grid = pose->forward(to_tensor(scenes[i].image).unsqueeze(0));
        out.push_back(decode_grid(grid[0], stride, options));
      }
    }
  }
  return out;
}

ApAr evaluate_pose(PoseNet& pose, std::span<const Scene> scenes, const DecodeOptions& options) {
  const auto detections = detect_poses(pose, scenes, options);
  return ap_ar_at_50(detections, scenes);
}

QualityPair mean_quality(std::span<const ImageBuffer> a, std::span<const ImageBuffer> b) {
  if (a.size() != b.size()) throw ShapeError("mean_quality: lists differ in length");
  if (a.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  QualityPair q;
  for (std::size_t i = 0; i < a.size(); ++i) {
    q.psnr += psnr(a[i], b[i]);
    q.ssim += ssim(a[i], b[i]);
  }
  q.psnr /= static_cast<double>(a.size());
  q.ssim /= static_cast<double>(a.size());
  return q;
}

// ---- results -------------------------------------------------------------------

namespace {

nlohmann::json number(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_from(const nlohmann::json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw DataError(fmt::format("metrics: unexpected value '{}'", s));
  }
  return j.get<double>();
}

}  // namespace

nlohmann::json ExperimentResult::to_json() const {
  nlohmann::json map = nlohmann::json::object(), mar = nlohmann::json::object();
  for (const auto& [label, r] : pose) {
    map[label] = number(r.ap);
    mar[label] = number(r.ar);
  }
  return {{"name", name},
          {"guidance", anonypose::to_json(guidance)},
          {"backbone", backbone},
          {"eval_split", eval_split},
          {"eval_scenes", eval_scenes},
          {"psnr_op", number(op.psnr)},
          {"ssim_op", number(op.ssim)},
          {"psnr_or", number(orr.psnr)},
          {"ssim_or", number(orr.ssim)},
          {"psnr_og", number(og.psnr)},
          {"ssim_og", number(og.ssim)},
          {"map50", map},
          {"mar50", mar},
          {"threshold", threshold},
          {"l1_first_mean", number(l1_first_mean)},
          {"l1_tail_mean", number(l1_tail_mean)},
          {"gated_l1_converged", gated_l1_converged},
          {"steps", steps},
          {"clip_events", clip_events},
          {"train_seconds", train_seconds},
          {"generator_ms_per_portrait", generator_ms_per_portrait}};
}

ExperimentResult ExperimentResult::from_json(const nlohmann::json& j) {
  try {
    ExperimentResult r;
    r.name = j.at("name").get<std::string>();
    r.guidance = guidance_spec_from(j.at("guidance"), "guidance");
    r.backbone = j.at("backbone").get<std::string>();
    r.eval_split = j.value("eval_split", std::string("test"));
    r.eval_scenes = j.value("eval_scenes", 0);
    r.op = {number_from(j.at("psnr_op")), number_from(j.at("ssim_op"))};
    r.orr = {number_from(j.at("psnr_or")), number_from(j.at("ssim_or"))};
    r.og = {number_from(j.value("psnr_og", nlohmann::json())),
            number_from(j.value("ssim_og", nlohmann::json()))};
    for (const auto& [label, v] : j.at("map50").items()) r.pose[label].ap = number_from(v);
    for (const auto& [label, v] : j.at("mar50").items()) r.pose[label].ar = number_from(v);
    r.threshold = j.value("threshold", 0.0);
    r.l1_first_mean = number_from(j.value("l1_first_mean", nlohmann::json()));
    r.l1_tail_mean = number_from(j.value("l1_tail_mean", nlohmann::json()));
    r.gated_l1_converged = j.value("gated_l1_converged", false);
    r.steps = j.value("steps", std::int64_t{0});
    r.clip_events = j.value("clip_events", std::int64_t{0});
    r.train_seconds = j.value("train_seconds", 0.0);
    r.generator_ms_per_portrait = j.value("generator_ms_per_portrait", 0.0);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("malformed metrics record: {}", e.what()));
  } catch (const ConfigError& e) {
    throw DataError(fmt::format("malformed metrics record: {}", e.what()));
  }
}

// ---- pose archives ----------------------------------------------------------------

void save_pose(PoseNet& pose, const PoseHeadConfig& config, const std::filesystem::path& path) {
  Archive a;
  a.manifest["format"] = "anonypose-pose";
  a.manifest["pose"] = to_json(config);
  export_module(*pose, "pose/", a);
  write_archive(a, path);
}

PoseNet load_pose(const std::filesystem::path& path) {
  const Archive a = read_archive(path);
  if (a.manifest.value("format", std::string()) != "anonypose-pose") {
    throw CheckpointError(fmt::format("'{}' is not a pose archive", path.string()));
  }
  PoseNet pose(pose_head_config_from(a.manifest.at("pose"), "pose"));
  import_module(*pose, "pose/", a);
  return pose;
}

// ---- protocol ------------------------------------------------------------------

namespace {

void copy_weights(torch::nn::Module& from, torch::nn::Module& to) {
  Archive a;
  export_module(from, "m/", a);
  import_module(to, "m/", a);
}

TrainConfig pose_phase(const ExperimentConfig& c, std::int64_t steps, double lr,
                       std::uint64_t stream) {
  TrainConfig t = c.train;
  t.batch_size = c.pose.batch_size;
  t.lr0 = lr;
  t.pose_lr0 = 0;
  t.decay = 1.0;
  t.max_steps = steps;
  t.epochs = 1;
  t.seed = derive_seed(c.train.seed, stream);
  return t;
}

enum : std::uint64_t { kPretrainStream = 101, kFinetuneStream = 102, kPoseInitStream = 103 };

double window_mean(const std::vector<LossReport>& history, bool tail) {
  if (history.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t n = std::min<std::size_t>(TrainState::kRecentWindow, history.size());
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    s += history[tail ? history.size() - n + i : i]["L1"];
  }
  return s / static_cast<double>(n);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const ExperimentHooks& hooks) {
  config.validate();
  auto phase = [&](const std::string& name) {
    if (hooks.on_phase) hooks.on_phase(name);
  };
  const bool persist = !config.output_dir.empty();
  if (persist) {
    std::filesystem::create_directories(config.output_dir);
    std::ofstream(config.output_dir / "config.json") << to_json(config).dump(2) << '\n';
  }

  phase("data");
  Split data = split(load_dataset(config.dataset), config.dataset.split_fractions, config.dataset.seed);
  if (data.train.empty()) throw DataError("experiment: the training split is empty");
  const std::vector<Scene>& eval = config.eval_split == "val" ? data.val : data.test;
  if (eval.empty()) throw DataError(fmt::format("experiment: the {} split is empty", config.eval_split));
  const int ps = config.train.portrait_size;

  // Pose estimator trained on originals.
  PoseNet pretrained{nullptr};
  if (config.pose.pretrained_from) {
    phase("load pretrained pose");
    pretrained = load_pose(*config.pose.pretrained_from);
    if (!(pretrained->config() == config.models.pose)) {
      throw ConfigError("pose.pretrained_from", "pose configuration differs from models.pose");
    }
  } else {
    phase("pretrain pose");
    torch::manual_seed(derive_seed(config.train.seed, kPoseInitStream));
    pretrained = PoseNet(config.models.pose);
    Adam opt(named_parameters(*pretrained), config.train.optimizers.pose);
    fit_pose(pretrained, opt, data.train,
             pose_phase(config, config.pose.pretrain_steps, config.pose.pretrain_lr, kPretrainStream));
  }
  if (persist) save_pose(pretrained, config.models.pose, config.output_dir / "pose_pretrained.anpk");

  ExperimentResult result;
  result.name = config.name;
  result.guidance = config.train.guidance;
  result.backbone = config.models.generator.backbone_name();
  result.eval_split = config.eval_split;
  result.eval_scenes = static_cast<int>(eval.size());

  // Baseline: the pretrained estimator finetuned on conventional composites.
  std::vector<Scene> conventional_eval;
  for (const auto& s : eval) conventional_eval.push_back(desensitize_scene(s, config.train.guidance, ps));
  {
    std::vector<ImageBuffer> o, g;
    for (const auto& s : eval) {
      for (const auto& p : portraits_of(s, ps).portraits) {
        o.push_back(p.image);
        g.push_back(make_guidance(p.image, config.train.guidance,
                                  portrait_stream_seed(config.train.guidance.seed, s.id, p.index))
                        .image);
      }
    }
    result.og = mean_quality(o, g);
  }
  if (config.pose.conventional_baseline) {
    phase("conventional baseline");
    PoseNet baseline(config.models.pose);
    copy_weights(*pretrained, *baseline);
    Adam opt(named_parameters(*baseline), config.train.optimizers.pose);
    const GuidanceSpec guidance = config.train.guidance;
    fit_pose(baseline, opt, data.train,
             pose_phase(config, config.pose.finetune_steps, config.pose.finetune_lr, kFinetuneStream),
             [&](const Scene& s) { return desensitize_scene(s, guidance, ps); });
    result.pose[kConvP] = evaluate_pose(baseline, conventional_eval);
    if (persist) save_pose(baseline, config.models.pose, config.output_dir / "pose_conventional.anpk");
  }

  phase("joint training");
  FitOptions fo;
  fo.output_dir = config.output_dir;
  fo.on_init = [&](ModelBundle& m) { copy_weights(*pretrained, *m.pose); };
  fo.on_step = hooks.on_step;
  const auto t0 = std::chrono::steady_clock::now();
  FitResult fitted = fit(config.models, config.train, data.train, fo);
  result.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ModelBundle& models = fitted.state.models;

  phase("evaluation");
  const TranslatedScenes translated = translate_scenes(models, eval, ps);
  result.generator_ms_per_portrait = translated.generator_ms_per_portrait;
  result.op = mean_quality(translated.portraits_o, translated.portraits_p);
  result.orr = mean_quality(translated.portraits_o, translated.portraits_r);
  result.pose[kPreO] = evaluate_pose(pretrained, eval);
  result.pose[kPreP] = evaluate_pose(pretrained, translated.enhanced);
  result.pose[kJointP] = evaluate_pose(models.pose, translated.enhanced);
  result.pose[kJointR] = evaluate_pose(models.pose, translated.recovered);
  result.pose[kJointO] = evaluate_pose(models.pose, eval);

  result.threshold = fitted.state.threshold;
  result.l1_first_mean = window_mean(fitted.history, false);
  result.l1_tail_mean = window_mean(fitted.history, true);
  result.gated_l1_converged = result.l1_tail_mean < 2.0 * result.threshold;
  result.steps = fitted.state.step;
  result.clip_events = fitted.state.clip_events;

  if (persist) {
    std::ofstream(config.output_dir / "metrics.json") << result.to_json().dump(2) << '\n';
    // Joint estimator on privacy-enhanced validation scenes.
    if (!data.val.empty()) {
      const TranslatedScenes val = translate_scenes(models, data.val, ps);
      const QualityPair q = mean_quality(val.portraits_o, val.portraits_p);
      const ApAr r = evaluate_pose(models.pose, val.enhanced);
      EvalResult er{q.psnr, q.ssim, r.ap, r.ar, r.details};
      std::ofstream(config.output_dir / "eval_val.json") << to_json(er) << '\n';
    }
  }
  return result;
}

}  // namespace anonypose
