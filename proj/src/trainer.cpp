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

#include "anonypose/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include <fmt/format.h>

#include "anonypose/config.hpp"
#include "anonypose/errors.hpp"
#include "anonypose/scene.hpp"

namespace anonypose {

namespace F = torch::nn::functional;

// ---- configuration ------------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const char* field, const char* msg) { throw ConfigError(field, msg); };
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(lr0 > 0) || !std::isfinite(lr0)) fail("lr0", "must be > 0");
  if (!(pose_lr0 >= 0) || !std::isfinite(pose_lr0)) fail("pose_lr0", "must be >= 0");
  if (!(decay > 0 && decay <= 1)) fail("decay", "must lie in (0, 1]");
  if (epochs < 0) fail("epochs", "must be >= 0");
  if (max_steps < 0) fail("max_steps", "must be >= 0");
  if (portrait_size < 1) fail("portrait_size", "must be >= 1");
  if (warmup_epochs_without_pe < 0) fail("warmup_epochs_without_pe", "must be >= 0");
  if (!(threshold_fraction >= 0) || !std::isfinite(threshold_fraction)) {
    fail("threshold_fraction", "must be finite and >= 0");
  }
  if (!(clip_norm > 0)) fail("clip_norm", "must be > 0");
  try {
    weights.validate();
  } catch (const ParameterError& e) {
    throw ConfigError("weights", e.what());
  }
  try {
    guidance.validate();
  } catch (const ParameterError& e) {
    throw ConfigError("guidance", e.what());
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"lr0", c.lr0},
          {"pose_lr0", c.pose_lr0},
          {"decay", c.decay},
          {"epochs", c.epochs},
          {"max_steps", c.max_steps},
          {"optimizers",
           {{"generators", to_json(c.optimizers.generators)},
            {"discriminators", to_json(c.optimizers.discriminators)},
            {"pose", to_json(c.optimizers.pose)}}},
          {"seed", c.seed},
          {"weights", to_json(c.weights)},
          {"auto_threshold", c.auto_threshold},
          {"threshold_fraction", c.threshold_fraction},
          {"guidance", to_json(c.guidance)},
          {"portrait_size", c.portrait_size},
          {"warmup_epochs_without_pe", c.warmup_epochs_without_pe},
          {"pe_grad_to_generators", c.pe_grad_to_generators},
          {"freeze_discriminators", c.freeze_discriminators},
          {"augment", c.augment},
          {"clip_norm", c.clip_norm}};
}

TrainConfig train_config_from(const nlohmann::json& j, const std::string& path) {
  StrictObject o(j, path);
  TrainConfig c;
  c.batch_size = o.get("batch_size", c.batch_size);
  c.lr0 = o.get("lr0", c.lr0);
  c.pose_lr0 = o.get("pose_lr0", c.pose_lr0);
  c.decay = o.get("decay", c.decay);
  c.epochs = o.get("epochs", c.epochs);
  c.max_steps = o.get("max_steps", c.max_steps);
  if (o.has("optimizers")) {
    StrictObject opt(o.raw("optimizers"), o.child_path("optimizers"));
    OptimizerSettings& s = c.optimizers;
    if (opt.has("generators")) {
      s.generators = adam_options_from(opt.raw("generators"), opt.child_path("generators"), s.generators);
    }
    if (opt.has("discriminators")) {
      s.discriminators = adam_options_from(opt.raw("discriminators"),
                                           opt.child_path("discriminators"), s.discriminators);
    }
    if (opt.has("pose")) s.pose = adam_options_from(opt.raw("pose"), opt.child_path("pose"), s.pose);
    opt.finish();
  }
  c.seed = o.get("seed", c.seed);
  if (o.has("weights")) c.weights = loss_weights_from(o.raw("weights"), o.child_path("weights"));
  c.auto_threshold = o.get("auto_threshold", c.auto_threshold);
  c.threshold_fraction = o.get("threshold_fraction", c.threshold_fraction);
  if (o.has("guidance")) c.guidance = guidance_spec_from(o.raw("guidance"), o.child_path("guidance"));
  c.portrait_size = o.get("portrait_size", c.portrait_size);
  c.warmup_epochs_without_pe = o.get("warmup_epochs_without_pe", c.warmup_epochs_without_pe);
  c.pe_grad_to_generators = o.get("pe_grad_to_generators", c.pe_grad_to_generators);
  c.freeze_discriminators = o.get("freeze_discriminators", c.freeze_discriminators);
  c.augment = o.get("augment", c.augment);
  c.clip_norm = o.get("clip_norm", c.clip_norm);
  o.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path.empty() ? e.field() : path + "." + e.field(),
                      std::string(e.what()).substr(e.field().size() + 2));
  }
  return c;
}

double lr_at(const TrainConfig& config, int epoch) {
  return config.lr0 * std::pow(config.decay, epoch);
}

double pose_lr_at(const TrainConfig& config, int epoch) {
  return (config.pose_lr0 > 0 ? config.pose_lr0 : config.lr0) * std::pow(config.decay, epoch);
}

// ---- augmentation ----------------------------------------------------------------

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  for (std::uint64_t v : {a, b, c}) h = mix(h ^ mix(v));
  return h;
}

AugmentParams AugmentParams::sample(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  AugmentParams p;
  p.flip = unit() < 0.5;
  p.hue = -0.05 + 0.1 * unit();
  p.saturation = 0.8 + 0.4 * unit();
  p.brightness = 0.8 + 0.4 * unit();
  return p;
}

namespace {

ImageBuffer flip_image(const ImageBuffer& in) {
  ImageBuffer out(in.height(), in.width(), in.channels());
  for (int y = 0; y < in.height(); ++y) {
    for (int x = 0; x < in.width(); ++x) {
      for (int c = 0; c < in.channels(); ++c) out.set(y, in.width() - 1 - x, c, in.at(y, x, c));
    }
  }
  return out;
}

PersonAnnotation flip_person(const PersonAnnotation& p, int width) {
  PersonAnnotation out = p;
  out.bbox.x_min = width - p.bbox.x_max;
  out.bbox.x_max = width - p.bbox.x_min;
  for (auto& k : out.keypoints) {
    if (k.labeled()) k.x = width - 1 - k.x;
  }
  if (!p.keypoint_schema.empty()) {
    for (const auto& [l, r] : keypoint_schema(p.keypoint_schema).flip_pairs) {
      std::swap(out.keypoints.at(l), out.keypoints.at(r));
    }
  }
  return out;
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0 ? d / mx : 0.0f;
  if (d <= 0) {
    h = 0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d + 6.0f, 6.0f) / 6.0f;
  } else if (mx == g) {
    h = ((b - r) / d + 2.0f) / 6.0f;
  } else {
    h = ((r - g) / d + 4.0f) / 6.0f;
  }
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  const float hh = h * 6.0f;
  const int sector = std::min(static_cast<int>(hh), 5);
  const float f = hh - sector;
  const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

ImageBuffer jitter_color(const ImageBuffer& in, const AugmentParams& p) {
  if (p.hue == 0.0 && p.saturation == 1.0 && p.brightness == 1.0) return in;
  if (in.channels() != 3) {
    std::vector<float> data(in.data().begin(), in.data().end());
    for (auto& v : data) v = std::clamp(v * static_cast<float>(p.brightness), 0.0f, 1.0f);
    return ImageBuffer(in.height(), in.width(), in.channels(), std::move(data));
  }
  ImageBuffer out(in.height(), in.width(), 3);
  for (int y = 0; y < in.height(); ++y) {
    for (int x = 0; x < in.width(); ++x) {
      float h, s, v, r, g, b;
      rgb_to_hsv(in.at(y, x, 0), in.at(y, x, 1), in.at(y, x, 2), h, s, v);
      h += static_cast<float>(p.hue);
      s = std::clamp(s * static_cast<float>(p.saturation), 0.0f, 1.0f);
      v = std::clamp(v * static_cast<float>(p.brightness), 0.0f, 1.0f);
      hsv_to_rgb(h, s, v, r, g, b);
      out.set(y, x, 0, r);
      out.set(y, x, 1, g);
      out.set(y, x, 2, b);
    }
  }
  return out;
}

}  // namespace

Scene augment(const Scene& scene, const AugmentParams& params) {
  Scene out;
  out.id = scene.id;
  const int w = scene.image.width();
  out.image = jitter_color(params.flip ? flip_image(scene.image) : scene.image, params);
  for (const auto& p : scene.persons) out.persons.push_back(params.flip ? flip_person(p, w) : p);
  return out;
}

Portrait augment(const Portrait& portrait, const AugmentParams& params) {
  Portrait out = portrait;
  if (params.flip) {
    out.image = flip_image(portrait.image);
    out.annotation = flip_person(portrait.annotation, portrait.image.width());
    out.transform.reset();  // the crop mapping no longer applies
  }
  out.image = jitter_color(out.image, params);
  return out;
}

// ---- models ----------------------------------------------------------------------

void ModelConfig::validate(int portrait_size) const {
  try {
    generator.validate();
    discriminator.validate();
    pose.validate();
  } catch (const ParameterError& e) {
    throw ConfigError("models", e.what());
  }
  if (portrait_size % generator.required_multiple() != 0) {
    throw ConfigError("train.portrait_size",
                      fmt::format("{} is not divisible by {} required by {}", portrait_size,
                                  generator.required_multiple(), generator.backbone_name()));
  }
  if (discriminator.receptive_field() >= portrait_size ||
      portrait_size % (1 << discriminator.patch_levels) != 0) {
    throw ConfigError("models.discriminator",
                      fmt::format("{} patch levels (receptive field {}) do not fit {}x{} portraits",
                                  discriminator.patch_levels, discriminator.receptive_field(),
                                  portrait_size, portrait_size));
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"generator", to_json(c.generator)},
          {"discriminator", to_json(c.discriminator)},
          {"pose", to_json(c.pose)}};
}

ModelConfig model_config_from(const nlohmann::json& j, const std::string& path) {
  StrictObject o(j, path);
  ModelConfig c;
  if (o.has("generator")) c.generator = generator_config_from(o.raw("generator"), o.child_path("generator"));
  if (o.has("discriminator")) {
    c.discriminator = discriminator_config_from(o.raw("discriminator"), o.child_path("discriminator"));
  }
  if (o.has("pose")) c.pose = pose_head_config_from(o.raw("pose"), o.child_path("pose"));
  o.finish();
  return c;
}

ModelBundle ModelBundle::create(const ModelConfig& config, const OptimizerSettings& optimizers,
                                std::uint64_t seed) {
  torch::manual_seed(seed);
  ModelBundle b;
  b.config = config;
  b.gx = Generator(config.generator);
  b.gy = Generator(config.generator);
  b.dx = PatchDiscriminator(config.discriminator);
  b.dy = PatchDiscriminator(config.discriminator);
  b.pose = PoseNet(config.pose);
  b.opt_gx = Adam(named_parameters(*b.gx), optimizers.generators);
  b.opt_gy = Adam(named_parameters(*b.gy), optimizers.generators);
  b.opt_dx = Adam(named_parameters(*b.dx), optimizers.discriminators);
  b.opt_dy = Adam(named_parameters(*b.dy), optimizers.discriminators);
  b.opt_pose = Adam(named_parameters(*b.pose), optimizers.pose);
  return b;
}

ModelBundle ModelBundle::clone(const OptimizerSettings& optimizers) const {
  Archive a;
  export_to(a);
  ModelBundle copy = create(config, optimizers, 0);
  copy.import_from(a);
  return copy;
}

void ModelBundle::train(bool on) {
  gx->train(on);
  gy->train(on);
  dx->train(on);
  dy->train(on);
  pose->train(on);
}

namespace {

struct NamedModule {
  const char* name;
  torch::nn::Module* module;
  Adam* optimizer;
};

std::vector<NamedModule> modules_of(ModelBundle& b) {
  return {{"gx", b.gx.get(), &b.opt_gx},
          {"gy", b.gy.get(), &b.opt_gy},
          {"dx", b.dx.get(), &b.opt_dx},
          {"dy", b.dy.get(), &b.opt_dy},
          {"pose", b.pose.get(), &b.opt_pose}};
}

}  // namespace

void ModelBundle::export_to(Archive& archive) const {
  auto& self = const_cast<ModelBundle&>(*this);
  for (const auto& m : modules_of(self)) {
    export_module(*m.module, std::string(m.name) + "/", archive);
    for (const auto& [key, t] : m.optimizer->state()) {
      archive.tensors[fmt::format("{}.adam/{}", m.name, key)] = t;
    }
    archive.manifest["optimizer_steps"][m.name] = m.optimizer->steps();
  }
}

void ModelBundle::import_from(const Archive& archive) {
  for (const auto& m : modules_of(*this)) {
    import_module(*m.module, std::string(m.name) + "/", archive);
    std::map<std::string, torch::Tensor> state;
    const std::string prefix = fmt::format("{}.adam/", m.name);
    for (const auto& [key, t] : archive.tensors) {
      if (key.starts_with(prefix)) state.emplace(key.substr(prefix.size()), t);
    }
    std::int64_t steps = 0;
    if (archive.manifest.contains("optimizer_steps")) {
      steps = archive.manifest["optimizer_steps"].value(m.name, std::int64_t{0});
    }
    m.optimizer->load_state(state, steps);
  }
}

// ---- batches ---------------------------------------------------------------------

double TrainState::recent_l1_mean() const {
  if (recent_l1.empty()) return 0.0;
  double s = 0;
  for (double v : recent_l1) s += v;
  return s / static_cast<double>(recent_l1.size());
}

TrainBatch make_train_batch(std::span<const Scene> scenes, const TrainConfig& config,
                            std::uint64_t batch_seed, std::string id) {
  if (scenes.empty()) throw DataError("make_train_batch: empty batch");
  TrainBatch batch;
  batch.id = std::move(id);
  std::vector<ImageBuffer> scene_images, xs, ys;
  const int p = config.portrait_size;
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    Scene s = config.augment ? augment(scenes[k], AugmentParams::sample(derive_seed(batch_seed, k)))
                             : scenes[k];
    if (!scene_images.empty() && !s.image.same_shape(scene_images.front())) {
      throw ShapeError(fmt::format("batch {}: scenes in a batch must share a canvas size", batch.id));
    }
    const auto boxes = detect_persons(s);
    const auto portraits = extract_portraits(s, boxes, p, p);
    for (const auto& portrait : portraits.portraits) {
      xs.push_back(portrait.image);
      ys.push_back(make_guidance(portrait.image, config.guidance,
                                 portrait_stream_seed(config.guidance.seed, s.id, portrait.index))
                       .image);
      batch.rects.push_back(portrait.transform->rect);
      batch.owner.push_back(static_cast<std::int64_t>(k));
    }
    batch.targets.push_back(s.persons);
    scene_images.push_back(std::move(s.image));
  }
  if (xs.empty()) throw DataError(fmt::format("batch {}: no persons to train on", batch.id));
  batch.scenes = stack_images(scene_images);
  batch.x = stack_images(xs);
  batch.y = stack_images(ys);
  return batch;
}

torch::Tensor composite_tensor(const torch::Tensor& scenes, const torch::Tensor& portraits,
                               std::span<const PixelRect> rects,
                               std::span<const std::int64_t> owner) {
  if (rects.size() != owner.size() || static_cast<std::int64_t>(rects.size()) != portraits.size(0)) {
    throw ShapeError("composite_tensor: portraits, rects and owners differ in count");
  }
  torch::Tensor out = scenes.clone();
  for (std::size_t i = 0; i < rects.size(); ++i) {
    const auto& r = rects[i];
    const auto region = F::interpolate(
        portraits.slice(0, static_cast<std::int64_t>(i), static_cast<std::int64_t>(i) + 1),
        F::InterpolateFuncOptions()
            .size(std::vector<std::int64_t>{r.height(), r.width()})
            .mode(torch::kBilinear)
            .align_corners(true));
    out.select(0, owner[i]).slice(1, r.y0, r.y1).slice(2, r.x0, r.x1).copy_(region[0]);
  }
  return out;
}

// ---- the joint step ------------------------------------------------------------------

namespace {

class FreezeGuard {
 public:
  explicit FreezeGuard(std::initializer_list<torch::nn::Module*> modules) {
    for (auto* m : modules) {
      for (auto& p : m->parameters()) {
        if (p.requires_grad()) {
          p.requires_grad_(false);
          frozen_.push_back(p);
        }
      }
    }
  }
  ~FreezeGuard() {
    for (auto& p : frozen_) p.requires_grad_(true);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<torch::Tensor> frozen_;
};

double finite_value(const torch::Tensor& t, std::string_view name) {
  const double v = t.item<double>();
  if (!std::isfinite(v)) throw NonFiniteLoss(fmt::format("{} is {}", name, v));
  return v;
}

Archive snapshot(const ModelBundle& models) {
  Archive a;
  models.export_to(a);
  for (auto& [key, t] : a.tensors) t = t.detach().clone();
  return a;
}

}  // namespace

LossReport train_step(TrainState& state, const TrainBatch& batch, const TrainConfig& config,
                      StepEvents* events) {
  ModelBundle& m = state.models;
  m.train(true);
  const double lr = lr_at(config, state.epoch);
  const LossWeights& w = config.weights;
  const int stride = m.config.pose.grid_stride;
  const bool pe_backward = state.epoch >= config.warmup_epochs_without_pe && w.lambda3 > 0;
  StepEvents local;
  StepEvents& ev = events != nullptr ? *events : local;
  ev.clipped.clear();

  auto update = [&](Adam& opt, const char* name, double rate) {
    const double norm = opt.clip_grad_norm(config.clip_norm);
    if (norm > config.clip_norm) {
      ev.clipped.emplace_back(name);
      ++state.clip_events;
    }
    opt.step(rate);
    if (ev.after_update) ev.after_update(name);
  };

  const Archive before = snapshot(m);
  const auto clip_events_before = state.clip_events;
  LossReport r;
  try {
    // (1) privacy-enhanced portraits
    const torch::Tensor yp = m.gx->forward(batch.x);
    const torch::Tensor ypd = yp.detach();

    // (2) D_Y on (y | x) versus (y' | x)
    m.opt_dy.zero_grad();
    const auto l_dy = loss_d_y(m.dy->forward(batch.y, batch.x), m.dy->forward(ypd, batch.x));
    r["L_DY"] = finite_value(l_dy, "L_DY");
    if (!config.freeze_discriminators) {
      l_dy.backward();
      update(m.opt_dy, "dy", lr);
    }

    // (3) privacy-recovered portraits
    const torch::Tensor xp = m.gy->forward(yp);

    // (4) D_X on (x | y') versus (x' | y')
    m.opt_dx.zero_grad();
    const auto l_dx = loss_d_x(m.dx->forward(batch.x, ypd), m.dx->forward(xp.detach(), ypd));
    r["L_DX"] = finite_value(l_dx, "L_DX");
    if (!config.freeze_discriminators) {
      l_dx.backward();
      update(m.opt_dx, "dx", lr);
    }

    // (5) generators and pose estimator against the updated discriminators
    FreezeGuard freeze{m.dx.get(), m.dy.get()};
    m.opt_gx.zero_grad();
    m.opt_gy.zero_grad();
    m.opt_pose.zero_grad();

    const auto l_gx = loss_g_x(m.dy->forward(yp, batch.x));
    const auto l1 = loss_l1_guidance(yp, batch.y);
    const auto l_xy = loss_gated_l1(yp, batch.y, state.threshold);
    const auto l_gy = loss_g_y(m.dx->forward(xp, ypd));
    const auto l_cons = loss_consistency(batch.x, xp);

    PoseLossTerms pe_y, pe_x;
    {
      std::optional<torch::NoGradGuard> no_grad;
      if (!pe_backward) no_grad.emplace();
      const bool through = pe_backward && config.pe_grad_to_generators;
      const auto scenes_y = composite_tensor(batch.scenes, through ? yp : ypd, batch.rects, batch.owner);
      const auto scenes_x =
          composite_tensor(batch.scenes, through ? xp : xp.detach(), batch.rects, batch.owner);
      pe_y = loss_pose(m.pose->forward(scenes_y), batch.targets, stride);
      pe_x = loss_pose(m.pose->forward(scenes_x), batch.targets, stride);
    }

    r["L_GX"] = finite_value(l_gx, "L_GX");
    r["L1"] = finite_value(l1, "L1");
    r["L_XY"] = finite_value(l_xy, "L_XY");
    r["L_GY"] = finite_value(l_gy, "L_GY");
    r["L_consistency"] = finite_value(l_cons, "L_consistency");
    // The pose terms reported are those of the y'-composited scenes plus the
    // x'-composited scenes; per-term values are their sums over both domains.
    r["L_bbox"] = finite_value(pe_y.bbox + pe_x.bbox, "L_bbox");
    r["L_pose"] = finite_value(pe_y.pose + pe_x.pose, "L_pose");
    r["L_obj"] = finite_value(pe_y.obj + pe_x.obj, "L_obj");
    r["L_cls"] = finite_value(pe_y.cls + pe_x.cls, "L_cls");
    r["L_PE_Y"] = finite_value(pe_y.sum, "L_PE_Y");
    r["L_PE_X"] = finite_value(pe_x.sum, "L_PE_X");
    r["L_enhance"] = loss_enhance(r["L_DY"], r["L_GX"], r["L_XY"], w.lambda1);
    r["L_recovery"] = loss_recovery(r["L_GY"], r["L_DX"], r["L_consistency"], w.lambda2);
    r["L_PE"] = loss_pe_total(r["L_PE_X"], r["L_PE_Y"]);
    r["L_total"] = loss_total(r["L_enhance"], r["L_recovery"], r["L_PE"], w.lambda3);

    torch::Tensor objective = l_gx + w.lambda1 * l_xy + l_gy + w.lambda2 * l_cons;
    if (pe_backward) objective = objective + w.lambda3 * (pe_x.sum + pe_y.sum);
    finite_value(objective, "generator objective");
    objective.backward();
    update(m.opt_gx, "gx", lr);
    update(m.opt_gy, "gy", lr);
    if (pe_backward) update(m.opt_pose, "pose", pose_lr_at(config, state.epoch));
  } catch (const NonFiniteLoss& e) {
    for (const auto& mod : modules_of(m)) mod.optimizer->zero_grad();
    m.import_from(before);
    state.clip_events = clip_events_before;
    throw NonFiniteLoss(fmt::format("batch {}: non-finite loss, step aborted ({})", batch.id, e.what()));
  }

  state.recent_l1.push_back(r["L1"]);
  while (state.recent_l1.size() > TrainState::kRecentWindow) state.recent_l1.pop_front();
  state.l1_sum += r["L1"];
  ++state.l1_count;
  ++state.step;
  return r;
}

double mean_guidance_l1(std::span<const Scene> scenes, const TrainConfig& config) {
  double total = 0;
  std::int64_t n = 0;
  const int p = config.portrait_size;
  for (const auto& s : scenes) {
    const auto batch = extract_portraits(s, detect_persons(s), p, p);
    for (const auto& portrait : batch.portraits) {
      const auto g = make_guidance(portrait.image, config.guidance,
                                   portrait_stream_seed(config.guidance.seed, s.id, portrait.index));
      const auto a = portrait.image.data();
      const auto b = g.image.data();
      double sum = 0;
      for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(static_cast<double>(a[i]) - b[i]);
      total += sum / static_cast<double>(a.size());
      ++n;
    }
  }
  if (n == 0) throw DataError("mean_guidance_l1: no portraits");
  return total / static_cast<double>(n);
}

// ---- checkpoints -------------------------------------------------------------------

namespace {
constexpr const char* kStateFormat = "anonypose-train-state";
}

void save_checkpoint(const TrainState& state, const TrainConfig& config,
                     const std::filesystem::path& path) {
  Archive a;
  state.models.export_to(a);
  a.manifest["format"] = kStateFormat;
  a.manifest["models"] = to_json(state.models.config);
  a.manifest["train"] = to_json(config);
  a.manifest["state"] = {{"step", state.step},
                         {"epoch", state.epoch},
                         {"batch_in_epoch", state.batch_in_epoch},
                         {"threshold", state.threshold},
                         {"recent_l1", std::vector<double>(state.recent_l1.begin(), state.recent_l1.end())},
                         {"l1_sum", state.l1_sum},
                         {"l1_count", state.l1_count},
                         {"clip_events", state.clip_events},
                         {"seed", state.seed}};
  write_archive(a, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const Archive a = read_archive(path);
  if (a.manifest.value("format", std::string()) != kStateFormat) {
    throw CheckpointError(fmt::format("'{}' is not a training checkpoint", path.string()));
  }
  LoadedCheckpoint out;
  try {
    out.config = train_config_from(a.manifest.at("train"), "train");
    const ModelConfig models = model_config_from(a.manifest.at("models"), "models");
    const auto& s = a.manifest.at("state");
    out.state.step = s.at("step").get<std::int64_t>();
    out.state.epoch = s.at("epoch").get<int>();
    out.state.batch_in_epoch = s.at("batch_in_epoch").get<int>();
    out.state.threshold = s.at("threshold").get<double>();
    for (double v : s.at("recent_l1").get<std::vector<double>>()) out.state.recent_l1.push_back(v);
    out.state.l1_sum = s.at("l1_sum").get<double>();
    out.state.l1_count = s.at("l1_count").get<std::int64_t>();
    out.state.clip_events = s.at("clip_events").get<std::int64_t>();
    out.state.seed = s.at("seed").get<std::uint64_t>();
    out.state.models = ModelBundle::create(models, out.config.optimizers, 0);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(fmt::format("corrupt checkpoint manifest: {}", e.what()));
  } catch (const ConfigError& e) {
    throw CheckpointError(fmt::format("checkpoint configuration invalid: {}", e.what()));
  }
  out.state.models.import_from(a);
  return out;
}

// ---- fit --------------------------------------------------------------------------

namespace {

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

enum SeedStream : std::uint64_t { kInitStream = 1, kShuffleStream = 2, kBatchStream = 3 };

nlohmann::json report_json(const LossReport& r) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < LossReport::kNames.size(); ++i) {
    j[std::string(LossReport::kNames[i])] = r.values[i];
  }
  return j;
}

}  // namespace

FitResult fit(const ModelConfig& models, const TrainConfig& config, std::span<const Scene> train,
              const FitOptions& options) {
  config.validate();
  models.validate(config.portrait_size);
  if (train.empty()) throw DataError("fit: empty training set");

  FitResult result;
  TrainState& st = result.state;
  if (options.resume_from) {
    LoadedCheckpoint loaded = load_checkpoint(*options.resume_from);
    if (!(loaded.state.models.config == models)) {
      throw ConfigError("models", "differs from the configuration stored in the checkpoint");
    }
    st = std::move(loaded.state);
  } else {
    st.seed = config.seed;
    st.models = ModelBundle::create(models, config.optimizers, derive_seed(config.seed, kInitStream));
    if (options.on_init) options.on_init(st.models);
    st.threshold = config.auto_threshold
                       ? config.threshold_fraction * mean_guidance_l1(train, config)
                       : config.weights.threshold;
  }

  const bool persist = !options.output_dir.empty();
  std::ofstream log;
  if (persist) {
    std::filesystem::create_directories(options.output_dir);
    log.open(options.output_dir / "train_log.jsonl",
             options.resume_from ? std::ios::app : std::ios::trunc);
  }
  auto checkpoint = [&] {
    if (!persist) return;
    save_checkpoint(st, config, options.output_dir / "checkpoint.anpk");
    if (options.keep_epoch_checkpoints) {
      save_checkpoint(st, config,
                      options.output_dir / fmt::format("checkpoint-epoch-{:04d}.anpk", st.epoch));
    }
  };

  const std::size_t n = train.size();
  const std::size_t b = static_cast<std::size_t>(config.batch_size);
  const int batches_per_epoch = static_cast<int>((n + b - 1) / b);
  auto capped = [&] { return config.max_steps > 0 && st.step >= config.max_steps; };

  if (config.epochs == 0) checkpoint();
  while (st.epoch < config.epochs && !capped()) {
    const auto order = permutation(n, derive_seed(st.seed, kShuffleStream, st.epoch));
    while (st.batch_in_epoch < batches_per_epoch && !capped()) {
      const std::size_t begin = static_cast<std::size_t>(st.batch_in_epoch) * b;
      std::vector<Scene> chunk;
      for (std::size_t i = begin; i < std::min(n, begin + b); ++i) chunk.push_back(train[order[i]]);
      const auto t0 = std::chrono::steady_clock::now();
      const TrainBatch batch =
          make_train_batch(chunk, config, derive_seed(st.seed, kBatchStream, st.epoch, st.batch_in_epoch),
                           fmt::format("epoch{}-batch{}", st.epoch, st.batch_in_epoch));
      StepEvents ev;
      const LossReport report = train_step(st, batch, config, &ev);
      ++st.batch_in_epoch;
      const double seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.history.push_back(report);
      if (persist) {
        nlohmann::json line = {{"step", st.step},
                               {"epoch", st.epoch},
                               {"lr", lr_at(config, st.epoch)},
                               {"seconds", seconds},
                               {"losses", report_json(report)},
                               {"clipped", ev.clipped}};
        log << line.dump() << '\n';
        log.flush();
      }
      if (options.on_step) options.on_step(st, report, ev);
    }
    if (st.batch_in_epoch >= batches_per_epoch) {
      ++st.epoch;
      st.batch_in_epoch = 0;
      if (options.eval_every > 0 && options.on_eval && st.epoch % options.eval_every == 0) {
        options.on_eval(st);
      }
    }
    checkpoint();
  }
  return result;
}

std::vector<double> fit_pose(PoseNet& pose, Adam& optimizer, std::span<const Scene> scenes,
                             const TrainConfig& config, const SceneTransform& transform) {
  config.validate();
  if (scenes.empty()) throw DataError("fit_pose: empty training set");
  pose->train(true);
  const std::size_t n = scenes.size();
  const std::size_t b = static_cast<std::size_t>(config.batch_size);
  const std::int64_t per_epoch = static_cast<std::int64_t>((n + b - 1) / b);
  const std::int64_t total = config.max_steps > 0 ? config.max_steps : per_epoch * config.epochs;
  const int stride = pose->config().grid_stride;
  std::vector<double> losses;
  for (std::int64_t step = 0; step < total; ++step) {
    const int epoch = static_cast<int>(step / per_epoch);
    const std::size_t bi = static_cast<std::size_t>(step % per_epoch);
    const auto order = permutation(n, derive_seed(config.seed, kShuffleStream, epoch));
    std::vector<ImageBuffer> images;
    std::vector<std::vector<PersonAnnotation>> targets;
    for (std::size_t i = bi * b; i < std::min(n, (bi + 1) * b); ++i) {
      Scene s = scenes[order[i]];
      if (config.augment) s = augment(s, AugmentParams::sample(derive_seed(config.seed, kBatchStream, step, i)));
      if (transform) s = transform(s);
      images.push_back(std::move(s.image));
      targets.push_back(std::move(s.persons));
    }
    optimizer.zero_grad();
    const auto terms = loss_pose(pose->forward(stack_images(images)), targets, stride);
    const double value = finite_value(terms.sum, "pose loss");
    terms.sum.backward();
    optimizer.clip_grad_norm(config.clip_norm);
    optimizer.step(lr_at(config, epoch));
    losses.push_back(value);
  }
  return losses;
}

}  // namespace anonypose
