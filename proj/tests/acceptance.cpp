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

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   anonypose_acceptance [--work-dir DIR] [--only 1,2,...] [--reuse]
//
// Criteria 4, 5 and 7 train the full pipeline at desk scale and take a while
// on a single core; their run directories (metrics.json, logs, checkpoints)
// stay under the work directory and can be rendered with `anonypose report`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "anonypose/config.hpp"
#include "anonypose/experiment.hpp"
#include "anonypose/report.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace anonypose;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

// ---- 1: metric oracles -------------------------------------------------------------

Verdict metric_oracles() {
  const auto t0 = Clock::now();
  std::mt19937 rng(101);
  double psnr_err = 0, ssim_err = 0;
  for (int i = 0; i < 50; ++i) {
    const ImageBuffer a = fixtures::random_image(rng, 32, 32, 3);
    const ImageBuffer b = fixtures::perturbed(rng, a, 0.01f + 0.004f * static_cast<float>(i));
    psnr_err = std::max(psnr_err, std::abs(psnr(a, b) - oracle::psnr(a, b)));
    ssim_err = std::max(ssim_err, std::abs(ssim(a, b) - oracle::ssim(a, b)));
  }
  double ap_err = 0;
  const int fixtures_count = 500;
  for (int f = 0; f < fixtures_count; ++f) {
    const auto fx = fixtures::random_ap_fixture(rng);
    const auto want = oracle::brute_force_ap_ar(fx.scores, fx.scene_of_pred, fx.scene_of_gt, fx.oks);
    const ApAr got = ap_ar_at_50(fx.detections, fx.truth);
    ap_err = std::max({ap_err, std::abs(got.ap - want.ap), std::abs(got.ar - want.ar)});
  }
  const double secs = seconds_since(t0);
  return {psnr_err <= 1e-6 && ssim_err <= 1e-6 && ap_err <= 1e-12 && secs < 10.0,
          fmt::format("psnr max |err| {:.2e}, ssim max |err| {:.2e} over 50 pairs; AP/AR max |err| {:.2e} "
                      "over {} brute-force fixtures; {:.1f} s",
                      psnr_err, ssim_err, ap_err, fixtures_count, secs)};
}

// ---- 2: losses -----------------------------------------------------------------------

Verdict loss_correctness() {
  const auto t0 = Clock::now();
  const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
  int failures = 0;
  std::vector<std::string> failed;
  auto check = [&](const std::string& name, bool ok) {
    if (!ok) {
      ++failures;
      failed.push_back(name);
    }
  };
  const double ln2 = std::log(2.0);
  const auto z = torch::zeros({2, 1, 4, 4}, f64);
  check("L_GX(0)=ln2", std::abs(loss_g_x(z).item<double>() - ln2) < 1e-12);
  check("L_GY(0)=ln2", std::abs(loss_g_y(z).item<double>() - ln2) < 1e-12);
  check("L_DY(0,0)=2ln2", std::abs(loss_d_y(z, z).item<double>() - 2 * ln2) < 1e-12);
  check("L_DX(0,0)=2ln2", std::abs(loss_d_x(z, z).item<double>() - 2 * ln2) < 1e-12);

  const auto a = torch::full({1, 3, 4, 4}, 0.5, f64);
  const auto b = torch::full({1, 3, 4, 4}, 0.6, f64);  // L1 = 0.1
  const double l1 = loss_l1_guidance(a, b).item<double>();
  check("L1 closed form", std::abs(l1 - 0.1) < 1e-12);
  {
    auto t = a.clone().set_requires_grad(true);
    const auto below = loss_gated_l1(t, b, 0.2);
    below.backward();
    check("gated L1 below T is exactly 0", below.item<double>() == 0.0);
    check("gated L1 below T has zero gradient", t.grad().abs().max().item<double>() == 0.0);
  }
  check("gated L1 at T equals L1", loss_gated_l1(a, b, l1).item<double>() == l1);
  check("gated L1 above T equals L1", loss_gated_l1(a, b, 0.05).item<double>() == l1);
  check("consistency closed form", std::abs(loss_consistency(a, b).item<double>() - 0.1) < 1e-12);
  check("L_enhance", loss_enhance(1.0, 2.0, 0.5, 100.0) == 53.0);
  check("L_recovery", loss_recovery(1.0, 2.0, 0.5, 10.0) == 8.0);
  check("L_PE", loss_pe_total(1.5, 2.5) == 4.0);
  check("L_total", loss_total(1.0, 2.0, 1.5, 1.0) == 4.5);

  torch::manual_seed(7);
  const auto real = torch::randn({2, 1, 3, 3}, f64);
  const auto fake = torch::randn({2, 1, 3, 3}, f64);
  const auto img = torch::rand({1, 3, 4, 4}, f64);
  const auto target = torch::rand({1, 3, 4, 4}, f64);
  double worst = 0;
  auto fd = [&](const std::string& name, const std::function<torch::Tensor(const torch::Tensor&)>& f,
                const torch::Tensor& at) {
    const double e = oracle::gradient_error(f, at);
    worst = std::max(worst, e);
    check("finite difference " + name, e < 1e-4);
  };
  fd("L_DY", [&](const torch::Tensor& t) { return loss_d_y(real, t); }, fake);
  fd("L_GX", [](const torch::Tensor& t) { return loss_g_x(t); }, fake);
  fd("L_GY", [](const torch::Tensor& t) { return loss_g_y(t); }, fake);
  fd("L_DX", [&](const torch::Tensor& t) { return loss_d_x(t, fake); }, real);
  fd("L1", [&](const torch::Tensor& t) { return loss_l1_guidance(t, target); }, img);
  fd("gated L1", [&](const torch::Tensor& t) { return loss_gated_l1(t, target, 0.01); }, img);
  fd("consistency", [&](const torch::Tensor& t) { return loss_consistency(target, t); }, img);
  fd("L_total",
     [&](const torch::Tensor& t) {
       const auto lg = real + t.mean();
       const auto enh = loss_enhance(loss_d_y(real, lg), loss_g_x(lg), loss_gated_l1(t, target, 0.0), 100.0);
       const auto rec = loss_recovery(loss_g_y(lg), loss_d_x(real, lg), loss_consistency(img, t), 10.0);
       return loss_total(enh, rec, loss_pe_total(t.pow(2).mean(), t.sum() * 0.1), 1.0);
     },
     torch::rand({1, 3, 4, 4}, f64));
  auto stick = [](double x0, double y0, double x1, double y1) {
    PersonAnnotation p;
    p.bbox = {x0, y0, x1, y1};
    p.keypoint_schema = std::string(kSynth13);
    for (int i = 0; i < 13; ++i) {
      const auto vis = i == 12 ? Visibility::kLabeledInvisible : Visibility::kVisible;
      p.keypoints.push_back({x0 + (x1 - x0) * (i % 4) / 4.0, y0 + (y1 - y0) * i / 13.0, vis});
    }
    return p;
  };
  const std::vector<std::vector<PersonAnnotation>> targets{{stick(2, 3, 14, 20), stick(9, 1, 23, 22)},
                                                           {stick(5, 5, 19, 19)}};
  fd("L_pose", [&](const torch::Tensor& t) { return loss_pose(t, targets, 8).sum; },
     torch::randn({2, 45, 3, 3}, f64) * 0.3);

  const double secs = seconds_since(t0);
  std::string detail = fmt::format("{} closed-form and finite-difference checks, worst relative gradient "
                                   "error {:.1e}; {:.1f} s",
                                   failures == 0 ? "all" : "not all", worst, secs);
  for (const auto& f : failed) detail += "; failed: " + f;
  return {failures == 0 && secs < 60.0, detail};
}

// ---- 3: context preservation ---------------------------------------------------------

Verdict context_preservation() {
  const auto t0 = Clock::now();
  const auto scenes = synth_generate(20, 64, 64, 2026);
  ModelConfig mc;
  mc.generator = GeneratorConfig::parse("unet_5");
  mc.discriminator.patch_levels = 2;
  ModelBundle models = ModelBundle::create(mc, OptimizerSettings{}, 3);
  models.gx->eval();
  std::size_t compared = 0, differing = 0, changed_inside = 0;
  for (const auto& scene : scenes) {
    PortraitBatch batch = extract_portraits(scene, detect_persons(scene), 32, 32);
    std::vector<ImageBuffer> imgs;
    for (const auto& p : batch.portraits) imgs.push_back(p.image);
    torch::NoGradGuard ng;
    const auto out = models.gx->forward(stack_images(imgs));
    for (std::size_t i = 0; i < imgs.size(); ++i) batch.portraits[i].image = to_image(out[static_cast<int64_t>(i)]);
    const ImageBuffer enhanced = composite(scene, batch);
    const ImageBuffer& orig = scene.image;
    for (int y = 0; y < orig.height(); ++y) {
      for (int x = 0; x < orig.width(); ++x) {
        bool inside = false;
        for (const auto& p : scene.persons) {
          const PixelRect r = to_pixel_rect(p.bbox, orig.width(), orig.height());
          inside = inside || (x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1);
        }
        for (int c = 0; c < orig.channels(); ++c) {
          const bool same = enhanced.at(y, x, c) == orig.at(y, x, c);
          if (inside) {
            changed_inside += same ? 0 : 1;
          } else {
            ++compared;
            differing += same ? 0 : 1;
          }
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  return {differing == 0 && changed_inside > 0 && secs < 10.0,
          fmt::format("{} of {} background values differ across 20 scenes ({} values inside boxes "
                      "changed); {:.1f} s",
                      differing, compared, changed_inside, secs)};
}

// ---- 6: determinism and resume --------------------------------------------------------

Verdict determinism_and_resume(const fs::path& work) {
  const auto t0 = Clock::now();
  const auto scenes = fixtures::tiny_scenes(40);
  TrainConfig c = fixtures::tiny_train();
  c.max_steps = 10;
  const auto a = fit(fixtures::tiny_models(), c, scenes);
  const auto b = fit(fixtures::tiny_models(), c, scenes);
  const bool streams = a.history.size() == 10 && a.history == b.history;

  TrainConfig two = fixtures::tiny_train();
  two.epochs = 2;
  const auto small = fixtures::tiny_scenes(12);
  const auto full = fit(fixtures::tiny_models(), two, small);
  TrainConfig one = two;
  one.epochs = 1;
  FitOptions save;
  save.output_dir = work / "resume";
  fs::remove_all(save.output_dir);
  fit(fixtures::tiny_models(), one, small, save);
  FitOptions resume;
  resume.resume_from = save.output_dir / "checkpoint.anpk";
  const auto rest = fit(fixtures::tiny_models(), two, small, resume);
  const std::size_t per_epoch = full.history.size() / 2;
  bool resumed = rest.history.size() == per_epoch && per_epoch > 0;
  for (std::size_t i = 0; resumed && i < per_epoch; ++i) {
    resumed = rest.history[i] == full.history[per_epoch + i];
  }
  const double secs = seconds_since(t0);
  return {streams && resumed,
          fmt::format("10-step loss streams {}; resumed epoch 2 ({} steps) {} the uninterrupted run; {:.1f} s",
                      streams ? "bit-identical" : "DIFFER", per_epoch, resumed ? "equals" : "DIFFERS from", secs)};
}

// ---- desk-scale training --------------------------------------------------------------

// The checked-in desk configuration with the guidance swapped in.
ExperimentConfig desk_config(const std::string& name, const GuidanceSpec& guidance, const fs::path& out) {
  ExperimentConfig c = load_experiment_config(fs::path(ANONYPOSE_CONFIG_DIR) / "desk_blur8.json");
  c.name = name;
  c.train.guidance = guidance;
  c.output_dir = out / name;
  return c;
}

struct DeskRun {
  ExperimentResult result;
  double seconds = 0;
};

DeskRun run_desk(const ExperimentConfig& config, bool reuse) {
  const fs::path metrics = config.output_dir / "metrics.json";
  if (reuse && fs::exists(metrics) && fs::exists(config.output_dir / "config.json") &&
      read_json_file(config.output_dir / "config.json") == to_json(config)) {
    std::cerr << "[acceptance] reusing " << metrics << '\n';
    const auto j = read_json_file(metrics);
    return {ExperimentResult::from_json(j), j.value("wall_seconds", 0.0)};
  }
  fs::remove_all(config.output_dir);
  ExperimentHooks hooks;
  hooks.on_phase = [&](const std::string& p) { std::cerr << "[acceptance] " << config.name << ": " << p << '\n'; };
  hooks.on_step = [&](const TrainState& s, const LossReport& r, const StepEvents&) {
    if (s.step % 500 == 0) {
      std::cerr << fmt::format("[acceptance] {}: step {} L1 {:.4f} L_consistency {:.4f}\n", config.name, s.step,
                               r["L1"], r["L_consistency"]);
    }
  };
  const auto t0 = Clock::now();
  DeskRun run{run_experiment(config, hooks), 0};
  run.seconds = seconds_since(t0);
  auto j = read_json_file(metrics);
  j["wall_seconds"] = run.seconds;
  std::ofstream(metrics) << j.dump(2) << '\n';
  return run;
}

double map_of(const ExperimentResult& r, const char* condition) {
  const auto it = r.pose.find(condition);
  return it == r.pose.end() ? std::nan("") : it->second.ap;
}

std::string l1_trend(const ExperimentResult& r) {
  return fmt::format("L1 first-100 mean {:.4f} {} last-100 mean {:.4f}", r.l1_first_mean,
                     r.l1_first_mean > r.l1_tail_mean ? ">" : "<=", r.l1_tail_mean);
}

Verdict desk_training(const DeskRun& run) {
  const ExperimentResult& r = run.result;
  const double pre_o = map_of(r, kPreO), pre_p = map_of(r, kPreP);
  const double joint_p = map_of(r, kJointP), conv_p = map_of(r, kConvP);
  const bool a = pre_o - pre_p >= 0.30;
  const bool b = joint_p - conv_p >= 0.05;
  const bool c_psnr = r.orr.psnr >= r.op.psnr + 5.0;
  const bool c_ssim = r.orr.ssim >= r.op.ssim + 0.15;
  const bool budget = run.seconds <= 1200.0;
  const std::string detail = fmt::format(
      "(a) {} pre,o {:.3f} -> pre,p {:.3f} (drop {:.1f} pts, need >= 30); "
      "(b) {} joint,p {:.3f} vs conv,p {:.3f} (+{:.1f} pts, need >= 5); "
      "(c) {} PSNR(o,r) {:.2f} vs PSNR(o,p) {:.2f} dB (+{:.2f}, need >= 5), "
      "SSIM(o,r) {:.3f} vs SSIM(o,p) {:.3f} (+{:.3f}, need >= 0.15); "
      "{} wall time {:.0f} s (budget 1200 s); {}",
      a ? "pass" : "FAIL", pre_o, pre_p, 100 * (pre_o - pre_p), b ? "pass" : "FAIL", joint_p, conv_p,
      100 * (joint_p - conv_p), c_psnr && c_ssim ? "pass" : "FAIL", r.orr.psnr, r.op.psnr, r.orr.psnr - r.op.psnr,
      r.orr.ssim, r.op.ssim, r.orr.ssim - r.op.ssim, budget ? "pass" : "FAIL", run.seconds, l1_trend(r));
  return {a && b && c_psnr && c_ssim && budget, detail};
}

Verdict guidance_monotonicity(const DeskRun& weak, const DeskRun& strong) {
  const auto& w = weak.result;
  const auto& s = strong.result;
  const bool ssim_drops = s.op.ssim < w.op.ssim;
  const double jw = map_of(w, kJointP), js = map_of(s, kJointP);
  const bool map_ok = js <= jw + 0.02;
  return {ssim_drops && map_ok,
          fmt::format("SSIM(o,p) r=4 {:.3f} vs r=12 {:.3f} ({}); mAP@0.5 joint,p r=4 {:.3f} vs r=12 {:.3f} "
                      "({}, margin 2 pts); {}; {}",
                      w.op.ssim, s.op.ssim, ssim_drops ? "lower at r=12" : "NOT lower at r=12", jw, js,
                      map_ok ? "not higher" : "HIGHER", l1_trend(w), l1_trend(s))};
}

Verdict noise_guidance(const DeskRun& run) {
  const auto& r = run.result;
  const bool finished = r.steps > 0 && std::isfinite(r.op.psnr);
  return {finished,
          fmt::format("ran {} steps to completion; observation: gated L1 tail mean {:.4f} vs 2T = {:.4f}, "
                      "{}; {}",
                      r.steps, r.l1_tail_mean, 2 * r.threshold,
                      r.gated_l1_converged ? "converged below 2T" : "did NOT converge below 2T",
                      l1_trend(r))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anonypose acceptance criteria"};
  std::string work_dir = "acceptance_runs";
  std::vector<int> only;
  bool reuse = false;
  app.add_option("--work-dir", work_dir, "directory for desk-scale runs");
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
  app.add_flag("--reuse", reuse, "reuse finished runs whose config is unchanged");
  CLI11_PARSE(app, argc, argv);
  const fs::path work = fs::absolute(work_dir);
  fs::create_directories(work);
  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int k) { return selected.empty() || selected.count(k) > 0; };

  int failed = 0;
  auto report = [&](int k, const std::string& title, const Verdict& v) {
    const std::string line = fmt::format("[{}] criterion {}: {}: {}", v.pass ? "PASS" : "FAIL", k, title, v.detail);
    std::cout << line << std::endl;
    std::ofstream(work / "acceptance.txt", std::ios::app) << line << '\n';
    failed += v.pass ? 0 : 1;
  };
  std::ofstream(work / "acceptance.txt", std::ios::trunc);

  try {
    if (wanted(1)) report(1, "metric oracle equivalence", metric_oracles());
    if (wanted(2)) report(2, "loss correctness", loss_correctness());
    if (wanted(3)) report(3, "context preservation", context_preservation());
    if (wanted(6)) report(6, "determinism and resume", determinism_and_resume(work));

    std::vector<RunRecord> records;
    const fs::path main_pose = work / "desk-blur8" / "pose_pretrained.anpk";
    if (wanted(4)) {
      const DeskRun main = run_desk(desk_config("desk-blur8", {GuidanceMethod::kBlur, 8}, work), reuse);
      records.push_back({main.result.name, main.result});
      report(4, "desk-scale joint training", desk_training(main));
    }
    // The remaining runs share the estimator pretrained by the main run.
    auto variant = [&](const std::string& name, const GuidanceSpec& g) {
      ExperimentConfig c = desk_config(name, g, work);
      if (fs::exists(main_pose)) c.pose.pretrained_from = main_pose;
      c.pose.conventional_baseline = false;
      DeskRun run = run_desk(c, reuse);
      records.push_back({run.result.name, run.result});
      return run;
    };
    if (wanted(5)) {
      const DeskRun weak = variant("desk-blur4", {GuidanceMethod::kBlur, 4});
      const DeskRun strong = variant("desk-blur12", {GuidanceMethod::kBlur, 12});
      report(5, "guidance-strength monotonicity", guidance_monotonicity(weak, strong));
    }
    if (wanted(7)) {
      GuidanceSpec noise{GuidanceMethod::kNoise};
      noise.sigma = 0.1;
      report(7, "noise guidance", noise_guidance(variant("desk-noise", noise)));
    }
    if (!records.empty()) write_report(build_report(records), work / "report");
  } catch (const std::exception& e) {
    std::cout << "[FAIL] acceptance aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failed == 0 ? "all selected criteria passed" : fmt::format("{} criteria failed", failed))
            << std::endl;
  return failed == 0 ? 0 : 1;
}
