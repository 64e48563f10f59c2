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

#include "anonypose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "anonypose/errors.hpp"

namespace anonypose {

namespace {

constexpr double kDynamicRange = 255.0;
constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

void require_same_shape(const ImageBuffer& a, const ImageBuffer& b, std::string_view what) {
  if (!a.same_shape(b)) {
    throw ShapeError(fmt::format("{}: shape {}x{}x{} vs {}x{}x{}", what, a.height(), a.width(),
                                 a.channels(), b.height(), b.width(), b.channels()));
  }
}

std::vector<double> ssim_taps() {
  std::vector<double> taps(kSsimWindow);
  const int half = kSsimWindow / 2;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - half;
    taps[i] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
  }
  const double sum = std::accumulate(taps.begin(), taps.end(), 0.0);
  for (double& t : taps) t /= sum;
  return taps;
}

// Valid-region separable filter of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w,
                                 const std::vector<double>& taps) {
  const int n = static_cast<int>(taps.size());
  const int ow = w - n + 1;
  const int oh = h - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int k = 0; k < n; ++k) acc += taps[k] * plane[static_cast<std::size_t>(y) * w + x + k];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int k = 0; k < n; ++k) acc += taps[k] * rows[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace

double psnr(const ImageBuffer& a, const ImageBuffer& b) {
  require_same_shape(a, b, "psnr");
  const auto da = a.data();
  const auto db = b.data();
  double sse = 0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = static_cast<double>(to_u8(da[i])) - to_u8(db[i]);
    sse += d * d;
  }
  if (sse == 0) return kPsnrIdentical;
  const double mse = sse / static_cast<double>(da.size());
  return 10.0 * std::log10(kDynamicRange * kDynamicRange / mse);
}

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
  require_same_shape(a, b, "ssim");
  const int h = a.height();
  const int w = a.width();
  if (std::min(h, w) < kSsimWindow) {
    throw ShapeError(fmt::format("ssim: image {}x{} smaller than the {}x{} window", h, w,
                                 kSsimWindow, kSsimWindow));
  }
  const double c1 = std::pow(0.01 * kDynamicRange, 2);
  const double c2 = std::pow(0.03 * kDynamicRange, 2);
  const auto taps = ssim_taps();
  const std::size_t n = static_cast<std::size_t>(h) * w;
  double total = 0;
  for (int c = 0; c < a.channels(); ++c) {
    std::vector<double> pa(n), pb(n), paa(n), pbb(n), pab(n);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        pa[i] = to_u8(a.at(y, x, c));
        pb[i] = to_u8(b.at(y, x, c));
        paa[i] = pa[i] * pa[i];
        pbb[i] = pb[i] * pb[i];
        pab[i] = pa[i] * pb[i];
      }
    const auto ma = filter_valid(pa, h, w, taps);
    const auto mb = filter_valid(pb, h, w, taps);
    const auto maa = filter_valid(paa, h, w, taps);
    const auto mbb = filter_valid(pbb, h, w, taps);
    const auto mab = filter_valid(pab, h, w, taps);
    double sum = 0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const double va = maa[i] - ma[i] * ma[i];
      const double vb = mbb[i] - mb[i] * mb[i];
      const double cov = mab[i] - ma[i] * mb[i];
      sum += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) /
             ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
    }
    total += sum / static_cast<double>(ma.size());
  }
  return total / a.channels();
}

bool high_similarity(double psnr_db, double ssim_value) noexcept {
  return psnr_db >= 30.0 && ssim_value >= 0.9;
}

KeypointSigmas KeypointSigmas::for_schema(std::string_view schema_id) {
  if (schema_id == kCoco17) {
    // COCO per-keypoint sigmas; k = 2 sigma.
    static constexpr double sigma[] = {.026, .025, .025, .035, .035, .079, .079, .072, .072,
                                       .062, .062, .107, .107, .087, .087, .089, .089};
    KeypointSigmas s;
    for (double v : sigma) s.k.push_back(2 * v);
    return s;
  }
  const auto& schema = keypoint_schema(schema_id);
  return KeypointSigmas{std::vector<double>(schema.size(), 0.08)};
}

double oks(std::span<const Keypoint> predicted, const PersonAnnotation& truth,
           const KeypointSigmas& sigmas) {
  if (predicted.size() != truth.keypoints.size() || sigmas.k.size() != predicted.size()) {
    throw DataError(fmt::format("oks: schema mismatch ({} predicted, {} truth, {} sigmas)",
                                predicted.size(), truth.keypoints.size(), sigmas.k.size()));
  }
  const double area = truth.bbox.area();
  double sum = 0;
  int labeled = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto& gt = truth.keypoints[i];
    if (!gt.labeled()) continue;
    const double dx = predicted[i].x - gt.x;
    const double dy = predicted[i].y - gt.y;
    const double k = sigmas.k[i];
    sum += std::exp(-(dx * dx + dy * dy) / (2 * area * k * k));
    ++labeled;
  }
  if (labeled == 0) throw DataError("unlabeled instance");
  return sum / labeled;
}

double interpolated_ap(const std::vector<bool>& ranked_tp, int num_ground_truth) {
  if (num_ground_truth <= 0 || ranked_tp.empty()) return 0.0;
  const std::size_t n = ranked_tp.size();
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += ranked_tp[i] ? 1 : 0;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / num_ground_truth;
  }
  for (std::size_t i = n - 1; i > 0; --i) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0;
  double prev_recall = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

ApAr ap_ar_at_50(std::span<const std::vector<ScoredPose>> detections,
                 std::span<const Scene> truth) {
  if (detections.size() != truth.size()) {
    throw DataError(fmt::format("ap_ar_at_50: {} detection lists for {} scenes",
                                detections.size(), truth.size()));
  }
  struct Ranked {
    double score;
    bool tp;
  };
  std::vector<Ranked> ranked;
  ApAr result;
  int total_gt = 0;
  for (std::size_t s = 0; s < truth.size(); ++s) {
    const Scene& scene = truth[s];
    std::vector<const PersonAnnotation*> gts;
    for (const auto& p : scene.persons) {
      if (p.num_labeled() > 0) gts.push_back(&p);
    }
    total_gt += static_cast<int>(gts.size());

    std::vector<std::size_t> order(detections[s].size());
    std::iota(order.begin(), order.end(), 0);
    std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) {
      return detections[s][a].score > detections[s][b].score;
    });
    std::vector<bool> taken(gts.size(), false);
    SceneEvalDetail detail{scene.id, static_cast<int>(gts.size()),
                           static_cast<int>(order.size()), 0};
    for (std::size_t idx : order) {
      const ScoredPose& det = detections[s][idx];
      double best = -1;
      int best_gt = -1;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (taken[g]) continue;
        const double v = oks(det.keypoints, *gts[g],
                             KeypointSigmas::for_schema(gts[g]->keypoint_schema));
        if (v > best) {
          best = v;
          best_gt = static_cast<int>(g);
        }
      }
      const bool tp = best_gt >= 0 && best >= kOksMatchThreshold;
      if (tp) {
        taken[best_gt] = true;
        ++detail.true_positives;
      }
      ranked.push_back({det.score, tp});
    }
    result.details.push_back(detail);
  }
  std::ranges::stable_sort(ranked, [](const Ranked& a, const Ranked& b) {
    return a.score > b.score;
  });
  std::vector<bool> flags;
  flags.reserve(ranked.size());
  int tp = 0;
  for (const auto& r : ranked) {
    flags.push_back(r.tp);
    tp += r.tp ? 1 : 0;
  }
  result.ap = interpolated_ap(flags, total_gt);
  result.ar = total_gt > 0 ? static_cast<double>(tp) / total_gt : 0.0;
  return result;
}

std::string to_json(const EvalResult& result) {
  auto number = [](double v) -> nlohmann::json {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
  };
  nlohmann::json doc;
  doc["psnr"] = number(result.psnr);
  doc["ssim"] = number(result.ssim);
  doc["map50"] = result.map50;
  doc["mar50"] = result.mar50;
  doc["scenes"] = nlohmann::json::array();
  for (const auto& d : result.details) {
    doc["scenes"].push_back({{"id", d.scene_id},
                             {"ground_truth", d.ground_truth},
                             {"detections", d.detections},
                             {"true_positives", d.true_positives}});
  }
  return doc.dump(2);
}

}  // namespace anonypose
