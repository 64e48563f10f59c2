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

#include "anonypose/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include <fmt/format.h>

#include "anonypose/errors.hpp"
#include "anonypose/metrics.hpp"
#include "anonypose/nets.hpp"

namespace anonypose {

namespace F = torch::nn::functional;

namespace {

void require_finite(const torch::Tensor& t, std::string_view what) {
  if (!torch::isfinite(t.detach()).all().item<bool>()) {
    throw NonFiniteLoss(fmt::format("{}: non-finite logits", what));
  }
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, std::string_view what) {
  if (!a.sizes().equals(b.sizes())) {
    throw ShapeError(fmt::format("{}: shape {} vs {}", what, c10::str(a.sizes()), c10::str(b.sizes())));
  }
}

torch::Tensor discriminator_loss(const torch::Tensor& real, const torch::Tensor& fake,
                                 std::string_view what) {
  require_same_shape(real, fake, what);
  require_finite(real, what);
  require_finite(fake, what);
  return F::softplus(-real).mean() + F::softplus(fake).mean();
}

torch::Tensor generator_loss(const torch::Tensor& fake, std::string_view what) {
  require_finite(fake, what);
  return F::softplus(-fake).mean();
}

}  // namespace

void LossWeights::validate() const {
  for (double v : {lambda1, lambda2, lambda3, threshold}) {
    if (!std::isfinite(v) || v < 0) {
      throw ParameterError("loss weights and threshold must be finite and non-negative");
    }
  }
}

torch::Tensor loss_d_y(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  return discriminator_loss(real_logits, fake_logits, "loss_d_y");
}

torch::Tensor loss_g_x(const torch::Tensor& fake_logits) {
  return generator_loss(fake_logits, "loss_g_x");
}

torch::Tensor loss_l1_guidance(const torch::Tensor& y_fake, const torch::Tensor& y_guidance) {
  require_same_shape(y_fake, y_guidance, "loss_l1_guidance");
  return (y_fake - y_guidance).abs().mean();
}

torch::Tensor loss_gated_l1(const torch::Tensor& y_fake, const torch::Tensor& y_guidance,
                            double threshold) {
  if (!(threshold >= 0)) throw ParameterError("loss_gated_l1: threshold must be >= 0");
  torch::Tensor l1 = loss_l1_guidance(y_fake, y_guidance);
  if (l1.item<double>() >= threshold) return l1;
  return l1 * 0.0;
}

torch::Tensor loss_g_y(const torch::Tensor& fake_logits) {
  return generator_loss(fake_logits, "loss_g_y");
}

torch::Tensor loss_d_x(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  return discriminator_loss(real_logits, fake_logits, "loss_d_x");
}

torch::Tensor loss_consistency(const torch::Tensor& x, const torch::Tensor& x_cycled) {
  require_same_shape(x, x_cycled, "loss_consistency");
  return (x_cycled - x).abs().mean();
}

PoseLossTerms loss_pose(const torch::Tensor& predictions,
                        std::span<const std::vector<PersonAnnotation>> targets, int stride) {
  if (predictions.dim() != 4 || (predictions.size(1) - 6) % 3 != 0) {
    throw ShapeError("loss_pose: predictions must be [B, 6 + 3K, rows, cols]");
  }
  const auto batch = predictions.size(0);
  if (static_cast<std::size_t>(batch) != targets.size()) {
    throw ShapeError(fmt::format("loss_pose: {} predictions for {} target lists", batch,
                                 targets.size()));
  }
  require_finite(predictions, "loss_pose");
  const int k = static_cast<int>((predictions.size(1) - 6) / 3);
  const int rows = static_cast<int>(predictions.size(2));
  const int cols = static_cast<int>(predictions.size(3));
  const auto opts = predictions.options().requires_grad(false);

  // Positive-cell assignment; a later person overwrites an earlier one.
  std::map<std::tuple<int64_t, int, int>, const PersonAnnotation*> owner;
  for (int64_t b = 0; b < batch; ++b) {
    for (const auto& person : targets[b]) {
      if (static_cast<int>(person.keypoints.size()) != k) {
        throw DataError(fmt::format("loss_pose: person with {} keypoints for a K={} head",
                                    person.keypoints.size(), k));
      }
      const auto& box = person.bbox;
      const CellIndex c = assign_cell((box.x_min + box.x_max) / 2, (box.y_min + box.y_max) / 2,
                                      stride, rows, cols);
      owner[{b, c.row, c.col}] = &person;
    }
  }

  torch::Tensor obj_target = torch::zeros({batch, rows, cols}, opts);
  const auto positives = static_cast<int64_t>(owner.size());
  PoseLossTerms terms;
  const torch::Tensor zero = predictions.sum() * 0.0;
  if (positives == 0) {
    terms.bbox = zero;
    terms.pose = zero;
    terms.cls = zero;
    terms.obj = F::binary_cross_entropy_with_logits(predictions.select(1, cell::kObj), obj_target);
    terms.sum = terms.bbox + terms.pose + terms.obj + terms.cls;
    return terms;
  }

  std::vector<int64_t> bi, ri, ci;
  std::vector<double> gt_box, origin, gt_kp, kp_mask, vis_target, vis_mask, kp_weight;
  for (const auto& [key, person] : owner) {
    const auto [b, r, c] = key;
    bi.push_back(b);
    ri.push_back(r);
    ci.push_back(c);
    obj_target.index_put_({b, r, c}, 1.0);
    const auto& box = person->bbox;
    gt_box.insert(gt_box.end(), {box.x_min, box.y_min, box.x_max, box.y_max});
    origin.insert(origin.end(), {(c + 0.5) * stride, (r + 0.5) * stride});
    const auto sigmas = KeypointSigmas::for_schema(person->keypoint_schema);
    const double area = std::max(box.area(), 1e-9);
    for (int i = 0; i < k; ++i) {
      const auto& kp = person->keypoints[i];
      gt_kp.insert(gt_kp.end(), {kp.x, kp.y});
      kp_mask.push_back(kp.visibility == Visibility::kVisible ? 1.0 : 0.0);
      vis_mask.push_back(kp.labeled() ? 1.0 : 0.0);
      vis_target.push_back(kp.visibility == Visibility::kVisible ? 1.0 : 0.0);
      kp_weight.push_back(1.0 / (2.0 * area * sigmas.k[i] * sigmas.k[i]));
    }
  }
  auto tensor = [&](const std::vector<double>& v, std::vector<int64_t> shape) {
    return torch::tensor(v, torch::kFloat64).reshape(shape).to(opts.dtype());
  };
  const auto idx = [](const std::vector<int64_t>& v) { return torch::tensor(v, torch::kLong); };
  const torch::Tensor cells = predictions.permute({0, 2, 3, 1}).index({idx(bi), idx(ri), idx(ci)});

  const torch::Tensor gtb = tensor(gt_box, {positives, 4});
  const torch::Tensor org = tensor(origin, {positives, 2});
  const double s = stride;

  // Box IoU.
  const auto pcx = org.select(1, 0) + cells.select(1, cell::kBoxX) * s;
  const auto pcy = org.select(1, 1) + cells.select(1, cell::kBoxY) * s;
  const auto pw = torch::exp(cells.select(1, cell::kBoxW).clamp(-10, 10)) * s;
  const auto ph = torch::exp(cells.select(1, cell::kBoxH).clamp(-10, 10)) * s;
  const auto px0 = pcx - pw / 2, px1 = pcx + pw / 2, py0 = pcy - ph / 2, py1 = pcy + ph / 2;
  const auto gx0 = gtb.select(1, 0), gy0 = gtb.select(1, 1), gx1 = gtb.select(1, 2),
             gy1 = gtb.select(1, 3);
  const auto iw = (torch::min(px1, gx1) - torch::max(px0, gx0)).clamp_min(0);
  const auto ih = (torch::min(py1, gy1) - torch::max(py0, gy0)).clamp_min(0);
  const auto inter = iw * ih;
  const auto uni = pw * ph + (gx1 - gx0) * (gy1 - gy0) - inter;
  terms.bbox = (1.0 - inter / uni).mean();

  // Keypoints: e_i = d_i^2 / (2 s^2 k_i^2) on visible keypoints.
  const auto kp = cells.slice(1, cell::kFirstKeypoint).reshape({positives, k, 3});
  const auto gkp = tensor(gt_kp, {positives, k, 2});
  const auto kx = org.select(1, 0).unsqueeze(1) + kp.select(2, 0) * s;
  const auto ky = org.select(1, 1).unsqueeze(1) + kp.select(2, 1) * s;
  const auto d2 = (kx - gkp.select(2, 0)).pow(2) + (ky - gkp.select(2, 1)).pow(2);
  const auto mask = tensor(kp_mask, {positives, k});
  const auto weight = tensor(kp_weight, {positives, k});
  const auto per_person = (d2 * weight * mask).sum(1) / mask.sum(1).clamp_min(1.0);
  terms.pose = per_person.mean();

  // Objectness over all cells plus visibility of labeled keypoints.
  terms.obj = F::binary_cross_entropy_with_logits(predictions.select(1, cell::kObj), obj_target);
  const auto vmask = tensor(vis_mask, {positives, k});
  if (vmask.sum().item<double>() > 0) {
    const auto vis_bce = F::binary_cross_entropy_with_logits(
        kp.select(2, 2), tensor(vis_target, {positives, k}),
        F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone));
    terms.obj = terms.obj + (vis_bce * vmask).sum() / vmask.sum();
  }

  terms.cls = F::binary_cross_entropy_with_logits(cells.select(1, cell::kCls),
                                                  torch::ones({positives}, opts));
  terms.sum = terms.bbox + terms.pose + terms.obj + terms.cls;
  return terms;
}

double& LossReport::operator[](std::string_view name) {
  const auto it = std::ranges::find(kNames, name);
  if (it == kNames.end()) throw ParameterError(fmt::format("unknown loss term '{}'", name));
  return values[static_cast<std::size_t>(it - kNames.begin())];
}

double LossReport::operator[](std::string_view name) const {
  return const_cast<LossReport&>(*this)[name];
}

bool LossReport::all_finite() const noexcept {
  return std::ranges::all_of(values, [](double v) { return std::isfinite(v); });
}

double LossReport::composite_residual(const LossWeights& w) const {
  const auto& r = *this;
  const double enhance = loss_enhance(r["L_DY"], r["L_GX"], r["L_XY"], w.lambda1);
  const double recovery = loss_recovery(r["L_GY"], r["L_DX"], r["L_consistency"], w.lambda2);
  const double pe = loss_pe_total(r["L_PE_X"], r["L_PE_Y"]);
  const double total = loss_total(r["L_enhance"], r["L_recovery"], r["L_PE"], w.lambda3);
  return std::max({std::abs(enhance - r["L_enhance"]), std::abs(recovery - r["L_recovery"]),
                   std::abs(pe - r["L_PE"]), std::abs(total - r["L_total"])});
}

}  // namespace anonypose
