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

#include "anonypose/optim.hpp"

#include <cmath>

#include <fmt/format.h>

#include "anonypose/errors.hpp"

namespace anonypose {

NamedTensors named_parameters(const torch::nn::Module& module) {
  NamedTensors out;
  for (const auto& item : module.named_parameters(/*recurse=*/true)) {
    out.emplace_back(item.key(), item.value());
  }
  return out;
}

Adam::Adam(NamedTensors params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.beta1 >= 0 && options_.beta1 < 1 && options_.beta2 >= 0 &&
        options_.beta2 < 1 && options_.eps > 0 && options_.weight_decay >= 0)) {
    throw ParameterError("invalid Adam options");
  }
  for (const auto& [name, p] : params_) {
    m_.push_back(torch::zeros_like(p));
    v_.push_back(torch::zeros_like(p));
  }
}

bool Adam::step(double lr) {
  torch::NoGradGuard no_grad;
  bool any = false;
  for (const auto& [name, p] : params_) any = any || p.grad().defined();
  if (!any) return false;
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].second;
    const auto& g = p.grad();
    if (!g.defined()) continue;
    if (options_.weight_decay > 0) p.mul_(1.0 - lr * options_.weight_decay);
    m_[i].mul_(b1).add_(g, 1.0 - b1);
    v_[i].mul_(b2).addcmul_(g, g, 1.0 - b2);
    const auto denom = (v_[i] / c2).sqrt_().add_(options_.eps);
    p.addcdiv_(m_[i], denom, -lr / c1);
  }
  return true;
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) {
    if (p.grad().defined()) p.mutable_grad() = torch::Tensor();
  }
}

double Adam::clip_grad_norm(double max_norm) {
  torch::NoGradGuard no_grad;
  double total = 0;
  for (const auto& [name, p] : params_) {
    if (p.grad().defined()) total += p.grad().to(torch::kFloat64).pow(2).sum().item<double>();
  }
  const double norm = std::sqrt(total);
  if (norm > max_norm) {
    const double scale = max_norm / (norm + 1e-6);
    for (auto& [name, p] : params_) {
      if (p.grad().defined()) p.mutable_grad().mul_(scale);
    }
  }
  return norm;
}

std::map<std::string, torch::Tensor> Adam::state() const {
  std::map<std::string, torch::Tensor> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out["m/" + params_[i].first] = m_[i];
    out["v/" + params_[i].first] = v_[i];
  }
  return out;
}

void Adam::load_state(const std::map<std::string, torch::Tensor>& state, std::int64_t steps) {
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    for (auto [prefix, dst] : {std::pair{"m/", &m_[i]}, std::pair{"v/", &v_[i]}}) {
      const auto it = state.find(prefix + params_[i].first);
      if (it == state.end()) {
        throw CheckpointError(fmt::format("optimizer state missing '{}{}'", prefix,
                                          params_[i].first));
      }
      if (!it->second.sizes().equals(dst->sizes())) {
        throw CheckpointError(fmt::format("optimizer state '{}{}' has the wrong shape", prefix,
                                          params_[i].first));
      }
      dst->copy_(it->second);
    }
  }
  steps_ = steps;
}

}  // namespace anonypose
