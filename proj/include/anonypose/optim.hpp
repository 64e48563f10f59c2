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
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace anonypose {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW) when positive

  friend bool operator==(const AdamOptions&, const AdamOptions&) = default;
};

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

NamedTensors named_parameters(const torch::nn::Module& module);

// Adam / AdamW over a fixed list of named parameters. State is exposed by
// name so it can be archived and restored exactly.
class Adam {
 public:
  Adam() = default;
  Adam(NamedTensors params, AdamOptions options);

  // Applies one update with learning rate `lr`. Parameters without a gradient
  // are left untouched; returns false when no parameter had one.
  bool step(double lr);
  void zero_grad();

  // Rescales gradients so their global L2 norm is at most `max_norm`;
  // returns the norm before clipping.
  double clip_grad_norm(double max_norm);

  const AdamOptions& options() const noexcept { return options_; }
  std::int64_t steps() const noexcept { return steps_; }
  const NamedTensors& params() const noexcept { return params_; }

  // "m/<name>" and "v/<name>" moments plus the step counter.
  std::map<std::string, torch::Tensor> state() const;
  void load_state(const std::map<std::string, torch::Tensor>& state, std::int64_t steps);

 private:
  NamedTensors params_;
  std::vector<torch::Tensor> m_;
  std::vector<torch::Tensor> v_;
  AdamOptions options_;
  std::int64_t steps_ = 0;
};

}  // namespace anonypose
