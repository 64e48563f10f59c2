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
#include <string>
#include <string_view>
#include <vector>

#include "anonypose/domain.hpp"

namespace anonypose {

enum class GuidanceMethod : std::uint8_t { kBlur, kPixelate, kNoise };

std::string_view to_string(GuidanceMethod method);
// Throws ParameterError for unknown names.
GuidanceMethod parse_guidance_method(std::string_view name);

// Conventional desensitization operator and its strength. `radius` is the
// blur kernel radius or the pixel-block side; `sigma` is the noise stdev.
struct GuidanceSpec {
  GuidanceMethod method = GuidanceMethod::kBlur;
  int radius = 8;
  double sigma = 0.1;
  std::uint64_t seed = 0;

  // Throws ParameterError when the strength is out of range for the method.
  void validate() const;
  std::string describe() const;

  friend bool operator==(const GuidanceSpec&, const GuidanceSpec&) = default;
};

// Normalized 1-D Gaussian taps for radius r (sigma = r / 2, 2r + 1 taps).
// The 2-D kernel is the outer product of these taps with itself.
std::vector<double> gaussian_taps(int radius);

// Separable Gaussian blur, sigma = r / 2, support (2r + 1)^2, with
// half-sample symmetric borders (the edge pixel is mirrored).
ImageBuffer gaussian_blur(const ImageBuffer& image, int radius);

// r x r block means anchored at the top-left; ragged edge blocks average
// over their actual extent.
ImageBuffer pixelate(const ImageBuffer& image, int block);

// clamp(x + n, 0, 1) with n ~ N(0, sigma^2) drawn from a stream seeded by
// `seed`.
ImageBuffer add_gaussian_noise(const ImageBuffer& image, double sigma,
                               std::uint64_t seed);

// Seed for the noise stream of one portrait.
std::uint64_t portrait_stream_seed(std::uint64_t seed, std::string_view scene_id,
                                   int portrait_index);

// y = A(x). `stream_seed` only matters for noise guidance.
TaggedImage make_guidance(const ImageBuffer& image, const GuidanceSpec& spec,
                          std::uint64_t stream_seed = 0);

}  // namespace anonypose
