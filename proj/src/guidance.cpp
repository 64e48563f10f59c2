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

#include "anonypose/guidance.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "anonypose/errors.hpp"

namespace anonypose {

namespace {

// Half-sample symmetric reflection: ... x1 x0 | x0 x1 ... x(n-1) | x(n-1) ...
int reflect_index(int i, int n) {
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string_view to_string(GuidanceMethod method) {
  switch (method) {
    case GuidanceMethod::kBlur: return "blur";
    case GuidanceMethod::kPixelate: return "pixelate";
    case GuidanceMethod::kNoise: return "noise";
  }
  return "unknown";
}

GuidanceMethod parse_guidance_method(std::string_view name) {
  if (name == "blur") return GuidanceMethod::kBlur;
  if (name == "pixelate") return GuidanceMethod::kPixelate;
  if (name == "noise") return GuidanceMethod::kNoise;
  throw ParameterError(fmt::format("unknown guidance method '{}'", name));
}

void GuidanceSpec::validate() const {
  switch (method) {
    case GuidanceMethod::kBlur:
    case GuidanceMethod::kPixelate:
      if (radius < 1) {
        throw ParameterError(fmt::format("{}: r must be >= 1, got {}", to_string(method), radius));
      }
      return;
    case GuidanceMethod::kNoise:
      if (!(sigma > 0) || !std::isfinite(sigma)) {
        throw ParameterError(fmt::format("noise: sigma must be > 0, got {}", sigma));
      }
      return;
  }
  throw ParameterError("unknown guidance method");
}

std::string GuidanceSpec::describe() const {
  if (method == GuidanceMethod::kNoise) return fmt::format("noise sigma={}", sigma);
  return fmt::format("{} r={}", to_string(method), radius);
}

std::vector<double> gaussian_taps(int radius) {
  if (radius < 1) throw ParameterError(fmt::format("blur: r must be >= 1, got {}", radius));
  const double sigma = radius / 2.0;
  std::vector<double> taps(2 * radius + 1);
  double sum = 0;
  for (int k = -radius; k <= radius; ++k) {
    taps[k + radius] = std::exp(-(k * k) / (2 * sigma * sigma));
    sum += taps[k + radius];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

ImageBuffer gaussian_blur(const ImageBuffer& image, int radius) {
  const auto taps = gaussian_taps(radius);
  const int h = image.height();
  const int w = image.width();
  const int ch = image.channels();
  std::vector<double> tmp(image.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k) {
          acc += taps[k + radius] * image.at(y, reflect_index(x + k, w), c);
        }
        tmp[(static_cast<std::size_t>(y) * w + x) * ch + c] = acc;
      }
    }
  }
  std::vector<float> out(image.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k) {
          acc += taps[k + radius] *
                 tmp[(static_cast<std::size_t>(reflect_index(y + k, h)) * w + x) * ch + c];
        }
        out[(static_cast<std::size_t>(y) * w + x) * ch + c] = static_cast<float>(acc);
      }
    }
  }
  return ImageBuffer(h, w, ch, std::move(out));
}

ImageBuffer pixelate(const ImageBuffer& image, int block) {
  if (block < 1) throw ParameterError(fmt::format("pixelate: r must be >= 1, got {}", block));
  const int h = image.height();
  const int w = image.width();
  const int ch = image.channels();
  ImageBuffer out(h, w, ch);
  for (int by = 0; by < h; by += block) {
    for (int bx = 0; bx < w; bx += block) {
      const int ey = std::min(by + block, h);
      const int ex = std::min(bx + block, w);
      const double count = static_cast<double>(ey - by) * (ex - bx);
      for (int c = 0; c < ch; ++c) {
        double sum = 0;
        for (int y = by; y < ey; ++y)
          for (int x = bx; x < ex; ++x) sum += image.at(y, x, c);
        const auto mean = static_cast<float>(sum / count);
        for (int y = by; y < ey; ++y)
          for (int x = bx; x < ex; ++x) out.set(y, x, c, mean);
      }
    }
  }
  return out;
}

ImageBuffer add_gaussian_noise(const ImageBuffer& image, double sigma,
                               std::uint64_t seed) {
  if (!(sigma > 0) || !std::isfinite(sigma)) {
    throw ParameterError(fmt::format("noise: sigma must be > 0, got {}", sigma));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<float> out(image.size());
  const auto src = image.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(src[i] + noise(rng));  // clamped by ImageBuffer
  }
  return ImageBuffer(image.height(), image.width(), image.channels(), std::move(out));
}

std::uint64_t portrait_stream_seed(std::uint64_t seed, std::string_view scene_id,
                                   int portrait_index) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ fnv1a(scene_id));
  return splitmix64(h ^ static_cast<std::uint64_t>(portrait_index));
}

TaggedImage make_guidance(const ImageBuffer& image, const GuidanceSpec& spec,
                          std::uint64_t stream_seed) {
  spec.validate();
  switch (spec.method) {
    case GuidanceMethod::kBlur:
      return {gaussian_blur(image, spec.radius), DomainTag::kDesensitizedY};
    case GuidanceMethod::kPixelate:
      return {pixelate(image, spec.radius), DomainTag::kDesensitizedY};
    case GuidanceMethod::kNoise:
      return {add_gaussian_noise(image, spec.sigma, stream_seed), DomainTag::kDesensitizedY};
  }
  throw ParameterError("unknown guidance method");
}

}  // namespace anonypose
