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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "anonypose/errors.hpp"
#include "anonypose/guidance.hpp"
#include "anonypose/metrics.hpp"

using namespace anonypose;

namespace {

ImageBuffer random_image(std::uint32_t seed, int h, int w, int c = 3) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  ImageBuffer img(h, w, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) img.set(y, x, k, u(rng));
  return img;
}

// Smooth gradient plus a few shapes, a crude stand-in for natural content.
ImageBuffer natural_image(int h, int w) {
  ImageBuffer img(h, w, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double r = std::hypot(x - w / 3.0, y - h / 2.0);
      img.set(y, x, 0, static_cast<float>(0.5 + 0.4 * std::sin(x * 0.3) * std::cos(y * 0.2)));
      img.set(y, x, 1, r < h / 4.0 ? 0.9f : 0.2f);
      img.set(y, x, 2, static_cast<float>((x / 6 + y / 6) % 2 == 0 ? 0.8 : 0.1));
    }
  }
  return img;
}

double mean(const ImageBuffer& img) {
  double s = 0;
  for (float v : img.data()) s += v;
  return s / static_cast<double>(img.size());
}

}  // namespace

TEST(GaussianTaps, NormalizedWithSigmaHalfRadius) {
  for (int r : {1, 2, 4, 8, 12}) {
    const auto taps = gaussian_taps(r);
    ASSERT_EQ(taps.size(), static_cast<std::size_t>(2 * r + 1));
    double sum = 0, outer = 0;
    for (double t : taps) sum += t;
    for (double a : taps)
      for (double b : taps) outer += a * b;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_NEAR(outer, 1.0, 1e-9);
    const double sigma = r / 2.0;
    EXPECT_NEAR(taps[r + 1] / taps[r], std::exp(-1 / (2 * sigma * sigma)), 1e-12);
  }
  EXPECT_THROW(gaussian_taps(0), ParameterError);
}

TEST(GaussianBlur, ConstantImageUnchanged) {
  const ImageBuffer img(20, 20, 3, 0.5f);
  const ImageBuffer out = gaussian_blur(img, 8);
  for (float v : out.data()) EXPECT_NEAR(v, 0.5f, 1e-6);
}

TEST(GaussianBlur, ImpulseGivesSampledKernel) {
  ImageBuffer img(33, 33, 1, 0.0f);
  img.set(16, 16, 0, 1.0f);
  const ImageBuffer out = gaussian_blur(img, 4);
  const double sigma = 2.0;
  double norm = 0;
  for (int i = -4; i <= 4; ++i)
    for (int j = -4; j <= 4; ++j) norm += std::exp(-(i * i + j * j) / (2 * sigma * sigma));
  for (int y = 0; y < 33; ++y) {
    for (int x = 0; x < 33; ++x) {
      const int dy = y - 16, dx = x - 16;
      const double expected = (std::abs(dx) <= 4 && std::abs(dy) <= 4)
                                  ? std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) / norm
                                  : 0.0;
      EXPECT_NEAR(out.at(y, x, 0), expected, 1e-7) << y << "," << x;
    }
  }
}

TEST(GaussianBlur, PreservesMean) {
  const ImageBuffer img = random_image(4, 32, 32);
  EXPECT_NEAR(mean(gaussian_blur(img, 8)), mean(img), 1e-6);
}

TEST(GaussianBlur, MirrorsEdgePixel) {
  // A 1-D step at the left edge: with the edge pixel mirrored, the column
  // just inside sees copies of itself beyond the border.
  ImageBuffer img(1, 5, 1, 0.0f);
  img.set(0, 0, 0, 1.0f);
  const auto taps = gaussian_taps(1);
  const ImageBuffer out = gaussian_blur(img, 1);
  // Vertical pass on one row mirrors the row onto itself (weights sum to 1).
  EXPECT_NEAR(out.at(0, 0, 0), taps[0] + taps[1], 1e-7);
  EXPECT_NEAR(out.at(0, 1, 0), taps[0], 1e-7);
}

TEST(Pixelate, BlockOneIsIdentity) {
  const ImageBuffer img = random_image(5, 9, 7);
  EXPECT_EQ(pixelate(img, 1), img);
}

TEST(Pixelate, TwoByTwoMean) {
  const ImageBuffer img(2, 2, 1, {0.0f, 0.2f, 0.4f, 0.6f});
  const ImageBuffer out = pixelate(img, 2);
  for (float v : out.data()) EXPECT_NEAR(v, 0.3f, 1e-7);
}

TEST(Pixelate, IdempotentAndRaggedEdges) {
  const ImageBuffer img = random_image(6, 13, 10);
  const ImageBuffer once = pixelate(img, 4);
  EXPECT_EQ(pixelate(once, 4), once);
  // Bottom-right block covers rows 12..12 and cols 8..9 only.
  const float expected = (img.at(12, 8, 0) + img.at(12, 9, 0)) / 2;
  EXPECT_NEAR(once.at(12, 9, 0), expected, 1e-6);
  EXPECT_THROW(pixelate(img, 0), ParameterError);
}

TEST(Noise, DeterministicPerSeed) {
  const ImageBuffer img(16, 16, 3, 0.5f);
  EXPECT_EQ(add_gaussian_noise(img, 0.1, 42), add_gaussian_noise(img, 0.1, 42));
  EXPECT_NE(add_gaussian_noise(img, 0.1, 42), add_gaussian_noise(img, 0.1, 43));
}

TEST(Noise, SampleMomentsMatchSigma) {
  const ImageBuffer img(64, 64, 1, 0.5f);
  const ImageBuffer out = add_gaussian_noise(img, 0.1, 9);
  double s = 0, s2 = 0;
  for (float v : out.data()) {
    s += v - 0.5;
    s2 += (v - 0.5) * (v - 0.5);
  }
  const double n = 4096, m = s / n;
  EXPECT_NEAR(m, 0.0, 0.01);
  EXPECT_NEAR(std::sqrt(s2 / n - m * m), 0.1, 0.01);
}

TEST(Noise, OutputsClampedAndSigmaValidated) {
  const ImageBuffer out = add_gaussian_noise(ImageBuffer(16, 16, 3, 0.95f), 0.5, 1);
  for (float v : out.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_THROW(add_gaussian_noise(out, 0.0, 1), ParameterError);
  EXPECT_THROW(add_gaussian_noise(out, -0.1, 1), ParameterError);
}

TEST(PortraitStreamSeed, DistinctPerPortrait) {
  EXPECT_EQ(portrait_stream_seed(1, "a", 0), portrait_stream_seed(1, "a", 0));
  EXPECT_NE(portrait_stream_seed(1, "a", 0), portrait_stream_seed(1, "a", 1));
  EXPECT_NE(portrait_stream_seed(1, "a", 0), portrait_stream_seed(1, "b", 0));
  EXPECT_NE(portrait_stream_seed(1, "a", 0), portrait_stream_seed(2, "a", 0));
}

TEST(MakeGuidance, DispatchesAndTags) {
  const ImageBuffer img = random_image(7, 24, 24);
  const auto blur = make_guidance(img, GuidanceSpec{GuidanceMethod::kBlur, 8});
  EXPECT_EQ(blur.image, gaussian_blur(img, 8));
  EXPECT_EQ(blur.tag, DomainTag::kDesensitizedY);
  EXPECT_EQ(make_guidance(img, GuidanceSpec{GuidanceMethod::kPixelate, 12}).image, pixelate(img, 12));
  EXPECT_EQ(make_guidance(img, GuidanceSpec{GuidanceMethod::kNoise, 0, 0.1}, 5).image,
            add_gaussian_noise(img, 0.1, 5));
  EXPECT_THROW(make_guidance(img, GuidanceSpec{GuidanceMethod::kNoise, 0, 0.0}), ParameterError);
  EXPECT_THROW(make_guidance(img, GuidanceSpec{GuidanceMethod::kBlur, 0}), ParameterError);
}

TEST(ParseGuidanceMethod, Names) {
  EXPECT_EQ(parse_guidance_method("blur"), GuidanceMethod::kBlur);
  EXPECT_EQ(parse_guidance_method("pixelate"), GuidanceMethod::kPixelate);
  EXPECT_EQ(parse_guidance_method("noise"), GuidanceMethod::kNoise);
  EXPECT_THROW(parse_guidance_method("jpeg"), ParameterError);
}

TEST(Guidance, PreservesShape) {
  const ImageBuffer img = random_image(8, 17, 23, 1);
  for (const auto& out : {gaussian_blur(img, 3), pixelate(img, 5), add_gaussian_noise(img, 0.2, 1)}) {
    EXPECT_TRUE(out.same_shape(img));
  }
}

TEST(Guidance, SsimNonIncreasingInStrength) {
  const ImageBuffer img = natural_image(64, 64);
  double prev = 2;
  for (int r : {2, 4, 8, 12}) {
    const double s = ssim(img, gaussian_blur(img, r));
    EXPECT_LE(s, prev) << "blur r=" << r;
    prev = s;
  }
  prev = 2;
  for (int r : {4, 8, 12, 16}) {
    const double s = ssim(img, pixelate(img, r));
    EXPECT_LE(s, prev) << "pixelate r=" << r;
    prev = s;
  }
}
