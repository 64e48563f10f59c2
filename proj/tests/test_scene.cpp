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

#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "anonypose/datasets.hpp"
#include "anonypose/errors.hpp"
#include "anonypose/nets.hpp"
#include "anonypose/scene.hpp"

using namespace anonypose;

namespace {

ImageBuffer random_image(std::uint32_t seed, int h, int w) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  ImageBuffer img(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.set(y, x, c, u(rng));
  return img;
}

PersonAnnotation person_at(BoundingBox box) {
  PersonAnnotation p;
  p.bbox = box;
  p.keypoint_schema = std::string(kSynth13);
  p.keypoints.assign(13, {(box.x_min + box.x_max) / 2, (box.y_min + box.y_max) / 2,
                          Visibility::kVisible});
  return p;
}

Scene two_person_scene() {
  Scene s;
  s.id = "s";
  s.image = random_image(1, 40, 48);
  s.persons = {person_at({2, 3, 18, 35}), person_at({25, 5, 45, 37})};
  return s;
}

class StubDetector : public PersonDetector {
 public:
  std::string detect(std::span<const std::uint8_t> png) override {
    last_size = png.size();
    return R"([{"box": [1, 1, 9, 9], "confidence": 0.9},
               {"box": [2, 2, 6, 6], "confidence": 0.2},
               {"box": [0, 0, 4, 4], "confidence": 0.5}])";
  }
  std::size_t last_size = 0;
};

}  // namespace

TEST(DetectPersons, GroundTruthReturnsAnnotationBoxes) {
  const Scene s = two_person_scene();
  const auto boxes = detect_persons(s);
  ASSERT_EQ(boxes.size(), 2u);
  EXPECT_EQ(boxes[0], s.persons[0].bbox);
  EXPECT_EQ(boxes[1], s.persons[1].bbox);
  Scene empty = s;
  empty.persons.clear();
  EXPECT_TRUE(detect_persons(empty).empty());
}

TEST(DetectPersons, ExternalDetectorFiltersByConfidence) {
  StubDetector stub;
  DetectOptions opts{DetectionMode::kExternalDetector, &stub, 0.5};
  const auto boxes = detect_persons(two_person_scene(), opts);
  ASSERT_EQ(boxes.size(), 2u);
  EXPECT_EQ(boxes[0], (BoundingBox{1, 1, 9, 9}));
  EXPECT_EQ(boxes[1], (BoundingBox{0, 0, 4, 4}));
  EXPECT_GT(stub.last_size, 0u);
}

TEST(DetectPersons, MissingDetectorNamesFallback) {
  DetectOptions opts{DetectionMode::kExternalDetector, nullptr, 0.5};
  try {
    detect_persons(two_person_scene(), opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("ground_truth"), std::string::npos);
  }
}

TEST(ParseDetections, RejectsMalformedOutput) {
  EXPECT_THROW(parse_detections("{}"), DataError);
  EXPECT_THROW(parse_detections(R"([{"box": [1, 2, 3]}])"), DataError);
  EXPECT_THROW(parse_detections("not json"), DataError);
  EXPECT_TRUE(parse_detections("[]").empty());
}

TEST(ExtractPortraits, FullFrameIsIdentity) {
  Scene s;
  s.id = "f";
  s.image = random_image(2, 16, 16);
  s.persons = {person_at({0, 0, 16, 16})};
  const std::vector<BoundingBox> boxes{{0, 0, 16, 16}};
  const auto batch = extract_portraits(s, boxes, 16, 16);
  ASSERT_EQ(batch.portraits.size(), 1u);
  EXPECT_EQ(batch.portraits[0].image, s.image);
  EXPECT_DOUBLE_EQ(batch.portraits[0].transform->scale_x(), 1.0);
  EXPECT_EQ(batch.portraits[0].annotation.keypoints, s.persons[0].keypoints);
}

TEST(ExtractPortraits, UpscaledKeypointFollowsCornerAlignedMap) {
  Scene s;
  s.id = "u";
  s.image = random_image(3, 64, 64);
  PersonAnnotation p = person_at({0, 0, 64, 64});
  p.keypoints[0] = {10, 10, Visibility::kVisible};
  s.persons = {p};
  const std::vector<BoundingBox> boxes{{0, 0, 64, 64}};
  const auto batch = extract_portraits(s, boxes, 128, 128);
  const Keypoint k = batch.portraits[0].annotation.keypoints[0];
  // Corner-aligned sampling: pixel 63 maps to pixel 127.
  EXPECT_NEAR(k.x, 10.0 * 127 / 63, 1e-12);
  EXPECT_NEAR(k.y, 10.0 * 127 / 63, 1e-12);
  // The keypoint lands on the output pixel that samples source pixel 10.
  EXPECT_NEAR(k.x * 63.0 / 127.0, 10.0, 1e-12);
}

TEST(ExtractPortraits, IndicesAndDegenerateBoxes) {
  const Scene s = two_person_scene();
  std::vector<BoundingBox> boxes{s.persons[0].bbox, {50, 50, 60, 60}, s.persons[1].bbox};
  const auto batch = extract_portraits(s, boxes, 32, 32);
  ASSERT_EQ(batch.portraits.size(), 2u);
  EXPECT_EQ(batch.portraits[0].index, 0);
  EXPECT_EQ(batch.portraits[1].index, 2);
  EXPECT_EQ(batch.warnings.size(), 1u);
  for (const auto& p : batch.portraits) {
    EXPECT_EQ(p.image.height(), 32);
    EXPECT_EQ(p.image.width(), 32);
  }
}

TEST(PortraitTransform, ForwardInverseRoundTrip) {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0, 30);
  const PortraitTransform t{PixelRect{3, 5, 21, 33}, 32, 32};
  for (int i = 0; i < 100; ++i) {
    const Keypoint k{3 + u(rng) * 0.6, 5 + u(rng), Visibility::kVisible};
    const Keypoint back = t.inverse(t.forward(k));
    EXPECT_NEAR(back.x, k.x, 1e-6);
    EXPECT_NEAR(back.y, k.y, 1e-6);
  }
}

TEST(Composite, UnmodifiedPortraitsPreserveBackgroundExactly) {
  const Scene s = two_person_scene();
  const auto boxes = detect_persons(s);
  const auto batch = extract_portraits(s, boxes, 32, 32);
  const ImageBuffer out = composite(s, batch);
  const auto cov = person_coverage(s);
  for (int y = 0; y < s.image.height(); ++y) {
    for (int x = 0; x < s.image.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        if (cov[y * s.image.width() + x] == 0) {
          EXPECT_EQ(out.at(y, x, c), s.image.at(y, x, c));
        } else {
          EXPECT_NEAR(out.at(y, x, c), s.image.at(y, x, c), 0.6);
        }
      }
    }
  }
}

TEST(Composite, BlackPortraitsGiveBlackBoxes) {
  const Scene s = two_person_scene();
  auto batch = extract_portraits(s, detect_persons(s), 32, 32);
  for (auto& p : batch.portraits) p.image = ImageBuffer(32, 32, 3, 0.0f);
  const ImageBuffer out = composite(s, batch);
  const auto cov = person_coverage(s);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 48; ++x)
      for (int c = 0; c < 3; ++c)
        EXPECT_EQ(out.at(y, x, c), cov[y * 48 + x] ? 0.0f : s.image.at(y, x, c));
}

TEST(Composite, LaterIndexWinsOnOverlap) {
  Scene s;
  s.id = "o";
  s.image = ImageBuffer(20, 20, 3, 0.5f);
  s.persons = {person_at({0, 0, 12, 12}), person_at({8, 8, 20, 20})};
  auto batch = extract_portraits(s, detect_persons(s), 16, 16);
  batch.portraits[0].image = ImageBuffer(16, 16, 3, 0.0f);
  batch.portraits[1].image = ImageBuffer(16, 16, 3, 1.0f);
  std::swap(batch.portraits[0], batch.portraits[1]);  // storage order is irrelevant
  const ImageBuffer out = composite(s, batch);
  EXPECT_EQ(out.at(10, 10, 0), 1.0f);
  EXPECT_EQ(out.at(2, 2, 0), 0.0f);
  EXPECT_EQ(out.at(2, 18, 0), 0.5f);
}

TEST(Composite, MissingTransformOrForeignPortraitThrows) {
  const Scene s = two_person_scene();
  auto batch = extract_portraits(s, detect_persons(s), 32, 32);
  auto foreign = batch;
  foreign.portraits[0].scene_id = "other";
  EXPECT_THROW(composite(s, foreign), DataError);
  batch.portraits[1].transform.reset();
  EXPECT_THROW(composite(s, batch), DataError);
}

TEST(Composite, ContextPreservedOnRandomSyntheticScenes) {
  const auto scenes = synth_generate(20, 64, 64, 77);
  for (const auto& s : scenes) {
    auto batch = extract_portraits(s, detect_persons(s), 32, 32);
    for (auto& p : batch.portraits) p.image = random_image(p.index + 11, 32, 32);
    const ImageBuffer out = composite(s, batch);
    const auto cov = person_coverage(s);
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        if (cov[y * 64 + x] != 0) continue;
        for (int c = 0; c < 3; ++c) ASSERT_EQ(out.at(y, x, c), s.image.at(y, x, c)) << s.id;
      }
    }
  }
}

TEST(ResizeBilinear, MatchesCornerAlignedInterpolate) {
  const ImageBuffer img = random_image(5, 13, 21);
  for (auto [h, w] : std::vector<std::pair<int, int>>{{32, 32}, {7, 9}, {13, 40}}) {
    const ImageBuffer ours = resize_bilinear(img, h, w);
    namespace F = torch::nn::functional;
    const auto ref = F::interpolate(to_tensor(img).unsqueeze(0).to(torch::kFloat64),
                                    F::InterpolateFuncOptions()
                                        .size(std::vector<int64_t>{h, w})
                                        .mode(torch::kBilinear)
                                        .align_corners(true))[0];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          EXPECT_NEAR(ours.at(y, x, c), ref[c][y][x].item<double>(), 1e-6);
  }
  EXPECT_EQ(resize_bilinear(img, 13, 21), img);
  EXPECT_THROW(resize_bilinear(img, 0, 5), ShapeError);
}

TEST(BoxIou, KnownValues) {
  EXPECT_DOUBLE_EQ(box_iou({0, 0, 2, 2}, {0, 0, 2, 2}), 1.0);
  EXPECT_DOUBLE_EQ(box_iou({0, 0, 2, 2}, {1, 0, 3, 2}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(box_iou({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0);
}
