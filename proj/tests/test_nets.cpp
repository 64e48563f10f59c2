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

#include <gtest/gtest.h>
#include <torch/torch.h>

#include "anonypose/errors.hpp"
#include "anonypose/nets.hpp"
#include "anonypose/objectives.hpp"

using namespace anonypose;

namespace {

PersonAnnotation stick(double x0, double y0, double x1, double y1) {
  PersonAnnotation p;
  p.bbox = {x0, y0, x1, y1};
  p.keypoint_schema = std::string(kSynth13);
  for (int i = 0; i < 13; ++i) {
    p.keypoints.push_back({x0 + (x1 - x0) * ((i * 7) % 13) / 13.0, y0 + (y1 - y0) * i / 13.0,
                           i % 5 == 4 ? Visibility::kLabeledInvisible : Visibility::kVisible});
  }
  return p;
}

void expect_all_gradients_nonzero(const torch::nn::Module& module, const std::string& what) {
  for (const auto& item : module.named_parameters()) {
    const torch::Tensor& grad = item.value().grad();
    ASSERT_TRUE(grad.defined()) << what << ": " << item.key() << " has no gradient";
    EXPECT_GT(grad.abs().sum().item<double>(), 0.0) << what << ": " << item.key();
  }
}

}  // namespace

TEST(GeneratorConfig, ParsesBackboneNames) {
  EXPECT_EQ(GeneratorConfig::parse("unet_7").depth, 7);
  EXPECT_EQ(GeneratorConfig::parse("resnet_9").family, BackboneFamily::kResNet);
  EXPECT_EQ(GeneratorConfig::parse("unet_8").backbone_name(), "unet_8");
  EXPECT_EQ(GeneratorConfig::parse("unet_7").required_multiple(), 128);
  EXPECT_THROW(GeneratorConfig::parse("vgg_16"), ParameterError);
  EXPECT_THROW(GeneratorConfig::parse("unet_x"), ParameterError);
  EXPECT_THROW(GeneratorConfig::parse("unet_12"), ParameterError);
}

TEST(Generator, UNet7PreservesShapeAndRange) {
  torch::manual_seed(0);
  Generator g(GeneratorConfig::parse("unet_7"));
  const auto out = g->forward(torch::rand({1, 3, 128, 128}));
  EXPECT_EQ(out.sizes(), (std::vector<int64_t>{1, 3, 128, 128}));
  EXPECT_GE(out.min().item<float>(), 0.0f);
  EXPECT_LE(out.max().item<float>(), 1.0f);
}

TEST(Generator, DivisibilityViolationNamesMultiple) {
  Generator g(GeneratorConfig::parse("unet_7"));
  try {
    g->forward(torch::rand({1, 3, 96, 96}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("128"), std::string::npos);
  }
}

TEST(Generator, ResNetShapes) {
  for (const char* name : {"resnet_6", "resnet_9"}) {
    Generator g(GeneratorConfig::parse(name));
    EXPECT_EQ(g->forward(torch::rand({2, 3, 32, 32})).sizes(), (std::vector<int64_t>{2, 3, 32, 32}));
  }
}

TEST(Generator, DeterministicGivenSeed) {
  auto run = [] {
    torch::manual_seed(5);
    Generator g(GeneratorConfig::parse("unet_5"));
    g->eval();
    torch::manual_seed(6);
    return g->forward(torch::rand({2, 3, 32, 32}));
  };
  EXPECT_TRUE(torch::equal(run(), run()));
}

TEST(Generator, UNet7ParameterCountMatchesHandCount) {
  // Widths per level at base 16: 16, 32, 64, 128, 128, 128, 128. Kernels are
  // 4x4; only the outermost and innermost down convs and the outermost up
  // conv carry a bias, every other conv feeds an affine instance norm.
  const std::int64_t k = 16;
  const std::int64_t down = (3 * 16 * k + 16) + 16 * 32 * k + 32 * 64 * k + 64 * 128 * k +
                            128 * 128 * k * 2 + (128 * 128 * k + 128);
  const std::int64_t down_norm = 2 * (32 + 64 + 128 + 128 + 128);
  const std::int64_t up = 128 * 128 * k + 256 * 128 * k * 2 + 256 * 64 * k + 128 * 32 * k +
                          64 * 16 * k + (32 * 3 * k + 3);
  const std::int64_t up_norm = 2 * (128 + 128 + 128 + 64 + 32 + 16);
  Generator g(GeneratorConfig::parse("unet_7"));
  EXPECT_EQ(count_parameters(*g), down + down_norm + up + up_norm);
  EXPECT_EQ(count_parameters(*g), 2'617'651);
}

TEST(Generator, ParameterCountIsPureFunctionOfConfig) {
  Generator a(GeneratorConfig::parse("resnet_6")), b(GeneratorConfig::parse("resnet_6"));
  EXPECT_EQ(count_parameters(*a), count_parameters(*b));
  Generator c(GeneratorConfig::parse("resnet_9"));
  // Three extra residual blocks of two bias-free 3x3 convs plus two norms at 64 channels.
  EXPECT_EQ(count_parameters(*c) - count_parameters(*a), 3 * (2 * 64 * 64 * 9 + 2 * 2 * 64));
}

TEST(Discriminator, GridShapeAndReceptiveField) {
  DiscriminatorConfig cfg;
  EXPECT_EQ(cfg.patch_levels, 3);
  EXPECT_EQ(cfg.receptive_field(), 38);
  PatchDiscriminator d(cfg);
  const auto out = d->forward(torch::rand({2, 3, 128, 128}), torch::rand({2, 3, 128, 128}));
  EXPECT_EQ(out.sizes(), (std::vector<int64_t>{2, 1, 16, 16}));
  DiscriminatorConfig two;
  two.patch_levels = 2;
  EXPECT_EQ(two.receptive_field(), 18);
}

TEST(Discriminator, ZeroFinalLayerGivesHalfProbability) {
  PatchDiscriminator d(DiscriminatorConfig{});
  d->zero_final_layer();
  const auto p = torch::sigmoid(d->forward(torch::rand({1, 3, 64, 64}), torch::rand({1, 3, 64, 64})));
  EXPECT_TRUE(torch::allclose(p, torch::full_like(p, 0.5)));
}

TEST(Discriminator, RejectsShapeMismatchAndGlobalReceptiveField) {
  PatchDiscriminator d(DiscriminatorConfig{});
  EXPECT_THROW(d->forward(torch::rand({1, 3, 64, 64}), torch::rand({1, 3, 32, 32})), ShapeError);
  EXPECT_THROW(d->forward(torch::rand({1, 3, 32, 32}), torch::rand({1, 3, 32, 32})), ShapeError);
}

TEST(Discriminator, ConditionChangesOutput) {
  torch::manual_seed(2);
  PatchDiscriminator d(DiscriminatorConfig{});
  const auto x = torch::rand({1, 3, 64, 64});
  EXPECT_FALSE(torch::equal(d->forward(x, torch::zeros_like(x)), d->forward(x, torch::ones_like(x))));
}

TEST(PoseNet, GridShape) {
  PoseHeadConfig cfg;
  cfg.grid_stride = 16;
  PoseNet p(cfg);
  EXPECT_EQ(cfg.channels_per_cell(), 45);
  EXPECT_EQ(p->forward(torch::rand({1, 3, 128, 128})).sizes(), (std::vector<int64_t>{1, 45, 8, 8}));
  EXPECT_THROW(p->forward(torch::rand({1, 3, 100, 128})), ShapeError);
}

TEST(PoseHeadConfig, Validation) {
  PoseHeadConfig cfg;
  cfg.grid_stride = 6;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = PoseHeadConfig{};
  cfg.keypoints = 17;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg.schema_id = std::string(kCoco17);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(DecodeGrid, NegativeInfinityObjectnessEmitsNothing) {
  auto grid = torch::zeros({45, 4, 4}, torch::kFloat64);
  grid[cell::kObj] = -std::numeric_limits<double>::infinity();
  grid[cell::kCls] = 10;
  EXPECT_TRUE(decode_grid(grid, 8, DecodeOptions{0.0, 0.5, 20}).empty());
}

TEST(DecodeGrid, EncodeDecodeRoundTrip) {
  const int stride = 8;
  auto grid = torch::full({45, 4, 4}, -30.0, torch::kFloat64);
  const PersonAnnotation p = stick(3.5, 2.25, 19.0, 29.5);
  const CellIndex c = assign_cell(11.25, 15.875, stride, 4, 4);
  const auto enc = encode_person(p, c, stride, 12.0f);
  for (int ch = 0; ch < 45; ++ch) grid[ch][c.row][c.col] = enc[ch];
  const auto poses = decode_grid(grid, stride);
  ASSERT_EQ(poses.size(), 1u);
  const auto& d = poses[0];
  EXPECT_LE(std::abs((d.box.x_min + d.box.x_max) / 2 - 11.25), stride / 2.0);
  EXPECT_LE(std::abs((d.box.y_min + d.box.y_max) / 2 - 15.875), stride / 2.0);
  EXPECT_NEAR(d.box.x_min, 3.5, 1e-4);
  EXPECT_NEAR(d.box.y_max, 29.5, 1e-4);
  for (int i = 0; i < 13; ++i) {
    EXPECT_NEAR(d.keypoints[i].x, p.keypoints[i].x, 1e-4);
    EXPECT_NEAR(d.keypoints[i].y, p.keypoints[i].y, 1e-4);
    EXPECT_EQ(d.keypoints[i].visibility, p.keypoints[i].visibility);
  }
  EXPECT_NEAR(d.score, 1.0, 1e-4);
}

TEST(GreedyNms, SuppressesOverlapsAndCaps) {
  std::vector<ScoredPose> poses{{0.9, {0, 0, 10, 10}, {}}, {0.8, {1, 1, 11, 11}, {}},
                                {0.7, {20, 20, 30, 30}, {}}, {0.95, {40, 40, 50, 50}, {}}};
  const auto kept = greedy_nms(poses, 0.5, 20);
  ASSERT_EQ(kept.size(), 3u);
  EXPECT_DOUBLE_EQ(kept[0].score, 0.95);
  EXPECT_DOUBLE_EQ(kept[1].score, 0.9);
  EXPECT_EQ(greedy_nms(poses, 0.5, 1).size(), 1u);
}

TEST(AssignCell, FloorsAndRejectsOutside) {
  const CellIndex c = assign_cell(15.99, 8.0, 8, 4, 4);
  EXPECT_EQ(c.col, 1);
  EXPECT_EQ(c.row, 1);
  EXPECT_THROW(assign_cell(-0.1, 3, 8, 4, 4), DataError);
  EXPECT_THROW(assign_cell(32.0, 3, 8, 4, 4), DataError);
}

TEST(GradientFlow, GeneratorUnderAdversarialAndL1Losses) {
  torch::manual_seed(7);
  for (const char* name : {"unet_5", "resnet_6"}) {
    Generator g(GeneratorConfig::parse(name));
    DiscriminatorConfig dc;
    dc.patch_levels = 2;
    PatchDiscriminator d(dc);
    const auto x = torch::rand({2, 3, 32, 32});
    const auto y = g->forward(x);
    (loss_g_x(d->forward(y, x)) + loss_gated_l1(y, torch::rand_like(y), 0.0)).backward();
    expect_all_gradients_nonzero(*g, name);
  }
}

TEST(GradientFlow, DiscriminatorUnderItsLoss) {
  torch::manual_seed(8);
  DiscriminatorConfig dc;
  dc.patch_levels = 2;
  PatchDiscriminator d(dc);
  const auto cond = torch::rand({2, 3, 32, 32});
  loss_d_y(d->forward(torch::rand({2, 3, 32, 32}), cond), d->forward(torch::rand({2, 3, 32, 32}), cond))
      .backward();
  expect_all_gradients_nonzero(*d, "discriminator");
}

TEST(GradientFlow, RecoveryChainReachesBothGenerators) {
  torch::manual_seed(9);
  Generator gx(GeneratorConfig::parse("unet_5")), gy(GeneratorConfig::parse("unet_5"));
  const auto x = torch::rand({2, 3, 32, 32});
  loss_consistency(x, gy->forward(gx->forward(x))).backward();
  expect_all_gradients_nonzero(*gx, "G_X");
  expect_all_gradients_nonzero(*gy, "G_Y");
}

TEST(GradientFlow, PoseNetUnderPoseLoss) {
  torch::manual_seed(10);
  PoseNet p(PoseHeadConfig{});
  const std::vector<std::vector<PersonAnnotation>> targets{{stick(4, 4, 20, 40), stick(30, 10, 60, 60)},
                                                           {stick(10, 2, 50, 30)}};
  loss_pose(p->forward(torch::rand({2, 3, 64, 64})), targets, 8).sum.backward();
  expect_all_gradients_nonzero(*p, "pose");
}

TEST(Tensors, ImageRoundTrip) {
  ImageBuffer img(5, 7, 3);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x)
      for (int c = 0; c < 3; ++c) img.set(y, x, c, (y + x + c) / 20.0f);
  const auto t = to_tensor(img);
  EXPECT_EQ(t.sizes(), (std::vector<int64_t>{3, 5, 7}));
  EXPECT_FLOAT_EQ(t[2][4][6].item<float>(), img.at(4, 6, 2));
  EXPECT_EQ(to_image(t), img);
  const std::vector<ImageBuffer> imgs{img, img};
  EXPECT_EQ(stack_images(imgs).size(0), 2);
}
