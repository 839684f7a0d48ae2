/* Copyright 2026 The mfevit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mfevit/encoder.hpp"
#include "mfevit/errors.hpp"
#include "mfevit/fusion.hpp"
#include "oracle/reference_vit.hpp"
#include "test_util.hpp"

using namespace mfevit;

namespace {

// Scalar count written out term by term from the architecture.
std::size_t hand_count(const ModelConfig& c) {
  const std::size_t d = c.embed_dim, p = c.patch_size, m = c.num_patches();
  const std::size_t proj = (p * p * 3) * d + d;
  const std::size_t r = c.mlp_ratio;
  const std::size_t block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * r * d + r * d) +
                            (r * d * d + d);
  const std::size_t head = d * c.head_width() + c.head_width();
  return c.num_streams() * proj + d + (m + 1) * d + c.num_layers * block + 2 * d + head;
}

}  // namespace

TEST(Patchify, OrderAndRoundTrip) {
  const std::size_t s = 8, p = 4;
  Tensor img = Tensor::zeros({s, s, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i);
  const Tensor patches = patchify(img, p);
  ASSERT_EQ(patches.shape(), (Shape{4, 48}));
  // patch 1 is the top-right block; its first entry is pixel (0, 4) channel 0
  EXPECT_EQ(patches.at(1, 0), img[(0 * s + 4) * 3]);
  // patch 2, element (y=1, x=2, c=1)
  EXPECT_EQ(patches.at(2, (1 * p + 2) * 3 + 1), img[((4 + 1) * s + 2) * 3 + 1]);
  const Tensor back = unpatchify(patches, s, p, 3);
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(back[i], img[i]);
}

TEST(Patchify, RejectsIndivisibleSizes) {
  EXPECT_THROW(patchify(Tensor::zeros({10, 10, 3}), 4), DimensionError);
  ModelConfig c = testutil::small_config();
  EXPECT_THROW(patchify(Tensor::zeros({8, 8, 3}), c), DimensionError);
}

TEST(ParameterCount, DefaultConfigMatchesHandFormula) {
  ModelConfig c;
  EXPECT_EQ(count_parameters(c).total, hand_count(c));
  EXPECT_EQ(count_parameters(c).total, 22270116u);
}

TEST(ParameterCount, MatchesInstantiatedParameters) {
  std::mt19937_64 rng(7);
  for (auto mode : {FusionMode::rgb_only, FusionMode::depth_only, FusionMode::naive, FusionMode::alternative}) {
    ModelConfig c = testutil::small_config(mode);
    c.num_subclasses = 3;
    const EncoderParams params = init_params(c, rng);
    EXPECT_EQ(params.total_size(), count_parameters(c).total) << to_string(mode);
    EXPECT_EQ(params.total_size(), hand_count(c));
  }
}

TEST(ParameterCount, SubclassesGrowOnlyTheHead) {
  ModelConfig a;
  a.num_subclasses = 0;
  ModelConfig b = a;
  b.num_subclasses = 5;
  EXPECT_EQ(count_parameters(b).total - count_parameters(a).total, (a.embed_dim + 1) * 30);
}

TEST(Init, WeightsTruncatedAndBiasesZero) {
  std::mt19937_64 rng(3);
  ModelConfig c = testutil::small_config();
  const EncoderParams params = init_params(c, rng, 0.02);
  for (const auto& [name, t] : params.named()) {
    if (name.ends_with(".bias") || name == "class_token" || name == "pos_embed") {
      for (double v : t.data()) EXPECT_EQ(v, 0.0) << name;
    } else if (name.ends_with("gain")) {
      for (double v : t.data()) EXPECT_EQ(v, 1.0) << name;
    } else {
      for (double v : t.data()) EXPECT_LE(std::abs(v), 0.04) << name;
    }
  }
}

TEST(Init, SameSeedSameParameters) {
  ModelConfig c = testutil::small_config();
  std::mt19937_64 r1(11), r2(11);
  const auto a = init_params(c, r1).named();
  const auto b = init_params(c, r2).named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_TRUE(std::equal(a[i].tensor.data().begin(), a[i].tensor.data().end(), b[i].tensor.data().begin()));
  }
}

TEST(Init, ReinitHeadTouchesOnlyTheHead) {
  std::mt19937_64 rng(5);
  ModelConfig c = testutil::small_config();
  EncoderParams params = init_params(c, rng);
  testutil::perturb(params, rng);
  const EncoderParams before = params.clone();
  c.num_subclasses = 4;
  reinit_head(params, c, rng);
  audit_shapes(params, c);
  const auto now = params.named(), old = before.named();
  for (std::size_t i = 0; i < now.size(); ++i) {
    if (now[i].name.starts_with("head.")) continue;
    EXPECT_TRUE(std::equal(now[i].tensor.data().begin(), now[i].tensor.data().end(), old[i].tensor.data().begin()))
        << now[i].name;
  }
}

TEST(Audit, NamesTheMismatchedParameter) {
  std::mt19937_64 rng(5);
  ModelConfig c = testutil::small_config();
  EncoderParams params = init_params(c, rng);
  params.blocks[1].fc1.weight = Tensor::zeros({c.embed_dim, c.embed_dim});
  try {
    audit_shapes(params, c);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("blocks.1"), std::string::npos) << e.what();
  }
}

class ForwardOracle : public ::testing::TestWithParam<FusionMode> {};

TEST_P(ForwardOracle, MatchesReferenceImplementation) {
  std::mt19937_64 rng(21);
  ModelConfig c = testutil::small_config(GetParam());
  c.num_heads = 4;
  c.num_subclasses = 2;
  EncoderParams params = init_params(c, rng);
  testutil::perturb(params, rng);
  for (int trial = 0; trial < 3; ++trial) {
    const ImagePair pair = testutil::random_pair(c.image_size, rng, trial);
    Tape tape;
    const Tensor logits = forward_logits(tape, pair, params, c);
    const auto expected = oracle::forward(pair, params, c);
    ASSERT_EQ(logits.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(logits[i], expected[i], 1e-9);
  }
}

INSTANTIATE_TEST_SUITE_P(AllModes, ForwardOracle,
                         ::testing::Values(FusionMode::rgb_only, FusionMode::depth_only, FusionMode::naive,
                                           FusionMode::alternative),
                         [](const auto& info) { return to_string(info.param); });

TEST(Forward, DeterministicAndTapeIndependent) {
  std::mt19937_64 rng(8);
  ModelConfig c = testutil::small_config();
  EncoderParams params = init_params(c, rng);
  testutil::perturb(params, rng);
  const ImagePair pair = testutil::random_pair(c.image_size, rng);
  Tape t1, t2;
  const Tensor a = forward_logits(t1, pair, params, c);
  params.zero_grad();
  EncoderParams frozen = params.clone();
  for (auto nt : frozen.named()) nt.tensor.set_requires_grad(false);
  const Tensor b = forward_logits(t2, pair, frozen, c);
  EXPECT_EQ(t2.size(), 0u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Forward, ProbeShapesAndAttentionRows) {
  std::mt19937_64 rng(9);
  ModelConfig c = testutil::small_config();
  EncoderParams params = init_params(c, rng);
  testutil::perturb(params, rng);
  const ImagePair pair = testutil::random_pair(c.image_size, rng);
  ForwardProbe probe;
  ForwardOptions opts;
  opts.probe = &probe;
  Tape tape;
  forward_logits(tape, pair, params, c, opts);
  ASSERT_EQ(probe.attention.size(), c.num_layers * c.num_heads);
  const std::size_t s = c.seq_len();
  for (const Tensor& a : probe.attention) {
    ASSERT_EQ(a.shape(), (Shape{s, s}));
    for (std::size_t r = 0; r < s; ++r) {
      double row = 0.0;
      for (std::size_t k = 0; k < s; ++k) row += a.at(r, k);
      EXPECT_NEAR(row, 1.0, 1e-12);
    }
  }
  bool saw_class = false;
  for (const auto& [name, shape] : probe.shapes) {
    if (name == "class_output") {
      saw_class = true;
      EXPECT_EQ(shape, (Shape{c.embed_dim}));
    }
  }
  EXPECT_TRUE(saw_class);
}

TEST(Forward, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  ModelConfig c = testutil::small_config();
  EncoderParams params = init_params(c, rng);
  testutil::perturb(params, rng, 0.2);
  const ImagePair pair = testutil::random_pair(c.image_size, rng, 2);
  const std::size_t label = 6 + 2;
  params.zero_grad();
  {
    Tape tape;
    tape.backward(cross_entropy(tape, forward_logits(tape, pair, params, c), label));
  }
  for (const auto& [name, t] : params.named()) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    Tensor handle = t;
    for (std::size_t i = 0; i < t.size(); i += 1 + t.size() / 4) {
      const double keep = handle[i];
      handle[i] = keep + 1e-5;
      Tape tp;
      const double up = cross_entropy(tp, forward_logits(tp, pair, params, c), label).item();
      handle[i] = keep - 1e-5;
      Tape tm;
      const double down = cross_entropy(tm, forward_logits(tm, pair, params, c), label).item();
      handle[i] = keep;
      const double numeric = (up - down) / 2e-5;
      EXPECT_NEAR(analytic[i], numeric, 1e-6 * std::max(1.0, std::abs(numeric))) << name << "[" << i << "]";
    }
  }
}

TEST(Forward, PatchOrderMattersOnlyThroughPositions) {
  std::mt19937_64 rng(17);
  ModelConfig c = testutil::small_config(FusionMode::rgb_only);
  c.image_size = 24;  // 9 patches
  EncoderParams params = init_params(c, rng);
  testutil::perturb(params, rng);
  ImagePair pair = testutil::random_pair(c.image_size, rng);
  const Tensor patches = patchify(pair.rgb, c.patch_size);
  const std::size_t m = patches.dim(0), w = patches.dim(1);
  Tensor shuffled = Tensor::zeros(patches.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) shuffled[((i + 4) % m) * w + j] = patches[i * w + j];
  ImagePair moved = pair;
  moved.rgb = unpatchify(shuffled, c.image_size, c.patch_size, 3);

  const auto logits = [&](const ImagePair& p) {
    Tape t;
    const Tensor out = forward_logits(t, p, params, c);
    return std::vector<double>(out.data().begin(), out.data().end());
  };
  const auto a = logits(pair), b = logits(moved);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  EXPECT_GT(diff, 1e-6);

  for (double& v : params.pos_embed.data()) v = 0.0;
  const auto c0 = logits(pair), c1 = logits(moved);
  for (std::size_t i = 0; i < c0.size(); ++i) EXPECT_NEAR(c0[i], c1[i], 1e-12);
}

TEST(Head, ZeroWeightsGiveTheBias) {
  std::mt19937_64 rng(19);
  ModelConfig c = testutil::small_config();
  c.num_subclasses = 5;
  EncoderParams params = init_params(c, rng);
  testutil::perturb(params, rng);
  for (double& v : params.head.weight.data()) v = 0.0;
  Tape tape;
  const Tensor logits = head(tape, Tensor::full({c.embed_dim}, 3.0), params);
  ASSERT_EQ(logits.size(), 36u);
  for (std::size_t i = 0; i < 36; ++i) EXPECT_EQ(logits[i], params.head.bias[i]);
}

TEST(Forward, UnimodalModesIgnoreTheOtherPlane) {
  std::mt19937_64 rng(23);
  for (auto mode : {FusionMode::rgb_only, FusionMode::depth_only}) {
    const ModelConfig c = testutil::small_config(mode);
    EncoderParams params = init_params(c, rng);
    testutil::perturb(params, rng);
    const ImagePair pair = testutil::random_pair(c.image_size, rng);
    ImagePair other = testutil::random_pair(c.image_size, rng);
    if (mode == FusionMode::rgb_only) other.rgb = pair.rgb;
    else other.depth = pair.depth;
    Tape t;
    const Tensor a = forward_logits(t, pair, params, c), b = forward_logits(t, other, params, c);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  }
}

TEST(ParameterCount, SmallestModelByHand) {
  // 1x1 image, one patch, D=2, no blocks, plain 6-way head:
  // projection 3*2+2, class token 2, positions 2*2, final norm 2+2, head 2*6+6.
  ModelConfig c;
  c.image_size = 1;
  c.patch_size = 1;
  c.embed_dim = 2;
  c.num_layers = 0;
  c.num_heads = 1;
  c.num_subclasses = 0;
  c.fusion_mode = FusionMode::rgb_only;
  EXPECT_EQ(count_parameters(c).total, 8u + 2u + 4u + 4u + 18u);
}
