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

#pragma once

// Single-branch ViT: patch projections, class token, position embeddings,
// pre-norm transformer blocks and the C·(N+1) classification head.

#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mfevit/model_config.hpp"
#include "mfevit/tensor.hpp"

namespace mfevit {

struct Linear {
  Tensor weight;  // [in × out]
  Tensor bias;    // [out]
};

struct BlockParams {
  Tensor norm1_gain, norm1_bias;
  Linear qkv;        // D → 3D, columns ordered q | k | v, heads contiguous within each
  Linear attn_proj;  // D → D
  Tensor norm2_gain, norm2_bias;
  Linear fc1;  // D → mlp_ratio·D
  Linear fc2;  // mlp_ratio·D → D
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct EncoderParams {
  std::vector<Linear> patch_proj;  // one per fusion stream
  Tensor class_token;              // [1 × D]
  Tensor pos_embed;                // [(M+1) × D]
  std::vector<BlockParams> blocks;
  Tensor norm_gain, norm_bias;
  Linear head;  // D → C·(N+1)

  /// Every parameter tensor with a stable dotted name, in a fixed order.
  /// The returned handles alias the parameters.
  std::vector<NamedTensor> named() const;
  std::size_t total_size() const;
  EncoderParams clone() const;
  void zero_grad();
};

/// Truncated-normal (±2σ) weights, zero biases, zero class token and
/// position embeddings, unit norm gains.
EncoderParams init_params(const ModelConfig& config, std::mt19937_64& rng, double weight_std = 0.02);

/// Re-draws only the head, used when a checkpoint's head width differs.
void reinit_head(EncoderParams& params, const ModelConfig& config, std::mt19937_64& rng,
                 double weight_std = 0.02);

/// Throws DimensionError naming the first parameter whose shape disagrees with `config`.
void audit_shapes(const EncoderParams& params, const ModelConfig& config);

/// Optional observer of intermediate tensors.
struct ForwardProbe {
  std::vector<std::pair<std::string, Shape>> shapes;
  std::vector<Tensor> attention;  // per layer, per head: [S × S] probabilities

  void note(const std::string& name, const Tensor& t) { shapes.emplace_back(name, t.shape()); }
};

struct ForwardOptions {
  bool training = false;              // enables dropout
  std::mt19937_64* rng = nullptr;     // required when training with dropout > 0
  ForwardProbe* probe = nullptr;
};

struct EmbeddingSequence {
  Tensor tokens;  // [length × D]
  bool includes_class_token = false;

  std::size_t length() const { return tokens.dim(0); }
};

/// Splits an [H × W × C] image into row-major patches, each flattened
/// row-major as (y, x, channel): result [M × patch²·C].
Tensor patchify(const Tensor& image, std::size_t patch_size);
/// Checks the image is [image_size × image_size × 3] first.
Tensor patchify(const Tensor& image, const ModelConfig& config);
/// Inverse of patchify.
Tensor unpatchify(const Tensor& patches, std::size_t image_size, std::size_t patch_size,
                  std::size_t channels);

/// tokens = patches · W_stream + b_stream
EmbeddingSequence embed(Tape& tape, const Tensor& patches, const EncoderParams& params,
                        std::size_t stream, const ModelConfig& config);

/// Prepends the class token and adds position embeddings.
EmbeddingSequence add_class_and_position(Tape& tape, const EmbeddingSequence& seq,
                                         const EncoderParams& params, const ModelConfig& config);

/// Runs the transformer blocks and final norm; returns the class-token row as [D].
Tensor encoder_forward(Tape& tape, const EmbeddingSequence& seq, const EncoderParams& params,
                       const ModelConfig& config, const ForwardOptions& options = {});

/// [D] → [C·(N+1)] logits.
Tensor head(Tape& tape, const Tensor& class_output, const EncoderParams& params);

struct ParameterCount {
  std::size_t total = 0;
  std::vector<std::pair<std::string, std::size_t>> groups;
};

/// Exact scalar parameter count from the config alone.
ParameterCount count_parameters(const ModelConfig& config);

}  // namespace mfevit
