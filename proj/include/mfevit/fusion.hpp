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

// Turns an RGB + depth pair into the patch-embedding sequence for each
// fusion mode, and composes the full classifier forward pass.

#include "mfevit/encoder.hpp"
#include "mfevit/image_pair.hpp"

namespace mfevit {

/// Three RGB images, each with one channel replaced by depth.
struct FusedTriple {
  Tensor i_rgd;  // (R, G, D)
  Tensor i_rdb;  // (R, D, B)
  Tensor i_dgb;  // (D, G, B)
};

FusedTriple channel_replace(const ImagePair& pair);

/// Copies a [S × S × 1] depth map into all three channel slots.
Tensor replicate_depth(const Tensor& depth);

/// Per channel-slot standardization with the ImageNet RGB statistics.
/// Depth placed in a slot is standardized with that slot's statistics.
Tensor standardize(const Tensor& image);

/// Standardize, patchify and project one 3-channel stream.
EmbeddingSequence embed_stream(Tape& tape, const Tensor& image, const EncoderParams& params,
                               std::size_t stream, const ModelConfig& config);

/// Patchwise average of the three stream embeddings (projections 0, 1, 2).
EmbeddingSequence fuse_alternative(Tape& tape, const FusedTriple& triple,
                                   const EncoderParams& params, const ModelConfig& config);

/// Average of the RGB embedding (projection 0) and the replicated-depth
/// embedding (projection 1).
EmbeddingSequence fuse_naive(Tape& tape, const ImagePair& pair, const EncoderParams& params,
                             const ModelConfig& config);

/// Single stream through projection 0; depth is replicated for depth_only.
EmbeddingSequence fuse_unimodal(Tape& tape, const ImagePair& pair, FusionMode mode,
                                const EncoderParams& params, const ModelConfig& config);

/// Dispatches on config.fusion_mode.
EmbeddingSequence fuse(Tape& tape, const ImagePair& pair, const EncoderParams& params,
                       const ModelConfig& config);

/// fuse → class token and positions → encoder → head.
Tensor forward_logits(Tape& tape, const ImagePair& pair, const EncoderParams& params,
                      const ModelConfig& config, const ForwardOptions& options = {});

}  // namespace mfevit
