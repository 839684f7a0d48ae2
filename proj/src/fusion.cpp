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

#include "mfevit/fusion.hpp"

#include <array>
#include <cmath>

#include "mfevit/errors.hpp"

namespace mfevit {

namespace {

constexpr std::array<double, 3> kChannelMean{0.485, 0.456, 0.406};
constexpr std::array<double, 3> kChannelStd{0.229, 0.224, 0.225};

Tensor with_depth_in(const Tensor& rgb, const Tensor& depth, std::size_t slot) {
  Tensor out = rgb.clone();
  out.set_requires_grad(false);
  auto o = out.data();
  auto d = depth.data();
  for (std::size_t px = 0; px < d.size(); ++px) o[px * 3 + slot] = d[px];
  return out;
}

// first + Σ(t − first)/n: equal inputs come back bit-exact.
Tensor stream_mean(Tape& tape, const std::vector<Tensor>& terms) {
  const Tensor& first = terms.front();
  if (terms.size() == 1) return first;
  Tensor spread = sub(tape, terms[1], first);
  for (std::size_t i = 2; i < terms.size(); ++i) spread = add(tape, spread, sub(tape, terms[i], first));
  return add(tape, first, scale(tape, spread, 1.0 / static_cast<double>(terms.size())));
}

}  // namespace

void validate_pair(const ImagePair& pair) {
  if (!pair.rgb.defined() || !pair.depth.defined()) throw DimensionError("image pair has an empty plane");
  const Shape& rs = pair.rgb.shape();
  const Shape& ds = pair.depth.shape();
  if (rs.size() != 3 || rs[2] != 3) throw DimensionError("rgb plane must be [H x W x 3], got " + shape_str(rs));
  if (ds.size() != 3 || ds[2] != 1) throw DimensionError("depth plane must be [H x W x 1], got " + shape_str(ds));
  if (rs[0] != ds[0] || rs[1] != ds[1]) {
    throw DimensionError("rgb " + shape_str(rs) + " and depth " + shape_str(ds) + " are not aligned");
  }
  for (const Tensor* t : {&pair.rgb, &pair.depth}) {
    for (double v : t->data()) {
      if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
        throw NumericError("image pair " + pair.sample_id + " has a value outside [0, 1]");
      }
    }
  }
}

FusedTriple channel_replace(const ImagePair& pair) {
  validate_pair(pair);
  return {with_depth_in(pair.rgb, pair.depth, 2), with_depth_in(pair.rgb, pair.depth, 1),
          with_depth_in(pair.rgb, pair.depth, 0)};
}

Tensor replicate_depth(const Tensor& depth) {
  if (depth.rank() != 3 || depth.dim(2) != 1) {
    throw DimensionError("replicate_depth: expected [H x W x 1], got " + shape_str(depth.shape()));
  }
  Tensor out = Tensor::zeros({depth.dim(0), depth.dim(1), 3});
  auto o = out.data();
  auto d = depth.data();
  for (std::size_t px = 0; px < d.size(); ++px) o[px * 3] = o[px * 3 + 1] = o[px * 3 + 2] = d[px];
  return out;
}

Tensor standardize(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw DimensionError("standardize: expected [H x W x 3], got " + shape_str(image.shape()));
  }
  Tensor out = Tensor::zeros(image.shape());
  auto o = out.data();
  auto x = image.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = i % 3;
    o[i] = (x[i] - kChannelMean[c]) / kChannelStd[c];
  }
  return out;
}

EmbeddingSequence embed_stream(Tape& tape, const Tensor& image, const EncoderParams& params,
                               std::size_t stream, const ModelConfig& config) {
  return embed(tape, patchify(standardize(image), config), params, stream, config);
}

EmbeddingSequence fuse_alternative(Tape& tape, const FusedTriple& triple,
                                   const EncoderParams& params, const ModelConfig& config) {
  if (config.fusion_mode != FusionMode::alternative) {
    throw ConfigError("fuse_alternative needs fusion_mode=alternative, config has " +
                      to_string(config.fusion_mode));
  }
  std::vector<Tensor> streams{embed_stream(tape, triple.i_rgd, params, 0, config).tokens,
                              embed_stream(tape, triple.i_rdb, params, 1, config).tokens,
                              embed_stream(tape, triple.i_dgb, params, 2, config).tokens};
  return {stream_mean(tape, streams), false};
}

EmbeddingSequence fuse_naive(Tape& tape, const ImagePair& pair, const EncoderParams& params,
                             const ModelConfig& config) {
  if (config.fusion_mode != FusionMode::naive) {
    throw ConfigError("fuse_naive needs fusion_mode=naive, config has " + to_string(config.fusion_mode));
  }
  validate_pair(pair);
  std::vector<Tensor> streams{embed_stream(tape, pair.rgb, params, 0, config).tokens,
                              embed_stream(tape, replicate_depth(pair.depth), params, 1, config).tokens};
  return {stream_mean(tape, streams), false};
}

EmbeddingSequence fuse_unimodal(Tape& tape, const ImagePair& pair, FusionMode mode,
                                const EncoderParams& params, const ModelConfig& config) {
  if (mode != FusionMode::rgb_only && mode != FusionMode::depth_only) {
    throw ConfigError("fuse_unimodal needs rgb_only or depth_only, got " + to_string(mode));
  }
  if (mode != config.fusion_mode) {
    throw ConfigError("fuse_unimodal: mode " + to_string(mode) + " does not match config fusion_mode " +
                      to_string(config.fusion_mode));
  }
  if (mode == FusionMode::rgb_only) return embed_stream(tape, pair.rgb, params, 0, config);
  return embed_stream(tape, replicate_depth(pair.depth), params, 0, config);
}

EmbeddingSequence fuse(Tape& tape, const ImagePair& pair, const EncoderParams& params,
                       const ModelConfig& config) {
  switch (config.fusion_mode) {
    case FusionMode::alternative: return fuse_alternative(tape, channel_replace(pair), params, config);
    case FusionMode::naive: return fuse_naive(tape, pair, params, config);
    case FusionMode::rgb_only:
    case FusionMode::depth_only: return fuse_unimodal(tape, pair, config.fusion_mode, params, config);
  }
  throw ConfigError("unknown fusion mode");
}

Tensor forward_logits(Tape& tape, const ImagePair& pair, const EncoderParams& params,
                      const ModelConfig& config, const ForwardOptions& options) {
  EmbeddingSequence patches = fuse(tape, pair, params, config);
  if (options.probe) options.probe->note("embedding", patches.tokens);
  EmbeddingSequence seq = add_class_and_position(tape, patches, params, config);
  if (options.probe) options.probe->note("sequence", seq.tokens);
  Tensor cls = encoder_forward(tape, seq, params, config, options);
  Tensor logits = head(tape, cls, params);
  if (options.probe) options.probe->note("logits", logits);
  return logits;
}

}  // namespace mfevit
