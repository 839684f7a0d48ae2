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

#include "mfevit/encoder.hpp"

#include <cmath>

#include "mfevit/errors.hpp"

namespace mfevit {

namespace {

Tensor truncated_normal(Shape shape, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(numel(shape));
  for (double& v : values) {
    do {
      v = dist(rng);
    } while (std::abs(v) > 2.0 * stddev);
  }
  return Tensor(std::move(shape), std::move(values), true);
}

Linear make_linear(std::size_t in, std::size_t out, std::mt19937_64& rng, double stddev) {
  return {truncated_normal({in, out}, rng, stddev), Tensor::zeros({out}, true)};
}

Linear clone_linear(const Linear& l) { return {l.weight.clone(), l.bias.clone()}; }

Tensor linear(Tape& tape, const Tensor& x, const Linear& l) {
  return add_bias(tape, matmul(tape, x, l.weight), l.bias);
}

}  // namespace

std::vector<NamedTensor> EncoderParams::named() const {
  std::vector<NamedTensor> out;
  for (std::size_t j = 0; j < patch_proj.size(); ++j) {
    const std::string p = "patch_proj." + std::to_string(j);
    out.push_back({p + ".weight", patch_proj[j].weight});
    out.push_back({p + ".bias", patch_proj[j].bias});
  }
  out.push_back({"class_token", class_token});
  out.push_back({"pos_embed", pos_embed});
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string p = "blocks." + std::to_string(l);
    const BlockParams& b = blocks[l];
    out.push_back({p + ".norm1.gain", b.norm1_gain});
    out.push_back({p + ".norm1.bias", b.norm1_bias});
    out.push_back({p + ".attn.qkv.weight", b.qkv.weight});
    out.push_back({p + ".attn.qkv.bias", b.qkv.bias});
    out.push_back({p + ".attn.proj.weight", b.attn_proj.weight});
    out.push_back({p + ".attn.proj.bias", b.attn_proj.bias});
    out.push_back({p + ".norm2.gain", b.norm2_gain});
    out.push_back({p + ".norm2.bias", b.norm2_bias});
    out.push_back({p + ".mlp.fc1.weight", b.fc1.weight});
    out.push_back({p + ".mlp.fc1.bias", b.fc1.bias});
    out.push_back({p + ".mlp.fc2.weight", b.fc2.weight});
    out.push_back({p + ".mlp.fc2.bias", b.fc2.bias});
  }
  out.push_back({"norm.gain", norm_gain});
  out.push_back({"norm.bias", norm_bias});
  out.push_back({"head.weight", head.weight});
  out.push_back({"head.bias", head.bias});
  return out;
}

std::size_t EncoderParams::total_size() const {
  std::size_t total = 0;
  for (const auto& nt : named()) total += nt.tensor.size();
  return total;
}

EncoderParams EncoderParams::clone() const {
  EncoderParams c;
  for (const auto& l : patch_proj) c.patch_proj.push_back(clone_linear(l));
  c.class_token = class_token.clone();
  c.pos_embed = pos_embed.clone();
  for (const auto& b : blocks) {
    c.blocks.push_back({b.norm1_gain.clone(), b.norm1_bias.clone(), clone_linear(b.qkv),
                        clone_linear(b.attn_proj), b.norm2_gain.clone(), b.norm2_bias.clone(),
                        clone_linear(b.fc1), clone_linear(b.fc2)});
  }
  c.norm_gain = norm_gain.clone();
  c.norm_bias = norm_bias.clone();
  c.head = clone_linear(head);
  return c;
}

void EncoderParams::zero_grad() {
  for (auto& nt : named()) nt.tensor.zero_grad();
}

EncoderParams init_params(const ModelConfig& config, std::mt19937_64& rng, double weight_std) {
  config.validate();
  const std::size_t d = config.embed_dim;
  EncoderParams p;
  for (std::size_t j = 0; j < config.num_streams(); ++j) {
    p.patch_proj.push_back(make_linear(config.patch_dim(), d, rng, weight_std));
  }
  p.class_token = Tensor::zeros({1, d}, true);
  p.pos_embed = Tensor::zeros({config.seq_len(), d}, true);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    BlockParams b;
    b.norm1_gain = Tensor::full({d}, 1.0, true);
    b.norm1_bias = Tensor::zeros({d}, true);
    b.qkv = make_linear(d, 3 * d, rng, weight_std);
    b.attn_proj = make_linear(d, d, rng, weight_std);
    b.norm2_gain = Tensor::full({d}, 1.0, true);
    b.norm2_bias = Tensor::zeros({d}, true);
    b.fc1 = make_linear(d, config.mlp_dim(), rng, weight_std);
    b.fc2 = make_linear(config.mlp_dim(), d, rng, weight_std);
    p.blocks.push_back(std::move(b));
  }
  p.norm_gain = Tensor::full({d}, 1.0, true);
  p.norm_bias = Tensor::zeros({d}, true);
  p.head = make_linear(d, config.head_width(), rng, weight_std);
  return p;
}

void reinit_head(EncoderParams& params, const ModelConfig& config, std::mt19937_64& rng,
                 double weight_std) {
  params.head = make_linear(config.embed_dim, config.head_width(), rng, weight_std);
}

void audit_shapes(const EncoderParams& params, const ModelConfig& config) {
  const std::size_t d = config.embed_dim;
  const auto expect = [](const std::string& name, const Tensor& t, const Shape& shape) {
    if (!t.defined() || t.shape() != shape) {
      throw DimensionError("parameter " + name + " has shape " +
                           (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")) +
                           ", expected " + shape_str(shape));
    }
  };
  if (params.patch_proj.size() != config.num_streams()) {
    throw DimensionError("expected " + std::to_string(config.num_streams()) +
                         " patch projections for fusion mode " + to_string(config.fusion_mode) +
                         ", found " + std::to_string(params.patch_proj.size()));
  }
  if (params.blocks.size() != config.num_layers) {
    throw DimensionError("expected " + std::to_string(config.num_layers) + " blocks, found " +
                         std::to_string(params.blocks.size()));
  }
  const std::size_t h = config.mlp_dim();
  for (const auto& [name, t] : params.named()) {
    Shape want;
    if (name.starts_with("patch_proj.")) {
      want = name.ends_with(".weight") ? Shape{config.patch_dim(), d} : Shape{d};
    } else if (name == "class_token") {
      want = {1, d};
    } else if (name == "pos_embed") {
      want = {config.seq_len(), d};
    } else if (name.ends_with("attn.qkv.weight")) {
      want = {d, 3 * d};
    } else if (name.ends_with("attn.qkv.bias")) {
      want = {3 * d};
    } else if (name.ends_with("attn.proj.weight")) {
      want = {d, d};
    } else if (name.ends_with("mlp.fc1.weight")) {
      want = {d, h};
    } else if (name.ends_with("mlp.fc1.bias")) {
      want = {h};
    } else if (name.ends_with("mlp.fc2.weight")) {
      want = {h, d};
    } else if (name == "head.weight") {
      want = {d, config.head_width()};
    } else if (name == "head.bias") {
      want = {config.head_width()};
    } else {
      want = {d};  // norm gains/biases and remaining D-wide biases
    }
    expect(name, t, want);
  }
}

Tensor patchify(const Tensor& image, std::size_t patch_size) {
  if (image.rank() != 3 || patch_size == 0 || image.dim(0) % patch_size != 0 ||
      image.dim(1) % patch_size != 0) {
    throw DimensionError("patchify: image " + shape_str(image.shape()) +
                         " cannot be tiled by patch " + std::to_string(patch_size));
  }
  const std::size_t height = image.dim(0), width = image.dim(1), channels = image.dim(2);
  const std::size_t gy = height / patch_size, gx = width / patch_size;
  const std::size_t row_len = patch_size * patch_size * channels;
  Tensor out = Tensor::zeros({gy * gx, row_len});
  auto src = image.data();
  auto dst = out.data();
  for (std::size_t py = 0; py < gy; ++py) {
    for (std::size_t px = 0; px < gx; ++px) {
      double* row = dst.data() + (py * gx + px) * row_len;
      for (std::size_t y = 0; y < patch_size; ++y) {
        const std::size_t sy = py * patch_size + y;
        const double* s = src.data() + (sy * width + px * patch_size) * channels;
        std::copy(s, s + patch_size * channels, row + y * patch_size * channels);
      }
    }
  }
  return out;
}

Tensor patchify(const Tensor& image, const ModelConfig& config) {
  const Shape want{config.image_size, config.image_size, 3};
  if (image.shape() != want) {
    throw DimensionError("patchify: expected image " + shape_str(want) + ", got " +
                         shape_str(image.shape()));
  }
  return patchify(image, config.patch_size);
}

Tensor unpatchify(const Tensor& patches, std::size_t image_size, std::size_t patch_size,
                  std::size_t channels) {
  const std::size_t g = image_size / patch_size;
  const Shape want{g * g, patch_size * patch_size * channels};
  if (patch_size == 0 || image_size % patch_size != 0 || patches.shape() != want) {
    throw DimensionError("unpatchify: patches " + shape_str(patches.shape()) + " do not tile a " +
                         std::to_string(image_size) + "px image with patch " +
                         std::to_string(patch_size));
  }
  Tensor image = Tensor::zeros({image_size, image_size, channels});
  auto src = patches.data();
  auto dst = image.data();
  const std::size_t row_len = want[1];
  for (std::size_t py = 0; py < g; ++py) {
    for (std::size_t px = 0; px < g; ++px) {
      const double* row = src.data() + (py * g + px) * row_len;
      for (std::size_t y = 0; y < patch_size; ++y) {
        double* d = dst.data() + ((py * patch_size + y) * image_size + px * patch_size) * channels;
        std::copy(row + y * patch_size * channels, row + (y + 1) * patch_size * channels, d);
      }
    }
  }
  return image;
}

EmbeddingSequence embed(Tape& tape, const Tensor& patches, const EncoderParams& params,
                        std::size_t stream, const ModelConfig& config) {
  if (stream >= config.num_streams() || stream >= params.patch_proj.size()) {
    throw ConfigError("projection index " + std::to_string(stream) + " is invalid for fusion mode " +
                      to_string(config.fusion_mode));
  }
  const Shape want{config.num_patches(), config.patch_dim()};
  if (patches.shape() != want) {
    throw DimensionError("embed: expected patches " + shape_str(want) + ", got " +
                         shape_str(patches.shape()));
  }
  return {linear(tape, patches, params.patch_proj[stream]), false};
}

EmbeddingSequence add_class_and_position(Tape& tape, const EmbeddingSequence& seq,
                                         const EncoderParams& params, const ModelConfig& config) {
  if (seq.includes_class_token) {
    throw ContractError("add_class_and_position: sequence already carries a class token");
  }
  if (seq.tokens.rank() != 2 || seq.length() != config.num_patches() ||
      seq.tokens.dim(1) != config.embed_dim) {
    throw DimensionError("add_class_and_position: expected " +
                         shape_str({config.num_patches(), config.embed_dim}) + " tokens, got " +
                         shape_str(seq.tokens.shape()));
  }
  Tensor joined = concat(tape, {params.class_token, seq.tokens}, 0);
  return {add(tape, joined, params.pos_embed), true};
}

Tensor encoder_forward(Tape& tape, const EmbeddingSequence& seq, const EncoderParams& params,
                       const ModelConfig& config, const ForwardOptions& options) {
  if (!seq.includes_class_token) {
    throw ContractError("encoder_forward: sequence must include the class token");
  }
  const std::size_t d = config.embed_dim;
  const std::size_t heads = config.num_heads;
  const std::size_t dh = config.head_dim();
  if (seq.tokens.rank() != 2 || seq.tokens.dim(1) != d) {
    throw DimensionError("encoder_forward: tokens " + shape_str(seq.tokens.shape()) +
                         " do not have width " + std::to_string(d));
  }
  const double dropout_rate = options.training ? config.dropout : 0.0;
  if (dropout_rate > 0.0 && options.rng == nullptr) {
    throw ContractError("encoder_forward: dropout needs a random stream");
  }
  const auto drop = [&](const Tensor& t) {
    return dropout_rate > 0.0 ? dropout(tape, t, dropout_rate, *options.rng) : t;
  };
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  ForwardProbe* probe = options.probe;

  Tensor x = seq.tokens;
  for (std::size_t l = 0; l < params.blocks.size(); ++l) {
    const BlockParams& b = params.blocks[l];
    const std::string tag = "layer" + std::to_string(l);

    Tensor h = layernorm(tape, x, b.norm1_gain, b.norm1_bias, config.layernorm_eps);
    Tensor qkv = linear(tape, h, b.qkv);
    if (probe) probe->note(tag + ".qkv", qkv);
    std::vector<Tensor> head_out;
    head_out.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      Tensor q = slice(tape, qkv, 1, hd * dh, dh);
      Tensor k = slice(tape, qkv, 1, d + hd * dh, dh);
      Tensor v = slice(tape, qkv, 1, 2 * d + hd * dh, dh);
      Tensor scores = scale(tape, matmul(tape, q, transpose(tape, k)), attn_scale);
      Tensor probs = softmax(tape, scores, 1);
      if (probe) {
        probe->note(tag + ".attention", probs);
        probe->attention.push_back(probs);
      }
      head_out.push_back(matmul(tape, probs, v));
    }
    Tensor merged = heads == 1 ? head_out.front() : concat(tape, head_out, 1);
    Tensor attn = drop(linear(tape, merged, b.attn_proj));
    if (probe) probe->note(tag + ".attn_out", attn);
    x = add(tape, x, attn);

    Tensor h2 = layernorm(tape, x, b.norm2_gain, b.norm2_bias, config.layernorm_eps);
    Tensor hidden = gelu(tape, linear(tape, h2, b.fc1));
    if (probe) probe->note(tag + ".mlp_hidden", hidden);
    x = add(tape, x, drop(linear(tape, hidden, b.fc2)));
    if (probe) probe->note(tag + ".output", x);

    for (double v : x.data()) {
      if (!std::isfinite(v)) throw NumericError("non-finite activation after encoder layer " + std::to_string(l));
    }
  }
  Tensor normed = layernorm(tape, x, params.norm_gain, params.norm_bias, config.layernorm_eps);
  Tensor cls = reshape(tape, slice(tape, normed, 0, 0, 1), {d});
  if (probe) probe->note("class_output", cls);
  return cls;
}

Tensor head(Tape& tape, const Tensor& class_output, const EncoderParams& params) {
  const std::size_t d = params.head.weight.dim(0);
  if (class_output.size() != d) {
    throw DimensionError("head: expected " + std::to_string(d) + " features, got " +
                         shape_str(class_output.shape()));
  }
  Tensor row = reshape(tape, class_output, {1, d});
  Tensor logits = linear(tape, row, params.head);
  return reshape(tape, logits, {params.head.bias.dim(0)});
}

ParameterCount count_parameters(const ModelConfig& config) {
  const std::size_t d = config.embed_dim;
  const std::size_t h = config.mlp_dim();
  ParameterCount pc;
  const auto add_group = [&](std::string name, std::size_t n) {
    pc.total += n;
    pc.groups.emplace_back(std::move(name), n);
  };
  for (std::size_t j = 0; j < config.num_streams(); ++j) {
    add_group("patch_projection." + std::to_string(j), config.patch_dim() * d + d);
  }
  add_group("class_token", d);
  add_group("position_embedding", config.seq_len() * d);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string p = "layer." + std::to_string(l);
    add_group(p + ".attention", 2 * d + (d * 3 * d + 3 * d) + (d * d + d));
    add_group(p + ".mlp", 2 * d + (d * h + h) + (h * d + d));
  }
  add_group("final_norm", 2 * d);
  add_group("head", d * config.head_width() + config.head_width());
  return pc;
}

}  // namespace mfevit
