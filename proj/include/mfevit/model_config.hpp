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

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace mfevit {

/// How RGB and depth are turned into the patch-embedding sequence.
enum class FusionMode {
  rgb_only,
  depth_only,
  naive,        // RGB stream + depth replicated to 3 channels, two projections
  alternative,  // depth replaces R, G, B in turn, three projections
};

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& text);
/// Number of independent patch projections the mode needs.
std::size_t stream_count(FusionMode mode);

inline constexpr std::size_t kNumExpressions = 6;

struct ModelConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 16;
  std::size_t embed_dim = 384;
  std::size_t num_layers = 12;
  std::size_t num_heads = 6;
  std::size_t mlp_ratio = 4;
  std::size_t num_expressions = kNumExpressions;
  std::size_t num_subclasses = 5;
  double delta = 0.4;
  FusionMode fusion_mode = FusionMode::alternative;
  double dropout = 0.0;
  double layernorm_eps = 1e-6;

  std::size_t grid() const { return image_size / patch_size; }
  /// M
  std::size_t num_patches() const { return grid() * grid(); }
  /// Flattened patch length, patch_size² · 3.
  std::size_t patch_dim() const { return patch_size * patch_size * 3; }
  std::size_t seq_len() const { return num_patches() + 1; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t mlp_dim() const { return embed_dim * mlp_ratio; }
  /// C·(N+1)
  std::size_t head_width() const { return num_expressions * (num_subclasses + 1); }
  std::size_t num_streams() const { return stream_count(fusion_mode); }

  /// Every violated constraint, empty when valid.
  std::vector<std::string> problems() const;
  /// Throws ConfigError listing all problems.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Flat key/value view used by config files and checkpoint headers.
std::map<std::string, std::string> to_key_values(const ModelConfig& config);
/// Applies one key; returns false when the key is not a model key.
/// Throws ConfigError on a malformed value.
bool apply_model_key(ModelConfig& config, const std::string& key, const std::string& value);

}  // namespace mfevit
