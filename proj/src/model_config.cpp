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

#include "mfevit/model_config.hpp"

#include "mfevit/errors.hpp"
#include "parse_util.hpp"

namespace mfevit {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::rgb_only: return "rgb_only";
    case FusionMode::depth_only: return "depth_only";
    case FusionMode::naive: return "naive";
    case FusionMode::alternative: return "alternative";
  }
  return "unknown";
}

FusionMode parse_fusion_mode(const std::string& text) {
  if (text == "rgb_only") return FusionMode::rgb_only;
  if (text == "depth_only") return FusionMode::depth_only;
  if (text == "naive") return FusionMode::naive;
  if (text == "alternative") return FusionMode::alternative;
  throw ConfigError("fusion_mode: expected rgb_only|depth_only|naive|alternative, got '" + text + "'");
}

std::size_t stream_count(FusionMode mode) {
  switch (mode) {
    case FusionMode::rgb_only:
    case FusionMode::depth_only: return 1;
    case FusionMode::naive: return 2;
    case FusionMode::alternative: return 3;
  }
  return 0;
}

std::vector<std::string> ModelConfig::problems() const {
  std::vector<std::string> out;
  if (patch_size == 0) out.emplace_back("patch_size must be positive");
  if (image_size == 0) out.emplace_back("image_size must be positive");
  if (patch_size != 0 && image_size % patch_size != 0) {
    out.emplace_back("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                     std::to_string(patch_size));
  }
  if (embed_dim == 0) out.emplace_back("embed_dim must be positive");
  if (num_heads == 0) out.emplace_back("num_heads must be positive");
  if (num_heads != 0 && embed_dim % num_heads != 0) {
    out.emplace_back("embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " +
                     std::to_string(num_heads));
  }
  if (mlp_ratio == 0) out.emplace_back("mlp_ratio must be positive");
  if (num_expressions != kNumExpressions) out.emplace_back("num_expressions is fixed at 6");
  if (!(delta > 0.0)) out.emplace_back("delta must be positive");
  if (dropout < 0.0 || dropout >= 1.0) out.emplace_back("dropout must lie in [0, 1)");
  if (!(layernorm_eps > 0.0)) out.emplace_back("layernorm_eps must be positive");
  return out;
}

void ModelConfig::validate() const {
  const auto issues = problems();
  if (issues.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& p : issues) msg += "\n  " + p;
  throw ConfigError(msg);
}

std::map<std::string, std::string> to_key_values(const ModelConfig& c) {
  return {
      {"image_size", std::to_string(c.image_size)},
      {"patch_size", std::to_string(c.patch_size)},
      {"embed_dim", std::to_string(c.embed_dim)},
      {"num_layers", std::to_string(c.num_layers)},
      {"num_heads", std::to_string(c.num_heads)},
      {"mlp_ratio", std::to_string(c.mlp_ratio)},
      {"num_expressions", std::to_string(c.num_expressions)},
      {"num_subclasses", std::to_string(c.num_subclasses)},
      {"delta", detail::format_double(c.delta)},
      {"fusion_mode", to_string(c.fusion_mode)},
      {"dropout", detail::format_double(c.dropout)},
      {"layernorm_eps", detail::format_double(c.layernorm_eps)},
  };
}

bool apply_model_key(ModelConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_double;
  using detail::parse_size;
  if (key == "image_size") c.image_size = parse_size(key, value);
  else if (key == "patch_size") c.patch_size = parse_size(key, value);
  else if (key == "embed_dim") c.embed_dim = parse_size(key, value);
  else if (key == "num_layers") c.num_layers = parse_size(key, value);
  else if (key == "num_heads") c.num_heads = parse_size(key, value);
  else if (key == "mlp_ratio") c.mlp_ratio = parse_size(key, value);
  else if (key == "num_expressions") c.num_expressions = parse_size(key, value);
  else if (key == "num_subclasses") c.num_subclasses = parse_size(key, value);
  else if (key == "delta") c.delta = parse_double(key, value);
  else if (key == "fusion_mode") c.fusion_mode = parse_fusion_mode(value);
  else if (key == "dropout") c.dropout = parse_double(key, value);
  else if (key == "layernorm_eps") c.layernorm_eps = parse_double(key, value);
  else return false;
  return true;
}

}  // namespace mfevit
