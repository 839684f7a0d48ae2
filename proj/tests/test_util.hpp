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

#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "mfevit/encoder.hpp"
#include "mfevit/image_pair.hpp"
#include "mfevit/model_config.hpp"

namespace testutil {

inline mfevit::ImagePair random_pair(std::size_t size, std::mt19937_64& rng, int expression = 0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  mfevit::ImagePair p;
  p.rgb = mfevit::Tensor::zeros({size, size, 3});
  p.depth = mfevit::Tensor::zeros({size, size, 1});
  for (double& v : p.rgb.data()) v = u(rng);
  for (double& v : p.depth.data()) v = u(rng);
  p.sample_id = "sample";
  p.subject_id = "subject";
  p.expression = expression;
  return p;
}

inline mfevit::ModelConfig small_config(mfevit::FusionMode mode = mfevit::FusionMode::alternative) {
  mfevit::ModelConfig c;
  c.image_size = 16;
  c.patch_size = 8;
  c.embed_dim = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.mlp_ratio = 2;
  c.num_subclasses = 1;
  c.fusion_mode = mode;
  return c;
}

/// Adds noise to every parameter so no tensor keeps its structured initial value.
inline void perturb(mfevit::EncoderParams& params, std::mt19937_64& rng, double stddev = 0.3) {
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& nt : params.named())
    for (double& v : nt.tensor.data()) v += n(rng);
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("mfevit_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
