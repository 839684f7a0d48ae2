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

#include <string>

#include "mfevit/tensor.hpp"

namespace mfevit {

/// One aligned RGB image and depth map with their annotation.
struct ImagePair {
  Tensor rgb;    // [S × S × 3], values in [0, 1]
  Tensor depth;  // [S × S × 1], values in [0, 1]
  std::string sample_id;
  std::string subject_id;
  int expression = 0;  // main class 0..5
  int intensity = 0;
  bool noisy = false;  // synthetic ground truth for off-manifold samples; never used for training
};

/// Throws DimensionError on misaligned or malformed planes and NumericError
/// on values outside [0, 1].
void validate_pair(const ImagePair& pair);

}  // namespace mfevit
