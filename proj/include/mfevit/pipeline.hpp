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

// Everything between files on disk and ImagePair batches: manifest parsing,
// decoding and resizing, augmentation, and the procedural dataset.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfevit/image_pair.hpp"
#include "mfevit/rng.hpp"

namespace mfevit {

struct ManifestRecord {
  std::string sample_id;
  std::string subject_id;
  int expression = 0;
  int intensity = 0;
  std::filesystem::path rgb_path;    // resolved against the manifest directory on load
  std::filesystem::path depth_path;
  bool noisy = false;                // optional metadata column

  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  /// Distinct subject ids in first-appearance order.
  std::vector<std::string> subjects() const;
};

/// Parses the comma-separated manifest. Required header columns:
/// sample_id, subject_id, expression, intensity, rgb_path, depth_path;
/// `noisy` (0/1) is optional. An empty file is an empty manifest.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Writes paths relative to the manifest's directory when possible.
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Bilinear resampling of an [H × W × C] tensor with corners aligned.
Tensor resize_bilinear(const Tensor& image, std::size_t out_height, std::size_t out_width);

/// Decodes one record: RGB scaled by 1/maxval, depth scaled then min-max
/// normalized, both resized to image_size × image_size.
ImagePair load_pair(const ManifestRecord& record, std::size_t image_size = 224);

std::vector<ImagePair> load_dataset(const DatasetManifest& manifest, std::size_t image_size);

struct AugmentationConfig {
  bool enabled = true;
  double flip_prob = 0.5;
  double erase_prob = 0.25;
  double erase_min_area = 0.02;
  double erase_max_area = 0.20;
  double jitter_brightness = 0.2;
  double jitter_contrast = 0.2;
  double jitter_saturation = 0.2;

  std::vector<std::string> problems() const;
  void validate() const;
  bool operator==(const AugmentationConfig&) const = default;
};

struct EraseRect {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// What augment() did, for auditing.
struct AugmentRecord {
  bool flipped = false;
  std::optional<EraseRect> erased;
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
};

ImagePair flip_horizontal(const ImagePair& pair);
/// Zero-fills the same rectangle in both planes.
ImagePair erase(const ImagePair& pair, const EraseRect& rect);
/// Brightness, contrast, then saturation factors on an RGB plane; clamps to [0, 1].
Tensor color_jitter(const Tensor& rgb, double brightness, double contrast, double saturation);

/// Spatial transforms hit RGB and depth identically; jitter touches RGB only.
ImagePair augment(const ImagePair& pair, const AugmentationConfig& config, Rng& rng,
                  AugmentRecord* record = nullptr);

struct SynthConfig {
  std::size_t num_subjects = 10;
  std::size_t samples_per_class = 4;  // per subject
  double noise_frac = 0.1;
  std::size_t image_size = 32;
  std::uint64_t seed = 0;
};

/// Sample i of the procedural dataset, rendered in memory.
ImagePair render_synthetic(const SynthConfig& config, std::size_t index);

/// Total sample count: subjects × 6 × samples_per_class.
std::size_t synthetic_size(const SynthConfig& config);

/// Whether sample `index` is one of the ⌈noise_frac · total⌉ noisy samples.
bool synthetic_is_noisy(const SynthConfig& config, std::size_t index);

/// Writes rgb/<id>.png (8-bit), depth/<id>.png (16-bit) and manifest.csv
/// under `out_dir`; returns the manifest with resolved paths.
DatasetManifest generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace mfevit
