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
#include <cstdint>
#include <filesystem>
#include <vector>

namespace mfevit {

/// Decoded raster, interleaved, row-major.
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> samples;

  std::uint32_t max_value() const { return bit_depth == 16 ? 65535u : 255u; }
};

/// Reads a PNG; palette and sub-byte grayscale images are expanded to 8 bit.
/// Throws IoError on missing or undecodable files.
RawImage read_png(const std::filesystem::path& path);

/// Writes 8- or 16-bit grayscale / RGB PNG.
void write_png(const std::filesystem::path& path, const RawImage& image);

}  // namespace mfevit
