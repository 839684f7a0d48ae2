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

#include "mfevit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "mfevit/errors.hpp"
#include "mfevit/image_io.hpp"
#include "mfevit/model_config.hpp"
#include "parse_util.hpp"

namespace mfevit {

namespace {

const std::vector<std::string> kRequiredColumns{"sample_id", "subject_id", "expression",
                                                "intensity", "rgb_path",   "depth_path"};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(detail::trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Tensor to_tensor(const RawImage& img) {
  std::vector<double> values(img.samples.size());
  const double maxval = img.max_value();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = img.samples[i] / maxval;
  return Tensor({img.height, img.width, img.channels}, std::move(values));
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

std::vector<std::string> DatasetManifest::subjects() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (seen.insert(r.subject_id).second) out.push_back(r.subject_id);
  }
  return out;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const std::filesystem::path base = path.parent_path();
  DatasetManifest manifest;
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> column;
  std::set<std::string> ids;
  const auto fail = [&](const std::string& msg) {
    throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = split_csv(detail::trim(line));
    if (column.empty()) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const bool known = cells[i] == "noisy" || std::find(kRequiredColumns.begin(), kRequiredColumns.end(),
                                                            cells[i]) != kRequiredColumns.end();
        if (!known) fail("unknown column '" + cells[i] + "'");
        if (!column.emplace(cells[i], i).second) fail("duplicate column '" + cells[i] + "'");
      }
      for (const auto& req : kRequiredColumns) {
        if (!column.count(req)) fail("missing column '" + req + "'");
      }
      continue;
    }
    if (cells.size() != column.size()) {
      fail("expected " + std::to_string(column.size()) + " fields, got " + std::to_string(cells.size()));
    }
    ManifestRecord r;
    r.sample_id = cells[column["sample_id"]];
    r.subject_id = cells[column["subject_id"]];
    if (r.sample_id.empty()) fail("empty sample_id");
    if (r.subject_id.empty()) fail("empty subject_id");
    try {
      const long long expr = detail::parse_int("expression", cells[column["expression"]]);
      if (expr < 0 || expr >= static_cast<long long>(kNumExpressions)) {
        fail("sample " + r.sample_id + ": expression " + std::to_string(expr) + " outside 0..5");
      }
      r.expression = static_cast<int>(expr);
      r.intensity = static_cast<int>(detail::parse_int("intensity", cells[column["intensity"]]));
      if (column.count("noisy")) r.noisy = detail::parse_bool("noisy", cells[column["noisy"]]);
    } catch (const ConfigError& e) {
      fail(e.what());
    }
    r.rgb_path = base / cells[column["rgb_path"]];
    r.depth_path = base / cells[column["depth_path"]];
    if (!ids.insert(r.sample_id).second) fail("duplicate sample_id " + r.sample_id);
    for (const auto& p : {r.rgb_path, r.depth_path}) {
      if (!std::filesystem::exists(p)) {
        throw IoError(path.string() + ":" + std::to_string(line_no) + ": missing file " + p.string());
      }
    }
    manifest.records.push_back(std::move(r));
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  const std::filesystem::path base = path.parent_path();
  const auto rel = [&](const std::filesystem::path& p) {
    if (p.is_relative()) return p.string();
    auto r = p.lexically_relative(base.empty() ? std::filesystem::current_path() : std::filesystem::absolute(base));
    return r.empty() ? p.string() : r.string();
  };
  out << "sample_id,subject_id,expression,intensity,rgb_path,depth_path,noisy\n";
  for (const auto& r : manifest.records) {
    out << r.sample_id << ',' << r.subject_id << ',' << r.expression << ',' << r.intensity << ','
        << rel(r.rgb_path) << ',' << rel(r.depth_path) << ',' << (r.noisy ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_height, std::size_t out_width) {
  if (image.rank() != 3) throw DimensionError("resize_bilinear: expected [H x W x C], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (h == out_height && w == out_width) return image.clone();
  Tensor out = Tensor::zeros({out_height, out_width, c});
  auto src = image.data();
  auto dst = out.data();
  // Corner pixels map onto corner pixels, so an integer up/down round trip
  // lands back on the source samples.
  const auto step = [](std::size_t in, std::size_t out) {
    return out > 1 ? static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
  };
  const double sy = step(h, out_height), sx = step(w, out_width);
  const auto coord = [](double pos, std::size_t extent, std::size_t& i0, std::size_t& i1, double& frac) {
    pos = std::clamp(pos, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<std::size_t>(std::floor(pos));
    i1 = std::min(i0 + 1, extent - 1);
    frac = pos - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_height; ++y) {
    std::size_t y0, y1;
    double fy;
    coord(out_height > 1 ? static_cast<double>(y) * sy : 0.5 * static_cast<double>(h - 1), h, y0, y1, fy);
    for (std::size_t x = 0; x < out_width; ++x) {
      std::size_t x0, x1;
      double fx;
      coord(out_width > 1 ? static_cast<double>(x) * sx : 0.5 * static_cast<double>(w - 1), w, x0, x1, fx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double a = src[(y0 * w + x0) * c + ch], b = src[(y0 * w + x1) * c + ch];
        const double cc = src[(y1 * w + x0) * c + ch], d = src[(y1 * w + x1) * c + ch];
        const double top = a + (b - a) * fx;
        const double bottom = cc + (d - cc) * fx;
        dst[(y * out_width + x) * c + ch] = top + (bottom - top) * fy;
      }
    }
  }
  return out;
}

ImagePair load_pair(const ManifestRecord& record, std::size_t image_size) {
  const RawImage rgb = read_png(record.rgb_path);
  const RawImage depth = read_png(record.depth_path);
  if (rgb.channels != 3) {
    throw DimensionError(record.rgb_path.string() + ": expected 3 channels, found " + std::to_string(rgb.channels));
  }
  if (depth.channels != 1) {
    throw DimensionError(record.depth_path.string() + ": expected 1 channel, found " +
                         std::to_string(depth.channels));
  }
  if (rgb.width != depth.width || rgb.height != depth.height) {
    throw DimensionError("sample " + record.sample_id + ": rgb and depth sizes differ");
  }
  ImagePair pair;
  pair.rgb = resize_bilinear(to_tensor(rgb), image_size, image_size);
  pair.depth = resize_bilinear(to_tensor(depth), image_size, image_size);
  auto d = pair.depth.data();
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  const double low = *lo, range = *hi - *lo;
  for (double& v : d) v = range > 0.0 ? (v - low) / range : 0.0;
  for (double& v : pair.rgb.data()) v = clamp01(v);
  pair.sample_id = record.sample_id;
  pair.subject_id = record.subject_id;
  pair.expression = record.expression;
  pair.intensity = record.intensity;
  pair.noisy = record.noisy;
  return pair;
}

std::vector<ImagePair> load_dataset(const DatasetManifest& manifest, std::size_t image_size) {
  std::vector<ImagePair> out;
  out.reserve(manifest.records.size());
  for (const auto& r : manifest.records) out.push_back(load_pair(r, image_size));
  return out;
}

std::vector<std::string> AugmentationConfig::problems() const {
  std::vector<std::string> out;
  const auto prob = [&](const char* name, double v) {
    if (!(v >= 0.0 && v <= 1.0)) out.push_back(std::string(name) + " must lie in [0, 1]");
  };
  prob("aug_flip_prob", flip_prob);
  prob("aug_erase_prob", erase_prob);
  if (!(erase_min_area > 0.0 && erase_min_area < 1.0)) out.emplace_back("aug_erase_min_area must lie in (0, 1)");
  if (!(erase_max_area > 0.0 && erase_max_area < 1.0)) out.emplace_back("aug_erase_max_area must lie in (0, 1)");
  if (erase_min_area > erase_max_area) out.emplace_back("aug_erase_min_area exceeds aug_erase_max_area");
  const auto jitter = [&](const char* name, double v) {
    if (!(v >= 0.0 && v < 1.0)) out.push_back(std::string(name) + " must lie in [0, 1)");
  };
  jitter("aug_jitter_brightness", jitter_brightness);
  jitter("aug_jitter_contrast", jitter_contrast);
  jitter("aug_jitter_saturation", jitter_saturation);
  return out;
}

void AugmentationConfig::validate() const {
  const auto issues = problems();
  if (issues.empty()) return;
  std::string msg = "invalid augmentation config:";
  for (const auto& p : issues) msg += "\n  " + p;
  throw ConfigError(msg);
}

ImagePair flip_horizontal(const ImagePair& pair) {
  ImagePair out = pair;
  for (Tensor* plane : {&out.rgb, &out.depth}) {
    Tensor src = *plane;
    Tensor dst = Tensor::zeros(src.shape());
    const std::size_t h = src.dim(0), w = src.dim(1), c = src.dim(2);
    auto s = src.data();
    auto d = dst.data();
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) d[(y * w + x) * c + ch] = s[(y * w + (w - 1 - x)) * c + ch];
    *plane = dst;
  }
  return out;
}

ImagePair erase(const ImagePair& pair, const EraseRect& rect) {
  ImagePair out = pair;
  out.rgb = pair.rgb.clone();
  out.depth = pair.depth.clone();
  for (Tensor* plane : {&out.rgb, &out.depth}) {
    const std::size_t h = plane->dim(0), w = plane->dim(1), c = plane->dim(2);
    if (rect.top + rect.height > h || rect.left + rect.width > w) {
      throw DimensionError("erase: rectangle exceeds the image");
    }
    auto d = plane->data();
    for (std::size_t y = rect.top; y < rect.top + rect.height; ++y)
      for (std::size_t x = rect.left; x < rect.left + rect.width; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) d[(y * w + x) * c + ch] = 0.0;
  }
  return out;
}

Tensor color_jitter(const Tensor& rgb, double brightness, double contrast, double saturation) {
  Tensor out = rgb.clone();
  auto d = out.data();
  const std::size_t pixels = d.size() / 3;
  const auto gray = [&](std::size_t p) { return 0.299 * d[3 * p] + 0.587 * d[3 * p + 1] + 0.114 * d[3 * p + 2]; };
  for (double& v : d) v = clamp01(v * brightness);
  double mean = 0.0;
  for (std::size_t p = 0; p < pixels; ++p) mean += gray(p);
  mean /= static_cast<double>(pixels);
  for (double& v : d) v = clamp01((v - mean) * contrast + mean);
  for (std::size_t p = 0; p < pixels; ++p) {
    const double g = gray(p);
    for (std::size_t ch = 0; ch < 3; ++ch) d[3 * p + ch] = clamp01(g + (d[3 * p + ch] - g) * saturation);
  }
  return out;
}

ImagePair augment(const ImagePair& pair, const AugmentationConfig& config, Rng& rng, AugmentRecord* record) {
  config.validate();
  AugmentRecord rec;
  ImagePair out = pair;
  if (config.enabled) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(rng) < config.flip_prob) {
      out = flip_horizontal(out);
      rec.flipped = true;
    }
    if (unit(rng) < config.erase_prob) {
      const std::size_t h = out.rgb.dim(0), w = out.rgb.dim(1);
      std::uniform_real_distribution<double> area_dist(config.erase_min_area, config.erase_max_area);
      std::uniform_real_distribution<double> log_ratio(std::log(0.3), std::log(1.0 / 0.3));
      const double area = area_dist(rng) * static_cast<double>(h * w);
      const double ratio = std::exp(log_ratio(rng));
      const auto eh = std::clamp<std::size_t>(static_cast<std::size_t>(std::round(std::sqrt(area * ratio))), 1, h);
      const auto ew = std::clamp<std::size_t>(static_cast<std::size_t>(std::round(std::sqrt(area / ratio))), 1, w);
      std::uniform_int_distribution<std::size_t> top(0, h - eh), left(0, w - ew);
      EraseRect rect{top(rng), left(rng), eh, ew};
      out = erase(out, rect);
      rec.erased = rect;
    }
    const auto factor = [&](double range) {
      if (range <= 0.0) return 1.0;
      return std::uniform_real_distribution<double>(1.0 - range, 1.0 + range)(rng);
    };
    rec.brightness = factor(config.jitter_brightness);
    rec.contrast = factor(config.jitter_contrast);
    rec.saturation = factor(config.jitter_saturation);
    if (rec.brightness != 1.0 || rec.contrast != 1.0 || rec.saturation != 1.0) {
      out.rgb = color_jitter(out.rgb, rec.brightness, rec.contrast, rec.saturation);
    }
  }
  if (record) *record = rec;
  return out;
}

// Procedural dataset.
//
// Expression e is encoded by two factors: an RGB texture (e mod 3: horizontal
// stripes, vertical stripes, checkerboard; period a quarter of the image,
// fixed to the pixel grid) and a depth deformation (e div 3: raised brow
// region, sunken mouth region). Neither modality alone identifies the
// class. Subjects vary in skin tone, face position and depth scale; the
// intensity level scales both signals. Noisy samples carry the texture of
// the next expression in the same depth family and a blue-shifted tone.

std::size_t synthetic_size(const SynthConfig& config) {
  return config.num_subjects * kNumExpressions * config.samples_per_class;
}

namespace {

std::size_t noisy_count(const SynthConfig& config) {
  const double raw = config.noise_frac * static_cast<double>(synthetic_size(config));
  return static_cast<std::size_t>(std::ceil(raw - 1e-9));
}

}  // namespace

bool synthetic_is_noisy(const SynthConfig& config, std::size_t index) {
  const std::size_t total = synthetic_size(config);
  const std::size_t n = std::min(noisy_count(config), total);
  if (n == 0 || index >= total) return false;
  // Noisy indices are floor(j·total/n) for j < n, evenly spread.
  const std::size_t j = (index * n + total - 1) / total;
  return j < n && (j * total) / n == index;
}

ImagePair render_synthetic(const SynthConfig& config, std::size_t index) {
  const std::size_t per_subject = kNumExpressions * config.samples_per_class;
  const std::size_t subject = index / per_subject;
  const std::size_t expression = (index % per_subject) / config.samples_per_class;
  const std::size_t k = index % config.samples_per_class;
  const int intensity = static_cast<int>(k % 4) + 1;
  const bool noisy = synthetic_is_noisy(config, index);

  Rng subject_rng(derive_seed(config.seed, {0, subject}));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double red = 0.5 + 0.2 * u01(subject_rng);
  double tone[3] = {red, red - 0.12 + 0.06 * (u01(subject_rng) - 0.5), red - 0.22 + 0.06 * (u01(subject_rng) - 0.5)};
  const double dx = 0.12 * (u01(subject_rng) - 0.5);
  const double dy = 0.12 * (u01(subject_rng) - 0.5);
  const double depth_scale = 0.8 + 0.4 * u01(subject_rng);

  Rng sample_rng(derive_seed(config.seed, {1, index}));
  std::normal_distribution<double> pixel_noise(0.0, 0.03);
  std::normal_distribution<double> depth_noise(0.0, 0.01);
  const double jitter = 0.9 + 0.2 * u01(sample_rng);

  std::size_t texture = expression % 3;
  const std::size_t relief = expression / 3;
  if (noisy) {
    texture = (texture + 1) % 3;
    std::swap(tone[0], tone[2]);
  }
  const double amp = (0.10 + 0.04 * intensity) * jitter;
  const double relief_amp = (0.30 + 0.10 * intensity) * jitter;
  constexpr double weights[3] = {1.0, 0.7, 0.4};

  const std::size_t s = config.image_size;
  const double freq = 2.0 * std::numbers::pi * 4.0 / static_cast<double>(s);
  ImagePair pair;
  pair.rgb = Tensor::zeros({s, s, 3});
  pair.depth = Tensor::zeros({s, s, 1});
  auto rgb = pair.rgb.data();
  auto depth = pair.depth.data();
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(s) * 2.0 - 1.0 - dx;
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(s) * 2.0 - 1.0 - dy;
      const double r = std::sqrt(u * u + v * v);
      const double wy = std::sin(freq * (static_cast<double>(y) + 0.5));
      const double wx = std::sin(freq * (static_cast<double>(x) + 0.5));
      const double pattern = texture == 0 ? wy : texture == 1 ? wx : 2.0 * wx * wy;
      const std::size_t px = y * s + x;
      for (std::size_t c = 0; c < 3; ++c) {
        rgb[3 * px + c] = clamp01(tone[c] + amp * weights[c] * pattern + pixel_noise(sample_rng));
      }
      const double dome = std::max(0.0, 1.0 - r * r) * 0.3 * depth_scale;
      const double cy = relief == 0 ? -0.45 : 0.45;
      const double bump = std::exp(-(u * u + (v - cy) * (v - cy)) / (2.0 * 0.3 * 0.3));
      const double feature = relief == 0 ? relief_amp * bump : -relief_amp * bump;
      depth[px] = dome + feature + depth_noise(sample_rng);
    }
  }
  const auto [lo, hi] = std::minmax_element(depth.begin(), depth.end());
  const double low = *lo, range = *hi - *lo;
  for (double& d : depth) d = range > 0.0 ? (d - low) / range : 0.0;

  char id[64];
  std::snprintf(id, sizeof(id), "s%03zu_e%zu_k%02zu", subject, expression, k);
  char subj[32];
  std::snprintf(subj, sizeof(subj), "subject%03zu", subject);
  pair.sample_id = id;
  pair.subject_id = subj;
  pair.expression = static_cast<int>(expression);
  pair.intensity = intensity;
  pair.noisy = noisy;
  return pair;
}

DatasetManifest generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir) {
  if (config.num_subjects == 0 || config.samples_per_class == 0 || config.image_size == 0) {
    throw ConfigError("synthetic dataset parameters must be positive");
  }
  if (config.noise_frac < 0.0 || config.noise_frac > 1.0) throw ConfigError("noise_frac must lie in [0, 1]");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "rgb", ec);
  std::filesystem::create_directories(out_dir / "depth", ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  const std::size_t total = synthetic_size(config);
  for (std::size_t i = 0; i < total; ++i) {
    const ImagePair pair = render_synthetic(config, i);
    ManifestRecord r{pair.sample_id, pair.subject_id, pair.expression, pair.intensity,
                     out_dir / "rgb" / (pair.sample_id + ".png"), out_dir / "depth" / (pair.sample_id + ".png"),
                     pair.noisy};
    RawImage rgb{config.image_size, config.image_size, 3, 8, {}};
    for (double v : pair.rgb.data()) rgb.samples.push_back(static_cast<std::uint16_t>(std::lround(v * 255.0)));
    RawImage depth{config.image_size, config.image_size, 1, 16, {}};
    for (double v : pair.depth.data()) depth.samples.push_back(static_cast<std::uint16_t>(std::lround(v * 65535.0)));
    write_png(r.rgb_path, rgb);
    write_png(r.depth_path, depth);
    manifest.records.push_back(std::move(r));
  }
  write_manifest(out_dir / "manifest.csv", manifest);
  return manifest;
}

}  // namespace mfevit
