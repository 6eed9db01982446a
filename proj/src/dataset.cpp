// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "himapper/errors.hpp"

namespace himapper {

namespace {

enum Pattern : std::size_t { kSolid, kStripes, kBars, kRing, kDot, kCross, kPatternCount };

constexpr std::array<std::array<double, 3>, 4> kColours{{
    {0.90, 0.20, 0.20},  // red
    {0.20, 0.85, 0.30},  // green
    {0.25, 0.35, 0.95},  // blue
    {0.95, 0.85, 0.20},  // yellow
}};

// Parts are reused across sub-objects so that classes share structure.
const std::array<SubObject, 7> kSubObjects{{
    {{kSolid, 0}, {kStripes, 2}},
    {{kRing, 1}, {kSolid, 0}},
    {{kDot, 2}, {kCross, 3}},
    {{kBars, 3}, {kRing, 1}},
    {{kCross, 0}, {kDot, 1}},
    {{kStripes, 1}, {kBars, 2}},
    {{kSolid, 3}, {kCross, 2}},
}};

// Every pattern is symmetric under a horizontal flip, so flipped images
// keep their label. (u, v) are cell coordinates in (0, 1).
bool pattern_on(std::size_t pattern, double u, double v) {
  auto frac = [](double x) { return x - std::floor(x); };
  switch (pattern) {
    case kSolid:
      return true;
    case kStripes:
      return frac(2.0 * v) < 0.5;
    case kBars: {
      const double f = frac(2.0 * u);
      return f > 0.25 && f < 0.75;
    }
    case kRing:
      return std::min({u, 1.0 - u, v, 1.0 - v}) < 0.25;
    case kDot:
      return std::abs(u - 0.5) < 0.25 && std::abs(v - 0.5) < 0.25;
    case kCross:
      return std::abs(u - 0.5) < 0.15 || std::abs(v - 0.5) < 0.15;
    default:
      return false;
  }
}

// Class order walks pairs by circular distance so the first classes cover
// every sub-object.
std::vector<std::pair<std::size_t, std::size_t>> class_table() {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t s = kSubObjects.size();
  for (std::size_t gap = 1; gap <= s / 2; ++gap)
    for (std::size_t i = 0; i < s; ++i) out.emplace_back(std::min(i, (i + gap) % s), std::max(i, (i + gap) % s));
  return out;
}

const std::vector<std::pair<std::size_t, std::size_t>>& classes() {
  static const auto table = class_table();
  return table;
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

constexpr char kMagic[4] = {'H', 'M', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void SyntheticSpec::validate() const {
  if (num_classes == 0 || num_classes > max_synthetic_classes()) {
    throw ConfigError("dataset: num_classes must be in [1, " + std::to_string(max_synthetic_classes()) + "]");
  }
  if (per_class == 0) throw ConfigError("dataset: per_class must be positive");
  if (image_size < 8 || image_size % 4 != 0) throw ConfigError("dataset: image_size must be a multiple of 4, >= 8");
  if (channels != 1 && channels != 3) throw ConfigError("dataset: channels must be 1 or 3");
  if (!std::isfinite(pixel_noise) || pixel_noise < 0.0) throw ConfigError("dataset: pixel_noise must be >= 0");
}

std::array<double, 3> part_colour(std::size_t colour) { return kColours.at(colour); }

std::size_t sub_object_count() { return kSubObjects.size(); }
const SubObject& sub_object(std::size_t index) { return kSubObjects.at(index); }
std::pair<std::size_t, std::size_t> class_sub_objects(std::size_t label) { return classes().at(label); }
std::size_t max_synthetic_classes() { return classes().size(); }

Tensor Dataset::image(std::size_t index) const {
  const auto raw = raw_image(index);
  std::vector<double> v(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) v[i] = (raw[i] / 255.0 - 0.5) / 0.25;
  return Tensor({channels, image_size, image_size}, std::move(v));
}

std::span<const std::uint8_t> Dataset::raw_image(std::size_t index) const {
  if (index >= size()) throw ArgumentError("dataset: index out of range");
  return std::span<const std::uint8_t>(pixels).subspan(index * pixels_per_image(), pixels_per_image());
}

std::span<const std::uint8_t> Dataset::mask(std::size_t index) const {
  if (!has_masks()) throw ArgumentError("dataset: no part masks");
  if (index >= size()) throw ArgumentError("dataset: index out of range");
  const std::size_t n = image_size * image_size;
  return std::span<const std::uint8_t>(masks).subspan(index * n, n);
}

Dataset generate_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Dataset data;
  data.channels = spec.channels;
  data.image_size = spec.image_size;
  data.num_classes = spec.num_classes;
  const std::size_t n = spec.image_size, cell = n / 4, count = spec.num_classes * spec.per_class;
  data.labels.reserve(count);
  data.pixels.reserve(count * data.pixels_per_image());
  data.masks.reserve(count * n * n);

  Rng rng(seed);
  std::vector<double> canvas(spec.channels * n * n);
  std::vector<std::uint8_t> mask(n * n);
  for (std::size_t label = 0; label < spec.num_classes; ++label) {
    for (std::size_t k = 0; k < spec.per_class; ++k) {
      const double background = rng.uniform(0.1, 0.3);
      std::fill(canvas.begin(), canvas.end(), background);
      std::fill(mask.begin(), mask.end(), 0);

      auto [a, b] = class_sub_objects(label);
      if (rng.uniform() < 0.5) std::swap(a, b);
      const std::size_t oy = static_cast<std::size_t>(rng.integer(0, static_cast<long>(n - 2 * cell)));
      const std::size_t ox = static_cast<std::size_t>(rng.integer(0, static_cast<long>(n - 2 * cell)));
      const double brightness = rng.uniform(0.75, 1.15);

      for (std::size_t slot = 0; slot < 4; ++slot) {
        const SubObject& so = kSubObjects[slot < 2 ? a : b];
        const PartType& part = slot % 2 == 0 ? so.top : so.bottom;
        const std::size_t y0 = oy + (slot % 2) * cell, x0 = ox + (slot / 2) * cell;
        for (std::size_t y = 0; y < cell; ++y) {
          for (std::size_t x = 0; x < cell; ++x) {
            const double u = (x + 0.5) / cell, v = (y + 0.5) / cell;
            const double level = brightness * (pattern_on(part.pattern, u, v) ? 1.0 : 0.35);
            const std::size_t p = (y0 + y) * n + x0 + x;
            mask[p] = static_cast<std::uint8_t>(slot + 1);
            if (spec.channels == 3) {
              for (std::size_t c = 0; c < 3; ++c) canvas[c * n * n + p] = level * kColours[part.colour][c];
            } else {
              const auto& col = kColours[part.colour];
              canvas[p] = level * (col[0] + col[1] + col[2]) / 3.0;
            }
          }
        }
      }
      for (double v : canvas) data.pixels.push_back(quantize(v + spec.pixel_noise * rng.normal()));
      data.masks.insert(data.masks.end(), mask.begin(), mask.end());
      data.labels.push_back(label);
    }
  }
  return data;
}

void save_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(kMagic, 4);
  write_pod(out, kVersion);
  write_pod<std::uint64_t>(out, data.channels);
  write_pod<std::uint64_t>(out, data.image_size);
  write_pod<std::uint64_t>(out, data.num_classes);
  write_pod<std::uint64_t>(out, data.size());
  write_pod<std::uint8_t>(out, data.has_masks() ? 1 : 0);
  for (std::size_t label : data.labels) write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(label));
  out.write(reinterpret_cast<const char*>(data.pixels.data()), static_cast<std::streamsize>(data.pixels.size()));
  out.write(reinterpret_cast<const char*>(data.masks.data()), static_cast<std::streamsize>(data.masks.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw IoError("'" + path + "' is not a dataset file");
  if (read_pod<std::uint32_t>(in) != kVersion) throw IoError("'" + path + "' has an unsupported version");
  Dataset data;
  data.channels = read_pod<std::uint64_t>(in);
  data.image_size = read_pod<std::uint64_t>(in);
  data.num_classes = read_pod<std::uint64_t>(in);
  const auto count = read_pod<std::uint64_t>(in);
  const bool masks = read_pod<std::uint8_t>(in) != 0;
  if (!in || data.channels == 0 || data.image_size == 0 || count > (std::uint64_t{1} << 32) ||
      data.image_size > 4096) {
    throw IoError("'" + path + "' has a corrupt header");
  }
  data.labels.resize(count);
  for (auto& label : data.labels) {
    label = read_pod<std::uint32_t>(in);
    if (label >= data.num_classes) throw IoError("'" + path + "' has a label out of range");
  }
  data.pixels.resize(count * data.pixels_per_image());
  in.read(reinterpret_cast<char*>(data.pixels.data()), static_cast<std::streamsize>(data.pixels.size()));
  if (masks) {
    data.masks.resize(count * data.image_size * data.image_size);
    in.read(reinterpret_cast<char*>(data.masks.data()), static_cast<std::streamsize>(data.masks.size()));
  }
  if (!in) throw IoError("'" + path + "' is truncated");
  return data;
}

namespace {

struct Netpbm {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<double> values;  // in [0, 1], channel-interleaved
};

Netpbm read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path.string() + "'");
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
      } else {
        t += c;
      }
    }
    return t;
  };
  const std::string magic = token();
  const bool ascii = magic == "P2" || magic == "P3";
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") {
    throw IoError("'" + path.string() + "' is not a PGM/PPM image");
  }
  Netpbm img;
  img.channels = (magic == "P3" || magic == "P6") ? 3 : 1;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    const unsigned long maxval = std::stoul(token());
    if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 65535 || img.width * img.height > (1u << 26)) {
      throw IoError("'" + path.string() + "' has a bad header");
    }
    const std::size_t n = img.width * img.height * img.channels;
    img.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      unsigned long v;
      if (ascii) {
        v = std::stoul(token());
      } else if (maxval < 256) {
        v = static_cast<unsigned char>(in.get());
      } else {
        const unsigned hi = static_cast<unsigned char>(in.get());
        v = hi * 256u + static_cast<unsigned char>(in.get());
      }
      img.values[i] = std::min(1.0, static_cast<double>(v) / static_cast<double>(maxval));
    }
  } catch (const std::logic_error&) {
    throw IoError("'" + path.string() + "' is malformed");
  }
  if (!in && !in.eof()) throw IoError("'" + path.string() + "' is truncated");
  if (in.eof() && !ascii) throw IoError("'" + path.string() + "' is truncated");
  return img;
}

}  // namespace

Dataset load_image_directory(const std::string& root, std::size_t image_size, std::size_t channels) {
  namespace fs = std::filesystem;
  if (channels != 1 && channels != 3) throw ConfigError("ingest: channels must be 1 or 3");
  if (image_size == 0) throw ConfigError("ingest: image_size must be positive");
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError("'" + root + "' is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw IoError("'" + root + "' has no class sub-directories");

  Dataset data;
  data.channels = channels;
  data.image_size = image_size;
  data.num_classes = class_dirs.size();
  const std::size_t n = image_size;
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
      const auto ext = entry.path().extension().string();
      if (entry.is_regular_file() && (ext == ".ppm" || ext == ".pgm" || ext == ".pnm")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      const Netpbm img = read_netpbm(file);
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t y = 0; y < n; ++y) {
          for (std::size_t x = 0; x < n; ++x) {
            const std::size_t sy = y * img.height / n, sx = x * img.width / n;
            const double* px = &img.values[(sy * img.width + sx) * img.channels];
            double v;
            if (img.channels == channels) {
              v = px[c];
            } else if (channels == 3) {
              v = px[0];
            } else {
              v = (px[0] + px[1] + px[2]) / 3.0;
            }
            data.pixels.push_back(quantize(v));
          }
        }
      }
      data.labels.push_back(label);
    }
  }
  if (data.labels.empty()) throw IoError("'" + root + "' contains no PPM/PGM images");
  return data;
}

Tensor augment(const Tensor& image, Rng& rng, std::size_t pad) {
  if (image.rank() != 3) throw ArgumentError("augment: expected a (C x H x W) image");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const bool flip = rng.uniform() < 0.5;
  const long dy = rng.integer(0, static_cast<long>(2 * pad)) - static_cast<long>(pad);
  const long dx = rng.integer(0, static_cast<long>(2 * pad)) - static_cast<long>(pad);
  const auto src = image.values();
  std::vector<double> out(src.size(), 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const long sy = static_cast<long>(y) + dy;
        long sx = static_cast<long>(x) + dx;
        if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) continue;
        if (flip) sx = static_cast<long>(w) - 1 - sx;
        out[(ch * h + y) * w + x] = src[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
      }
    }
  }
  return Tensor(image.shape(), std::move(out));
}

}  // namespace himapper
