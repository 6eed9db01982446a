// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0
//
// Image datasets: a procedural compositional generator with ground-truth
// part masks, a compact binary file format and PPM/PGM directory ingestion.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "himapper/random.hpp"
#include "himapper/tensor.hpp"

namespace himapper {

// Each image shows one object on a noisy background. An object is two
// sub-objects side by side (in random order) and a sub-object is two parts
// stacked vertically, so the part tree is object -> 2 sub-objects -> 4 parts.
// A class is an unordered pair of distinct sub-objects; the sub-object and
// part vocabularies are fixed, so datasets drawn with different seeds share
// their classes.
struct SyntheticSpec {
  std::size_t num_classes = 10;
  std::size_t per_class = 200;
  std::size_t image_size = 32;  // multiple of 4; parts are image_size/4 square
  std::size_t channels = 3;
  double pixel_noise = 0.4;

  // Throws ConfigError when the spec cannot be rendered.
  void validate() const;
};

// Part type = pattern x colour.
struct PartType {
  std::size_t pattern = 0;
  std::size_t colour = 0;
};

struct SubObject {
  PartType top;
  PartType bottom;
};

// RGB of a part colour index, each channel in [0, 1].
std::array<double, 3> part_colour(std::size_t colour);

// Sub-object vocabulary size and the two sub-objects of each class.
std::size_t sub_object_count();
const SubObject& sub_object(std::size_t index);
std::pair<std::size_t, std::size_t> class_sub_objects(std::size_t label);
std::size_t max_synthetic_classes();

struct Dataset {
  std::size_t channels = 3;
  std::size_t image_size = 32;
  std::size_t num_classes = 0;
  std::vector<std::size_t> labels;
  std::vector<std::uint8_t> pixels;  // per image C x H x W
  // Per image H x W: 0 background, 1..4 parts (left top, left bottom, right
  // top, right bottom). Empty for ingested data.
  std::vector<std::uint8_t> masks;

  std::size_t size() const { return labels.size(); }
  std::size_t pixels_per_image() const { return channels * image_size * image_size; }
  bool has_masks() const { return !masks.empty(); }

  // (C x H x W) tensor scaled to roughly zero mean, unit range.
  Tensor image(std::size_t index) const;
  std::span<const std::uint8_t> raw_image(std::size_t index) const;
  std::span<const std::uint8_t> mask(std::size_t index) const;
};

// Deterministic given (spec, seed); images are grouped class by class.
Dataset generate_dataset(const SyntheticSpec& spec, std::uint64_t seed);

// Binary format with a magic tag and version. IoError on failure.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

// Directory whose sub-directories name the classes (sorted), each holding
// binary or ASCII PPM/PGM files. Images are resized (nearest neighbour) to
// image_size and converted to `channels` (1 or 3).
Dataset load_image_directory(const std::string& root, std::size_t image_size, std::size_t channels);

// Random horizontal flip and a random crop of a zero-padded copy, keeping
// the size. Used during backbone pretraining only.
Tensor augment(const Tensor& image, Rng& rng, std::size_t pad = 2);

}  // namespace himapper
