// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0
//
// Splits a feature map into per-level node embeddings by letting sampled
// tree nodes cross-attend to the map.

#pragma once

#include <cstddef>
#include <vector>

#include "himapper/attention.hpp"
#include "himapper/hierarchy_tree.hpp"

namespace himapper {

// One stack of decoder layers shared by every level.
struct DecomposerParams {
  std::vector<DecoderLayerParams> layers;

  static DecomposerParams create(std::size_t width, std::size_t heads, std::size_t ff_ratio, Rng& rng,
                                 std::size_t num_layers = 2);
  std::size_t width() const { return layers.front().width; }
  void collect(const std::string& prefix, ParameterSet& out) const;
};

// Node embeddings per level for `batch` images; levels[l - 1] stacks each
// image's (N_l x d) block, image-major.
struct EuclideanHierarchy {
  std::vector<Tensor> levels;
  std::size_t batch = 1;

  std::size_t depth() const { return levels.size(); }
  const Tensor& level(std::size_t l) const { return levels.at(l - 1); }
  // The single-image hierarchy of image b (row slices, differentiable).
  EuclideanHierarchy image(std::size_t b) const;
};

// Runs the decoder stack with `queries` attending to `v_map`. When `trace` is
// set it receives the final layer's attention weights.
Tensor run_decoder_stack(const Tensor& queries, const Tensor& v_map, const DecomposerParams& params,
                         AttentionTrace* trace = nullptr, std::size_t groups = 1);

// Decodes the N1 sampled rows of one level and averages each node's group of
// draws_per_node consecutive rows, giving (N_l x d).
Tensor decompose_level(const LevelSample& sample, const Tensor& v_map, const DecomposerParams& params);

// All levels at once. Queries of different levels never interact, so they
// go through the stack as one stacked batch of rows.
EuclideanHierarchy decompose_all(const std::vector<LevelSample>& samples, const Tensor& v_map,
                                 const DecomposerParams& params);

// Batched decompose_all: samples[b] are image b's tree samples and v_maps
// stacks the images' (hw x d) maps.
EuclideanHierarchy decompose_batch(const std::vector<std::vector<LevelSample>>& samples, const Tensor& v_maps,
                                   const DecomposerParams& params);

// Per spatial position, the leaf whose query puts the most final-layer
// attention (head-averaged) on it; ties go to the lowest leaf index.
std::vector<std::size_t> leaf_assignment(const LevelSample& leaves, const Tensor& v_map,
                                         const DecomposerParams& params);

}  // namespace himapper
