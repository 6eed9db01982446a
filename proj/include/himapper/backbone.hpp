// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small trainable image encoder that stands in for a pre-trained network:
// non-overlapping patches, a linear embedding with learned positions, a few
// pre-norm blocks and a final LayerNorm. Produces a token grid (v_map) and a
// global vector (v_cls).

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "himapper/attention.hpp"
#include "himapper/params.hpp"
#include "himapper/random.hpp"
#include "himapper/tensor.hpp"

namespace himapper {

enum class BlockKind { kAttention, kConv };
enum class Pooling { kMean, kClassToken };

struct BackboneConfig {
  std::size_t channels = 3;
  std::size_t image_size = 32;
  std::size_t patch = 4;
  std::size_t width = 128;
  std::size_t heads = 4;
  std::size_t depth = 2;
  std::size_t ff_ratio = 4;
  BlockKind blocks = BlockKind::kAttention;
  Pooling pooling = Pooling::kMean;

  std::size_t grid() const { return image_size / patch; }
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t patch_dim() const { return channels * patch * patch; }
  // Throws ArgumentError on inconsistent sizes.
  void validate() const;
};

// 3x3 convolution over the token grid, zero padded, followed by GELU and a
// projection back to the residual stream.
struct ConvBlockParams {
  LayerNormParams norm;
  LinearParams conv;     // 9d -> d
  LinearParams project;  // d -> d

  void collect(const std::string& prefix, ParameterSet& out) const;
};

struct BackboneParams {
  BackboneConfig config;
  LinearParams embed;  // patch_dim -> d
  Tensor position;     // (tokens x d)
  Tensor class_token;  // (1 x d); defined only with Pooling::kClassToken
  std::vector<DecoderLayerParams> attention_blocks;
  std::vector<ConvBlockParams> conv_blocks;
  LayerNormParams final_norm;

  static BackboneParams create(const BackboneConfig& config, Rng& rng);
  void collect(const std::string& prefix, ParameterSet& out) const;
};

struct FeatureBundle {
  Tensor v_map;  // (batch * hw x d), image-major
  Tensor v_cls;  // (batch x d)
  std::size_t batch = 1;
};

// Rows of non-overlapping patches of a (C x H x W) image, each row laid out
// channel-major then row-major inside the patch. Returns (hw x C*P*P).
Tensor patchify(const Tensor& image, const BackboneConfig& config);

FeatureBundle extract_features(const Tensor& image, const BackboneParams& params);
// Batched extraction; every image runs through the same graph but attends
// only to its own tokens.
FeatureBundle extract_features(std::span<const Tensor> images, const BackboneParams& params);

}  // namespace himapper
