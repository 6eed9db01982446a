// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0
//
// Re-encodes the global representation with the decomposed hierarchy, one
// decoder layer per level, and classifies the result.

#pragma once

#include <cstddef>
#include <vector>

#include "himapper/attention.hpp"
#include "himapper/decomposer.hpp"

namespace himapper {

struct EncoderParams {
  std::vector<DecoderLayerParams> layers;  // layer l - 1 reads level l
  LinearParams classifier;                 // d -> num_classes

  // Output projections of every layer start at zero, so an untrained
  // encoder passes v_cls through unchanged.
  static EncoderParams create(std::size_t width, std::size_t heads, std::size_t ff_ratio, std::size_t levels,
                              std::size_t num_classes, Rng& rng);
  std::size_t levels() const { return layers.size(); }
  void collect(const std::string& prefix, ParameterSet& out) const;
};

// v^0 = v_cls; v^l = G^l(v^{l-1}, S^l). Returns v^L. v_cls has one row per
// image of the hierarchy's batch; each row attends only to its own nodes.
Tensor encode_hierarchy(const Tensor& v_cls, const EuclideanHierarchy& hierarchy, const EncoderParams& params);

// v_cls + v^L
Tensor enhanced_representation(const Tensor& v_cls, const Tensor& encoded);

// Rows of `v_hat` mapped through the linear head.
Tensor classify(const Tensor& v_hat, const EncoderParams& params);

}  // namespace himapper
