// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/encoder.hpp"

#include "himapper/errors.hpp"
#include "himapper/ops.hpp"

namespace himapper {

EncoderParams EncoderParams::create(std::size_t width, std::size_t heads, std::size_t ff_ratio, std::size_t levels,
                                    std::size_t num_classes, Rng& rng) {
  if (levels == 0 || num_classes == 0) throw ArgumentError("encoder: levels and classes must be positive");
  EncoderParams p;
  for (std::size_t l = 0; l < levels; ++l) {
    p.layers.push_back(DecoderLayerParams::create(width, heads, ff_ratio, rng, /*zero_output=*/true));
  }
  p.classifier = LinearParams::create(width, num_classes, rng);
  return p;
}

void EncoderParams::collect(const std::string& prefix, ParameterSet& out) const {
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(prefix + ".level" + std::to_string(l + 1), out);
  classifier.collect(prefix + ".classifier", out);
}

Tensor encode_hierarchy(const Tensor& v_cls, const EuclideanHierarchy& hierarchy, const EncoderParams& params) {
  if (hierarchy.depth() != params.levels()) {
    throw ArgumentError("encode_hierarchy: hierarchy has " + std::to_string(hierarchy.depth()) +
                        " levels but the encoder has " + std::to_string(params.levels()) + " layers");
  }
  if (v_cls.rank() != 2 || v_cls.rows() != hierarchy.batch) {
    throw ArgumentError("encode_hierarchy: v_cls must have one row per image");
  }
  AttentionOptions opts;
  opts.groups = hierarchy.batch;
  Tensor v = v_cls;
  for (std::size_t l = 0; l < params.levels(); ++l) {
    v = cross_attention_decoder(v, hierarchy.levels[l], params.layers[l], opts);
  }
  return v;
}

Tensor enhanced_representation(const Tensor& v_cls, const Tensor& encoded) {
  if (v_cls.shape() != encoded.shape()) throw ArgumentError("enhanced_representation: shape mismatch");
  return add(v_cls, encoded);
}

Tensor classify(const Tensor& v_hat, const EncoderParams& params) {
  if (v_hat.rank() != 2 || v_hat.cols() != params.classifier.weight.rows()) {
    throw ArgumentError("classify: input " + shape_string(v_hat.shape()) + " does not match the head");
  }
  return params.classifier.apply(v_hat);
}

}  // namespace himapper
