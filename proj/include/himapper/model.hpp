// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0
//
// The full classifier: backbone, baseline head and the hierarchy mapper
// (tree, decomposer, encoder, classifier) wired together.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "himapper/backbone.hpp"
#include "himapper/decomposer.hpp"
#include "himapper/encoder.hpp"
#include "himapper/hierarchy_tree.hpp"
#include "himapper/objective.hpp"
#include "himapper/run_config.hpp"

namespace himapper {

struct Model {
  RunConfig config;
  BackboneParams backbone;
  LinearParams baseline_head;  // classifier trained with the backbone
  HierarchyTree tree;
  DecomposerParams decomposer;
  EncoderParams encoder;
  Tensor log_curvature;  // single element; trained only with learn_curvature

  // Validates the config and draws every parameter from one stream seeded by
  // config.seed, in a fixed order that does not depend on ablation flags.
  static Model create(const RunConfig& config);

  // Curvature as a graph value (a constant unless learn_curvature).
  Tensor curvature() const;

  void collect_backbone(ParameterSet& out) const;  // backbone + baseline head
  void collect_mapper(ParameterSet& out) const;    // tree, decomposer, encoder, curvature
  ParameterSet all_parameters() const;

  // Copies the baseline head into the mapper classifier with its weight
  // halved, so a mapper whose encoder contributes nothing yet reproduces the
  // baseline logits exactly: (2 v) (W / 2) + b == v W + b.
  void adopt_baseline_head();
};

struct ForwardResult {
  Tensor logits;  // (batch x classes)
  Tensor ce;      // mean cross-entropy
  Tensor cont;    // contrastive term (hyperbolic or cosine per config)
  Tensor kl;
  Tensor total;   // ce + alpha_eff * cont + beta_eff * kl
  EuclideanHierarchy euclidean;
  HyperbolicHierarchy hyperbolic;
};

// Runs the mapper on precomputed features. One tree sample per image is
// drawn from `noise` in batch order. When a loss weight is zero its term is
// still evaluated for logging but kept out of the graph.
ForwardResult forward_mapper(const Model& model, const FeatureBundle& features, std::span<const std::size_t> labels,
                             NoiseSource& noise);

// Logits of the baseline head on backbone features.
Tensor baseline_logits(const Model& model, const FeatureBundle& features);

// Stacks per-image features (each v_map hw x d, v_cls 1 x d) into a batch.
FeatureBundle stack_features(std::span<const FeatureBundle> items);

}  // namespace himapper
