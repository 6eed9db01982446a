// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/model.hpp"

#include <cmath>
#include <optional>

#include "himapper/errors.hpp"
#include "himapper/ops.hpp"

namespace himapper {

Model Model::create(const RunConfig& config) {
  config.validate();
  Rng rng(config.seed);
  auto backbone = BackboneParams::create(config.backbone_config(), rng);
  auto head = LinearParams::create(config.width, config.num_classes, rng);
  auto tree = HierarchyTree::random(config.tree_shape(), rng, config.leaf_init_std);
  tree.set_deterministic(config.deterministic_tree);
  auto decomposer = DecomposerParams::create(config.width, config.heads, config.ff_ratio, rng, config.decoder_layers);
  auto encoder = EncoderParams::create(config.width, config.heads, config.ff_ratio, config.levels, config.num_classes, rng);
  Model m{config,
          std::move(backbone),
          std::move(head),
          std::move(tree),
          std::move(decomposer),
          std::move(encoder),
          Tensor::parameter({1}, {std::log(config.curvature)})};
  m.adopt_baseline_head();
  return m;
}

Tensor Model::curvature() const {
  if (config.learn_curvature) return exp(log_curvature);
  return Tensor::scalar(config.curvature);
}

void Model::collect_backbone(ParameterSet& out) const {
  backbone.collect("backbone", out);
  baseline_head.collect("baseline_head", out);
}

void Model::collect_mapper(ParameterSet& out) const {
  tree.collect("tree", out);
  decomposer.collect("decomposer", out);
  encoder.collect("encoder", out);
  if (config.learn_curvature) out.add("log_curvature", log_curvature);
}

ParameterSet Model::all_parameters() const {
  ParameterSet out;
  collect_backbone(out);
  collect_mapper(out);
  if (!config.learn_curvature) out.add("log_curvature", log_curvature);
  return out;
}

void Model::adopt_baseline_head() {
  auto dst = encoder.classifier.weight.mutable_values();
  const auto src = baseline_head.weight.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = 0.5 * src[i];
  auto dst_b = encoder.classifier.bias.mutable_values();
  const auto src_b = baseline_head.bias.values();
  std::copy(src_b.begin(), src_b.end(), dst_b.begin());
}

FeatureBundle stack_features(std::span<const FeatureBundle> items) {
  if (items.empty()) throw ArgumentError("stack_features: empty batch");
  if (items.size() == 1) return items.front();
  std::vector<Tensor> maps, cls;
  for (const auto& f : items) {
    if (f.batch != 1) throw ArgumentError("stack_features: items must be single images");
    maps.push_back(f.v_map);
    cls.push_back(f.v_cls);
  }
  FeatureBundle out;
  out.v_map = concat_rows(maps);
  out.v_cls = concat_rows(cls);
  out.batch = items.size();
  return out;
}

Tensor baseline_logits(const Model& model, const FeatureBundle& features) {
  return model.baseline_head.apply(features.v_cls);
}

ForwardResult forward_mapper(const Model& model, const FeatureBundle& features, std::span<const std::size_t> labels,
                             NoiseSource& noise) {
  const RunConfig& cfg = model.config;
  if (labels.size() != features.batch) throw ArgumentError("forward: label count does not match the batch");
  std::vector<std::vector<LevelSample>> samples;
  samples.reserve(features.batch);
  for (std::size_t b = 0; b < features.batch; ++b) samples.push_back(model.tree.sample_tree(noise));

  ForwardResult r;
  r.euclidean = decompose_batch(samples, features.v_map, model.decomposer);
  Tensor encoded = encode_hierarchy(features.v_cls, r.euclidean, model.encoder);
  r.logits = classify(enhanced_representation(features.v_cls, encoded), model.encoder);
  r.ce = mean(cross_entropy_rows(r.logits, labels));

  const LossWeights weights{cfg.effective_alpha(), cfg.effective_beta()};
  const Tensor c = model.curvature();
  {
    std::optional<NoGradGuard> off;
    if (weights.alpha == 0.0) off.emplace();
    r.hyperbolic = map_hierarchy(r.euclidean, c);
    if (cfg.levels < 2) {
      r.cont = Tensor::scalar(0.0);
    } else if (cfg.hyperbolic()) {
      r.cont = hierarchical_contrastive_loss(r.hyperbolic);
    } else {
      r.cont = cosine_contrastive_loss(r.euclidean);
    }
  }
  {
    std::optional<NoGradGuard> off;
    if (weights.beta == 0.0) off.emplace();
    r.kl = model.tree.kl_regularizer();
  }
  r.total = total_loss(r.ce, r.cont, r.kl, weights);
  return r;
}

}  // namespace himapper
