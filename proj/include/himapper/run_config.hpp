// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0
//
// Every knob of a run in one flat struct. visit_fields() is the single list
// of fields: the CLI registers one flag per entry, checkpoints echo them as
// JSON and the metrics log hashes their canonical key=value text.

#pragma once

#include <cstdint>
#include <string>

#include "himapper/backbone.hpp"
#include "himapper/hierarchy_tree.hpp"

namespace himapper {

struct RunConfig {
  // Hierarchy.
  std::size_t leaves = 32;  // N1
  std::size_t levels = 4;   // L
  std::size_t width = 128;  // d
  std::size_t heads = 4;
  std::size_t ff_ratio = 4;
  std::size_t decoder_layers = 2;
  double curvature = 1.0;
  bool learn_curvature = false;
  double leaf_init_std = 0.02;

  // Objective and its ablation switches.
  double alpha = 1.0;
  double beta = 0.01;
  std::string manifold = "hyperbolic";  // hyperbolic | cosine
  bool use_cont = true;
  bool use_kl = true;
  bool deterministic_tree = false;

  // Optimization.
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::size_t warmup_steps = 0;
  bool train_backbone = false;
  std::uint64_t seed = 0;

  // Backbone and its pretraining.
  std::size_t patch = 4;
  std::size_t backbone_depth = 2;
  std::string backbone_blocks = "attention";  // attention | conv
  std::string pooling = "mean";               // mean | cls
  std::size_t pretrain_epochs = 15;
  double pretrain_lr = 1e-3;

  // Data.
  std::size_t num_classes = 10;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t train_per_class = 200;
  std::size_t eval_per_class = 50;
  double pixel_noise = 0.4;

  std::string mode = "finetune";  // pretrain | finetune | eval | export | ablate

  // Throws ConfigError naming the first offending field.
  void validate() const;

  TreeShape tree_shape() const { return {leaves, levels, width}; }
  BackboneConfig backbone_config() const;
  bool hyperbolic() const { return manifold == "hyperbolic"; }
  // Loss weights with the ablation switches applied.
  double effective_alpha() const { return use_cont ? alpha : 0.0; }
  double effective_beta() const { return use_kl && !deterministic_tree ? beta : 0.0; }

  // One "key=value" line per field in declaration order.
  std::string to_text() const;
  // Reads text written by to_text() (or a hand-written subset; '#' starts a
  // comment). Unknown keys and malformed values are ConfigErrors.
  static RunConfig from_text(const std::string& text);
};

// Calls f(name, member) for every field, in declaration order.
template <class Config, class F>
void visit_fields(Config& c, F&& f) {
  f("leaves", c.leaves);
  f("levels", c.levels);
  f("width", c.width);
  f("heads", c.heads);
  f("ff_ratio", c.ff_ratio);
  f("decoder_layers", c.decoder_layers);
  f("curvature", c.curvature);
  f("learn_curvature", c.learn_curvature);
  f("leaf_init_std", c.leaf_init_std);
  f("alpha", c.alpha);
  f("beta", c.beta);
  f("manifold", c.manifold);
  f("use_cont", c.use_cont);
  f("use_kl", c.use_kl);
  f("deterministic_tree", c.deterministic_tree);
  f("lr", c.lr);
  f("weight_decay", c.weight_decay);
  f("batch_size", c.batch_size);
  f("epochs", c.epochs);
  f("warmup_steps", c.warmup_steps);
  f("train_backbone", c.train_backbone);
  f("seed", c.seed);
  f("patch", c.patch);
  f("backbone_depth", c.backbone_depth);
  f("backbone_blocks", c.backbone_blocks);
  f("pooling", c.pooling);
  f("pretrain_epochs", c.pretrain_epochs);
  f("pretrain_lr", c.pretrain_lr);
  f("num_classes", c.num_classes);
  f("image_size", c.image_size);
  f("channels", c.channels);
  f("train_per_class", c.train_per_class);
  f("eval_per_class", c.eval_per_class);
  f("pixel_noise", c.pixel_noise);
  f("mode", c.mode);
}

// Git-style blob hash: SHA-1 of "blob <size>\0" followed by the bytes,
// as 40 lowercase hex digits.
std::string git_blob_sha1(const std::string& content);

}  // namespace himapper
