// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training loops: backbone pretraining with a temporary linear head, mapper
// fine-tuning on a frozen backbone, evaluation and the ablation grid. All
// loops are single-threaded and deterministic for a fixed config.seed.

#pragma once

#include <cstddef>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "himapper/dataset.hpp"
#include "himapper/model.hpp"

namespace himapper {

// Append-only CSV with a fixed header. Each row carries the git-style hash
// of the run's config text; the text itself is written once next to the
// log as config-<hash>.txt.
class MetricsLog {
 public:
  struct Row {
    std::string phase;  // pretrain | finetune
    std::size_t epoch = 0;
    std::size_t step = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_ce = 0.0;
    std::optional<double> loss_cont;
    std::optional<double> loss_kl;
    double train_acc = 0.0;
    double eval_acc = 0.0;
    std::optional<double> triple_score;
  };

  static const char* header();

  // IoError when the file cannot be opened; ConfigError when an existing
  // file has a different header.
  MetricsLog(const std::string& path, const RunConfig& config);

  void append(const Row& row);
  const std::string& config_hash() const { return hash_; }
  std::size_t rows_written() const { return rows_; }

 private:
  std::ofstream out_;
  std::string hash_;
  std::size_t rows_ = 0;
};

// Backbone features of a whole dataset, one bundle per image.
struct FeatureCache {
  std::vector<FeatureBundle> features;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
};

// Extracts features without recording a graph, in chunks of batch_size.
FeatureCache compute_features(const Model& model, const Dataset& data, std::size_t batch_size);

struct EvalResult {
  double accuracy = 0.0;
  double loss_total = 0.0;
  double loss_ce = 0.0;
  double loss_cont = 0.0;
  double loss_kl = 0.0;
  double triple_score = 0.0;
  std::size_t count = 0;
};

// Baseline head on backbone features: accuracy and cross-entropy.
EvalResult evaluate_baseline(const Model& model, const FeatureCache& data);
// Full mapper with zero tree noise. Losses are means over batches of
// config.batch_size; the triple score pools every triple of every image.
EvalResult evaluate(const Model& model, const FeatureCache& data);

struct PretrainResult {
  double first_loss = 0.0;  // mean loss of the first epoch's first batch
  double last_loss = 0.0;   // mean loss of the final epoch
  double train_accuracy = 0.0;
  std::optional<double> eval_accuracy;
};

// Trains backbone + baseline head with cross-entropy (flip + crop
// augmentation) for config.pretrain_epochs, then copies the head into the
// mapper classifier. ArgumentError on an empty dataset.
PretrainResult pretrain_backbone(Model& model, const Dataset& train, const Dataset* eval = nullptr,
                                 MetricsLog* log = nullptr);

struct FinetuneResult {
  std::size_t steps = 0;
  double final_loss = 0.0;  // mean total loss of the final epoch
  EvalResult final_eval;
  std::vector<double> epoch_losses;
};

// Trains the mapper for config.epochs (and the backbone too when
// config.train_backbone). Evaluates on `eval` after every epoch. Throws
// TrainingDiverged on a non-finite loss.
FinetuneResult finetune(Model& model, const Dataset& train, const Dataset& eval, MetricsLog* log = nullptr);
// Frozen-backbone fine-tuning from precomputed features.
FinetuneResult finetune(Model& model, const FeatureCache& train, const FeatureCache& eval, MetricsLog* log = nullptr);

// Copies backbone + baseline head values (ConfigError on shape mismatch) and
// re-adopts the head.
void copy_backbone(const Model& from, Model& to);

struct AblationVariant {
  std::string name;
  std::string manifold = "hyperbolic";
  bool use_cont = true;
  bool use_kl = true;
  bool deterministic_tree = false;
};

// Named variants: full, cosine, no-cont, no-kl, ce-only, deterministic.
AblationVariant ablation_variant(const std::string& name);

struct AblationRow {
  std::size_t leaves = 0;
  std::size_t levels = 0;
  AblationVariant variant;
  double accuracy = 0.0;
  double triple_score = 0.0;
  double final_loss = 0.0;
};

// Fine-tunes one mapper per (N, L, variant) on top of `pretrained`'s
// backbone. Infeasible (N, L) pairs are skipped with a warning on
// `warnings` (when given).
std::vector<AblationRow> ablate(const Model& pretrained, const FeatureCache& train, const FeatureCache& eval,
                                const std::vector<std::size_t>& leaves, const std::vector<std::size_t>& levels,
                                const std::vector<AblationVariant>& variants, std::ostream* warnings = nullptr);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path);

}  // namespace himapper
