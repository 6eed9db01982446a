// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "himapper/checkpoint.hpp"
#include "himapper/errors.hpp"
#include "himapper/trainer.hpp"
#include "test_util.hpp"

namespace himapper {
namespace {

using testing::tiny_dataset;
using testing::tiny_run_config;

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Gives the backbone and baseline head random values so the mapper has
// something non-trivial to reproduce.
void scramble_backbone(Model& m, std::uint64_t seed) {
  Rng rng(seed);
  ParameterSet ps;
  m.collect_backbone(ps);
  for (const auto& p : ps.entries()) {
    Tensor t = p.tensor;
    for (auto& v : t.mutable_values()) v += 0.3 * rng.normal();
  }
  m.adopt_baseline_head();
}

TEST(Pretrain, LossFallsAndHeadIsAdopted) {
  auto config = tiny_run_config();
  config.pretrain_epochs = 8;
  config.pretrain_lr = 3e-3;
  config.pixel_noise = 0.1;
  Model m = Model::create(config);
  auto train = tiny_dataset(config, 8, 1);
  auto r = pretrain_backbone(m, train);
  EXPECT_LT(r.last_loss, r.first_loss);
  EXPECT_GT(r.train_accuracy, 1.0 / 3.0);
  EXPECT_FALSE(r.eval_accuracy.has_value());
  for (std::size_t i = 0; i < m.baseline_head.weight.numel(); ++i)
    EXPECT_EQ(m.encoder.classifier.weight.values()[i], 0.5 * m.baseline_head.weight.values()[i]);
  EXPECT_EQ(testing::to_vector(m.encoder.classifier.bias), testing::to_vector(m.baseline_head.bias));
}

TEST(Pretrain, EmptyDatasetIsArgumentError) {
  auto config = tiny_run_config();
  Model m = Model::create(config);
  Dataset empty;
  empty.channels = config.channels;
  empty.image_size = config.image_size;
  empty.num_classes = config.num_classes;
  EXPECT_THROW(pretrain_backbone(m, empty), ArgumentError);
}

TEST(Evaluate, RepeatedEvaluationIsBitIdentical) {
  auto config = tiny_run_config();
  Model m = Model::create(config);
  scramble_backbone(m, 2);
  auto cache = compute_features(m, tiny_dataset(config, 5, 3), config.batch_size);
  auto a = evaluate(m, cache), b = evaluate(m, cache);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.loss_total, b.loss_total);
  EXPECT_EQ(a.triple_score, b.triple_score);
  EXPECT_EQ(a.count, 15u);
  auto fa = evaluate_baseline(m, cache), fb = evaluate_baseline(m, cache);
  EXPECT_EQ(fa.accuracy, fb.accuracy);
  EXPECT_EQ(fa.loss_ce, fb.loss_ce);
}

TEST(Evaluate, UntrainedModelIsNearChance) {
  auto config = tiny_run_config();
  config.num_classes = 4;
  const std::size_t per_class = 30;
  auto data = tiny_dataset(config, per_class, 4);
  const double n = 4.0 * per_class, p = 0.25, tol = 3.0 * std::sqrt(p * (1 - p) / n);
  for (std::uint64_t seed : {1, 2, 3}) {
    config.seed = seed;
    Model m = Model::create(config);
    auto r = evaluate(m, compute_features(m, data, config.batch_size));
    EXPECT_NEAR(r.accuracy, p, tol) << "seed " << seed;
  }
}

TEST(NoHarm, StepZeroLogitsMatchTheBaselineBitForBit) {
  for (const char* manifold : {"hyperbolic", "cosine"}) {
    auto config = tiny_run_config();
    config.manifold = manifold;
    Model m = Model::create(config);
    scramble_backbone(m, 5);
    auto cache = compute_features(m, tiny_dataset(config, 4, 6), config.batch_size);
    auto features = stack_features(cache.features);
    NoGradGuard no_grad;
    auto noise = NoiseSource::gaussian(9);
    Tensor mapped = forward_mapper(m, features, cache.labels, noise).logits;
    Tensor base = baseline_logits(m, features);
    EXPECT_EQ(testing::to_vector(mapped), testing::to_vector(base)) << manifold;
  }
}

TEST(ForwardMapper, ManifoldSwitchOnlyChangesTheContrastiveTerm) {
  auto config = tiny_run_config();
  ForwardResult results[2];
  for (int i = 0; i < 2; ++i) {
    config.manifold = i == 0 ? "hyperbolic" : "cosine";
    Model m = Model::create(config);
    scramble_backbone(m, 15);
    // Wake the encoder so the step-0 logits depend on the hierarchy.
    Rng rng(16);
    for (auto& layer : m.encoder.layers)
      for (auto& v : layer.attention.output.mutable_values()) v = 0.3 * rng.normal();
    auto cache = compute_features(m, tiny_dataset(config, 2, 17), config.batch_size);
    auto noise = NoiseSource::gaussian(18);
    results[i] = forward_mapper(m, stack_features(cache.features), cache.labels, noise);
  }
  EXPECT_EQ(testing::to_vector(results[0].logits), testing::to_vector(results[1].logits));
  EXPECT_EQ(results[0].ce.item(), results[1].ce.item());
  EXPECT_EQ(results[0].kl.item(), results[1].kl.item());
  EXPECT_NE(results[0].cont.item(), results[1].cont.item());
}

TEST(ForwardMapper, ZeroWeightsLeaveOnlyTheCrossEntropyGradient) {
  auto config = tiny_run_config();
  config.alpha = 0.0;
  config.beta = 0.0;
  Model m = Model::create(config);
  scramble_backbone(m, 7);
  auto cache = compute_features(m, tiny_dataset(config, 2, 8), config.batch_size);
  auto features = stack_features(cache.features);
  ParameterSet ps;
  m.collect_mapper(ps);
  auto grads = [&](bool use_total) {
    ps.zero_grad();
    auto noise = NoiseSource::gaussian(3);
    auto r = forward_mapper(m, features, cache.labels, noise);
    EXPECT_GT(r.cont.item(), 0.0);  // still computed for logging
    (use_total ? r.total : r.ce).backward();
    std::vector<double> out;
    for (const auto& p : ps.entries()) {
      auto g = p.tensor.grad();
      if (g.empty()) out.insert(out.end(), p.tensor.numel(), 0.0);
      else out.insert(out.end(), g.begin(), g.end());
    }
    return out;
  };
  EXPECT_EQ(grads(true), grads(false));
}

TEST(ForwardMapper, DeterministicTreeGivesSigmaNoGradient) {
  auto config = tiny_run_config();
  config.deterministic_tree = true;
  Model m = Model::create(config);
  scramble_backbone(m, 9);
  auto cache = compute_features(m, tiny_dataset(config, 2, 10), config.batch_size);
  auto noise = NoiseSource::gaussian(4);
  auto r = forward_mapper(m, stack_features(cache.features), cache.labels, noise);
  EXPECT_EQ(r.kl.item(), 0.0);
  r.total.backward();
  for (double g : m.tree.leaf_log_sigma().grad()) EXPECT_EQ(g, 0.0);
  double mu_norm = 0.0;
  for (double g : m.tree.leaf_mu().grad()) mu_norm += g * g;
  EXPECT_GT(mu_norm, 0.0);
}

struct FinetuneFixture {
  RunConfig config = [] {
    auto c = tiny_run_config();
    c.epochs = 2;
    c.seed = 11;
    return c;
  }();
  Dataset train = tiny_dataset(config, 3, 12);  // 9 images -> 3 steps per epoch
  Dataset eval = tiny_dataset(config, 2, 13);

  Model model() const {
    Model m = Model::create(config);
    scramble_backbone(m, 14);
    return m;
  }
};

TEST(Finetune, FixedSeedRepeatsExactly) {
  FinetuneFixture f;
  Model a = f.model(), b = f.model();
  auto ra = finetune(a, compute_features(a, f.train, 4), compute_features(a, f.eval, 4));
  auto rb = finetune(b, compute_features(b, f.train, 4), compute_features(b, f.eval, 4));
  EXPECT_EQ(ra.steps, 6u);
  EXPECT_EQ(ra.epoch_losses, rb.epoch_losses);
  EXPECT_EQ(ra.final_eval.accuracy, rb.final_eval.accuracy);

  f.config.seed = 12;
  Model c = f.model();
  auto rc = finetune(c, compute_features(c, f.train, 4), compute_features(c, f.eval, 4));
  EXPECT_NE(ra.final_loss, rc.final_loss);
}

TEST(Finetune, DatasetAndCachedPathsAgreeWhenFrozen) {
  FinetuneFixture f;
  Model a = f.model(), b = f.model();
  auto ra = finetune(a, f.train, f.eval);
  auto rb = finetune(b, compute_features(b, f.train, f.config.batch_size), compute_features(b, f.eval, 4));
  ASSERT_EQ(ra.epoch_losses.size(), rb.epoch_losses.size());
  for (std::size_t i = 0; i < ra.epoch_losses.size(); ++i) EXPECT_NEAR(ra.epoch_losses[i], rb.epoch_losses[i], 1e-12);

  ParameterSet before, after;
  f.model().collect_backbone(before);
  a.collect_backbone(after);
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_EQ(testing::to_vector(before.entries()[i].tensor), testing::to_vector(after.entries()[i].tensor));
}

TEST(Finetune, TrainableBackboneMoves) {
  FinetuneFixture f;
  f.config.train_backbone = true;
  f.config.epochs = 1;
  Model m = f.model();
  const auto embed_before = testing::to_vector(m.backbone.embed.weight);
  finetune(m, f.train, f.eval);
  EXPECT_GT(testing::max_abs_diff(embed_before, testing::to_vector(m.backbone.embed.weight)), 0.0);
}

TEST(Finetune, NonFiniteLossReportsTheStep) {
  FinetuneFixture f;
  Model m = f.model();
  auto train = compute_features(m, f.train, 4), eval = compute_features(m, f.eval, 4);
  Tensor mu = m.tree.leaf_mu();
  mu.mutable_values()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    finetune(m, train, eval);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.step(), 0u);
  }
}

TEST(Finetune, EmptyTrainingSetIsArgumentError) {
  FinetuneFixture f;
  Model m = f.model();
  EXPECT_THROW(finetune(m, FeatureCache{}, compute_features(m, f.eval, 4)), ArgumentError);
}

TEST(MetricsLog, OneRowPerEpochWithConfigHash) {
  FinetuneFixture f;
  const auto dir = testing::scratch_dir("metrics-rows");
  const auto path = dir / "metrics.csv";
  Model m = f.model();
  FinetuneResult r;
  std::string hash;
  {
    MetricsLog log(path.string(), f.config);
    hash = log.config_hash();
    r = finetune(m, f.train, f.eval, &log);
    EXPECT_EQ(log.rows_written(), 2u);
  }
  auto lines = read_lines(path);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], MetricsLog::header());
  auto last = split_csv(lines[2]);
  ASSERT_EQ(last.size(), 12u);
  EXPECT_EQ(last[0], "finetune");
  EXPECT_EQ(last[1], "2");
  EXPECT_EQ(last[2], "6");
  EXPECT_EQ(std::stod(last[4]), r.final_loss);
  EXPECT_EQ(std::stod(last[9]), r.final_eval.accuracy);
  EXPECT_EQ(last[11], hash);

  EXPECT_EQ(hash, git_blob_sha1(f.config.to_text()));
  std::ifstream cfg(dir / ("config-" + hash + ".txt"));
  std::stringstream text;
  text << cfg.rdbuf();
  EXPECT_EQ(RunConfig::from_text(text.str()).to_text(), f.config.to_text());

  // The checkpointed model reproduces the logged accuracy.
  save_checkpoint((dir / "m.hmck").string(), m, {"finetune", {}});
  Model back = load_checkpoint((dir / "m.hmck").string()).model;
  EXPECT_EQ(evaluate(back, compute_features(back, f.eval, f.config.batch_size)).accuracy, std::stod(last[9]));
}

TEST(MetricsLog, AppendsToMatchingFilesAndRejectsOthers) {
  const auto dir = testing::scratch_dir("metrics-append");
  const auto path = (dir / "m.csv").string();
  auto config = tiny_run_config();
  MetricsLog::Row row;
  row.phase = "pretrain";
  { MetricsLog(path, config).append(row); }
  { MetricsLog(path, config).append(row); }
  auto lines = read_lines(path);
  ASSERT_EQ(lines.size(), 3u);
  // Optional fields stay empty.
  EXPECT_EQ(split_csv(lines[1])[6], "");

  std::ofstream(dir / "other.csv") << "a,b,c\n";
  EXPECT_THROW(MetricsLog((dir / "other.csv").string(), config), ConfigError);
  EXPECT_THROW(MetricsLog((dir / "missing" / "m.csv").string(), config), IoError);
}

TEST(Ablate, GridSkipsInfeasiblePairs) {
  FinetuneFixture f;
  f.config.epochs = 1;
  Model pretrained = f.model();
  auto train = compute_features(pretrained, f.train, 4), eval = compute_features(pretrained, f.eval, 4);
  std::ostringstream warnings;
  auto rows = ablate(pretrained, train, eval, {4, 8}, {2, 3, 5},
                     {ablation_variant("full"), ablation_variant("cosine")}, &warnings);
  // Neither 4 nor 8 leaves can halve four times.
  ASSERT_EQ(rows.size(), 2u * 2u * 2u);
  EXPECT_NE(warnings.str().find("N=4 L=5"), std::string::npos);
  EXPECT_NE(warnings.str().find("N=8 L=5"), std::string::npos);
  EXPECT_EQ(warnings.str().find("L=3"), std::string::npos);
  for (const auto& r : rows) {
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.triple_score, 1.0);
  }
  EXPECT_EQ(rows[1].variant.manifold, "cosine");

  const auto path = testing::scratch_dir("ablate") / "ablation.csv";
  write_ablation_csv(rows, path.string());
  auto lines = read_lines(path);
  ASSERT_EQ(lines.size(), rows.size() + 1);
  EXPECT_EQ(lines[0], "N,L,variant,manifold,use_cont,use_kl,deterministic_tree,accuracy,triple_score,final_loss");
  EXPECT_EQ(split_csv(lines[2])[2], "cosine");
}

TEST(Ablate, NamedVariants) {
  EXPECT_EQ(ablation_variant("cosine").manifold, "cosine");
  EXPECT_FALSE(ablation_variant("no-cont").use_cont);
  EXPECT_FALSE(ablation_variant("no-kl").use_kl);
  auto ce = ablation_variant("ce-only");
  EXPECT_FALSE(ce.use_cont || ce.use_kl);
  EXPECT_TRUE(ablation_variant("deterministic").deterministic_tree);
  EXPECT_THROW(ablation_variant("euclid"), ConfigError);
}

}  // namespace
}  // namespace himapper
