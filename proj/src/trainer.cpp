// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>

#include "himapper/errors.hpp"
#include "himapper/ops.hpp"
#include "himapper/optim.hpp"

namespace himapper {

namespace {

// splitmix64 finalizer; derives independent streams from the run seed.
std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t { kPretrainShuffle = 1, kAugment, kFinetuneShuffle, kTreeNoise };

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.cols(); ++k)
    if (logits(row, k) > logits(row, best)) best = k;
  return best;
}

std::size_t count_correct(const Tensor& logits, std::span<const std::size_t> labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += argmax_row(logits, i) == labels[i] ? 1 : 0;
  return correct;
}

std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

void require_finite(const Tensor& loss, std::size_t step, const char* what) {
  if (!std::isfinite(loss.item())) throw TrainingDiverged(step, what);
}

FeatureBundle gather_batch(const FeatureCache& cache, std::span<const std::size_t> index,
                           std::vector<std::size_t>& labels) {
  std::vector<FeatureBundle> items;
  items.reserve(index.size());
  labels.clear();
  for (std::size_t i : index) {
    items.push_back(cache.features[i]);
    labels.push_back(cache.labels[i]);
  }
  return stack_features(items);
}

// Shared fine-tuning loop. `batch_features` produces the (possibly
// differentiable) features of a batch; `eval_cache` the evaluation features
// after each epoch.
FinetuneResult finetune_loop(Model& model, std::size_t train_size,
                             const std::function<FeatureBundle(std::span<const std::size_t>,
                                                               std::vector<std::size_t>&)>& batch_features,
                             const std::function<FeatureCache()>& eval_cache, MetricsLog* log) {
  const RunConfig& cfg = model.config;
  if (train_size == 0) throw ArgumentError("finetune: empty training set");
  ParameterSet params;
  if (cfg.train_backbone) model.backbone.collect("backbone", params);
  model.collect_mapper(params);
  AdamW optimizer(params, {cfg.lr, cfg.weight_decay});

  const std::size_t per_epoch = steps_per_epoch(train_size, cfg.batch_size);
  const std::size_t total = per_epoch * cfg.epochs;
  Rng shuffle(mix(cfg.seed, kFinetuneShuffle));
  std::vector<std::size_t> order(train_size);
  std::vector<std::size_t> labels;

  FinetuneResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    double loss_sum = 0.0, ce_sum = 0.0, cont_sum = 0.0, kl_sum = 0.0, lr = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < train_size; start += cfg.batch_size, ++step) {
      const std::size_t count = std::min(cfg.batch_size, train_size - start);
      FeatureBundle features = batch_features(std::span(order).subspan(start, count), labels);
      NoiseSource noise = NoiseSource::gaussian(mix(cfg.seed, kTreeNoise + 16 * step));
      ForwardResult r = [&] {
        try {
          return forward_mapper(model, features, labels, noise);
        } catch (const NonFiniteError&) {
          throw TrainingDiverged(step, "loss");
        }
      }();
      require_finite(r.total, step, "loss");
      params.zero_grad();
      r.total.backward();
      lr = cosine_lr(cfg.lr, step, total, cfg.warmup_steps);
      optimizer.step(lr);

      const double b = static_cast<double>(count);
      loss_sum += r.total.item() * b;
      ce_sum += r.ce.item() * b;
      cont_sum += r.cont.item() * b;
      kl_sum += r.kl.item() * b;
      correct += count_correct(r.logits, labels);
    }
    const double n = static_cast<double>(train_size);
    result.epoch_losses.push_back(loss_sum / n);
    result.final_eval = evaluate(model, eval_cache());
    if (log) {
      MetricsLog::Row row;
      row.phase = "finetune";
      row.epoch = epoch;
      row.step = step;
      row.lr = lr;
      row.loss_total = loss_sum / n;
      row.loss_ce = ce_sum / n;
      row.loss_cont = cont_sum / n;
      row.loss_kl = kl_sum / n;
      row.train_acc = static_cast<double>(correct) / n;
      row.eval_acc = result.final_eval.accuracy;
      row.triple_score = result.final_eval.triple_score;
      log->append(row);
    }
  }
  result.steps = step;
  result.final_loss = result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back();
  return result;
}

}  // namespace

const char* MetricsLog::header() {
  return "phase,epoch,step,lr,loss_total,loss_ce,loss_cont,loss_kl,train_acc,eval_acc,triple_score,config_hash";
}

MetricsLog::MetricsLog(const std::string& path, const RunConfig& config) {
  namespace fs = std::filesystem;
  const std::string text = config.to_text();
  hash_ = git_blob_sha1(text);
  bool fresh = true;
  {
    std::ifstream existing(path);
    std::string first;
    if (existing && std::getline(existing, first)) {
      if (first != header()) throw ConfigError("metrics log '" + path + "' has a different header");
      fresh = false;
    }
  }
  out_.open(path, std::ios::app);
  if (!out_) throw IoError("cannot open metrics log '" + path + "'");
  if (fresh) out_ << header() << '\n';

  const fs::path dir = fs::path(path).parent_path();
  const fs::path config_path = dir / ("config-" + hash_ + ".txt");
  std::ofstream cfg(config_path);
  if (!cfg) throw IoError("cannot write '" + config_path.string() + "'");
  cfg << text;
  out_.flush();
}

void MetricsLog::append(const Row& row) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  out_ << row.phase << ',' << row.epoch << ',' << row.step << ',' << format_double(row.lr) << ','
       << format_double(row.loss_total) << ',' << format_double(row.loss_ce) << ',' << opt(row.loss_cont) << ','
       << opt(row.loss_kl) << ',' << format_double(row.train_acc) << ',' << format_double(row.eval_acc) << ','
       << opt(row.triple_score) << ',' << hash_ << '\n';
  out_.flush();
  if (!out_) throw IoError("failed writing the metrics log");
  ++rows_;
}

FeatureCache compute_features(const Model& model, const Dataset& data, std::size_t batch_size) {
  if (batch_size == 0) throw ArgumentError("compute_features: batch_size must be positive");
  NoGradGuard no_grad;
  FeatureCache cache;
  cache.labels = data.labels;
  cache.features.reserve(data.size());
  const std::size_t hw = model.backbone.config.tokens();
  std::vector<Tensor> images;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, data.size() - start);
    images.clear();
    for (std::size_t i = 0; i < count; ++i) images.push_back(data.image(start + i));
    FeatureBundle f = extract_features(images, model.backbone);
    for (std::size_t i = 0; i < count; ++i) {
      cache.features.push_back({slice_rows(f.v_map, i * hw, hw), slice_rows(f.v_cls, i, 1), 1});
    }
  }
  return cache;
}

EvalResult evaluate_baseline(const Model& model, const FeatureCache& data) {
  NoGradGuard no_grad;
  EvalResult r;
  std::vector<std::size_t> labels, index(data.size());
  std::iota(index.begin(), index.end(), 0);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += model.config.batch_size) {
    const std::size_t count = std::min(model.config.batch_size, data.size() - start);
    FeatureBundle f = gather_batch(data, std::span(index).subspan(start, count), labels);
    Tensor logits = baseline_logits(model, f);
    r.loss_ce += sum(cross_entropy_rows(logits, labels)).item();
    correct += count_correct(logits, labels);
  }
  r.count = data.size();
  if (r.count > 0) {
    r.loss_ce /= static_cast<double>(r.count);
    r.loss_total = r.loss_ce;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
  }
  return r;
}

EvalResult evaluate(const Model& model, const FeatureCache& data) {
  NoGradGuard no_grad;
  EvalResult r;
  std::vector<std::size_t> labels, index(data.size());
  std::iota(index.begin(), index.end(), 0);
  std::size_t correct = 0;
  TripleCount triples;
  for (std::size_t start = 0; start < data.size(); start += model.config.batch_size) {
    const std::size_t count = std::min(model.config.batch_size, data.size() - start);
    FeatureBundle f = gather_batch(data, std::span(index).subspan(start, count), labels);
    NoiseSource noise = NoiseSource::zeros();
    ForwardResult out = forward_mapper(model, f, labels, noise);
    const double b = static_cast<double>(count);
    r.loss_total += out.total.item() * b;
    r.loss_ce += out.ce.item() * b;
    r.loss_cont += out.cont.item() * b;
    r.loss_kl += out.kl.item() * b;
    correct += count_correct(out.logits, labels);
    if (model.config.levels >= 2) triples += count_ordered_triples(out.hyperbolic);
  }
  r.count = data.size();
  if (r.count > 0) {
    const double n = static_cast<double>(r.count);
    r.loss_total /= n;
    r.loss_ce /= n;
    r.loss_cont /= n;
    r.loss_kl /= n;
    r.accuracy = static_cast<double>(correct) / n;
  }
  r.triple_score = triples.score();
  return r;
}

PretrainResult pretrain_backbone(Model& model, const Dataset& train, const Dataset* eval, MetricsLog* log) {
  const RunConfig& cfg = model.config;
  if (train.size() == 0) throw ArgumentError("pretrain: empty dataset");
  ParameterSet params;
  model.collect_backbone(params);
  AdamW optimizer(params, {cfg.pretrain_lr, cfg.weight_decay});
  const std::size_t n = train.size();
  const std::size_t total = steps_per_epoch(n, cfg.batch_size) * cfg.pretrain_epochs;
  Rng shuffle(mix(cfg.seed, kPretrainShuffle)), aug(mix(cfg.seed, kAugment));
  std::vector<std::size_t> order(n), labels;
  std::vector<Tensor> images;

  PretrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    double loss_sum = 0.0, lr = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++step) {
      const std::size_t count = std::min(cfg.batch_size, n - start);
      images.clear();
      labels.clear();
      for (std::size_t i = start; i < start + count; ++i) {
        images.push_back(augment(train.image(order[i]), aug));
        labels.push_back(train.labels[order[i]]);
      }
      FeatureBundle f = extract_features(images, model.backbone);
      Tensor logits = model.baseline_head.apply(f.v_cls);
      Tensor loss = mean(cross_entropy_rows(logits, labels));
      require_finite(loss, step, "pretraining loss");
      if (step == 0) result.first_loss = loss.item();
      params.zero_grad();
      loss.backward();
      lr = cosine_lr(cfg.pretrain_lr, step, total, cfg.warmup_steps);
      optimizer.step(lr);
      loss_sum += loss.item() * static_cast<double>(count);
      correct += count_correct(logits, labels);
    }
    result.last_loss = loss_sum / static_cast<double>(n);
    result.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (eval) result.eval_accuracy = evaluate_baseline(model, compute_features(model, *eval, cfg.batch_size)).accuracy;
    if (log) {
      MetricsLog::Row row;
      row.phase = "pretrain";
      row.epoch = epoch;
      row.step = step;
      row.lr = lr;
      row.loss_total = row.loss_ce = result.last_loss;
      row.train_acc = result.train_accuracy;
      row.eval_acc = result.eval_accuracy.value_or(0.0);
      log->append(row);
    }
  }
  model.adopt_baseline_head();
  return result;
}

FinetuneResult finetune(Model& model, const FeatureCache& train, const FeatureCache& eval, MetricsLog* log) {
  if (model.config.train_backbone) {
    throw ArgumentError("finetune: cached features cannot train the backbone; pass the datasets instead");
  }
  auto batch = [&](std::span<const std::size_t> index, std::vector<std::size_t>& labels) {
    return gather_batch(train, index, labels);
  };
  auto eval_cache = [&]() -> FeatureCache { return eval; };
  return finetune_loop(model, train.size(), batch, eval_cache, log);
}

FinetuneResult finetune(Model& model, const Dataset& train, const Dataset& eval, MetricsLog* log) {
  const std::size_t bs = model.config.batch_size;
  if (!model.config.train_backbone) {
    return finetune(model, compute_features(model, train, bs), compute_features(model, eval, bs), log);
  }
  std::vector<Tensor> images;
  auto batch = [&](std::span<const std::size_t> index, std::vector<std::size_t>& labels) {
    images.clear();
    labels.clear();
    for (std::size_t i : index) {
      images.push_back(train.image(i));
      labels.push_back(train.labels[i]);
    }
    return extract_features(images, model.backbone);
  };
  auto eval_cache = [&]() { return compute_features(model, eval, bs); };
  return finetune_loop(model, train.size(), batch, eval_cache, log);
}

void copy_backbone(const Model& from, Model& to) {
  ParameterSet src, dst;
  from.collect_backbone(src);
  to.collect_backbone(dst);
  for (const auto& p : dst.entries()) {
    const Tensor* s = src.find(p.name);
    if (!s || s->shape() != p.tensor.shape()) {
      throw ConfigError("backbone parameter '" + p.name + "' is missing or has a different shape");
    }
    Tensor t = p.tensor;
    auto values = s->values();
    std::copy(values.begin(), values.end(), t.mutable_values().begin());
  }
  to.adopt_baseline_head();
}

AblationVariant ablation_variant(const std::string& name) {
  AblationVariant v;
  v.name = name;
  if (name == "full") return v;
  if (name == "cosine") {
    v.manifold = "cosine";
  } else if (name == "no-cont") {
    v.use_cont = false;
  } else if (name == "no-kl") {
    v.use_kl = false;
  } else if (name == "ce-only") {
    v.use_cont = v.use_kl = false;
  } else if (name == "deterministic") {
    v.deterministic_tree = true;
  } else {
    throw ConfigError("unknown ablation variant '" + name +
                      "' (expected full, cosine, no-cont, no-kl, ce-only or deterministic)");
  }
  return v;
}

std::vector<AblationRow> ablate(const Model& pretrained, const FeatureCache& train, const FeatureCache& eval,
                                const std::vector<std::size_t>& leaves, const std::vector<std::size_t>& levels,
                                const std::vector<AblationVariant>& variants, std::ostream* warnings) {
  std::vector<AblationRow> rows;
  for (std::size_t n : leaves) {
    for (std::size_t l : levels) {
      RunConfig cfg = pretrained.config;
      cfg.leaves = n;
      cfg.levels = l;
      cfg.mode = "ablate";
      try {
        cfg.validate();
      } catch (const ConfigError& e) {
        if (warnings) *warnings << "warning: skipping N=" << n << " L=" << l << ": " << e.what() << '\n';
        continue;
      }
      for (const auto& variant : variants) {
        cfg.manifold = variant.manifold;
        cfg.use_cont = variant.use_cont;
        cfg.use_kl = variant.use_kl;
        cfg.deterministic_tree = variant.deterministic_tree;
        Model model = Model::create(cfg);
        copy_backbone(pretrained, model);
        FinetuneResult fit = finetune(model, train, eval);
        rows.push_back({n, l, variant, fit.final_eval.accuracy, fit.final_eval.triple_score, fit.final_loss});
      }
    }
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "N,L,variant,manifold,use_cont,use_kl,deterministic_tree,accuracy,triple_score,final_loss\n";
  for (const auto& r : rows) {
    out << r.leaves << ',' << r.levels << ',' << r.variant.name << ',' << r.variant.manifold << ','
        << (r.variant.use_cont ? 1 : 0) << ',' << (r.variant.use_kl ? 1 : 0) << ','
        << (r.variant.deterministic_tree ? 1 : 0) << ',' << format_double(r.accuracy) << ','
        << format_double(r.triple_score) << ',' << format_double(r.final_loss) << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace himapper
