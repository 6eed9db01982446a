// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/decomposer.hpp"

#include "himapper/errors.hpp"
#include "himapper/ops.hpp"

namespace himapper {

DecomposerParams DecomposerParams::create(std::size_t width, std::size_t heads, std::size_t ff_ratio, Rng& rng,
                                          std::size_t num_layers) {
  if (num_layers == 0) throw ArgumentError("decomposer needs at least one layer");
  DecomposerParams p;
  for (std::size_t i = 0; i < num_layers; ++i) p.layers.push_back(DecoderLayerParams::create(width, heads, ff_ratio, rng));
  return p;
}

void DecomposerParams::collect(const std::string& prefix, ParameterSet& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".layer" + std::to_string(i), out);
}

EuclideanHierarchy EuclideanHierarchy::image(std::size_t b) const {
  if (b >= batch) throw ArgumentError("hierarchy: image index out of range");
  if (batch == 1) return *this;
  EuclideanHierarchy out;
  for (const auto& level : levels) {
    const std::size_t n = level.rows() / batch;
    out.levels.push_back(slice_rows(level, b * n, n));
  }
  return out;
}

Tensor run_decoder_stack(const Tensor& queries, const Tensor& v_map, const DecomposerParams& params,
                         AttentionTrace* trace, std::size_t groups) {
  Tensor h = queries;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    AttentionOptions opts;
    opts.groups = groups;
    if (i + 1 == params.layers.size()) opts.trace = trace;
    h = cross_attention_decoder(h, v_map, params.layers[i], opts);
  }
  return h;
}

Tensor decompose_level(const LevelSample& sample, const Tensor& v_map, const DecomposerParams& params) {
  Tensor decoded = run_decoder_stack(sample.rows, v_map, params);
  return sample.draws_per_node == 1 ? decoded : mean_row_groups(decoded, sample.draws_per_node);
}

EuclideanHierarchy decompose_all(const std::vector<LevelSample>& samples, const Tensor& v_map,
                                 const DecomposerParams& params) {
  if (samples.empty()) throw ArgumentError("decompose_all: no levels");
  std::vector<Tensor> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) rows.push_back(s.rows);
  Tensor decoded = run_decoder_stack(samples.size() == 1 ? rows.front() : concat_rows(rows), v_map, params);

  EuclideanHierarchy out;
  std::size_t offset = 0;
  for (const auto& s : samples) {
    const std::size_t n = s.rows.rows();
    Tensor part = samples.size() == 1 ? decoded : slice_rows(decoded, offset, n);
    out.levels.push_back(s.draws_per_node == 1 ? part : mean_row_groups(part, s.draws_per_node));
    offset += n;
  }
  return out;
}

EuclideanHierarchy decompose_batch(const std::vector<std::vector<LevelSample>>& samples, const Tensor& v_maps,
                                   const DecomposerParams& params) {
  const std::size_t batch = samples.size();
  if (batch == 0) throw ArgumentError("decompose_batch: empty batch");
  if (batch == 1) return decompose_all(samples.front(), v_maps, params);
  const std::size_t depth = samples.front().size();
  std::vector<Tensor> rows;
  for (const auto& image : samples) {
    if (image.size() != depth) throw ArgumentError("decompose_batch: images disagree on level count");
    for (const auto& s : image) rows.push_back(s.rows);
  }
  Tensor decoded = run_decoder_stack(concat_rows(rows), v_maps, params, nullptr, batch);

  // decoded is image-major then level-major; regroup level-major.
  std::vector<std::vector<Tensor>> per_level(depth);
  std::size_t offset = 0;
  for (const auto& image : samples) {
    for (std::size_t l = 0; l < depth; ++l) {
      const std::size_t n = image[l].rows.rows();
      per_level[l].push_back(slice_rows(decoded, offset, n));
      offset += n;
    }
  }
  EuclideanHierarchy out;
  out.batch = batch;
  for (std::size_t l = 0; l < depth; ++l) {
    Tensor stacked = concat_rows(per_level[l]);
    const std::size_t draws = samples.front()[l].draws_per_node;
    out.levels.push_back(draws == 1 ? stacked : mean_row_groups(stacked, draws));
  }
  return out;
}

std::vector<std::size_t> leaf_assignment(const LevelSample& leaves, const Tensor& v_map,
                                         const DecomposerParams& params) {
  AttentionTrace trace;
  {
    NoGradGuard no_grad;
    run_decoder_stack(leaves.rows, v_map, params, &trace);
  }
  Tensor weights = trace.averaged();  // (N1 x hw)
  const std::size_t n = weights.rows(), hw = weights.cols();
  std::vector<std::size_t> assignment(hw, 0);
  for (std::size_t j = 0; j < hw; ++j) {
    double best = weights(0, j);
    for (std::size_t i = 1; i < n; ++i) {
      if (weights(i, j) > best) {
        best = weights(i, j);
        assignment[j] = i;
      }
    }
  }
  return assignment;
}

}  // namespace himapper
