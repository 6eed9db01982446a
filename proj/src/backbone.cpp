// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/backbone.hpp"

#include "himapper/errors.hpp"
#include "himapper/ops.hpp"

namespace himapper {

void BackboneConfig::validate() const {
  if (channels == 0 || image_size == 0 || patch == 0 || width == 0 || heads == 0 || depth == 0 || ff_ratio == 0) {
    throw ArgumentError("backbone: sizes must be positive");
  }
  if (image_size % patch != 0) {
    throw ArgumentError("backbone: patch " + std::to_string(patch) + " does not divide image size " +
                        std::to_string(image_size));
  }
  if (width % heads != 0) throw ArgumentError("backbone: heads must divide width");
  if (blocks == BlockKind::kConv && pooling == Pooling::kClassToken) {
    throw ArgumentError("backbone: the class token needs attention blocks");
  }
}

void ConvBlockParams::collect(const std::string& prefix, ParameterSet& out) const {
  norm.collect(prefix + ".norm", out);
  conv.collect(prefix + ".conv", out);
  project.collect(prefix + ".project", out);
}

BackboneParams BackboneParams::create(const BackboneConfig& config, Rng& rng) {
  config.validate();
  BackboneParams p;
  p.config = config;
  const std::size_t d = config.width;
  p.embed = LinearParams::create(config.patch_dim(), d, rng);
  p.position = Tensor::parameter({config.tokens(), d}, rng.normal_vector(config.tokens() * d, 0.0, 0.02));
  if (config.pooling == Pooling::kClassToken) p.class_token = Tensor::parameter({1, d}, rng.normal_vector(d, 0.0, 0.02));
  for (std::size_t i = 0; i < config.depth; ++i) {
    if (config.blocks == BlockKind::kAttention) {
      p.attention_blocks.push_back(DecoderLayerParams::create(d, config.heads, config.ff_ratio, rng));
    } else {
      ConvBlockParams c;
      c.norm = LayerNormParams::create(d);
      c.conv = LinearParams::create(9 * d, d, rng);
      c.project = LinearParams::create(d, d, rng);
      p.conv_blocks.push_back(std::move(c));
    }
  }
  p.final_norm = LayerNormParams::create(d);
  return p;
}

void BackboneParams::collect(const std::string& prefix, ParameterSet& out) const {
  embed.collect(prefix + ".embed", out);
  out.add(prefix + ".position", position);
  if (class_token.defined()) out.add(prefix + ".class_token", class_token);
  for (std::size_t i = 0; i < attention_blocks.size(); ++i) {
    // Self-attention blocks never read norm_context; leave it out so the
    // optimizer only sees parameters that receive gradients.
    const auto& b = attention_blocks[i];
    const std::string name = prefix + ".block" + std::to_string(i + 1);
    b.norm_query.collect(name + ".norm_query", out);
    b.norm_ff.collect(name + ".norm_ff", out);
    b.attention.collect(name + ".attention", out);
    b.ff.collect(name + ".ff", out);
  }
  for (std::size_t i = 0; i < conv_blocks.size(); ++i) conv_blocks[i].collect(prefix + ".conv" + std::to_string(i + 1), out);
  final_norm.collect(prefix + ".final_norm", out);
}

Tensor patchify(const Tensor& image, const BackboneConfig& config) {
  const Shape expected{config.channels, config.image_size, config.image_size};
  if (image.shape() != expected) {
    throw ArgumentError("backbone: image shape " + shape_string(image.shape()) + " does not match config " +
                        shape_string(expected));
  }
  const std::size_t p = config.patch, g = config.grid(), n = config.image_size;
  const auto src = image.values();
  std::vector<double> out;
  out.reserve(config.tokens() * config.patch_dim());
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx)
      for (std::size_t c = 0; c < config.channels; ++c)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x) out.push_back(src[(c * n + gy * p + y) * n + gx * p + x]);
  return Tensor({config.tokens(), config.patch_dim()}, std::move(out));
}

namespace {

// Row indices of the 3x3 neighbourhood of every token, nine per token in
// raster order of the offsets; out-of-grid neighbours are -1 (zero rows).
std::vector<long> neighbourhood_index(std::size_t grid, std::size_t batch) {
  const long g = static_cast<long>(grid);
  std::vector<long> idx;
  idx.reserve(batch * grid * grid * 9);
  for (std::size_t b = 0; b < batch; ++b) {
    const long base = static_cast<long>(b * grid * grid);
    for (long y = 0; y < g; ++y)
      for (long x = 0; x < g; ++x)
        for (long dy = -1; dy <= 1; ++dy)
          for (long dx = -1; dx <= 1; ++dx) {
            const long ny = y + dy, nx = x + dx;
            idx.push_back(ny < 0 || nx < 0 || ny >= g || nx >= g ? -1 : base + ny * g + nx);
          }
  }
  return idx;
}

Tensor conv_block(const Tensor& x, const ConvBlockParams& p, std::size_t grid, std::size_t batch) {
  const std::size_t d = x.cols();
  const auto idx = neighbourhood_index(grid, batch);
  Tensor windows = reshape(gather_rows(p.norm.apply(x), idx), {x.rows(), 9 * d});
  return add(x, p.project.apply(gelu(p.conv.apply(windows))));
}

}  // namespace

FeatureBundle extract_features(std::span<const Tensor> images, const BackboneParams& params) {
  const BackboneConfig& cfg = params.config;
  const std::size_t batch = images.size();
  if (batch == 0) throw ArgumentError("backbone: empty batch");
  const std::size_t hw = cfg.tokens();

  std::vector<Tensor> patches;
  patches.reserve(batch);
  for (const auto& image : images) patches.push_back(patchify(image, cfg));
  Tensor x = params.embed.apply(batch == 1 ? patches.front() : concat_rows(patches));

  std::vector<long> tile(batch * hw);
  for (std::size_t i = 0; i < tile.size(); ++i) tile[i] = static_cast<long>(i % hw);
  x = add(x, batch == 1 ? params.position : gather_rows(params.position, tile));

  const bool use_cls = cfg.pooling == Pooling::kClassToken;
  const std::size_t run = use_cls ? hw + 1 : hw;
  std::vector<long> token_rows, cls_rows;
  if (use_cls) {
    // Interleave one class row in front of each image's tokens. Class rows
    // sit after all token rows in the concatenation.
    std::vector<long> order;
    order.reserve(batch * run);
    for (std::size_t b = 0; b < batch; ++b) {
      order.push_back(static_cast<long>(batch * hw));
      cls_rows.push_back(static_cast<long>(b * run));
      for (std::size_t t = 0; t < hw; ++t) {
        order.push_back(static_cast<long>(b * hw + t));
        token_rows.push_back(static_cast<long>(b * run + 1 + t));
      }
    }
    x = gather_rows(concat_rows({x, params.class_token}), order);
  }

  AttentionOptions opts;
  opts.groups = batch;
  for (const auto& block : params.attention_blocks) x = self_attention_block(x, block, opts);
  for (const auto& block : params.conv_blocks) x = conv_block(x, block, cfg.grid(), batch);
  x = params.final_norm.apply(x);

  FeatureBundle out;
  out.batch = batch;
  if (use_cls) {
    out.v_map = gather_rows(x, token_rows);
    out.v_cls = gather_rows(x, cls_rows);
  } else {
    out.v_map = x;
    out.v_cls = mean_row_groups(x, hw);
  }
  return out;
}

FeatureBundle extract_features(const Tensor& image, const BackboneParams& params) {
  return extract_features(std::span<const Tensor>(&image, 1), params);
}

}  // namespace himapper
