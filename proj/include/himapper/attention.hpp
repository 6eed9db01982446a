// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0
//
// Transformer building blocks shared by the backbone, the hierarchy
// decomposer and the hierarchy encoder. All blocks are pre-norm and bias-free
// in the attention projections, so a fully masked attention contributes
// exactly zero to the residual stream.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "himapper/params.hpp"
#include "himapper/random.hpp"
#include "himapper/tensor.hpp"

namespace himapper {

struct LayerNormParams {
  Tensor gain;  // (1 x d)
  Tensor bias;  // (1 x d)

  static LayerNormParams create(std::size_t width);
  Tensor apply(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterSet& out) const;
};

// Row-vector linear map x * weight + bias with weight stored (in x out).
struct LinearParams {
  Tensor weight;
  Tensor bias;  // (1 x out); may be undefined for bias-free maps

  static LinearParams create(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  static LinearParams zeros(std::size_t in, std::size_t out, bool with_bias = true);
  Tensor apply(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterSet& out) const;
};

// Query/key/value/output projections, each (d x d). Head h owns columns
// [h*d/heads, (h+1)*d/heads) of the query/key/value maps and the matching
// rows of the output map.
struct AttentionProjections {
  Tensor query;
  Tensor key;
  Tensor value;
  Tensor output;

  static AttentionProjections create(std::size_t width, Rng& rng, bool zero_output = false);
  void collect(const std::string& prefix, ParameterSet& out) const;
};

struct FeedForwardParams {
  LinearParams expand;    // d -> ratio*d
  LinearParams contract;  // ratio*d -> d

  static FeedForwardParams create(std::size_t width, std::size_t ratio, Rng& rng, bool zero_output = false);
  Tensor apply(const Tensor& x) const;  // contract(gelu(expand(x)))
  void collect(const std::string& prefix, ParameterSet& out) const;
};

struct DecoderLayerParams {
  std::size_t width = 0;
  std::size_t heads = 1;
  LayerNormParams norm_query;
  LayerNormParams norm_context;
  LayerNormParams norm_ff;
  AttentionProjections attention;
  FeedForwardParams ff;

  // Throws ArgumentError unless heads divides width.
  static DecoderLayerParams create(std::size_t width, std::size_t heads, std::size_t ff_ratio, Rng& rng,
                                   bool zero_output = false);
  void collect(const std::string& prefix, ParameterSet& out) const;
};

// Attention weights captured during a forward pass, one (n_q x n_k) matrix
// per head, detached from the graph.
struct AttentionTrace {
  std::vector<Tensor> head_weights;
  // Mean over heads.
  Tensor averaged() const;
};

struct AttentionOptions {
  // key_valid[j] == false removes context row j; null means all valid.
  const std::vector<bool>* key_valid = nullptr;
  AttentionTrace* trace = nullptr;
  // Splits query and context rows into this many equal consecutive runs
  // (one per image); each query run attends only to its own context run.
  std::size_t groups = 1;
};

// Scaled dot-product multi-head attention of `query_in` rows over
// `context_in` rows (both already normalized), scale 1/sqrt(d/heads).
Tensor multi_head_attention(const Tensor& query_in, const Tensor& context_in, const AttentionProjections& proj,
                            std::size_t heads, const AttentionOptions& options = {});

// Pre-norm decoder block without self-attention:
//   h   = q + MHA(LN_q(q), LN_c(context))
//   out = h + FFN(LN_ff(h))
Tensor cross_attention_decoder(const Tensor& query, const Tensor& context, const DecoderLayerParams& params,
                               const AttentionOptions& options = {});

// Pre-norm self-attention block (context = query); norm_context is unused.
Tensor self_attention_block(const Tensor& x, const DecoderLayerParams& params,
                            const AttentionOptions& options = {});

}  // namespace himapper
