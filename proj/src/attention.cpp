// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/attention.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

#include "autograd.hpp"
#include "himapper/errors.hpp"
#include "himapper/ops.hpp"

namespace himapper {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::OuterStride<>;
using Block = Eigen::Map<RowMatrix, 0, Strided>;
using ConstBlock = Eigen::Map<const RowMatrix, 0, Strided>;

// softmax(q k^T * scale) v for every (group, head) pair in one node. Rows of
// q split into `groups` equal runs that attend only to the matching run of
// k/v rows; columns split into `heads` equal slices.
Tensor grouped_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t groups, std::size_t heads,
                         const std::vector<bool>* key_valid, AttentionTrace* trace) {
  const std::size_t d = q.cols(), dh = d / heads;
  const std::size_t nq = q.rows() / groups, nk = k.rows() / groups;
  if (q.rows() % groups != 0 || k.rows() % groups != 0) {
    throw ArgumentError("attention: " + std::to_string(q.rows()) + " query / " + std::to_string(k.rows()) +
                        " context rows do not split into " + std::to_string(groups) + " groups");
  }
  if (key_valid && key_valid->size() != nk) throw ArgumentError("attention: key mask length mismatch");
  if (trace && groups != 1) throw ArgumentError("attention: traces are only recorded for a single group");
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> out(q.rows() * d, 0.0);
  std::vector<double> probs(groups * heads * nq * nk, 0.0);
  const double* qp = q.values().data();
  const double* kp = k.values().data();
  const double* vp = v.values().data();
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t h = 0; h < heads; ++h) {
      ConstBlock qb(qp + g * nq * d + h * dh, nq, dh, Strided(d));
      ConstBlock kb(kp + g * nk * d + h * dh, nk, dh, Strided(d));
      ConstBlock vb(vp + g * nk * d + h * dh, nk, dh, Strided(d));
      Eigen::Map<RowMatrix> p(probs.data() + (g * heads + h) * nq * nk, nq, nk);
      p.noalias() = qb * kb.transpose();
      p *= scale_factor;
      for (std::size_t i = 0; i < nq; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < nk; ++j)
          if (!key_valid || (*key_valid)[j]) mx = std::max(mx, p(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < nk; ++j) {
          const bool valid = (!key_valid || (*key_valid)[j]) && mx != -std::numeric_limits<double>::infinity();
          p(i, j) = valid ? std::exp(p(i, j) - mx) : 0.0;
          z += p(i, j);
        }
        if (z > 0.0) p.row(i) /= z;
      }
      Block ob(out.data() + g * nq * d + h * dh, nq, dh, Strided(d));
      ob.noalias() = p * vb;
      if (trace) trace->head_weights.emplace_back(Shape{nq, nk}, std::vector<double>(p.data(), p.data() + nq * nk));
    }
  }
  return detail::make_result(
      "attention", {q.rows(), d}, std::move(out), {q, k, v},
      [groups, heads, nq, nk, d, dh, scale_factor, probs = std::move(probs)](detail::Node& self) {
        double* gq = self.parent_grad(0);
        double* gk = self.parent_grad(1);
        double* gv = self.parent_grad(2);
        const double* qp = self.parent_value(0);
        const double* kp = self.parent_value(1);
        const double* vp = self.parent_value(2);
        RowMatrix dp(nq, nk);
        for (std::size_t g = 0; g < groups; ++g) {
          for (std::size_t h = 0; h < heads; ++h) {
            Eigen::Map<const RowMatrix> p(probs.data() + (g * heads + h) * nq * nk, nq, nk);
            ConstBlock dout(self.grad.data() + g * nq * d + h * dh, nq, dh, Strided(d));
            if (gv) Block(gv + g * nk * d + h * dh, nk, dh, Strided(d)).noalias() += p.transpose() * dout;
            if (!gq && !gk) continue;
            dp.noalias() = dout * ConstBlock(vp + g * nk * d + h * dh, nk, dh, Strided(d)).transpose();
            // Softmax backward, then the score scale.
            for (std::size_t i = 0; i < nq; ++i) {
              const double dot = dp.row(i).dot(p.row(i));
              for (std::size_t j = 0; j < nk; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * scale_factor;
            }
            if (gq) {
              Block(gq + g * nq * d + h * dh, nq, dh, Strided(d)).noalias() +=
                  dp * ConstBlock(kp + g * nk * d + h * dh, nk, dh, Strided(d));
            }
            if (gk) {
              Block(gk + g * nk * d + h * dh, nk, dh, Strided(d)).noalias() +=
                  dp.transpose() * ConstBlock(qp + g * nq * d + h * dh, nq, dh, Strided(d));
            }
          }
        }
      });
}

Tensor xavier(std::size_t in, std::size_t out, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in + out));
  return Tensor::parameter({in, out}, rng.normal_vector(in * out, 0.0, stddev));
}

}  // namespace

LayerNormParams LayerNormParams::create(std::size_t width) {
  return {Tensor::parameter({1, width}, std::vector<double>(width, 1.0)),
          Tensor::parameter({1, width}, std::vector<double>(width, 0.0))};
}

Tensor LayerNormParams::apply(const Tensor& x) const { return layer_norm_rows(x, gain, bias); }

void LayerNormParams::collect(const std::string& prefix, ParameterSet& out) const {
  out.add(prefix + ".gain", gain);
  out.add(prefix + ".bias", bias);
}

LinearParams LinearParams::create(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  LinearParams p;
  p.weight = xavier(in, out, rng);
  if (with_bias) p.bias = Tensor::parameter({1, out}, std::vector<double>(out, 0.0));
  return p;
}

LinearParams LinearParams::zeros(std::size_t in, std::size_t out, bool with_bias) {
  LinearParams p;
  p.weight = Tensor::parameter({in, out}, std::vector<double>(in * out, 0.0));
  if (with_bias) p.bias = Tensor::parameter({1, out}, std::vector<double>(out, 0.0));
  return p;
}

Tensor LinearParams::apply(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_row(y, bias) : y;
}

void LinearParams::collect(const std::string& prefix, ParameterSet& out) const {
  out.add(prefix + ".weight", weight, true);
  if (bias.defined()) out.add(prefix + ".bias", bias);
}

AttentionProjections AttentionProjections::create(std::size_t width, Rng& rng, bool zero_output) {
  AttentionProjections p;
  p.query = xavier(width, width, rng);
  p.key = xavier(width, width, rng);
  p.value = xavier(width, width, rng);
  p.output = zero_output ? Tensor::parameter({width, width}, std::vector<double>(width * width, 0.0))
                         : xavier(width, width, rng);
  return p;
}

void AttentionProjections::collect(const std::string& prefix, ParameterSet& out) const {
  out.add(prefix + ".query", query, true);
  out.add(prefix + ".key", key, true);
  out.add(prefix + ".value", value, true);
  out.add(prefix + ".output", output, true);
}

FeedForwardParams FeedForwardParams::create(std::size_t width, std::size_t ratio, Rng& rng, bool zero_output) {
  FeedForwardParams p;
  p.expand = LinearParams::create(width, ratio * width, rng);
  p.contract = zero_output ? LinearParams::zeros(ratio * width, width) : LinearParams::create(ratio * width, width, rng);
  return p;
}

Tensor FeedForwardParams::apply(const Tensor& x) const { return contract.apply(gelu(expand.apply(x))); }

void FeedForwardParams::collect(const std::string& prefix, ParameterSet& out) const {
  expand.collect(prefix + ".expand", out);
  contract.collect(prefix + ".contract", out);
}

DecoderLayerParams DecoderLayerParams::create(std::size_t width, std::size_t heads, std::size_t ff_ratio, Rng& rng,
                                              bool zero_output) {
  if (width == 0 || heads == 0 || width % heads != 0) {
    throw ArgumentError("decoder layer: heads (" + std::to_string(heads) + ") must divide width (" +
                        std::to_string(width) + ")");
  }
  if (ff_ratio == 0) throw ArgumentError("decoder layer: feed-forward ratio must be positive");
  DecoderLayerParams p;
  p.width = width;
  p.heads = heads;
  p.norm_query = LayerNormParams::create(width);
  p.norm_context = LayerNormParams::create(width);
  p.norm_ff = LayerNormParams::create(width);
  p.attention = AttentionProjections::create(width, rng, zero_output);
  p.ff = FeedForwardParams::create(width, ff_ratio, rng, zero_output);
  return p;
}

void DecoderLayerParams::collect(const std::string& prefix, ParameterSet& out) const {
  norm_query.collect(prefix + ".norm_query", out);
  norm_context.collect(prefix + ".norm_context", out);
  norm_ff.collect(prefix + ".norm_ff", out);
  attention.collect(prefix + ".attention", out);
  ff.collect(prefix + ".ff", out);
}

Tensor AttentionTrace::averaged() const {
  if (head_weights.empty()) throw ArgumentError("attention trace is empty");
  Tensor acc = head_weights.front();
  for (std::size_t h = 1; h < head_weights.size(); ++h) acc = add(acc, head_weights[h]);
  return scale(acc, 1.0 / static_cast<double>(head_weights.size()));
}

Tensor multi_head_attention(const Tensor& query_in, const Tensor& context_in, const AttentionProjections& proj,
                            std::size_t heads, const AttentionOptions& options) {
  const std::size_t d = proj.query.rows();
  if (query_in.cols() != d || context_in.cols() != d) {
    throw ArgumentError("attention: input widths " + std::to_string(query_in.cols()) + "/" +
                        std::to_string(context_in.cols()) + " do not match model width " + std::to_string(d));
  }
  if (heads == 0 || d % heads != 0) throw ArgumentError("attention: heads must divide width");
  Tensor q = matmul(query_in, proj.query);
  Tensor k = matmul(context_in, proj.key);
  Tensor v = matmul(context_in, proj.value);
  if (options.trace) options.trace->head_weights.clear();
  Tensor merged = grouped_attention(q, k, v, options.groups, heads, options.key_valid, options.trace);
  return matmul(merged, proj.output);
}

Tensor cross_attention_decoder(const Tensor& query, const Tensor& context, const DecoderLayerParams& params,
                               const AttentionOptions& options) {
  if (query.rank() != 2 || context.rank() != 2 || query.cols() != params.width || context.cols() != params.width) {
    throw ArgumentError("cross_attention_decoder: query " + shape_string(query.shape()) + " / context " +
                        shape_string(context.shape()) + " do not match width " + std::to_string(params.width));
  }
  Tensor attended = multi_head_attention(params.norm_query.apply(query), params.norm_context.apply(context),
                                         params.attention, params.heads, options);
  Tensor h = add(query, attended);
  return add(h, params.ff.apply(params.norm_ff.apply(h)));
}

Tensor self_attention_block(const Tensor& x, const DecoderLayerParams& params, const AttentionOptions& options) {
  if (x.rank() != 2 || x.cols() != params.width) {
    throw ArgumentError("self_attention_block: input " + shape_string(x.shape()) + " does not match width " +
                        std::to_string(params.width));
  }
  Tensor normed = params.norm_query.apply(x);
  Tensor h = add(x, multi_head_attention(normed, normed, params.attention, params.heads, options));
  return add(h, params.ff.apply(params.norm_ff.apply(h)));
}

}  // namespace himapper
