// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0
//
// Probabilistic hierarchy tree. Leaves are diagonal Gaussians with learnable
// mean and log standard deviation; node k at level l > 1 is the equal-weight
// mixture of nodes 2k and 2k+1 at level l-1 (0-based), summarized by its
// first two moments. Level l holds N1 / 2^(l-1) nodes.

#pragma once

#include <cstddef>
#include <vector>

#include "himapper/params.hpp"
#include "himapper/random.hpp"
#include "himapper/tensor.hpp"

namespace himapper {

struct GaussianNode {
  std::vector<double> mu;
  std::vector<double> log_sigma;
};

struct MixtureMoments {
  std::vector<double> mean;
  std::vector<double> variance;
};

// Mean and variance of the equal-weight mixture of N(mu_a, sigma_a^2) and
// N(mu_b, sigma_b^2), elementwise.
MixtureMoments mog_moments(const std::vector<double>& mu_a, const std::vector<double>& sigma_a,
                           const std::vector<double>& mu_b, const std::vector<double>& sigma_b);

// Tree samples at one level: N1 rows, grouped node by node in blocks of
// 2^(level-1) consecutive draws.
struct LevelSample {
  std::size_t level = 1;
  std::size_t draws_per_node = 1;
  Tensor rows;  // (N1 x d)
};

struct TreeShape {
  std::size_t leaves = 32;
  std::size_t levels = 4;
  std::size_t width = 128;

  // Throws ArgumentError unless leaves is divisible by 2^(levels-1).
  void validate() const;
  std::size_t nodes_at(std::size_t level) const;  // N_l
  std::size_t total_nodes() const;                // sum_l N_l
};

class HierarchyTree {
 public:
  // log_sigma is clamped from below before exponentiation.
  static constexpr double kMinLogSigma = -20.0;

  // mu ~ N(0, init_std^2) elementwise, log_sigma = 0.
  static HierarchyTree random(const TreeShape& shape, Rng& rng, double init_std = 0.02);
  static HierarchyTree from_leaves(const TreeShape& shape, const std::vector<GaussianNode>& leaves);

  const TreeShape& shape() const { return shape_; }
  std::size_t levels() const { return shape_.levels; }
  std::size_t leaves() const { return shape_.leaves; }
  std::size_t width() const { return shape_.width; }

  // Deterministic trees ignore sigma entirely: every sample is its
  // component mean and log_sigma receives no gradient.
  bool deterministic() const { return deterministic_; }
  void set_deterministic(bool flag) { deterministic_ = flag; }

  const Tensor& leaf_mu() const { return leaf_mu_; }
  const Tensor& leaf_log_sigma() const { return leaf_log_sigma_; }

  // Differentiable moments of every node at `level`: mean (N_l x d) and
  // variance (N_l x d).
  std::pair<Tensor, Tensor> level_moments(std::size_t level) const;

  // Level 1: row n = mu_n + eps * sigma_n. Level l > 1: node k's slot i is a
  // reparameterized draw from child (i mod 2) of node k, using that child's
  // moment-matched Gaussian. Throws ArgumentError for level outside [1, L].
  LevelSample sample_level(std::size_t level, NoiseSource& noise) const;
  std::vector<LevelSample> sample_tree(NoiseSource& noise) const;

  // Sum over top-level nodes of KL(N(mu, var) || N(0, I)) using the
  // moment-matched Gaussian of each node. Zero for deterministic trees.
  Tensor kl_regularizer() const;

  void collect(const std::string& prefix, ParameterSet& out) const;

 private:
  HierarchyTree(TreeShape shape, Tensor mu, Tensor log_sigma);
  Tensor leaf_sigma() const;

  TreeShape shape_;
  Tensor leaf_mu_;
  Tensor leaf_log_sigma_;
  bool deterministic_ = false;
};

}  // namespace himapper
