// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/hierarchy_tree.hpp"

#include <cmath>

#include "himapper/errors.hpp"
#include "himapper/ops.hpp"

namespace himapper {

MixtureMoments mog_moments(const std::vector<double>& mu_a, const std::vector<double>& sigma_a,
                           const std::vector<double>& mu_b, const std::vector<double>& sigma_b) {
  const std::size_t d = mu_a.size();
  if (sigma_a.size() != d || mu_b.size() != d || sigma_b.size() != d) {
    throw ArgumentError("mog_moments: component dimensions differ");
  }
  MixtureMoments out{std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t i = 0; i < d; ++i) {
    out.mean[i] = 0.5 * (mu_a[i] + mu_b[i]);
    // 1/2 sum(mu^2 + sigma^2) - mean^2, rearranged so it cannot go negative.
    const double spread = mu_a[i] - mu_b[i];
    out.variance[i] = 0.5 * (sigma_a[i] * sigma_a[i] + sigma_b[i] * sigma_b[i]) + 0.25 * spread * spread;
  }
  return out;
}

void TreeShape::validate() const {
  if (leaves == 0 || levels == 0 || width == 0) throw ArgumentError("tree: leaves, levels and width must be positive");
  if (levels > 31 || leaves % (std::size_t{1} << (levels - 1)) != 0) {
    throw ArgumentError("tree: " + std::to_string(leaves) + " leaves cannot form " + std::to_string(levels) +
                        " binary levels (need divisibility by 2^(L-1))");
  }
}

std::size_t TreeShape::nodes_at(std::size_t level) const {
  if (level == 0 || level > levels) throw ArgumentError("tree: level " + std::to_string(level) + " out of range");
  return leaves >> (level - 1);
}

std::size_t TreeShape::total_nodes() const {
  std::size_t n = 0;
  for (std::size_t l = 1; l <= levels; ++l) n += nodes_at(l);
  return n;
}

HierarchyTree::HierarchyTree(TreeShape shape, Tensor mu, Tensor log_sigma)
    : shape_(shape), leaf_mu_(std::move(mu)), leaf_log_sigma_(std::move(log_sigma)) {}

HierarchyTree HierarchyTree::random(const TreeShape& shape, Rng& rng, double init_std) {
  shape.validate();
  const std::size_t n = shape.leaves * shape.width;
  return HierarchyTree(shape, Tensor::parameter({shape.leaves, shape.width}, rng.normal_vector(n, 0.0, init_std)),
                       Tensor::parameter({shape.leaves, shape.width}, std::vector<double>(n, 0.0)));
}

HierarchyTree HierarchyTree::from_leaves(const TreeShape& shape, const std::vector<GaussianNode>& leaves) {
  shape.validate();
  if (leaves.size() != shape.leaves) throw ArgumentError("tree: wrong number of leaf nodes");
  std::vector<double> mu, log_sigma;
  for (const auto& leaf : leaves) {
    if (leaf.mu.size() != shape.width || leaf.log_sigma.size() != shape.width) {
      throw ArgumentError("tree: leaf width mismatch");
    }
    mu.insert(mu.end(), leaf.mu.begin(), leaf.mu.end());
    log_sigma.insert(log_sigma.end(), leaf.log_sigma.begin(), leaf.log_sigma.end());
  }
  return HierarchyTree(shape, Tensor::parameter({shape.leaves, shape.width}, std::move(mu)),
                       Tensor::parameter({shape.leaves, shape.width}, std::move(log_sigma)));
}

Tensor HierarchyTree::leaf_sigma() const { return exp(clamp_min(leaf_log_sigma_, kMinLogSigma)); }

std::pair<Tensor, Tensor> HierarchyTree::level_moments(std::size_t level) const {
  shape_.nodes_at(level);
  Tensor mean = leaf_mu_;
  Tensor var = deterministic_ ? Tensor::zeros(leaf_mu_.shape()) : square(leaf_sigma());
  for (std::size_t l = 2; l <= level; ++l) {
    const std::size_t n = mean.rows() / 2;
    std::vector<long> even(n), odd(n);
    for (std::size_t k = 0; k < n; ++k) {
      even[k] = static_cast<long>(2 * k);
      odd[k] = static_cast<long>(2 * k + 1);
    }
    Tensor mean_a = gather_rows(mean, even), mean_b = gather_rows(mean, odd);
    Tensor next_mean = scale(add(mean_a, mean_b), 0.5);
    if (!deterministic_) {
      Tensor spread = sub(mean_a, mean_b);
      var = add(scale(add(gather_rows(var, even), gather_rows(var, odd)), 0.5), scale(square(spread), 0.25));
    } else {
      var = Tensor::zeros(next_mean.shape());
    }
    mean = next_mean;
  }
  return {mean, var};
}

LevelSample HierarchyTree::sample_level(std::size_t level, NoiseSource& noise) const {
  const std::size_t nodes = shape_.nodes_at(level);
  const std::size_t draws = std::size_t{1} << (level - 1);
  const std::size_t d = shape_.width;

  Tensor component_mean, component_var;
  std::vector<long> index(shape_.leaves);
  if (level == 1) {
    component_mean = leaf_mu_;
    for (std::size_t n = 0; n < shape_.leaves; ++n) index[n] = static_cast<long>(n);
  } else {
    std::tie(component_mean, component_var) = level_moments(level - 1);
    for (std::size_t k = 0; k < nodes; ++k)
      for (std::size_t i = 0; i < draws; ++i) index[k * draws + i] = static_cast<long>(2 * k + (i % 2));
  }

  LevelSample sample;
  sample.level = level;
  sample.draws_per_node = draws;
  Tensor means = level == 1 ? component_mean : gather_rows(component_mean, index);
  if (deterministic_) {
    sample.rows = means;
    return sample;
  }
  Tensor eps({shape_.leaves, d});
  noise.fill(eps.mutable_values());
  Tensor sigma = level == 1 ? leaf_sigma() : sqrt(gather_rows(component_var, index));
  sample.rows = add(means, mul(eps, sigma));
  return sample;
}

std::vector<LevelSample> HierarchyTree::sample_tree(NoiseSource& noise) const {
  std::vector<LevelSample> out;
  out.reserve(shape_.levels);
  for (std::size_t l = 1; l <= shape_.levels; ++l) out.push_back(sample_level(l, noise));
  return out;
}

Tensor HierarchyTree::kl_regularizer() const {
  if (deterministic_) return Tensor::scalar(0.0);
  auto [mean, var] = level_moments(shape_.levels);
  // 1/2 sum (var + mu^2 - 1 - ln var)
  Tensor terms = sub(add(var, square(mean)), add_scalar(log(var), 1.0));
  return scale(sum(terms), 0.5);
}

void HierarchyTree::collect(const std::string& prefix, ParameterSet& out) const {
  out.add(prefix + ".leaf_mu", leaf_mu_);
  out.add(prefix + ".leaf_log_sigma", leaf_log_sigma_);
}

}  // namespace himapper
