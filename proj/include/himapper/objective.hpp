// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hyperbolic image of a decomposed hierarchy and the losses defined on it.

#pragma once

#include <cstddef>
#include <vector>

#include "himapper/decomposer.hpp"
#include "himapper/lorentz.hpp"

namespace himapper {

// Space components of every node after the exponential map at the origin;
// time components are implied by the hyperboloid constraint.
struct HyperbolicHierarchy {
  std::vector<Tensor> levels;  // (batch * N_l x d) space rows, image-major
  Tensor curvature;            // single element
  std::size_t batch = 1;

  std::size_t depth() const { return levels.size(); }
  const Tensor& level(std::size_t l) const { return levels.at(l - 1); }
  Tensor times(std::size_t l) const { return lift_time_rows(level(l), curvature); }
  std::vector<LorentzPoint> points(std::size_t l) const;
  HyperbolicHierarchy image(std::size_t b) const;
};

struct LossWeights {
  double alpha = 1.0;
  double beta = 0.01;
};

// Every node row is read as a tangent vector at the origin and mapped onto
// the hyperboloid.
HyperbolicHierarchy map_hierarchy(const EuclideanHierarchy& euclidean, const Tensor& curvature);

// One -log softmax term per (level l < L, child m): the positive logit is
// -D(child, parent) and the negatives are -D(child, j) for the other nodes
// j of the child's level in the same image. Returns one row per anchor
// (batch * sum_{l<L} N_l).
Tensor contrastive_anchor_terms(const HyperbolicHierarchy& hierarchy);

// The per-anchor terms of one level given its distances: to_parent (n x 1)
// and to_level (n x n, diagonal ignored).
Tensor anchor_terms_from_distances(const Tensor& to_parent, const Tensor& to_level);

// Mean of contrastive_anchor_terms. Throws ArgumentError below two levels.
Tensor hierarchical_contrastive_loss(const HyperbolicHierarchy& hierarchy);

// Same anchor structure with cosine similarity between Euclidean node
// embeddings in place of negative Lorentz distance.
Tensor cosine_anchor_terms(const EuclideanHierarchy& hierarchy);
Tensor cosine_contrastive_loss(const EuclideanHierarchy& hierarchy);

// ce + alpha * cont + beta * kl
Tensor total_loss(const Tensor& ce, const Tensor& cont, const Tensor& kl, const LossWeights& weights);

// Counts of (child, parent, other) triples, other ranging over the child's
// level minus the child itself, with D(child, parent) < D(child, other).
struct TripleCount {
  std::size_t ordered = 0;
  std::size_t total = 0;

  double score() const { return total == 0 ? 0.0 : static_cast<double>(ordered) / static_cast<double>(total); }
  TripleCount& operator+=(const TripleCount& o) {
    ordered += o.ordered;
    total += o.total;
    return *this;
  }
};

TripleCount count_ordered_triples(const HyperbolicHierarchy& hierarchy);
double triple_ordering_score(const HyperbolicHierarchy& hierarchy);

}  // namespace himapper
