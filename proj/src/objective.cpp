// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/objective.hpp"

#include "himapper/errors.hpp"
#include "himapper/ops.hpp"

namespace himapper {

namespace {

std::vector<long> parent_index(std::size_t children) {
  std::vector<long> idx(children);
  for (std::size_t m = 0; m < children; ++m) idx[m] = static_cast<long>(m / 2);
  return idx;
}

std::vector<std::size_t> row_labels(std::size_t n) {
  std::vector<std::size_t> labels(n);
  for (std::size_t m = 0; m < n; ++m) labels[m] = m;
  return labels;
}

void require_levels(const char* op, std::size_t depth) {
  if (depth < 2) throw ArgumentError(std::string(op) + ": needs at least two levels");
}

void require_binary_shape(const std::vector<Tensor>& levels) {
  for (std::size_t l = 0; l + 1 < levels.size(); ++l) {
    if (levels[l].rows() != 2 * levels[l + 1].rows()) {
      throw ArgumentError("hierarchy levels " + std::to_string(l + 1) + " and " + std::to_string(l + 2) +
                          " are not in a 2:1 ratio");
    }
  }
}

}  // namespace

std::vector<LorentzPoint> HyperbolicHierarchy::points(std::size_t l) const {
  const Tensor& s = level(l);
  const double c = curvature.item();
  std::vector<LorentzPoint> out;
  out.reserve(s.rows());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    auto row = s.values().subspan(i * s.cols(), s.cols());
    out.push_back(LorentzPoint::lift({row.begin(), row.end()}, c));
  }
  return out;
}

HyperbolicHierarchy HyperbolicHierarchy::image(std::size_t b) const {
  if (b >= batch) throw ArgumentError("hierarchy: image index out of range");
  if (batch == 1) return *this;
  HyperbolicHierarchy out;
  out.curvature = curvature;
  for (const auto& level : levels) {
    const std::size_t n = level.rows() / batch;
    out.levels.push_back(slice_rows(level, b * n, n));
  }
  return out;
}

HyperbolicHierarchy map_hierarchy(const EuclideanHierarchy& euclidean, const Tensor& curvature) {
  HyperbolicHierarchy out;
  out.curvature = curvature;
  out.batch = euclidean.batch;
  for (const auto& s : euclidean.levels) out.levels.push_back(expm_origin_rows(s, curvature));
  return out;
}

Tensor anchor_terms_from_distances(const Tensor& to_parent, const Tensor& to_level) {
  const std::size_t n = to_level.rows();
  Tensor logits = scale(replace_diagonal(to_level, to_parent), -1.0);
  return cross_entropy_rows(logits, row_labels(n));
}

namespace {

// Anchor terms of one image, appended to `terms`.
void append_lorentz_terms(const HyperbolicHierarchy& hierarchy, std::vector<Tensor>& terms) {
  require_binary_shape(hierarchy.levels);
  for (std::size_t l = 1; l < hierarchy.depth(); ++l) {
    const Tensor& children = hierarchy.level(l);
    const std::size_t n = children.rows();
    Tensor parents = gather_rows(hierarchy.level(l + 1), parent_index(n));
    Tensor to_parent = lorentz_distance_paired(children, parents, hierarchy.curvature);
    Tensor to_level = lorentz_distance_matrix(children, children, hierarchy.curvature);
    terms.push_back(anchor_terms_from_distances(to_parent, to_level));
  }
}

void append_cosine_terms(const EuclideanHierarchy& hierarchy, std::vector<Tensor>& terms) {
  require_binary_shape(hierarchy.levels);
  for (std::size_t l = 1; l < hierarchy.depth(); ++l) {
    const Tensor& children = hierarchy.level(l);
    const std::size_t n = children.rows();
    Tensor parents = gather_rows(hierarchy.level(l + 1), parent_index(n));
    Tensor logits = replace_diagonal(cosine_similarity_matrix(children, children),
                                     cosine_similarity_paired(children, parents));
    terms.push_back(cross_entropy_rows(logits, row_labels(n)));
  }
}

void count_image_triples(const HyperbolicHierarchy& hierarchy, TripleCount& count) {
  for (std::size_t l = 1; l < hierarchy.depth(); ++l) {
    const Tensor& children = hierarchy.level(l);
    const std::size_t n = children.rows();
    Tensor parents = gather_rows(hierarchy.level(l + 1), parent_index(n));
    Tensor to_parent = lorentz_distance_paired(children, parents, hierarchy.curvature);
    Tensor to_level = lorentz_distance_matrix(children, children, hierarchy.curvature);
    for (std::size_t m = 0; m < n; ++m) {
      for (std::size_t j = 0; j < n; ++j) {
        if (j == m) continue;
        ++count.total;
        if (to_parent(m, 0) < to_level(m, j)) ++count.ordered;
      }
    }
  }
}

}  // namespace

Tensor contrastive_anchor_terms(const HyperbolicHierarchy& hierarchy) {
  require_levels("hierarchical_contrastive_loss", hierarchy.depth());
  std::vector<Tensor> terms;
  for (std::size_t b = 0; b < hierarchy.batch; ++b) append_lorentz_terms(hierarchy.image(b), terms);
  return terms.size() == 1 ? terms.front() : concat_rows(terms);
}

Tensor hierarchical_contrastive_loss(const HyperbolicHierarchy& hierarchy) {
  return mean(contrastive_anchor_terms(hierarchy));
}

Tensor cosine_anchor_terms(const EuclideanHierarchy& hierarchy) {
  require_levels("cosine_contrastive_loss", hierarchy.depth());
  std::vector<Tensor> terms;
  for (std::size_t b = 0; b < hierarchy.batch; ++b) append_cosine_terms(hierarchy.image(b), terms);
  return terms.size() == 1 ? terms.front() : concat_rows(terms);
}

Tensor cosine_contrastive_loss(const EuclideanHierarchy& hierarchy) { return mean(cosine_anchor_terms(hierarchy)); }

Tensor total_loss(const Tensor& ce, const Tensor& cont, const Tensor& kl, const LossWeights& weights) {
  return add(add(ce, scale(cont, weights.alpha)), scale(kl, weights.beta));
}

TripleCount count_ordered_triples(const HyperbolicHierarchy& hierarchy) {
  TripleCount count;
  NoGradGuard no_grad;
  for (std::size_t b = 0; b < hierarchy.batch; ++b) count_image_triples(hierarchy.image(b), count);
  return count;
}

double triple_ordering_score(const HyperbolicHierarchy& hierarchy) { return count_ordered_triples(hierarchy).score(); }

}  // namespace himapper
