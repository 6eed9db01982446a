// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "himapper/errors.hpp"
#include "himapper/grad_check.hpp"
#include "himapper/objective.hpp"
#include "himapper/ops.hpp"
#include "test_util.hpp"

namespace himapper {
namespace {

using testing::random_matrix;

EuclideanHierarchy random_hierarchy(Rng& rng, std::size_t leaves, std::size_t levels, std::size_t d,
                                    double stddev = 0.7) {
  EuclideanHierarchy h;
  for (std::size_t l = 0; l < levels; ++l) h.levels.push_back(random_matrix(rng, leaves >> l, d, stddev));
  return h;
}

// Children at tangent norm a from a parent at the origin, separated by
// geodesic distance b (requires b <= 2a). Uses cosh b = cosh^2 a - sinh^2 a cos(theta).
EuclideanHierarchy three_node_tree(double a, double b) {
  const double cos_theta = (std::cosh(a) * std::cosh(a) - std::cosh(b)) / (std::sinh(a) * std::sinh(a));
  const double theta = std::acos(std::clamp(cos_theta, -1.0, 1.0));
  EuclideanHierarchy h;
  h.levels.push_back(Tensor::parameter({2, 2}, {a, 0.0, a * std::cos(theta), a * std::sin(theta)}));
  h.levels.push_back(Tensor::parameter({1, 2}, {0.0, 0.0}));
  return h;
}

TEST(MapHierarchy, ZeroRowIsTheOrigin) {
  EuclideanHierarchy h;
  h.levels.push_back(Tensor({2, 3}, {0, 0, 0, 1, 2, 3}));
  auto mapped = map_hierarchy(h, Tensor::scalar(1.0));
  auto pts = mapped.points(1);
  EXPECT_EQ(pts[0].space(), std::vector<double>(3, 0.0));
  EXPECT_EQ(pts[0].time(), 1.0);
}

TEST(MapHierarchy, LogRoundTripAndConstraint) {
  Rng rng(1);
  auto h = random_hierarchy(rng, 8, 3, 5, 1.5);
  for (double c : {0.5, 1.0, 2.0}) {
    auto mapped = map_hierarchy(h, Tensor::scalar(c));
    for (std::size_t l = 1; l <= 3; ++l) {
      auto pts = mapped.points(l);
      for (std::size_t i = 0; i < pts.size(); ++i) {
        EXPECT_LT(std::abs(constraint_residual(pts[i])), 1e-9 * std::max(1.0, pts[i].time() * pts[i].time()));
        auto back = logm_origin(pts[i]).space;
        for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(back[j], h.level(l)(i, j), 1e-6);
      }
    }
  }
}

TEST(MapHierarchy, UnitRowSitsAtUnitDistance) {
  EuclideanHierarchy h;
  h.levels.push_back(Tensor({1, 2}, {0.6, -0.8}));
  auto pts = map_hierarchy(h, Tensor::scalar(1.0)).points(1);
  EXPECT_NEAR(lorentz_distance(pts[0], LorentzPoint::origin(2)), std::acosh(std::cosh(1.0)), 1e-12);
}

TEST(ContrastiveLoss, AllNodesAtOriginGiveLogN) {
  EuclideanHierarchy h;
  h.levels.push_back(Tensor({4, 3}));
  h.levels.push_back(Tensor({2, 3}));
  auto mapped = map_hierarchy(h, Tensor::scalar(1.0));
  Tensor terms = contrastive_anchor_terms(mapped);
  ASSERT_EQ(terms.rows(), 4u);
  for (double t : terms.values()) EXPECT_NEAR(t, std::log(4.0), 1e-15);
  EXPECT_NEAR(hierarchical_contrastive_loss(mapped).item(), std::log(4.0), 1e-15);
}

TEST(ContrastiveLoss, SeparationDrivesLossToZero) {
  // Siblings cannot be far apart while both touch their shared parent, so
  // the limit is taken with the parent at the origin and the two children
  // on opposite rays: each term is log(1 + exp(-R)).
  double previous = INFINITY;
  for (double r : {1.0, 4.0, 16.0, 32.0}) {
    EuclideanHierarchy h;
    h.levels.push_back(Tensor({2, 1}, {r, -r}));
    h.levels.push_back(Tensor({1, 1}, {0.0}));
    const double loss = hierarchical_contrastive_loss(map_hierarchy(h, Tensor::scalar(1.0))).item();
    EXPECT_NEAR(loss, std::log1p(std::exp(-r)), 1e-9);
    EXPECT_LT(loss, previous);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-12);
}

TEST(ContrastiveLoss, ThreeNodeClosedForm) {
  for (double a : {0.5, 1.0, 2.0}) {
    for (double b : {0.3, 0.8, 1.0}) {
      const double bb = b * 2 * a;
      auto h = three_node_tree(a, bb);
      const double loss = hierarchical_contrastive_loss(map_hierarchy(h, Tensor::scalar(1.0))).item();
      const double expected = -std::log(std::exp(-a) / (std::exp(-a) + std::exp(-bb)));
      EXPECT_NEAR(loss, expected, 1e-7) << "a=" << a << " b=" << bb;
    }
  }
}

TEST(ContrastiveLoss, ThreeNodeMonotonicity) {
  auto loss_at = [](double a, double b) {
    Tensor to_parent({2, 1}, {a, a});
    Tensor to_level({2, 2}, {0.0, b, b, 0.0});
    return mean(anchor_terms_from_distances(to_parent, to_level)).item();
  };
  const double h = 1e-5;
  for (double a : {0.1, 0.5, 1.0, 2.0}) {
    for (double b : {0.1, 0.5, 1.0, 2.0}) {
      EXPECT_GT((loss_at(a + h, b) - loss_at(a - h, b)) / (2 * h), 0.0);
      EXPECT_LT((loss_at(a, b + h) - loss_at(a, b - h)) / (2 * h), 0.0);
      EXPECT_NEAR(loss_at(a, b), std::log1p(std::exp(a - b)), 1e-14);
    }
  }
}

TEST(ContrastiveLoss, TermsAreNonNegative) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    auto h = random_hierarchy(rng, 8, 3, 4, 3.0);
    Tensor terms = contrastive_anchor_terms(map_hierarchy(h, Tensor::scalar(1.0)));
    for (double v : terms.values()) EXPECT_GE(v, 0.0);
  }
}

TEST(ContrastiveLoss, InvariantUnderRotation) {
  Rng rng(3);
  const std::size_t d = 4;
  auto h = random_hierarchy(rng, 8, 3, d);
  // Random orthogonal matrix by Gram-Schmidt.
  std::vector<std::vector<double>> q;
  while (q.size() < d) {
    auto v = rng.normal_vector(d);
    for (const auto& u : q) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += v[i] * u[i];
      for (std::size_t i = 0; i < d; ++i) v[i] -= dot * u[i];
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    for (auto& x : v) x /= std::sqrt(n);
    q.push_back(v);
  }
  std::vector<double> flat;
  for (const auto& row : q) flat.insert(flat.end(), row.begin(), row.end());
  Tensor rot({d, d}, flat);
  EuclideanHierarchy rotated;
  for (const auto& s : h.levels) rotated.levels.push_back(matmul(s, rot));
  const double a = hierarchical_contrastive_loss(map_hierarchy(h, Tensor::scalar(1.0))).item();
  const double b = hierarchical_contrastive_loss(map_hierarchy(rotated, Tensor::scalar(1.0))).item();
  EXPECT_NEAR(a, b, 1e-9);
}

TEST(ContrastiveLoss, NeedsTwoLevels) {
  EuclideanHierarchy h;
  h.levels.push_back(Tensor({4, 2}));
  EXPECT_THROW(hierarchical_contrastive_loss(map_hierarchy(h, Tensor::scalar(1.0))), ArgumentError);
  EXPECT_THROW(cosine_contrastive_loss(h), ArgumentError);
}

TEST(ContrastiveLoss, GradCheckOnThreeNodeAndDeeperTrees) {
  auto small = three_node_tree(0.7, 1.1);
  Tensor c = Tensor::parameter({1}, {1.3});
  auto f3 = [&] { return hierarchical_contrastive_loss(map_hierarchy(small, c)); };
  EXPECT_LT(grad_check(f3, {small.levels[0], small.levels[1], c}, 1e-6), 1e-3);

  Rng rng(4);
  auto h = random_hierarchy(rng, 8, 3, 4);
  auto f = [&] { return hierarchical_contrastive_loss(map_hierarchy(h, c)); };
  auto report = grad_check_report(f, {h.levels[0], h.levels[1], h.levels[2], c}, 1e-6);
  EXPECT_LT(report.max_relative_error, 1e-3) << "input " << report.worst_input;
}

TEST(ContrastiveLoss, BatchConcatenatesPerImageTerms) {
  Rng rng(6);
  auto a = random_hierarchy(rng, 8, 3, 4), b = random_hierarchy(rng, 8, 3, 4);
  EuclideanHierarchy both;
  both.batch = 2;
  for (std::size_t l = 0; l < 3; ++l) both.levels.push_back(concat_rows({a.levels[l], b.levels[l]}));
  const Tensor c = Tensor::scalar(1.0);
  Tensor terms = contrastive_anchor_terms(map_hierarchy(both, c));
  std::vector<double> expected = testing::to_vector(contrastive_anchor_terms(map_hierarchy(a, c)));
  for (double v : testing::to_vector(contrastive_anchor_terms(map_hierarchy(b, c)))) expected.push_back(v);
  EXPECT_EQ(testing::to_vector(terms), expected);

  std::vector<double> cos_expected = testing::to_vector(cosine_anchor_terms(a));
  for (double v : testing::to_vector(cosine_anchor_terms(b))) cos_expected.push_back(v);
  EXPECT_EQ(testing::to_vector(cosine_anchor_terms(both)), cos_expected);

  auto ca = count_ordered_triples(map_hierarchy(a, c));
  ca += count_ordered_triples(map_hierarchy(b, c));
  auto cb = count_ordered_triples(map_hierarchy(both, c));
  EXPECT_EQ(cb.total, ca.total);
  EXPECT_EQ(cb.ordered, ca.ordered);
}

TEST(CosineLoss, IdenticalDirectionsGiveLogN) {
  EuclideanHierarchy h;
  h.levels.push_back(Tensor({4, 2}, {1, 1, 2, 2, 3, 3, 4, 4}));
  h.levels.push_back(Tensor({2, 2}, {1, 1, 5, 5}));
  EXPECT_NEAR(cosine_contrastive_loss(h).item(), std::log(4.0), 1e-12);
  Rng rng(5);
  auto r = random_hierarchy(rng, 4, 2, 3);
  auto f = [&] { return cosine_contrastive_loss(r); };
  EXPECT_LT(grad_check(f, {r.levels[0], r.levels[1]}, 1e-6), 1e-3);
}

TEST(TotalLoss, LinearCombination) {
  Tensor ce = Tensor::parameter(Shape{}, {1.25}), cont = Tensor::parameter(Shape{}, {2.0}),
         kl = Tensor::parameter(Shape{}, {4.0});
  EXPECT_EQ(total_loss(ce, cont, kl, {0.0, 0.0}).item(), 1.25);
  EXPECT_EQ(total_loss(Tensor::scalar(0.0), cont, kl, {1.0, 0.5}).item(), 4.0);
  auto f = [&] { return total_loss(square(ce), square(cont), square(kl), {0.3, 0.7}); };
  EXPECT_LT(grad_check(f, {ce, cont, kl}), 1e-6);
  f().backward();
  EXPECT_NEAR(ce.grad()[0], 2 * 1.25, 1e-12);
  EXPECT_NEAR(cont.grad()[0], 0.3 * 2 * 2.0, 1e-12);
  EXPECT_NEAR(kl.grad()[0], 0.7 * 2 * 4.0, 1e-12);
}

TEST(TripleScore, HandCountedConfiguration) {
  // Level 1 on a line: children 0,1 under parent 0 and 2,3 under parent 1.
  EuclideanHierarchy h;
  h.levels.push_back(Tensor({4, 1}, {-2.0, -1.0, 1.0, 2.0}));
  h.levels.push_back(Tensor({2, 1}, {-1.5, 1.5}));
  auto mapped = map_hierarchy(h, Tensor::scalar(1.0));
  // Brute force with scalar distances.
  auto kids = mapped.points(1), parents = mapped.points(2);
  std::size_t ordered = 0, total = 0;
  for (std::size_t m = 0; m < 4; ++m)
    for (std::size_t j = 0; j < 4; ++j) {
      if (j == m) continue;
      ++total;
      if (lorentz_distance(kids[m], parents[m / 2]) < lorentz_distance(kids[m], kids[j])) ++ordered;
    }
  auto count = count_ordered_triples(mapped);
  EXPECT_EQ(count.total, total);
  EXPECT_EQ(count.ordered, ordered);
  EXPECT_EQ(total, 12u);
}

TEST(FreeTreeRecovery, ContrastiveLossOrdersTriples) {
  auto fit = testing::fit_free_tree(16, 8, 3, 2000, 11);
  EXPECT_GE(fit.final_score, 0.95) << "initial " << fit.initial_score;
}

}  // namespace
}  // namespace himapper
