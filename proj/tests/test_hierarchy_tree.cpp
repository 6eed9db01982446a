// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "himapper/errors.hpp"
#include "himapper/grad_check.hpp"
#include "himapper/hierarchy_tree.hpp"
#include "himapper/ops.hpp"
#include "test_util.hpp"

namespace himapper {
namespace {

// Streaming mean/variance with the standard error of both estimates.
struct Moments {
  double n = 0, mean = 0, m2 = 0, m4_acc = 0;
  std::vector<double> xs;
  void add(double x) {
    xs.push_back(x);
    n += 1;
    const double delta = x - mean;
    mean += delta / n;
    m2 += delta * (x - mean);
  }
  double variance() const { return m2 / (n - 1); }
  double mean_se() const { return std::sqrt(variance() / n); }
  double variance_se() const {
    double m4 = 0.0;
    for (double x : xs) m4 += std::pow(x - mean, 4) / n;
    const double v = variance();
    return std::sqrt((m4 - v * v) / n);
  }
};

std::vector<GaussianNode> random_leaves(Rng& rng, std::size_t n, std::size_t d) {
  std::vector<GaussianNode> leaves(n);
  for (auto& leaf : leaves) {
    leaf.mu = rng.normal_vector(d);
    leaf.log_sigma = rng.normal_vector(d, -0.3, 0.4);
  }
  return leaves;
}

TEST(TreeShape, ValidatesDivisibilityAndCounts) {
  EXPECT_THROW((TreeShape{6, 3, 4}.validate()), ArgumentError);
  EXPECT_THROW((TreeShape{8, 0, 4}.validate()), ArgumentError);
  TreeShape s{32, 4, 8};
  s.validate();
  EXPECT_EQ(s.nodes_at(1), 32u);
  EXPECT_EQ(s.nodes_at(4), 4u);
  EXPECT_EQ(s.total_nodes(), 32u + 16 + 8 + 4);
  EXPECT_THROW(s.nodes_at(5), ArgumentError);
}

TEST(MogMoments, IdenticalChildrenReproduceTheChild) {
  auto m = mog_moments({0.3, -1.0}, {0.5, 2.0}, {0.3, -1.0}, {0.5, 2.0});
  EXPECT_DOUBLE_EQ(m.mean[0], 0.3);
  EXPECT_DOUBLE_EQ(m.mean[1], -1.0);
  EXPECT_DOUBLE_EQ(m.variance[0], 0.25);
  EXPECT_DOUBLE_EQ(m.variance[1], 4.0);
}

TEST(MogMoments, TwoPointSymmetricMixture) {
  auto m = mog_moments({-1.5}, {0.0}, {1.5}, {0.0});
  EXPECT_DOUBLE_EQ(m.mean[0], 0.0);
  EXPECT_DOUBLE_EQ(m.variance[0], 2.25);
}

TEST(MogMoments, MatchesMonteCarloOracle) {
  auto m = mog_moments({0.0}, {1.0}, {2.0}, {1.0});
  EXPECT_DOUBLE_EQ(m.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(m.variance[0], 2.0);
  // Draw from the mixture directly: pick a component by a fair coin.
  std::mt19937_64 eng(99);
  std::normal_distribution<double> z;
  std::bernoulli_distribution coin;
  Moments mc;
  for (int i = 0; i < 1'000'000; ++i) mc.add((coin(eng) ? 2.0 : 0.0) + z(eng));
  EXPECT_LT(std::abs(mc.mean - 1.0), 3 * mc.mean_se());
  EXPECT_LT(std::abs(mc.variance() - 2.0), 3 * mc.variance_se());
}

TEST(MogMoments, DimensionMismatchIsArgumentError) {
  EXPECT_THROW(mog_moments({0.0}, {1.0, 1.0}, {0.0}, {1.0}), ArgumentError);
}

TEST(SampleLevel, ZeroNoiseLevelOneIsTheMean) {
  Rng rng(1);
  auto tree = HierarchyTree::random({8, 3, 5}, rng);
  auto noise = NoiseSource::zeros();
  auto s = tree.sample_level(1, noise);
  EXPECT_EQ(testing::to_vector(s.rows), testing::to_vector(tree.leaf_mu()));
}

TEST(SampleLevel, VanishingScaleGivesComponentMeans) {
  Rng rng(2);
  auto leaves = random_leaves(rng, 4, 3);
  for (auto& leaf : leaves) leaf.log_sigma.assign(3, -1000.0);
  auto tree = HierarchyTree::from_leaves({4, 2, 3}, leaves);
  auto noise = NoiseSource::gaussian(5);
  auto l1 = tree.sample_level(1, noise);
  auto l2 = tree.sample_level(2, noise);
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(l1.rows(n, j), leaves[n].mu[j], 1e-8);
      // Level 2: node k slot i draws from leaf 2k + (i mod 2), which is leaf n.
      EXPECT_NEAR(l2.rows(n, j), leaves[n].mu[j], 1e-8);
    }
}

TEST(SampleLevel, EveryLevelHasLeafCountRows) {
  Rng rng(3);
  auto tree = HierarchyTree::random({16, 5, 4}, rng);
  auto noise = NoiseSource::gaussian(1);
  for (const auto& s : tree.sample_tree(noise)) {
    EXPECT_EQ(s.rows.rows(), 16u);
    EXPECT_EQ(s.rows.cols(), 4u);
    EXPECT_EQ(s.draws_per_node * tree.shape().nodes_at(s.level), 16u);
  }
  EXPECT_THROW(tree.sample_level(0, noise), ArgumentError);
  EXPECT_THROW(tree.sample_level(6, noise), ArgumentError);
}

TEST(SampleLevel, LevelTwoMonteCarloMatchesMixtureMoments) {
  Rng rng(4);
  auto leaves = random_leaves(rng, 4, 2);
  auto tree = HierarchyTree::from_leaves({4, 2, 2}, leaves);
  NoGradGuard no_grad;
  auto noise = NoiseSource::gaussian(17);
  std::vector<Moments> mc(2 * 2);
  for (int call = 0; call < 100'000; ++call) {
    auto s = tree.sample_level(2, noise);
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) mc[k * 2 + j].add(s.rows(k * 2 + i, j));
  }
  for (std::size_t k = 0; k < 2; ++k) {
    const auto& a = leaves[2 * k];
    const auto& b = leaves[2 * k + 1];
    std::vector<double> sa, sb;
    for (double v : a.log_sigma) sa.push_back(std::exp(v));
    for (double v : b.log_sigma) sb.push_back(std::exp(v));
    auto m = mog_moments(a.mu, sa, b.mu, sb);
    for (std::size_t j = 0; j < 2; ++j) {
      const auto& e = mc[k * 2 + j];
      EXPECT_LT(std::abs(e.mean - m.mean[j]), 3 * e.mean_se()) << "node " << k << " dim " << j;
      EXPECT_LT(std::abs(e.variance() - m.variance[j]), 3 * e.variance_se()) << "node " << k << " dim " << j;
    }
  }
}

TEST(SampleTree, SingleLevelReducesToLevelOne) {
  Rng rng(5);
  auto tree = HierarchyTree::random({4, 1, 3}, rng);
  auto n1 = NoiseSource::gaussian(3), n2 = NoiseSource::gaussian(3);
  auto all = tree.sample_tree(n1);
  ASSERT_EQ(all.size(), 1u);
  EXPECT_EQ(testing::to_vector(all[0].rows), testing::to_vector(tree.sample_level(1, n2).rows));
}

TEST(SampleTree, ZeroNoiseRepeatsAncestorMeans) {
  Rng rng(6);
  auto leaves = random_leaves(rng, 8, 2);
  auto tree = HierarchyTree::from_leaves({8, 3, 2}, leaves);
  auto noise = NoiseSource::zeros();
  auto levels = tree.sample_tree(noise);
  // Level 3 node 0 slots alternate between level-2 nodes 0 and 1.
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t child = i % 2;
    for (std::size_t j = 0; j < 2; ++j) {
      const double expected = 0.5 * (leaves[2 * child].mu[j] + leaves[2 * child + 1].mu[j]);
      EXPECT_NEAR(levels[2].rows(i, j), expected, 1e-15);
    }
  }
}

TEST(SampleTree, FixedSeedIsBitIdentical) {
  Rng rng(7);
  auto tree = HierarchyTree::random({8, 3, 4}, rng);
  auto a = NoiseSource::gaussian(42), b = NoiseSource::gaussian(42);
  auto x = tree.sample_tree(a), y = tree.sample_tree(b);
  for (std::size_t l = 0; l < x.size(); ++l) EXPECT_EQ(testing::to_vector(x[l].rows), testing::to_vector(y[l].rows));
}

TEST(KlRegularizer, StandardLeavesGiveZero) {
  std::vector<GaussianNode> leaves(4, GaussianNode{{0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}});
  auto tree = HierarchyTree::from_leaves({4, 3, 3}, leaves);
  EXPECT_EQ(tree.kl_regularizer().item(), 0.0);
}

TEST(KlRegularizer, UnitShiftedGaussianIsOneHalf) {
  auto tree = HierarchyTree::from_leaves({1, 1, 1}, {GaussianNode{{1.0}, {0.0}}});
  EXPECT_NEAR(tree.kl_regularizer().item(), 0.5, 1e-9);
  // Cross-check by integrating p log(p/q) with Simpson's rule.
  auto p = [](double x) { return std::exp(-0.5 * (x - 1) * (x - 1)) / std::sqrt(2 * std::numbers::pi); };
  auto q = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2 * std::numbers::pi); };
  const double lo = -15, hi = 17;
  const int n = 20000;
  const double h = (hi - lo) / n;
  double integral = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * h;
    const double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
    integral += w * p(x) * std::log(p(x) / q(x));
  }
  EXPECT_NEAR(integral * h / 3, 0.5, 1e-9);
}

TEST(KlRegularizer, NonNegativeOnRandomTrees) {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    auto tree = HierarchyTree::from_leaves({8, 1 + static_cast<std::size_t>(t % 4), 3}, random_leaves(rng, 8, 3));
    EXPECT_GE(tree.kl_regularizer().item(), 0.0);
  }
}

TEST(KlRegularizer, DeterministicTreeIsZeroAndHasNoSigmaGradient) {
  Rng rng(9);
  auto tree = HierarchyTree::random({8, 3, 4}, rng);
  tree.set_deterministic(true);
  EXPECT_EQ(tree.kl_regularizer().item(), 0.0);
  auto noise = NoiseSource::gaussian(1);
  Tensor total = Tensor::scalar(0.0);
  for (const auto& s : tree.sample_tree(noise)) total = add(total, sum(square(s.rows)));
  total.backward();
  for (double g : tree.leaf_log_sigma().grad()) EXPECT_EQ(g, 0.0);
  EXPECT_FALSE(tree.leaf_mu().grad().empty());
}

TEST(TreeGradients, KlAndSampledMeansPassGradCheck) {
  Rng rng(10);
  auto tree = HierarchyTree::from_leaves({8, 3, 3}, random_leaves(rng, 8, 3));
  Tensor w({8, 3}, rng.normal_vector(24));
  auto f = [&] {
    auto noise = NoiseSource::gaussian(123);
    Tensor total = tree.kl_regularizer();
    for (const auto& s : tree.sample_tree(noise)) total = add(total, sum(mul(s.rows, w)));
    return total;
  };
  auto report = grad_check_report(f, {tree.leaf_mu(), tree.leaf_log_sigma()}, 1e-6);
  EXPECT_LT(report.max_relative_error, 1e-3) << "input " << report.worst_input << " element "
                                             << report.worst_element;
}

}  // namespace
}  // namespace himapper
