// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace himapper {

// Seeded generator shared by initializers, datasets and noise streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  // Uniform integer in [lo, hi].
  long integer(long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(engine_); }

  std::vector<double> normal_vector(std::size_t n, double mean = 0.0, double stddev = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal(mean, stddev);
    return v;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Standard-normal draws for the reparameterized tree samples. A zero source
// yields exact means (evaluation mode).
class NoiseSource {
 public:
  static NoiseSource zeros() { return NoiseSource(); }
  static NoiseSource gaussian(std::uint64_t seed) { return NoiseSource(seed); }

  bool is_zero() const { return !rng_.has_value(); }

  void fill(std::span<double> out) {
    if (!rng_) {
      std::fill(out.begin(), out.end(), 0.0);
      return;
    }
    for (auto& x : out) x = rng_->normal();
  }

 private:
  NoiseSource() = default;
  explicit NoiseSource(std::uint64_t seed) : rng_(Rng(seed)) {}
  std::optional<Rng> rng_;
};

}  // namespace himapper
