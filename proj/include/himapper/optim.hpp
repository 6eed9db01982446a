// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "himapper/params.hpp"

namespace himapper {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay. Decay applies only to parameters
// registered with decay = true (matrices).
class AdamW {
 public:
  AdamW(ParameterSet params, AdamWConfig config);

  // One update with learning rate `lr` using the accumulated gradients;
  // parameters without a gradient are skipped. Gradients are left in place.
  void step(double lr);
  std::size_t steps() const { return t_; }
  const ParameterSet& params() const { return params_; }

  // Moment buffers in parameter order, for checkpointing.
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(std::size_t steps, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

 private:
  ParameterSet params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

// Cosine decay from base_lr at step 0 to 0 at total_steps, with an optional
// linear warmup.
double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps, std::size_t warmup_steps = 0);

}  // namespace himapper
