// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/optim.hpp"

#include <cmath>
#include <numbers>

#include "himapper/errors.hpp"

namespace himapper {

AdamW::AdamW(ParameterSet params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0) || config_.weight_decay < 0.0) throw ArgumentError("AdamW: invalid learning rate or decay");
  for (const auto& p : params_.entries()) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const auto& entries = params_.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor t = entries[k].tensor;
    auto g = t.grad();
    if (g.empty()) continue;
    auto w = t.mutable_values();
    auto& m = m_[k];
    auto& v = v_[k];
    const double decay = entries[k].decay ? config_.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
      w[i] -= lr * (update + decay * w[i]);
    }
  }
}

void AdamW::restore(std::size_t steps, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw ArgumentError("AdamW::restore: parameter count mismatch");
  for (std::size_t k = 0; k < m.size(); ++k) {
    if (m[k].size() != m_[k].size() || v[k].size() != v_[k].size()) {
      throw ArgumentError("AdamW::restore: buffer size mismatch");
    }
  }
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps, std::size_t warmup_steps) {
  if (total_steps == 0) return base_lr;
  if (step < warmup_steps) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const double span = static_cast<double>(total_steps - std::min(warmup_steps, total_steps));
  const double progress = span > 0 ? static_cast<double>(step - warmup_steps) / span : 1.0;
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

}  // namespace himapper
