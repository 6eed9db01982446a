// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "himapper/errors.hpp"
#include "himapper/tensor.hpp"

namespace himapper {

struct NamedParameter {
  std::string name;
  Tensor tensor;
  // Decoupled weight decay applies to matrices only.
  bool decay = false;
};

// Ordered registry of trainable leaves. Order is the registration order so
// optimizer updates and checkpoints are reproducible.
class ParameterSet {
 public:
  void add(std::string name, Tensor tensor, bool decay = false) {
    for (const auto& p : entries_) {
      if (p.name == name) throw ArgumentError("duplicate parameter name '" + name + "'");
    }
    entries_.push_back({std::move(name), std::move(tensor), decay});
  }

  void append(const ParameterSet& other) {
    for (const auto& p : other.entries_) add(p.name, p.tensor, p.decay);
  }

  const std::vector<NamedParameter>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  const Tensor* find(const std::string& name) const {
    for (const auto& p : entries_)
      if (p.name == name) return &p.tensor;
    return nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : entries_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : entries_) p.tensor.zero_grad();
  }

  void set_requires_grad(bool flag) {
    for (auto& p : entries_) p.tensor.set_requires_grad(flag);
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& p : entries_) out.push_back(p.tensor);
    return out;
  }

 private:
  std::vector<NamedParameter> entries_;
};

}  // namespace himapper
