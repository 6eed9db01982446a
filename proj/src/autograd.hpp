// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0
//
// Internal graph node and the helper every differentiable op uses to build
// its result. Not installed; include only from src/.

#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "himapper/tensor.hpp"

namespace himapper::detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `self.grad` and accumulates into parents that require grad.
  std::function<void(Node& self)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
  // Gradient buffer of parent `i`, or nullptr when it does not need one.
  double* parent_grad(std::size_t i) {
    Node& p = *parents[i];
    return p.requires_grad ? p.ensure_grad().data() : nullptr;
  }
  const double* parent_value(std::size_t i) const { return parents[i]->value.data(); }
};

using BackwardFn = std::function<void(Node&)>;

// Wraps `values` into a tensor. Records parents and the backward closure only
// when grad mode is on and some input requires grad.
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> inputs, BackwardFn backward);
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& inputs, BackwardFn backward);

}  // namespace himapper::detail
