// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors of doubles with graph-based reverse-mode
// differentiation. A Tensor is a cheap handle to shared storage, like the
// tensor types of the common deep-learning frameworks; operations in ops.hpp
// return new handles that remember how to propagate gradients to their inputs.

#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace himapper {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  // Null handle; `defined()` is false.
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  // Leaf tensor with requires_grad set.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const noexcept { return node_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;
  // Matrix view helpers; rank must be 2.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  // Writable values. Only meaningful on leaves (parameters, inputs); writing
  // into an intermediate result does not invalidate gradients already taken.
  std::span<double> mutable_values();
  double item() const;
  double operator()(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;
  const char* op_name() const;

  // Accumulated gradient; empty span until a backward pass reaches this node.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Reverse pass from a single-element tensor. Gradients accumulate into
  // leaves; the intermediate graph is released afterwards.
  void backward();

  // Leaf copy of the current values, cut from the graph.
  Tensor detach() const;

  // Same storage identity (not value equality).
  bool same(const Tensor& other) const noexcept { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// While alive, every operation verifies that its output is finite and throws
// NonFiniteError naming itself otherwise.
class FiniteCheckGuard {
 public:
  FiniteCheckGuard();
  ~FiniteCheckGuard();
  FiniteCheckGuard(const FiniteCheckGuard&) = delete;
  FiniteCheckGuard& operator=(const FiniteCheckGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();
bool finite_check_enabled();

}  // namespace himapper
