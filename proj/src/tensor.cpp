// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "autograd.hpp"
#include "himapper/errors.hpp"

namespace himapper {

namespace {
thread_local bool t_grad_mode = true;
thread_local bool t_finite_check = false;

detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw ArgumentError("operation on an undefined tensor");
  return *node;
}
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::Node>()) {
  node_->value.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
  if (shape_numel(shape) != values.size()) {
    throw ArgumentError("tensor shape " + shape_string(shape) + " does not match " +
                        std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return checked(node_).shape; }
std::size_t Tensor::numel() const { return checked(node_).value.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ArgumentError("axis out of range for shape " + shape_string(s));
  return s[axis];
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ArgumentError("expected a matrix, got shape " + shape_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ArgumentError("expected a matrix, got shape " + shape_string(shape()));
  return shape()[1];
}

std::span<const double> Tensor::values() const { return checked(node_).value; }
std::span<double> Tensor::mutable_values() { return checked(node_).value; }

double Tensor::item() const {
  if (numel() != 1) throw ArgumentError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::operator()(std::size_t row, std::size_t col) const {
  return node_->value[row * cols() + col];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw ArgumentError("requires_grad can only be changed on leaf tensors");
  node_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return !checked(node_).backward; }
const char* Tensor::op_name() const { return checked(node_).op; }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }
std::span<double> Tensor::mutable_grad() { return checked(node_).ensure_grad(); }

void Tensor::zero_grad() {
  auto& n = checked(node_);
  std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

void Tensor::backward() {
  auto& root = checked(node_);
  if (root.value.size() != 1) {
    throw ArgumentError("backward() needs a single-element tensor, got " + shape_string(root.shape));
  }
  if (!root.requires_grad) return;

  // Iterative post-order DFS; parents are visited in recorded order so the
  // accumulation order, and thus every gradient bit, is reproducible.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(&root, 0);
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Release the graph only after the sweep: parents own their inputs, so
  // clearing earlier would free nodes still queued in `order`.
  for (detail::Node* n : order) {
    if (!n->backward) continue;
    n->backward = nullptr;
    if (n != &root) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
  // Post-order clears inputs before their consumers, so every node in
  // `order` is still owned by a later consumer when it is visited.
  for (detail::Node* n : order) n->parents.clear();
}

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return Tensor(n.shape, n.value);
}

NoGradGuard::NoGradGuard() : previous_(t_grad_mode) { t_grad_mode = false; }
NoGradGuard::~NoGradGuard() { t_grad_mode = previous_; }

FiniteCheckGuard::FiniteCheckGuard() : previous_(t_finite_check) { t_finite_check = true; }
FiniteCheckGuard::~FiniteCheckGuard() { t_finite_check = previous_; }

bool grad_mode_enabled() { return t_grad_mode; }
bool finite_check_enabled() { return t_finite_check; }

namespace detail {

namespace {
template <typename Inputs>
Tensor make_result_impl(const char* op, Shape shape, std::vector<double> values, const Inputs& inputs,
                        BackwardFn backward) {
  if (shape_numel(shape) != values.size()) {
    throw ArgumentError(std::string(op) + ": internal shape/value mismatch");
  }
  if (t_finite_check) {
    for (double v : values) {
      if (!std::isfinite(v)) throw NonFiniteError(op);
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  bool needs = false;
  if (t_grad_mode) {
    for (const auto& t : inputs) needs = needs || (t.defined() && t.node()->requires_grad);
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}
}  // namespace

Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::initializer_list<Tensor> inputs, BackwardFn backward) {
  return make_result_impl(op, std::move(shape), std::move(values), inputs, std::move(backward));
}

Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& inputs, BackwardFn backward) {
  return make_result_impl(op, std::move(shape), std::move(values), inputs, std::move(backward));
}

}  // namespace detail
}  // namespace himapper
