// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace himapper {

// Bad shapes, widths, levels or other caller mistakes.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Inputs outside a function's mathematical domain (e.g. off-hyperboloid points).
class NumericDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A non-finite value was produced. `op()` names the operation that produced it.
class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(std::string op)
      : std::runtime_error("non-finite value produced by '" + op + "'"), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

// Training produced a non-finite loss; step() is the 0-based optimizer step.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, const std::string& what)
      : std::runtime_error("non-finite " + what + " at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace himapper
