// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "himapper/tensor.hpp"

namespace himapper {

struct GradCheckReport {
  double max_relative_error = 0.0;
  // Location of the worst entry: input index and flat element index.
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Compares reverse-mode gradients of the scalar `f` against central
// differences for every element of `inputs` (leaf tensors `f` reads).
// Relative error per entry is |a - n| / (|a| + |n| + 1e-12).
// Throws NonFiniteError naming the offending op if any intermediate is
// non-finite.
GradCheckReport grad_check_report(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                  double eps = 1e-4);

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double eps = 1e-4);

}  // namespace himapper
