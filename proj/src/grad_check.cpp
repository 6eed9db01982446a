// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/grad_check.hpp"

#include <cmath>

#include "himapper/errors.hpp"

namespace himapper {

GradCheckReport grad_check_report(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double eps) {
  if (!(eps > 0.0)) throw ArgumentError("grad_check: eps must be positive");
  FiniteCheckGuard finite;

  std::vector<bool> previous(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    previous[i] = inputs[i].requires_grad();
    inputs[i].set_requires_grad(true);
    inputs[i].zero_grad();
  }

  Tensor out = f();
  if (out.numel() != 1) throw ArgumentError("grad_check: function must return a scalar");
  out.backward();

  std::vector<std::vector<double>> analytic(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto g = inputs[i].grad();
    analytic[i] = g.empty() ? std::vector<double>(inputs[i].numel(), 0.0) : std::vector<double>(g.begin(), g.end());
  }

  GradCheckReport report;
  {
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      auto values = inputs[i].mutable_values();
      for (std::size_t k = 0; k < values.size(); ++k) {
        const double saved = values[k];
        values[k] = saved + eps;
        const double plus = f().item();
        values[k] = saved - eps;
        const double minus = f().item();
        values[k] = saved;
        const double numeric = (plus - minus) / (2.0 * eps);
        const double a = analytic[i][k];
        const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
        ++report.checked;
        if (err > report.max_relative_error || report.checked == 1) {
          report.max_relative_error = err;
          report.worst_input = i;
          report.worst_element = k;
          report.worst_analytic = a;
          report.worst_numeric = numeric;
        }
      }
    }
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    inputs[i].zero_grad();
    inputs[i].set_requires_grad(previous[i]);
  }
  return report;
}

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double eps) {
  return grad_check_report(f, std::move(inputs), eps).max_relative_error;
}

}  // namespace himapper
