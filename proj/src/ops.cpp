// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "autograd.hpp"
#include "himapper/errors.hpp"

namespace himapper {

using detail::make_result;
using detail::Node;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ArgumentError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  }
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) {
    throw ArgumentError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
  }
}

// Length of a row-broadcast vector, accepting (d) or (1 x d).
std::size_t row_vector_length(const char* op, const Tensor& v) {
  if (v.rank() == 1) return v.dim(0);
  if (v.rank() == 2 && v.dim(0) == 1) return v.dim(1);
  throw ArgumentError(std::string(op) + ": expected a row vector, got " + shape_string(v.shape()));
}

template <typename F, typename D>
Tensor unary(const char* op, const Tensor& a, F f, D df) {
  auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make_result(op, a.shape(), std::move(out), {a}, [df](Node& self) {
    double* ga = self.parent_grad(0);
    if (!ga) return;
    const double* xa = self.parent_value(0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * df(xa[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto x = a.values(), y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = self.parent_grad(p)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto x = a.values(), y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = self.parent_grad(0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = self.parent_grad(1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto x = a.values(), y = b.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const double* xa = self.parent_value(0);
    const double* xb = self.parent_value(1);
    if (double* g = self.parent_grad(0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * xb[i];
    }
    if (double* g = self.parent_grad(1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * xa[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(
      "add_scalar", a, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v > 0.0)) throw NumericDomainError("log: non-positive input");
  }
  return unary(
      "log", a, [](double v) { return std::log(v); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](double v) { return v * v; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.values()) {
    if (!(v >= 0.0)) throw NumericDomainError("sqrt: negative input");
  }
  return unary(
      "sqrt", a, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor clamp_min(const Tensor& a, double lo) {
  return unary(
      "clamp_min", a, [lo](double v) { return std::max(v, lo); },
      [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& a) {
  return unary(
      "gelu", a, [](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
        return cdf + x * pdf;
      });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  require_matrix("add_row", x);
  const std::size_t d = row_vector_length("add_row", row);
  if (d != x.cols()) throw ArgumentError("add_row: width mismatch");
  const std::size_t n = x.rows();
  auto xv = x.values(), rv = row.values();
  std::vector<double> out(xv.begin(), xv.end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += rv[j];
  return make_result("add_row", x.shape(), std::move(out), {x, row}, [n, d](Node& self) {
    if (double* g = self.parent_grad(0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = self.parent_grad(1)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
    }
  });
}

Tensor mul_row(const Tensor& x, const Tensor& row) {
  require_matrix("mul_row", x);
  const std::size_t d = row_vector_length("mul_row", row);
  if (d != x.cols()) throw ArgumentError("mul_row: width mismatch");
  const std::size_t n = x.rows();
  auto xv = x.values(), rv = row.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] * rv[j];
  return make_result("mul_row", x.shape(), std::move(out), {x, row}, [n, d](Node& self) {
    const double* xa = self.parent_value(0);
    const double* ra = self.parent_value(1);
    if (double* g = self.parent_grad(0)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[i * d + j] * ra[j];
    }
    if (double* g = self.parent_grad(1)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j] * xa[i * d + j];
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ArgumentError("matmul: inner dimension mismatch " + shape_string(a.shape()) + " * " +
                        shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  MatMap(out.data(), m, n).noalias() = ConstMatMap(a.values().data(), m, k) * ConstMatMap(b.values().data(), k, n);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    ConstMatMap dc(self.grad.data(), m, n);
    if (double* g = self.parent_grad(0)) {
      MatMap(g, m, k).noalias() += dc * ConstMatMap(self.parent_value(1), k, n).transpose();
    }
    if (double* g = self.parent_grad(1)) {
      MatMap(g, k, n).noalias() += ConstMatMap(self.parent_value(0), m, k).transpose() * dc;
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix("matmul_nt", a);
  require_matrix("matmul_nt", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) throw ArgumentError("matmul_nt: inner dimension mismatch");
  std::vector<double> out(m * n);
  MatMap(out.data(), m, n).noalias() =
      ConstMatMap(a.values().data(), m, k) * ConstMatMap(b.values().data(), n, k).transpose();
  return make_result("matmul_nt", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    ConstMatMap dc(self.grad.data(), m, n);
    if (double* g = self.parent_grad(0)) {
      MatMap(g, m, k).noalias() += dc * ConstMatMap(self.parent_value(1), n, k);
    }
    if (double* g = self.parent_grad(1)) {
      MatMap(g, n, k).noalias() += dc.transpose() * ConstMatMap(self.parent_value(0), m, k);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix("transpose", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  MatMap(out.data(), n, m) = ConstMatMap(a.values().data(), m, n).transpose();
  return make_result("transpose", {n, m}, std::move(out), {a}, [m, n](Node& self) {
    if (double* g = self.parent_grad(0)) {
      MatMap(g, m, n) += ConstMatMap(self.grad.data(), n, m).transpose();
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result("sum", {}, {s}, {a}, [](Node& self) {
    if (double* g = self.parent_grad(0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) {
  const std::size_t n = a.numel();
  if (n == 0) throw ArgumentError("mean of an empty tensor");
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result("mean", {}, {s / static_cast<double>(n)}, {a}, [n](Node& self) {
    if (double* g = self.parent_grad(0)) {
      const double share = self.grad[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) g[i] += share;
    }
  });
}

Tensor mean_row_groups(const Tensor& x, std::size_t group) {
  require_matrix("mean_row_groups", x);
  if (group == 0 || x.rows() % group != 0) {
    throw ArgumentError("mean_row_groups: " + std::to_string(x.rows()) + " rows not divisible into groups of " +
                        std::to_string(group));
  }
  const std::size_t n = x.rows() / group, d = x.cols();
  auto xv = x.values();
  std::vector<double> out(n * d, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < group; ++i)
      for (std::size_t j = 0; j < d; ++j) out[k * d + j] += xv[(k * group + i) * d + j];
    for (std::size_t j = 0; j < d; ++j) out[k * d + j] /= static_cast<double>(group);
  }
  return make_result("mean_row_groups", {n, d}, std::move(out), {x}, [n, d, group](Node& self) {
    if (double* g = self.parent_grad(0)) {
      const double inv = 1.0 / static_cast<double>(group);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < group; ++i)
          for (std::size_t j = 0; j < d; ++j) g[(k * group + i) * d + j] += self.grad[k * d + j] * inv;
    }
  });
}

Tensor mean_rows(const Tensor& x) {
  require_matrix("mean_rows", x);
  return mean_row_groups(x, x.rows());
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ArgumentError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  auto xv = x.values();
  return make_result("reshape", std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x}, [](Node& self) {
    if (double* g = self.parent_grad(0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t n = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.cols() != d) throw ArgumentError("concat_rows: width mismatch");
    offsets.push_back(n * d);
    n += p.rows();
  }
  std::vector<double> out;
  out.reserve(n * d);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_result("concat_rows", {n, d}, std::move(out), parts, [offsets](Node& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      if (double* g = self.parent_grad(p)) {
        const std::size_t len = self.parents[p]->value.size();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offsets[p] + i];
      }
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t d = 0;
  std::vector<std::size_t> offsets, widths;
  for (const auto& p : parts) {
    if (p.rows() != n) throw ArgumentError("concat_cols: row count mismatch");
    offsets.push_back(d);
    widths.push_back(p.cols());
    d += p.cols();
  }
  std::vector<double> out(n * d);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].values();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(v.data() + i * widths[p], widths[p], out.data() + i * d + offsets[p]);
  }
  return make_result("concat_cols", {n, d}, std::move(out), parts, [n, d, offsets, widths](Node& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      if (double* g = self.parent_grad(p)) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < widths[p]; ++j) g[i * widths[p] + j] += self.grad[i * d + offsets[p] + j];
      }
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix("slice_rows", x);
  if (begin + count > x.rows()) throw ArgumentError("slice_rows: range out of bounds");
  const std::size_t d = x.cols();
  auto xv = x.values();
  std::vector<double> out(xv.begin() + begin * d, xv.begin() + (begin + count) * d);
  return make_result("slice_rows", {count, d}, std::move(out), {x}, [begin, d](Node& self) {
    if (double* g = self.parent_grad(0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * d + i] += self.grad[i];
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix("slice_cols", x);
  if (begin + count > x.cols()) throw ArgumentError("slice_cols: range out of bounds");
  const std::size_t n = x.rows(), d = x.cols();
  auto xv = x.values();
  std::vector<double> out(n * count);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(xv.data() + i * d + begin, count, out.data() + i * count);
  return make_result("slice_cols", {n, count}, std::move(out), {x}, [n, d, begin, count](Node& self) {
    if (double* g = self.parent_grad(0)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < count; ++j) g[i * d + begin + j] += self.grad[i * count + j];
    }
  });
}

Tensor gather_rows(const Tensor& x, std::span<const long> index) {
  require_matrix("gather_rows", x);
  const std::size_t n = x.rows(), d = x.cols();
  auto xv = x.values();
  std::vector<double> out(index.size() * d, 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const long r = index[i];
    if (r < -1 || r >= static_cast<long>(n)) throw ArgumentError("gather_rows: index out of range");
    if (r >= 0) std::copy_n(xv.data() + static_cast<std::size_t>(r) * d, d, out.data() + i * d);
  }
  std::vector<long> idx(index.begin(), index.end());
  return make_result("gather_rows", {index.size(), d}, std::move(out), {x}, [idx = std::move(idx), d](Node& self) {
    if (double* g = self.parent_grad(0)) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        double* dst = g + static_cast<std::size_t>(idx[i]) * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += self.grad[i * d + j];
      }
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) {
    throw ArgumentError("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, xv[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        out[base + k * inner] = std::exp(xv[base + k * inner] - mx);
        z += out[base + k * inner];
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= z;
    }
  }
  return make_result("softmax", shape, std::move(out), {x}, [outer, inner, len](Node& self) {
    double* g = self.parent_grad(0);
    if (!g) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += self.grad[base + k * inner] * self.value[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t i = base + k * inner;
          g[i] += self.value[i] * (self.grad[i] - dot);
        }
      }
    }
  });
}

Tensor masked_softmax_rows(const Tensor& x, const std::vector<bool>& key_valid) {
  require_matrix("masked_softmax_rows", x);
  const std::size_t n = x.rows(), m = x.cols();
  if (key_valid.size() != m) throw ArgumentError("masked_softmax_rows: mask length mismatch");
  auto xv = x.values();
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (key_valid[j]) mx = std::max(mx, xv[i * m + j]);
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!key_valid[j]) continue;
      out[i * m + j] = std::exp(xv[i * m + j] - mx);
      z += out[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
  }
  return make_result("masked_softmax_rows", {n, m}, std::move(out), {x}, [n, m](Node& self) {
    double* g = self.parent_grad(0);
    if (!g) return;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += self.grad[i * m + j] * self.value[i * m + j];
      for (std::size_t j = 0; j < m; ++j) g[i * m + j] += self.value[i * m + j] * (self.grad[i * m + j] - dot);
    }
  });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> labels) {
  require_matrix("cross_entropy_rows", logits);
  const std::size_t n = logits.rows(), m = logits.cols();
  if (labels.size() != n) throw ArgumentError("cross_entropy_rows: one label per row required");
  auto xv = logits.values();
  std::vector<double> out(n);
  std::vector<double> probs(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= m) throw ArgumentError("cross_entropy_rows: label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, xv[i * m + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      probs[i * m + j] = std::exp(xv[i * m + j] - mx);
      z += probs[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) probs[i * m + j] /= z;
    // Both parts are non-negative (z >= 1), so the loss never dips below 0.
    out[i] = std::log(z) + (mx - xv[i * m + labels[i]]);
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return make_result("cross_entropy_rows", {n, 1}, std::move(out), {logits},
                     [n, m, lab = std::move(lab), probs = std::move(probs)](Node& self) {
                       double* g = self.parent_grad(0);
                       if (!g) return;
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < m; ++j) {
                           const double target = (j == lab[i]) ? 1.0 : 0.0;
                           g[i * m + j] += self.grad[i] * (probs[i * m + j] - target);
                         }
                       }
                     });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_matrix("layer_norm_rows", x);
  const std::size_t n = x.rows(), d = x.cols();
  if (row_vector_length("layer_norm_rows", gain) != d || row_vector_length("layer_norm_rows", bias) != d) {
    throw ArgumentError("layer_norm_rows: gain/bias width mismatch");
  }
  auto xv = x.values(), gv = gain.values(), bv = bias.values();
  std::vector<double> out(n * d), xhat(n * d), inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xv[i * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xv[i * d + j] - mu) * (xv[i * d + j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (xv[i * d + j] - mu) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gv[j] + bv[j];
    }
  }
  return make_result(
      "layer_norm_rows", {n, d}, std::move(out), {x, gain, bias},
      [n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const double* gv = self.parent_value(1);
        if (double* gg = self.parent_grad(1)) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gg[j] += self.grad[i * d + j] * xhat[i * d + j];
        }
        if (double* gb = self.parent_grad(2)) {
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += self.grad[i * d + j];
        }
        if (double* gx = self.parent_grad(0)) {
          std::vector<double> dxhat(d);
          for (std::size_t i = 0; i < n; ++i) {
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = self.grad[i * d + j] * gv[j];
              mean_dxhat += dxhat[j];
              mean_dxhat_xhat += dxhat[j] * xhat[i * d + j];
            }
            mean_dxhat /= static_cast<double>(d);
            mean_dxhat_xhat /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              gx[i * d + j] += inv_std[i] * (dxhat[j] - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
            }
          }
        }
      });
}

Tensor replace_diagonal(const Tensor& m, const Tensor& v) {
  require_matrix("replace_diagonal", m);
  const std::size_t n = m.rows();
  if (m.cols() != n) throw ArgumentError("replace_diagonal: matrix must be square");
  if (v.numel() != n) throw ArgumentError("replace_diagonal: need one value per diagonal entry");
  auto mv = m.values(), vv = v.values();
  std::vector<double> out(mv.begin(), mv.end());
  for (std::size_t i = 0; i < n; ++i) out[i * n + i] = vv[i];
  return make_result("replace_diagonal", {n, n}, std::move(out), {m, v}, [n](Node& self) {
    if (double* g = self.parent_grad(0)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (i != j) g[i * n + j] += self.grad[i * n + j];
    }
    if (double* g = self.parent_grad(1)) {
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i * n + i];
    }
  });
}

Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b) {
  require_matrix("cosine_similarity_matrix", a);
  require_matrix("cosine_similarity_matrix", b);
  const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
  if (b.cols() != d) throw ArgumentError("cosine_similarity_matrix: width mismatch");
  static constexpr double kMinNorm = 1e-12;
  auto norms = [d](std::span<const double> v, std::size_t rows) {
    std::vector<double> out(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += v[i * d + j] * v[i * d + j];
      out[i] = std::max(std::sqrt(s), kMinNorm);
    }
    return out;
  };
  auto na = norms(a.values(), n), nb = norms(b.values(), m);
  std::vector<double> out(n * m);
  MatMap(out.data(), n, m).noalias() =
      ConstMatMap(a.values().data(), n, d) * ConstMatMap(b.values().data(), m, d).transpose();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= na[i] * nb[j];
  return make_result("cosine_similarity_matrix", {n, m}, std::move(out), {a, b},
                     [n, m, d, na = std::move(na), nb = std::move(nb)](Node& self) {
                       const double* av = self.parent_value(0);
                       const double* bv = self.parent_value(1);
                       double* ga = self.parent_grad(0);
                       double* gb = self.parent_grad(1);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < m; ++j) {
                           const double g = self.grad[i * m + j];
                           if (g == 0.0) continue;
                           const double c = self.value[i * m + j];
                           const double inv = 1.0 / (na[i] * nb[j]);
                           for (std::size_t k = 0; k < d; ++k) {
                             if (ga) ga[i * d + k] += g * (bv[j * d + k] * inv - c * av[i * d + k] / (na[i] * na[i]));
                             if (gb) gb[j * d + k] += g * (av[i * d + k] * inv - c * bv[j * d + k] / (nb[j] * nb[j]));
                           }
                         }
                       }
                     });
}

Tensor cosine_similarity_paired(const Tensor& a, const Tensor& b) {
  require_matrix("cosine_similarity_paired", a);
  require_matrix("cosine_similarity_paired", b);
  if (a.shape() != b.shape()) throw ArgumentError("cosine_similarity_paired: shape mismatch");
  const std::size_t n = a.rows(), d = a.cols();
  static constexpr double kMinNorm = 1e-12;
  auto av = a.values(), bv = b.values();
  std::vector<double> out(n), na(n), nb(n);
  for (std::size_t i = 0; i < n; ++i) {
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      saa += av[i * d + k] * av[i * d + k];
      sbb += bv[i * d + k] * bv[i * d + k];
      sab += av[i * d + k] * bv[i * d + k];
    }
    na[i] = std::max(std::sqrt(saa), kMinNorm);
    nb[i] = std::max(std::sqrt(sbb), kMinNorm);
    out[i] = sab / (na[i] * nb[i]);
  }
  return make_result("cosine_similarity_paired", {n, 1}, std::move(out), {a, b},
                     [n, d, na = std::move(na), nb = std::move(nb)](Node& self) {
                       const double* av = self.parent_value(0);
                       const double* bv = self.parent_value(1);
                       double* ga = self.parent_grad(0);
                       double* gb = self.parent_grad(1);
                       for (std::size_t i = 0; i < n; ++i) {
                         const double g = self.grad[i], c = self.value[i];
                         const double inv = 1.0 / (na[i] * nb[i]);
                         for (std::size_t k = 0; k < d; ++k) {
                           if (ga) ga[i * d + k] += g * (bv[i * d + k] * inv - c * av[i * d + k] / (na[i] * na[i]));
                           if (gb) gb[i * d + k] += g * (av[i * d + k] * inv - c * bv[i * d + k] / (nb[i] * nb[i]));
                         }
                       }
                     });
}

}  // namespace himapper
