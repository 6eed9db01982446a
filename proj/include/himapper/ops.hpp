// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "himapper/tensor.hpp"

namespace himapper {

// Elementwise, equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

Tensor exp(const Tensor& a);
// Natural log; inputs must be positive.
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
// Square root; inputs must be non-negative.
Tensor sqrt(const Tensor& a);
// max(a, lo) elementwise; gradient passes only where a > lo.
Tensor clamp_min(const Tensor& a, double lo);
// Exact (erf-based) GELU.
Tensor gelu(const Tensor& a);

// Broadcast a length-d vector (shape (d) or (1xd)) across the rows of an (n x d) matrix.
Tensor add_row(const Tensor& x, const Tensor& row);
Tensor mul_row(const Tensor& x, const Tensor& row);

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// (g*n x d) -> (n x d): row k is the mean of rows [k*g, (k+1)*g).
Tensor mean_row_groups(const Tensor& x, std::size_t group);
// (n x d) -> (1 x d)
Tensor mean_rows(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
// Output row i is x row index[i]; index -1 yields a zero row.
Tensor gather_rows(const Tensor& x, std::span<const long> index);

// Softmax along `axis` of a tensor of any rank.
Tensor softmax(const Tensor& x, std::size_t axis);
// Row softmax of an (n x m) matrix where columns with key_valid[j] == false get
// zero weight. A row with no valid column is all zeros.
Tensor masked_softmax_rows(const Tensor& x, const std::vector<bool>& key_valid);
// Per-row cross-entropy -log softmax(logits[i])[labels[i]], shape (n x 1).
Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> labels);

// Row layer normalization with learned gain and bias (length d each).
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Copy of square M with the diagonal replaced by v (n values).
Tensor replace_diagonal(const Tensor& m, const Tensor& v);

// Cosine similarity between every row of a (n x d) and every row of b (m x d).
Tensor cosine_similarity_matrix(const Tensor& a, const Tensor& b);
Tensor cosine_similarity_paired(const Tensor& a, const Tensor& b);

}  // namespace himapper
