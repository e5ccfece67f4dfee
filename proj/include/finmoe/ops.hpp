// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "finmoe/matrix.hpp"

namespace finmoe {

inline constexpr double kRmsNormEps = 1e-6;

Matrix matmul(const Matrix& a, const Matrix& b);

// a x b^T and a^T x b, used by the backward pass to avoid materializing
// transposed weight matrices.
Matrix matmul_bt(const Matrix& a, const Matrix& b);
Matrix matmul_at(const Matrix& a, const Matrix& b);

// Row-wise softmax with per-row max subtraction, overflow-safe.
Matrix softmax_rows(const Matrix& m);

// Elementwise x * sigmoid(x).
Matrix silu(const Matrix& m);

// Elementwise d/dx [x * sigmoid(x)] evaluated at the pre-activations.
Matrix silu_grad(const Matrix& pre);

// Each row scaled by 1/sqrt(mean(x^2) + eps), then elementwise gain.
// gain is a single row with x.cols() entries.
Matrix rmsnorm(const Matrix& x, const Matrix& gain);

// dL/dx of rmsnorm given dL/dy; gain is frozen so no gain gradient.
Matrix rmsnorm_input_grad(const Matrix& x, const Matrix& gain, const Matrix& upstream);

struct CrossEntropyResult {
    double loss = 0.0;
    Matrix dlogits;
    int masked_count = 0;
};

// Mean negative log-softmax over positions with mask=1. Gradient is
// (softmax - onehot)/count on masked rows, zero elsewhere.
CrossEntropyResult cross_entropy(const Matrix& logits, const std::vector<int>& targets,
                                 const std::vector<int>& mask);

// Elementwise helpers.
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
void add_inplace(Matrix& a, const Matrix& b);
void axpy_inplace(Matrix& a, double s, const Matrix& b);  // a += s*b

}  // namespace finmoe
