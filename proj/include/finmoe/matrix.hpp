// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "finmoe/errors.hpp"

namespace finmoe {

// Dense row-major matrix of doubles. The only numeric carrier in the
// project; activations, parameters and gradients are all Matrix values.
class Matrix {
public:
    Matrix() = default;

    Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
        check_dims(rows, cols);
        values_.assign(static_cast<size_t>(rows) * cols, 0.0);
    }

    Matrix(int rows, int cols, std::vector<double> values)
        : rows_(rows), cols_(cols), values_(std::move(values)) {
        check_dims(rows, cols);
        if (values_.size() != static_cast<size_t>(rows) * cols) {
            throw ShapeError("Matrix: values length " + std::to_string(values_.size()) +
                             " != " + std::to_string(rows) + "x" + std::to_string(cols));
        }
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    bool empty() const { return rows_ == 0 || cols_ == 0; }
    size_t size() const { return values_.size(); }

    double& at(int r, int c) { return values_[static_cast<size_t>(r) * cols_ + c]; }
    double at(int r, int c) const { return values_[static_cast<size_t>(r) * cols_ + c]; }

    double* row_ptr(int r) { return values_.data() + static_cast<size_t>(r) * cols_; }
    const double* row_ptr(int r) const { return values_.data() + static_cast<size_t>(r) * cols_; }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool all_finite() const;

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

private:
    static void check_dims(int rows, int cols) {
        if (rows <= 0 || cols <= 0) {
            throw ShapeError("Matrix: dimensions must be positive, got " +
                             std::to_string(rows) + "x" + std::to_string(cols));
        }
    }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> values_;
};

}  // namespace finmoe
