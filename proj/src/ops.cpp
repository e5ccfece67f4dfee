// SPDX-License-Identifier: Apache-2.0
#include "finmoe/ops.hpp"

#include <algorithm>
#include <cmath>

namespace finmoe {

bool Matrix::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + a.shape_str() + " x " + b.shape_str());
    }
    Matrix out(a.rows(), b.cols());
    const int n = a.rows(), k = a.cols(), m = b.cols();
    // ikj order so the inner loop streams over contiguous rows.
    for (int i = 0; i < n; ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b.row_ptr(p);
            for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_bt: " + a.shape_str() + " x " + b.shape_str() + "^T");
    }
    Matrix out(a.rows(), b.rows());
    for (int i = 0; i < a.rows(); ++i) {
        const double* arow = a.row_ptr(i);
        double* orow = out.row_ptr(i);
        for (int j = 0; j < b.rows(); ++j) {
            const double* brow = b.row_ptr(j);
            double acc = 0.0;
            for (int p = 0; p < a.cols(); ++p) acc += arow[p] * brow[p];
            orow[j] = acc;
        }
    }
    return out;
}

Matrix matmul_at(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_at: " + a.shape_str() + "^T x " + b.shape_str());
    }
    Matrix out(a.cols(), b.cols());
    for (int p = 0; p < a.rows(); ++p) {
        const double* arow = a.row_ptr(p);
        const double* brow = b.row_ptr(p);
        for (int i = 0; i < a.cols(); ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* orow = out.row_ptr(i);
            for (int j = 0; j < b.cols(); ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Matrix softmax_rows(const Matrix& m) {
    if (m.empty()) throw ShapeError("softmax_rows: empty matrix");
    Matrix out(m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i) {
        const double* row = m.row_ptr(i);
        double* orow = out.row_ptr(i);
        double mx = row[0];
        for (int j = 1; j < m.cols(); ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < m.cols(); ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int j = 0; j < m.cols(); ++j) orow[j] /= sum;
    }
    return out;
}

Matrix silu(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (size_t i = 0; i < m.size(); ++i) {
        const double x = m.values()[i];
        out.values()[i] = x / (1.0 + std::exp(-x));
    }
    return out;
}

Matrix silu_grad(const Matrix& pre) {
    Matrix out(pre.rows(), pre.cols());
    for (size_t i = 0; i < pre.size(); ++i) {
        const double x = pre.values()[i];
        const double s = 1.0 / (1.0 + std::exp(-x));
        out.values()[i] = s * (1.0 + x * (1.0 - s));
    }
    return out;
}

Matrix rmsnorm(const Matrix& x, const Matrix& gain) {
    if (gain.rows() != 1 || gain.cols() != x.cols()) {
        throw ShapeError("rmsnorm: gain " + gain.shape_str() + " vs x " + x.shape_str());
    }
    Matrix out(x.rows(), x.cols());
    const int d = x.cols();
    for (int i = 0; i < x.rows(); ++i) {
        const double* row = x.row_ptr(i);
        double* orow = out.row_ptr(i);
        double ms = 0.0;
        for (int j = 0; j < d; ++j) ms += row[j] * row[j];
        const double inv = 1.0 / std::sqrt(ms / d + kRmsNormEps);
        for (int j = 0; j < d; ++j) orow[j] = row[j] * inv * gain.at(0, j);
    }
    return out;
}

Matrix rmsnorm_input_grad(const Matrix& x, const Matrix& gain, const Matrix& upstream) {
    if (!x.same_shape(upstream)) {
        throw ShapeError("rmsnorm_input_grad: x " + x.shape_str() + " vs upstream " +
                         upstream.shape_str());
    }
    Matrix out(x.rows(), x.cols());
    const int d = x.cols();
    for (int i = 0; i < x.rows(); ++i) {
        const double* xr = x.row_ptr(i);
        const double* ur = upstream.row_ptr(i);
        double* orow = out.row_ptr(i);
        double ms = 0.0;
        for (int j = 0; j < d; ++j) ms += xr[j] * xr[j];
        const double s = ms / d + kRmsNormEps;
        const double inv = 1.0 / std::sqrt(s);
        // y_j = g_j * x_j / sqrt(s);  dx_j = g_j*u_j/sqrt(s) - x_j/(d*s^1.5) * sum_i g_i*x_i*u_i
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += gain.at(0, j) * xr[j] * ur[j];
        const double coef = dot / (d * s * std::sqrt(s));
        for (int j = 0; j < d; ++j) orow[j] = gain.at(0, j) * ur[j] * inv - xr[j] * coef;
    }
    return out;
}

CrossEntropyResult cross_entropy(const Matrix& logits, const std::vector<int>& targets,
                                 const std::vector<int>& mask) {
    if (static_cast<int>(targets.size()) != logits.rows() || targets.size() != mask.size()) {
        throw ShapeError("cross_entropy: logits rows " + std::to_string(logits.rows()) +
                         ", targets " + std::to_string(targets.size()) + ", mask " +
                         std::to_string(mask.size()));
    }
    int count = 0;
    for (int m : mask) count += (m != 0);
    if (count == 0) throw InputError("cross_entropy: empty loss support");
    for (int i = 0; i < logits.rows(); ++i) {
        if (mask[i] != 0 && (targets[i] < 0 || targets[i] >= logits.cols())) {
            throw InputError("cross_entropy: target " + std::to_string(targets[i]) +
                             " out of range at row " + std::to_string(i));
        }
    }

    CrossEntropyResult res;
    res.masked_count = count;
    res.dlogits = Matrix(logits.rows(), logits.cols());
    const int v = logits.cols();
    double loss = 0.0;
    for (int i = 0; i < logits.rows(); ++i) {
        if (mask[i] == 0) continue;
        const double* row = logits.row_ptr(i);
        double* drow = res.dlogits.row_ptr(i);
        double mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
        const double logz = mx + std::log(sum);
        loss += logz - row[targets[i]];
        for (int j = 0; j < v; ++j) {
            drow[j] = std::exp(row[j] - logz) / count;
        }
        drow[targets[i]] -= 1.0 / count;
    }
    res.loss = loss / count;
    return res;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("hadamard: " + a.shape_str() + " vs " + b.shape_str());
    }
    Matrix out(a.rows(), a.cols());
    for (size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("add: " + a.shape_str() + " vs " + b.shape_str());
    }
    Matrix out = a;
    for (size_t i = 0; i < a.size(); ++i) out.values()[i] += b.values()[i];
    return out;
}

Matrix scale(const Matrix& a, double s) {
    Matrix out = a;
    for (double& v : out.values()) v *= s;
    return out;
}

void add_inplace(Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("add_inplace: " + a.shape_str() + " vs " + b.shape_str());
    }
    for (size_t i = 0; i < a.size(); ++i) a.values()[i] += b.values()[i];
}

void axpy_inplace(Matrix& a, double s, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("axpy_inplace: " + a.shape_str() + " vs " + b.shape_str());
    }
    for (size_t i = 0; i < a.size(); ++i) a.values()[i] += s * b.values()[i];
}

}  // namespace finmoe
