#pragma once

#include <cstddef>
#include <vector>

namespace extravar {

// Dense row-major matrix of doubles.  Deliberately minimal; the toolkit only
// needs plain products and row views.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// a (r x k) * b (k x c)
Matrix matmul(const Matrix& a, const Matrix& b);

// a (r x k) * b^T where b is (c x k)
Matrix matmul_nt(const Matrix& a, const Matrix& b);

// true if every element is bitwise identical
bool bit_equal(const Matrix& a, const Matrix& b);

double max_abs_diff(const Matrix& a, const Matrix& b);

} // namespace extravar
