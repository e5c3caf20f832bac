#pragma once

#include <cstddef>
#include <vector>

#include "otupred/error.hpp"

namespace otupred {

// Dense row-major matrix of doubles. Rows are samples, columns are features
// throughout the library.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* row_ptr(std::size_t r) { return data_.data() + r * cols_; }
    const double* row_ptr(std::size_t r) const { return data_.data() + r * cols_; }

    std::vector<double> row(std::size_t r) const {
        return std::vector<double>(row_ptr(r), row_ptr(r) + cols_);
    }
    std::vector<double> col(std::size_t c) const {
        std::vector<double> out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
        return out;
    }

    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

    // Keeps the listed rows, in the given order.
    Matrix take_rows(const std::vector<std::size_t>& idx) const {
        Matrix out(idx.size(), cols_);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] >= rows_) throw UsageError("take_rows: index out of range");
            for (std::size_t c = 0; c < cols_; ++c) out(i, c) = (*this)(idx[i], c);
        }
        return out;
    }

    // Keeps the listed columns, in the given order.
    Matrix take_cols(const std::vector<std::size_t>& idx) const {
        Matrix out(rows_, idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] >= cols_) throw UsageError("take_cols: index out of range");
            for (std::size_t r = 0; r < rows_; ++r) out(r, i) = (*this)(r, idx[i]);
        }
        return out;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

}  // namespace otupred
