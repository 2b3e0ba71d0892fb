#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace nbrseg {

/// Dense row-major matrix. Every array in the library is two-dimensional;
/// vectors are 1×F and scalars are 1×1.
template <class T>
class Matrix {
public:
    using value_type = T;

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        detail::require(data_.size() == rows_ * cols_, "Matrix: data size does not match shape");
    }

    static Matrix from_rows(const std::vector<std::vector<T>>& rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r ? rows.front().size() : 0;
        Matrix m(r, c);
        for (std::size_t i = 0; i < r; ++i) {
            detail::require(rows[i].size() == c, "Matrix::from_rows: ragged rows");
            std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    T& operator()(std::size_t r, std::size_t c) {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }
    const T& operator()(std::size_t r, std::size_t c) const {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

/// out += a · b   (out is a.rows × b.cols)
template <class T>
void gemm_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        T* o = out.row(i).data();
        const T* ar = a.row(i).data();
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ar[p];
            if (av == T(0)) continue;
            const T* br = b.row(p).data();
            for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
        }
    }
}

/// out += a · bᵀ
template <class T>
void gemm_nt_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
    Matrix<T> bt(b.cols(), b.rows());
    for (std::size_t i = 0; i < b.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) bt(j, i) = b(i, j);
    gemm_acc(a, bt, out);
}

/// out += aᵀ · b
template <class T>
void gemm_tn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out) {
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        const T* ar = a.row(i).data();
        const T* br = b.row(i).data();
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ar[p];
            if (av == T(0)) continue;
            T* o = out.row(p).data();
            for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
        }
    }
}

} // namespace nbrseg
