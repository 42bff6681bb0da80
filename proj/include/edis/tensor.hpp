#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace edis {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major tensor. Batches of vectors are rank-2 tensors [rows, cols].
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size())
            throw ValidationError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                                  shape_str(shape_));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T{}) { return Tensor({rows, cols}, fill); }

    static Tensor vector(std::vector<T> v) {
        const std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }

    /// One-row matrix from a vector of values.
    static Tensor row(std::vector<T> v) {
        const std::size_t n = v.size();
        return Tensor({1, n}, std::move(v));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : 0); }
    std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::vector<T>& values() noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    std::span<T> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
    std::span<const T> row_span(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    /// Index of the first non-finite entry, or size() if none.
    std::size_t first_non_finite() const {
        for (std::size_t i = 0; i < data_.size(); ++i)
            if (!std::isfinite(data_[i])) return i;
        return data_.size();
    }

    template <class U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Matrix = Tensor<float>;

/// Rows [begin, end) of a matrix as a new matrix.
template <class T>
Tensor<T> slice_rows(const Tensor<T>& m, std::size_t begin, std::size_t end) {
    const std::size_t c = m.cols();
    return Tensor<T>({end - begin, c}, std::vector<T>(m.data() + begin * c, m.data() + end * c));
}

/// Columns [begin, end) of a matrix.
template <class T>
Tensor<T> slice_cols(const Tensor<T>& m, std::size_t begin, std::size_t end) {
    Tensor<T> out = Tensor<T>::matrix(m.rows(), end - begin);
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = m(r, c);
    return out;
}

/// Horizontal concatenation of matrices with equal row counts.
template <class T>
Tensor<T> hconcat(std::initializer_list<const Tensor<T>*> parts) {
    std::size_t rows = (*parts.begin())->rows(), cols = 0;
    for (auto* p : parts) {
        detail::require(p->rows() == rows, "hconcat: row count mismatch");
        cols += p->cols();
    }
    Tensor<T> out = Tensor<T>::matrix(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t off = 0;
        for (auto* p : parts) {
            std::copy_n(p->data() + r * p->cols(), p->cols(), out.data() + r * cols + off);
            off += p->cols();
        }
    }
    return out;
}

/// Vertical concatenation (row append) of matrices with equal column counts.
template <class T>
Tensor<T> vconcat(const std::vector<Tensor<T>>& parts) {
    std::size_t rows = 0, cols = parts.empty() ? 0 : parts.front().cols();
    for (const auto& p : parts) {
        detail::require(p.cols() == cols, "vconcat: column count mismatch");
        rows += p.rows();
    }
    std::vector<T> data;
    data.reserve(rows * cols);
    for (const auto& p : parts) data.insert(data.end(), p.values().begin(), p.values().end());
    return Tensor<T>({rows, cols}, std::move(data));
}

template <class T>
Tensor<T> transpose(const Tensor<T>& m) {
    Tensor<T> out = Tensor<T>::matrix(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
    return out;
}

namespace kernel {

// Register-blocked C += A * B. Each output element is accumulated as
// c = c + a[k] * b[k] for k = 0..K-1 in that order, whatever block it falls
// in, so a row's result never depends on how many rows are in the batch.
// This relies on the build disabling floating-point contraction.
template <class T, std::size_t R, std::size_t J>
inline void gemm_tile(std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc) {
    T acc[R][J];
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t j = 0; j < J; ++j) acc[r][j] = c[r * ldc + j];
    for (std::size_t kk = 0; kk < k; ++kk) {
        const T* brow = b + kk * ldb;
        for (std::size_t r = 0; r < R; ++r) {
            const T av = a[r * lda + kk];
            for (std::size_t j = 0; j < J; ++j) acc[r][j] = acc[r][j] + av * brow[j];
        }
    }
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t j = 0; j < J; ++j) c[r * ldc + j] = acc[r][j];
}

template <class T, std::size_t R>
inline void gemm_tail(std::size_t k, std::size_t jw, const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                      std::size_t ldc) {
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t j = 0; j < jw; ++j) {
            T acc = c[r * ldc + j];
            for (std::size_t kk = 0; kk < k; ++kk) acc = acc + a[r * lda + kk] * b[kk * ldb + j];
            c[r * ldc + j] = acc;
        }
    }
}

template <class T, std::size_t R>
inline void gemm_rows(std::size_t k, std::size_t m, const T* a, std::size_t lda, const T* b, T* c) {
    constexpr std::size_t J = 64 / sizeof(T) * 2;
    std::size_t j = 0;
    for (; j + J <= m; j += J) gemm_tile<T, R, J>(k, a, lda, b + j, m, c + j, m);
    if (j < m) gemm_tail<T, R>(k, m - j, a, lda, b + j, m, c + j, m);
}

/// C[n x m] += A[n x k] * B[k x m], all row-major and contiguous.
template <class T>
void gemm_acc(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c) {
    std::size_t r = 0;
    for (; r + 4 <= n; r += 4) gemm_rows<T, 4>(k, m, a + r * k, k, b, c + r * m);
    switch (n - r) {
        case 3: gemm_rows<T, 3>(k, m, a + r * k, k, b, c + r * m); break;
        case 2: gemm_rows<T, 2>(k, m, a + r * k, k, b, c + r * m); break;
        case 1: gemm_rows<T, 1>(k, m, a + r * k, k, b, c + r * m); break;
        default: break;
    }
}

}  // namespace kernel

/// A * B for rank-2 tensors.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.cols() != b.rows())
        throw ValidationError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor<T> c = Tensor<T>::matrix(a.rows(), b.cols());
    kernel::gemm_acc(a.rows(), a.cols(), b.cols(), a.data(), b.data(), c.data());
    return c;
}

}  // namespace edis
