#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace ssda {

using Vec = std::vector<double>;

/// Dense row-major 64-bit real matrix. The shared numeric carrier for every
/// probability, similarity, cost and correlation matrix in the library.
/// Sized for desk-scale problems (at most a few thousand entries).
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, Vec data);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    Vec& data() { return data_; }
    const Vec& data() const { return data_; }

    bool all_finite() const;
    bool same_shape(const Matrix& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }
    Matrix transposed() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vec data_;
};

/// a (n×k) · b (k×m) -> n×m
Matrix matmul(const Matrix& a, const Matrix& b);

/// aᵀ·b for a (n×k), b (n×m) -> k×m, without materializing the transpose.
Matrix transpose_matmul(const Matrix& a, const Matrix& b);

/// a (n×k) · bᵀ for b (m×k) -> n×m.
Matrix matmul_transpose(const Matrix& a, const Matrix& b);

/// Throws std::invalid_argument naming `what` when shapes differ.
void require_same_shape(const Matrix& a, const Matrix& b, const char* what);

} // namespace ssda
