#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace ninode {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Column vectors are n x 1 matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);
  static Matrix column(std::span<const double> v);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool is_square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  const std::vector<double>& entries() const noexcept { return data_; }
  Vector to_vector() const { return data_; }

  Matrix transpose() const;
  bool all_finite() const noexcept;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Pairwise summation; deterministic for a given length.
double pairwise_sum(std::span<const double> v);

/// Pairwise-summed dot product over strided sequences of length n.
double pairwise_dot(const double* a, std::size_t stride_a, const double* b, std::size_t stride_b,
                    std::size_t n);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> v);
double max_abs(std::span<const double> v);

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);
Matrix matmul(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, std::span<const double> x);
Vector matvec_transposed(const Matrix& a, std::span<const double> x);

/// Max-entry norm of a - b.
double max_abs_diff(const Matrix& a, const Matrix& b);

Vector axpy(double alpha, std::span<const double> x, std::span<const double> y);

}  // namespace ninode
