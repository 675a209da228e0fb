#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace fedlora {

/// Dense row-major matrix of doubles. Values are immutable in spirit: all
/// library operations return new matrices; in-place mutation is only used
/// by owners (e.g. SGD on a trainable factor).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);  // zero-filled
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<const double> data() const { return data_; }
  std::span<double> mutable_data() { return data_; }

  bool all_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& lhs, const Matrix& rhs);
Matrix transpose(const Matrix& m);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(const Matrix& a, const Matrix& b);  // matmul
Matrix operator*(double s, const Matrix& m);
Matrix entrywise_abs(const Matrix& m);

double frobenius_norm(const Matrix& m);
double trace(const Matrix& m);

/// True when both matrices have identical shape and bit-identical entries.
bool bit_equal(const Matrix& a, const Matrix& b);

/// max |a - b| over entries; shapes must match.
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace fedlora
