// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace rqmoe {

/// Dense row-major matrix of finite doubles.
///
/// All arithmetic in this project runs in double precision; a tensor's
/// storage precision only matters when it is quantized.
class Matrix {
 public:
  Matrix() = default;
  /// Zero-filled rows x cols matrix.
  Matrix(std::size_t rows, std::size_t cols);
  /// Takes ownership of `values`; throws ShapeError on a length mismatch
  /// and ArgumentError if any value is NaN or infinite.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return rows_ == 0 || cols_ == 0; }

  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }

  const std::vector<double>& values() const noexcept { return values_; }

  /// "RxC", used in error messages.
  std::string shape_string() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

Matrix matmul(const Matrix& a, const Matrix& b);

/// y = a * x with left-to-right accumulation per output row.
std::vector<double> matvec(const Matrix& a, std::span<const double> x);

/// Numerically stable softmax (max-subtracted).
std::vector<double> softmax_row(std::span<const double> logits);

/// Indices of the k largest scores, by descending value; ties go to the lower index.
std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k);

/// Per-column Euclidean norm: out[j] = sqrt(sum_i x(i, j)^2).
std::vector<double> col_l2_norms(const Matrix& x);

/// Throws ArgumentError unless every value is finite.
void require_finite(std::span<const double> values, const char* what);

}  // namespace rqmoe
