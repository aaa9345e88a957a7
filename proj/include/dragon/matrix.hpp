#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dragon {

/// Dense row-major matrix of doubles. Doubles as the embedding container
/// (rows = examples, cols = embedding dimension) and as a general square
/// matrix for covariance work.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix from_rows(const std::vector<std::vector<double>>& rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void set_row(std::size_t r, std::span<const double> values);
  Matrix take_rows(std::span<const std::size_t> indices) const;

  /// Throws InvalidInput unless rows >= 1, cols >= 1 and all entries finite.
  void validate(const char* what = "matrix") const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Embeddings are just matrices with rows = examples.
using EmbeddingMatrix = Matrix;

double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

}  // namespace dragon
