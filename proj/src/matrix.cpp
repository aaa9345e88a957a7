#include "dragon/matrix.hpp"

#include <cmath>
#include <string>

#include "dragon/errors.hpp"

namespace dragon {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw InvalidInput("matrix: data size " + std::to_string(data_.size()) + " does not match " +
                       std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw InvalidInput("matrix: no rows");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != m.cols_) throw InvalidInput("matrix: ragged rows");
    for (std::size_t c = 0; c < m.cols_; ++c) m.at(r, c) = rows[r][c];
  }
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

void Matrix::set_row(std::size_t r, std::span<const double> values) {
  if (values.size() != cols_) throw InvalidInput("matrix: row length mismatch");
  for (std::size_t c = 0; c < cols_; ++c) at(r, c) = values[c];
}

Matrix Matrix::take_rows(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw InvalidInput("matrix: empty row selection");
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) throw InvalidInput("matrix: row index out of range");
    out.set_row(i, row(indices[i]));
  }
  return out;
}

void Matrix::validate(const char* what) const {
  if (rows_ < 1 || cols_ < 1) throw InvalidInput(std::string(what) + ": empty matrix");
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw InvalidInput(std::string(what) + ": non-finite entry at row " +
                         std::to_string(i / cols_) + " col " + std::to_string(i % cols_));
    }
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace dragon
