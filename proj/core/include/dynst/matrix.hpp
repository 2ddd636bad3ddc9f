#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dynst {

// Dense row-major matrix of doubles. Plain value type used at module
// boundaries (morphed inputs, predictions); the differentiable counterpart
// lives in autodiff.hpp.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  std::size_t size() const { return data.size(); }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

// Copies the listed rows, in order, into a new matrix.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows);

// Stacks matrices with equal column counts vertically.
Matrix vstack(std::span<const Matrix> blocks);

}  // namespace dynst
