#include "dynst/matrix.hpp"

#include <algorithm>
#include <string>

#include "dynst/error.hpp"

namespace dynst {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != rows * cols) {
    throw ShapeError("matrix " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " given " + std::to_string(data.size()) + " values");
  }
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows) throw ShapeError("row index out of range: " + std::to_string(rows[i]));
    std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  }
  return out;
}

Matrix vstack(std::span<const Matrix> blocks) {
  if (blocks.empty()) return {};
  std::size_t rows = 0;
  const std::size_t cols = blocks.front().cols;
  for (const auto& b : blocks) {
    if (b.cols != cols) {
      throw ShapeError("vstack column mismatch: " + std::to_string(b.cols) + " vs " +
                       std::to_string(cols));
    }
    rows += b.rows;
  }
  Matrix out;
  out.rows = rows;
  out.cols = cols;
  out.data.reserve(rows * cols);
  for (const auto& b : blocks) out.data.insert(out.data.end(), b.data.begin(), b.data.end());
  return out;
}

}  // namespace dynst
