#pragma once

// Minimal reverse-mode differentiation over 2-D row-major double tensors.
//
// A Tensor is a cheap handle onto a graph node. Nodes record the producing
// operation and hold references to their parents, so a graph stays alive as
// long as its output handle does. Nodes are numbered at creation; parents are
// always created before children, which makes "descending creation id" a
// valid reverse topological order. backward() uses that order, so gradient
// accumulation is bit-reproducible.
//
// Graphs are single-owner: build and differentiate them on one thread.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dynst/matrix.hpp"

namespace dynst::ad {

struct Shape {
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t numel() const { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

enum class OpKind {
  leaf,
  add,
  sub,
  mul,            // elementwise
  matmul,
  broadcast_mul,  // [N,1] column scales each row of [N,F]
  relu,
  mean,           // reduce to [1,1]
  sum,            // reduce to [1,1]
  square,
  gather_rows,    // out[i] = in[index[i]]; backward scatter-adds
  spmm,           // constant sparse matrix times tensor
};

const char* to_string(OpKind kind);

// Constant CSR matrix used by spmm. Never differentiated.
class SparseMatrix {
 public:
  struct Entry {
    std::size_t col;
    double value;
  };

  SparseMatrix() = default;
  // rows[i] lists the non-zeros of row i; columns must be < cols.
  SparseMatrix(std::size_t cols, const std::vector<std::vector<Entry>>& rows);

  std::size_t rows() const { return row_ptr_.empty() ? 0 : row_ptr_.size() - 1; }
  std::size_t cols() const { return cols_; }
  std::size_t nonzeros() const { return col_idx_.size(); }

  std::span<const std::size_t> row_ptr() const { return row_ptr_; }
  std::span<const std::size_t> col_idx() const { return col_idx_; }
  std::span<const double> values() const { return values_; }

  // Block-diagonal matrix with `copies` repetitions of this one.
  SparseMatrix tiled(std::size_t copies) const;

 private:
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::size_t> col_idx_;
  std::vector<double> values_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor constant(const Matrix& m);
  static Tensor filled(Shape shape, double value);
  // Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::span<const double> values() const;
  // Leaves only: in-place updates by optimizers.
  std::span<double> mutable_values();
  // Empty span until backward() has reached this tensor.
  std::span<const double> grad() const;
  void zero_grad();

  bool requires_grad() const;
  // Leaves only. Toggling lets one set of parameters be frozen while another
  // is trained against the same graph-building code.
  void set_requires_grad(bool on);

  OpKind op() const;
  std::uint64_t id() const;

  Matrix to_matrix() const;

 private:
  struct Node;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  std::shared_ptr<Node> node_;

  friend class OpBuilder;
  friend void backward(const Tensor& loss);
};

// Primitive operations. All throw ShapeError naming the op and both shapes on
// incompatible inputs.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor broadcast_mul(const Tensor& column, const Tensor& m);
Tensor relu(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor square(const Tensor& a);
Tensor gather_rows(const Tensor& a, std::shared_ptr<const std::vector<std::size_t>> index);
Tensor spmm(std::shared_ptr<const SparseMatrix> s, const Tensor& a);

// Dispatch by kind for the operand-only primitives (everything except leaf,
// gather_rows and spmm, which carry non-tensor arguments).
Tensor tensor_op(OpKind kind, std::span<const Tensor> inputs);

// Accumulates dLoss/dT into every requires-grad ancestor of `loss`.
// loss must hold exactly one element.
void backward(const Tensor& loss);

}  // namespace dynst::ad
