#include "dynst/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "dynst/error.hpp"

namespace dynst::ad {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

thread_local std::uint64_t next_node_id = 0;

[[noreturn]] void shape_mismatch(OpKind kind, const Shape& a, const Shape& b) {
  std::ostringstream os;
  os << "shape mismatch in " << to_string(kind) << ": " << to_string(a) << " vs "
     << to_string(b);
  throw ShapeError(os.str());
}

}  // namespace

std::string to_string(const Shape& s) {
  return "[" + std::to_string(s.rows) + "," + std::to_string(s.cols) + "]";
}

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "elementwise-mul";
    case OpKind::matmul: return "matmul";
    case OpKind::broadcast_mul: return "broadcast-mul";
    case OpKind::relu: return "relu";
    case OpKind::mean: return "mean-reduce";
    case OpKind::sum: return "sum-reduce";
    case OpKind::square: return "square";
    case OpKind::gather_rows: return "gather-rows";
    case OpKind::spmm: return "spmm";
  }
  return "unknown";
}

SparseMatrix::SparseMatrix(std::size_t cols, const std::vector<std::vector<Entry>>& rows)
    : cols_(cols) {
  row_ptr_.reserve(rows.size() + 1);
  row_ptr_.push_back(0);
  for (const auto& r : rows) {
    for (const auto& e : r) {
      if (e.col >= cols) {
        throw ShapeError("sparse entry column " + std::to_string(e.col) +
                         " out of range for " + std::to_string(cols) + " columns");
      }
      col_idx_.push_back(e.col);
      values_.push_back(e.value);
    }
    row_ptr_.push_back(col_idx_.size());
  }
}

SparseMatrix SparseMatrix::tiled(std::size_t copies) const {
  SparseMatrix out;
  const std::size_t n = rows();
  out.cols_ = cols_ * copies;
  out.row_ptr_.reserve(n * copies + 1);
  out.col_idx_.reserve(nonzeros() * copies);
  out.values_.reserve(nonzeros() * copies);
  out.row_ptr_.push_back(0);
  for (std::size_t c = 0; c < copies; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
        out.col_idx_.push_back(col_idx_[k] + c * cols_);
        out.values_.push_back(values_[k]);
      }
      out.row_ptr_.push_back(out.col_idx_.size());
    }
  }
  return out;
}

struct Tensor::Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  OpKind op = OpKind::leaf;
  std::vector<std::shared_ptr<Node>> parents;
  std::uint64_t id = next_node_id++;
  std::shared_ptr<const std::vector<std::size_t>> index;
  std::shared_ptr<const SparseMatrix> sparse;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

// Creates nodes on behalf of the free-function ops.
class OpBuilder {
 public:
  using Node = Tensor::Node;

  static std::shared_ptr<Node> node(const Tensor& t) { return t.node_; }

  static Tensor make(OpKind op, Shape shape, std::vector<double> values,
                     std::vector<std::shared_ptr<Node>> parents) {
    auto n = std::make_shared<Node>();
    n->shape = shape;
    n->values = std::move(values);
    n->op = op;
    n->requires_grad = std::any_of(parents.begin(), parents.end(),
                                   [](const auto& p) { return p->requires_grad; });
    n->parents = std::move(parents);
    return Tensor(std::move(n));
  }

  static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != shape.numel()) {
      throw ShapeError("leaf of shape " + to_string(shape) + " given " +
                       std::to_string(values.size()) + " values");
    }
    if (shape.rows == 0 || shape.cols == 0) {
      throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = shape;
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static void propagate(Node& n);
};

void OpBuilder::propagate(Node& n) {
  const auto& g = n.grad;
  auto want = [&](std::size_t i) -> Node* {
    Node* p = n.parents[i].get();
    if (!p->requires_grad) return nullptr;
    p->ensure_grad();
    return p;
  };

  switch (n.op) {
    case OpKind::leaf:
      return;
    case OpKind::add:
    case OpKind::sub: {
      if (Node* a = want(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) a->grad[i] += g[i];
      }
      if (Node* b = want(1)) {
        const double sign = n.op == OpKind::add ? 1.0 : -1.0;
        for (std::size_t i = 0; i < g.size(); ++i) b->grad[i] += sign * g[i];
      }
      return;
    }
    case OpKind::mul: {
      const auto& av = n.parents[0]->values;
      const auto& bv = n.parents[1]->values;
      if (Node* a = want(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) a->grad[i] += g[i] * bv[i];
      }
      if (Node* b = want(1)) {
        for (std::size_t i = 0; i < g.size(); ++i) b->grad[i] += g[i] * av[i];
      }
      return;
    }
    case OpKind::matmul: {
      const Node& pa = *n.parents[0];
      const Node& pb = *n.parents[1];
      ConstMap G(g.data(), n.shape.rows, n.shape.cols);
      if (Node* a = want(0)) {
        ConstMap B(pb.values.data(), pb.shape.rows, pb.shape.cols);
        MutMap(a->grad.data(), pa.shape.rows, pa.shape.cols).noalias() += G * B.transpose();
      }
      if (Node* b = want(1)) {
        ConstMap A(pa.values.data(), pa.shape.rows, pa.shape.cols);
        MutMap(b->grad.data(), pb.shape.rows, pb.shape.cols).noalias() += A.transpose() * G;
      }
      return;
    }
    case OpKind::broadcast_mul: {
      const auto& col = n.parents[0]->values;
      const auto& m = n.parents[1]->values;
      const std::size_t rows = n.shape.rows;
      const std::size_t cols = n.shape.cols;
      if (Node* c = want(0)) {
        for (std::size_t r = 0; r < rows; ++r) {
          double acc = 0.0;
          for (std::size_t k = 0; k < cols; ++k) acc += g[r * cols + k] * m[r * cols + k];
          c->grad[r] += acc;
        }
      }
      if (Node* b = want(1)) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t k = 0; k < cols; ++k) b->grad[r * cols + k] += g[r * cols + k] * col[r];
        }
      }
      return;
    }
    case OpKind::relu: {
      if (Node* a = want(0)) {
        const auto& av = a->values;
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (av[i] > 0.0) a->grad[i] += g[i];
        }
      }
      return;
    }
    case OpKind::mean:
    case OpKind::sum: {
      if (Node* a = want(0)) {
        const double scale =
            n.op == OpKind::mean ? g[0] / static_cast<double>(a->values.size()) : g[0];
        for (auto& v : a->grad) v += scale;
      }
      return;
    }
    case OpKind::square: {
      if (Node* a = want(0)) {
        const auto& av = a->values;
        for (std::size_t i = 0; i < g.size(); ++i) a->grad[i] += 2.0 * av[i] * g[i];
      }
      return;
    }
    case OpKind::gather_rows: {
      if (Node* a = want(0)) {
        const std::size_t cols = n.shape.cols;
        const auto& idx = *n.index;
        for (std::size_t r = 0; r < idx.size(); ++r) {
          double* dst = a->grad.data() + idx[r] * cols;
          const double* src = g.data() + r * cols;
          for (std::size_t k = 0; k < cols; ++k) dst[k] += src[k];
        }
      }
      return;
    }
    case OpKind::spmm: {
      if (Node* a = want(0)) {
        const SparseMatrix& s = *n.sparse;
        const std::size_t cols = n.shape.cols;
        const auto rp = s.row_ptr();
        const auto ci = s.col_idx();
        const auto sv = s.values();
        for (std::size_t r = 0; r < s.rows(); ++r) {
          const double* src = g.data() + r * cols;
          for (std::size_t k = rp[r]; k < rp[r + 1]; ++k) {
            double* dst = a->grad.data() + ci[k] * cols;
            const double w = sv[k];
            for (std::size_t c = 0; c < cols; ++c) dst[c] += w * src[c];
          }
        }
      }
      return;
    }
  }
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return OpBuilder::leaf(shape, std::move(values), false);
}

Tensor Tensor::constant(const Matrix& m) {
  return OpBuilder::leaf({m.rows, m.cols}, m.data, false);
}

Tensor Tensor::filled(Shape shape, double value) {
  return OpBuilder::leaf(shape, std::vector<double>(shape.numel(), value), false);
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return OpBuilder::leaf(shape, std::move(values), true);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::span<const double> Tensor::values() const { return node_->values; }

std::span<double> Tensor::mutable_values() {
  if (node_->op != OpKind::leaf) {
    throw ContractError("mutable_values() is only available on leaf tensors");
  }
  return node_->values;
}

std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }
bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (node_->op != OpKind::leaf) {
    throw ContractError("requires-grad can only be toggled on leaf tensors");
  }
  node_->requires_grad = on;
}

OpKind Tensor::op() const { return node_->op; }
std::uint64_t Tensor::id() const { return node_->id; }

Matrix Tensor::to_matrix() const {
  return Matrix(node_->shape.rows, node_->shape.cols, node_->values);
}

namespace {

void require_same(OpKind kind, const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) shape_mismatch(kind, a.shape(), b.shape());
}

std::vector<double> copy_values(const Tensor& t) {
  return {t.values().begin(), t.values().end()};
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(OpKind::add, a, b);
  auto out = copy_values(a);
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return OpBuilder::make(OpKind::add, a.shape(), std::move(out),
                         {OpBuilder::node(a), OpBuilder::node(b)});
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(OpKind::sub, a, b);
  auto out = copy_values(a);
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return OpBuilder::make(OpKind::sub, a.shape(), std::move(out),
                         {OpBuilder::node(a), OpBuilder::node(b)});
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(OpKind::mul, a, b);
  auto out = copy_values(a);
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return OpBuilder::make(OpKind::mul, a.shape(), std::move(out),
                         {OpBuilder::node(a), OpBuilder::node(b)});
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().cols != b.shape().rows) shape_mismatch(OpKind::matmul, a.shape(), b.shape());
  const Shape out_shape{a.shape().rows, b.shape().cols};
  std::vector<double> out(out_shape.numel());
  MutMap(out.data(), out_shape.rows, out_shape.cols).noalias() =
      ConstMap(a.values().data(), a.shape().rows, a.shape().cols) *
      ConstMap(b.values().data(), b.shape().rows, b.shape().cols);
  return OpBuilder::make(OpKind::matmul, out_shape, std::move(out),
                         {OpBuilder::node(a), OpBuilder::node(b)});
}

Tensor broadcast_mul(const Tensor& column, const Tensor& m) {
  if (column.shape().cols != 1 || column.shape().rows != m.shape().rows) {
    shape_mismatch(OpKind::broadcast_mul, column.shape(), m.shape());
  }
  auto out = copy_values(m);
  auto cv = column.values();
  const std::size_t cols = m.shape().cols;
  for (std::size_t r = 0; r < m.shape().rows; ++r) {
    for (std::size_t k = 0; k < cols; ++k) out[r * cols + k] *= cv[r];
  }
  return OpBuilder::make(OpKind::broadcast_mul, m.shape(), std::move(out),
                         {OpBuilder::node(column), OpBuilder::node(m)});
}

Tensor relu(const Tensor& a) {
  auto out = copy_values(a);
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return OpBuilder::make(OpKind::relu, a.shape(), std::move(out), {OpBuilder::node(a)});
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return OpBuilder::make(OpKind::sum, {1, 1}, {acc}, {OpBuilder::node(a)});
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  acc /= static_cast<double>(a.shape().numel());
  return OpBuilder::make(OpKind::mean, {1, 1}, {acc}, {OpBuilder::node(a)});
}

Tensor square(const Tensor& a) {
  auto out = copy_values(a);
  for (auto& v : out) v *= v;
  return OpBuilder::make(OpKind::square, a.shape(), std::move(out), {OpBuilder::node(a)});
}

Tensor gather_rows(const Tensor& a, std::shared_ptr<const std::vector<std::size_t>> index) {
  const std::size_t cols = a.shape().cols;
  const auto& idx = *index;
  if (idx.empty()) throw ShapeError("gather-rows: empty index");
  std::vector<double> out(idx.size() * cols);
  auto av = a.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= a.shape().rows) {
      throw ShapeError("gather-rows: index " + std::to_string(idx[r]) + " out of range for " +
                       to_string(a.shape()));
    }
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(idx[r] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  auto t = OpBuilder::make(OpKind::gather_rows, {idx.size(), cols}, std::move(out),
                           {OpBuilder::node(a)});
  OpBuilder::node(t)->index = std::move(index);
  return t;
}

Tensor spmm(std::shared_ptr<const SparseMatrix> s, const Tensor& a) {
  if (s->cols() != a.shape().rows) {
    shape_mismatch(OpKind::spmm, {s->rows(), s->cols()}, a.shape());
  }
  const std::size_t cols = a.shape().cols;
  std::vector<double> out(s->rows() * cols, 0.0);
  auto av = a.values();
  const auto rp = s->row_ptr();
  const auto ci = s->col_idx();
  const auto sv = s->values();
  for (std::size_t r = 0; r < s->rows(); ++r) {
    double* dst = out.data() + r * cols;
    for (std::size_t k = rp[r]; k < rp[r + 1]; ++k) {
      const double* src = av.data() + ci[k] * cols;
      const double w = sv[k];
      for (std::size_t c = 0; c < cols; ++c) dst[c] += w * src[c];
    }
  }
  auto t = OpBuilder::make(OpKind::spmm, {s->rows(), cols}, std::move(out),
                           {OpBuilder::node(a)});
  OpBuilder::node(t)->sparse = std::move(s);
  return t;
}

Tensor tensor_op(OpKind kind, std::span<const Tensor> in) {
  auto arity = [&](std::size_t n) {
    if (in.size() != n) {
      throw ContractError(std::string(to_string(kind)) + " expects " + std::to_string(n) +
                          " inputs, got " + std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::add: arity(2); return add(in[0], in[1]);
    case OpKind::sub: arity(2); return sub(in[0], in[1]);
    case OpKind::mul: arity(2); return mul(in[0], in[1]);
    case OpKind::matmul: arity(2); return matmul(in[0], in[1]);
    case OpKind::broadcast_mul: arity(2); return broadcast_mul(in[0], in[1]);
    case OpKind::relu: arity(1); return relu(in[0]);
    case OpKind::mean: arity(1); return mean(in[0]);
    case OpKind::sum: arity(1); return sum(in[0]);
    case OpKind::square: arity(1); return square(in[0]);
    case OpKind::leaf:
    case OpKind::gather_rows:
    case OpKind::spmm:
      break;
  }
  throw ContractError(std::string("tensor_op cannot dispatch ") + to_string(kind));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.shape().numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("<null>")));
  }
  using Node = Tensor::Node;
  Node* root = loss.node_.get();
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::vector<Node*> stack{root};
  std::unordered_set<const Node*> seen;
  seen.insert(root);
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) {
        stack.push_back(p.get());
      }
    }
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->id > b->id; });

  for (Node* n : order) {
    if (n->op != OpKind::leaf) n->grad.assign(n->values.size(), 0.0);
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (Node* n : order) OpBuilder::propagate(*n);
}

}  // namespace dynst::ad
