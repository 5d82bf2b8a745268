#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "che/error.hpp"

namespace che {

// Dense row-major tensor of 64-bit floats. Rank 1 and 2 cover everything the
// models need; scalars use shape {1}.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(compute_numel(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (compute_numel(shape_) != data_.size()) {
      throw ShapeError("Tensor: shape/data length mismatch: " + shape_string(shape_) + " vs " +
                       std::to_string(data_.size()) + " values");
    }
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor from_vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  static Tensor from_matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const { return shape_.size() < 2 ? 1 : shape_[1]; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  double item() const {
    if (numel() != 1) {
      throw ShapeError("Tensor::item: expected scalar, got shape " + shape_string(shape_));
    }
    return data_[0];
  }

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  static std::string shape_string(const std::vector<std::size_t>& shape);
  std::string shape_string() const { return shape_string(shape_); }

 private:
  static std::size_t compute_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

enum class Op {
  leaf,
  add,
  sub,
  mul,
  div,
  scale,
  scalar_mul,
  exp,
  log,
  tanh,
  sigmoid,
  clamp,
  softmax_last,
  matmul,
  transpose,
  concat,
  slice,
  sum,
  mean,
  trace,
  pairwise_sqdist,
  gather_rows_mean,
};

const char* op_name(Op op);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One recorded operation of the dynamic tape. `backward_rule` consumes the
// node's accumulated grad and adds each input's share to input->grad.
struct Node {
  Op op = Op::leaf;
  std::vector<NodePtr> inputs;
  Tensor value;
  Tensor grad;  // empty until backward touches this node
  bool requires_grad = false;
  std::function<void(Node&)> backward_rule;

  Tensor& ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    return grad;
  }
};

NodePtr make_leaf(Tensor value, bool requires_grad);
inline NodePtr constant(Tensor value) { return make_leaf(std::move(value), false); }

// While a guard is alive, new nodes record neither inputs nor backward rules,
// so intermediate values are freed as soon as they go out of scope.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr divide(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& a, double s);
// Broadcast multiply by a scalar-shaped node; gradients flow to both sides.
NodePtr scalar_mul(const NodePtr& s, const NodePtr& a);
NodePtr exp(const NodePtr& a);
NodePtr log(const NodePtr& a);
NodePtr tanh(const NodePtr& a);
NodePtr sigmoid(const NodePtr& a);
// Gradient passes only where lo < value < hi.
NodePtr clamp(const NodePtr& a, double lo, double hi);
// Softmax over the last axis (rows of a matrix, or a whole vector);
// stabilized by max subtraction.
NodePtr softmax_last(const NodePtr& a);
// {m,k}x{k,n} -> {m,n} or {m,k}x{k} -> {m}.
NodePtr matmul(const NodePtr& a, const NodePtr& b);
NodePtr transpose(const NodePtr& a);
NodePtr concat(const NodePtr& a, const NodePtr& b);
// Rows [begin, end) of a matrix, or elements [begin, end) of a vector.
NodePtr slice(const NodePtr& a, std::size_t begin, std::size_t end);
NodePtr sum(const NodePtr& a);
NodePtr mean(const NodePtr& a);
NodePtr trace(const NodePtr& a);
// Squared L2 distance between every pair of rows: {n} or {n,d} -> {n,n}.
NodePtr pairwise_sqdist(const NodePtr& a);
// Mean of the selected rows of a matrix: {M,r} -> {r}.
NodePtr gather_rows_mean(const NodePtr& matrix, const std::vector<std::size_t>& row_indices);

// Reverse sweep from a scalar root. Every requires_grad ancestor ends up with
// d(root)/d(ancestor) in its grad buffer; accumulates across calls until
// grads are cleared.
void backward(const NodePtr& root);

void clear_grad(const NodePtr& node);

// Clear the grad buffers of every node reachable from `root`.
void clear_graph_grads(const NodePtr& root);

// Max relative error between the analytic gradient of f at x and central
// finite differences with step h.
double grad_check(const std::function<NodePtr(const NodePtr&)>& f, const Tensor& x, double h);

}  // namespace che
