#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Minimal dense reverse-mode autodiff over row-major float64 tensors.
//
// A Graph is an append-only tape. Leaves hold inputs and parameters; every op
// appends one node holding its forward value and a closure that pushes the
// node's gradient into its inputs. backward() walks the tape once in reverse.
// Non-leaf gradients are reset on every backward() call; leaf gradients
// accumulate across calls until the Graph is discarded.
namespace pavad::ad {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& s);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }
  static Tensor row(std::vector<double> data) {
    const auto n = data.size();
    return Tensor({1, n}, std::move(data));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.size() >= 2 ? shape_[1] : 1; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double item() const;

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Graph;

struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const;
};

enum class OpKind {
  leaf,
  matmul,
  transpose,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  concat_cols,
  concat_rows,
  reshape,
  row_l2_normalize,
  softmax_rows,
  sigmoid,
  relu,
  conv1d_same,
  attention,
  mean_axis,
  sum,
  squared_l2_norm,
  bce,
  hinge,
  topk_mean,
  grad_reverse,
};

const char* op_name(OpKind k);

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  OpKind kind(Var v) const { return node(v).kind; }
  // Gradient buffer of a requires_grad node; zeros until backward() touches it.
  const Tensor& grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // loss must hold exactly one element.
  void backward(Var loss);

  // ---- op-author interface ----
  Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn fn);
  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Zero-initialised on first use.
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const Node& node(Var v) const;

  std::vector<Node> nodes_;
};

// ---- primitives ----

Var matmul(Var a, Var b);
Var transpose(Var a);
// Same shape, or b broadcast as a row (numel == a.cols()) or a scalar.
Var add(Var a, Var b);
Var sub(Var a, Var b);
// Elementwise product of equal shapes.
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var reshape(Var a, Shape shape);
// x / sqrt(||x||^2 + eps) per row.
Var row_l2_normalize(Var a, double eps = 1e-12);
Var softmax_rows(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var hinge(Var a);
// x: T x Din, w: Dout x Din x 3, b: Dout. Zero padding, stride 1.
Var conv1d_same(Var x, Var w, Var b);
// Multi-head scaled dot-product attention; q, k, v are T x d, d % heads == 0.
Var attention(Var q, Var k, Var v, std::size_t heads);
// axis 0 -> 1 x cols, axis 1 -> rows x 1.
Var mean_axis(Var a, std::size_t axis);
Var sum(Var a);
Var squared_l2_norm(Var a);
// Mean binary cross-entropy; pred clamped to [1e-7, 1 - 1e-7].
Var bce(Var pred, const Tensor& target);
// Mean of the k largest elements; ties resolved towards the lower index.
Var topk_mean(Var a, std::size_t k);
// Identity forward; backward multiplies the upstream gradient by -lambda.
Var grad_reverse(Var a, double lambda);

inline constexpr double kBceClamp = 1e-7;

// Indices selected by topk_mean (descending value, then ascending index).
std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k);

}  // namespace pavad::ad
