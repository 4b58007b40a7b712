#include "pavad/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pavad/kernels.hpp"

namespace pavad::ad {
namespace {

std::size_t product(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

Graph& graph_of(Var a) {
  if (!a.graph) throw std::invalid_argument("Var is not attached to a graph");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw std::invalid_argument("Vars belong to different graphs");
  return graph_of(a);
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

void add_into(Tensor& dst, const Tensor& src, double factor = 1.0) {
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += factor * src[i];
}

enum class Broadcast { same, row, scalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.numel() == 1) return Broadcast::scalar;
  if (a.rank() == 2 && b.numel() == a.cols() && (b.rank() == 1 || (b.rank() == 2 && b.rows() == 1)))
    return Broadcast::row;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

Var binary_add(Var a, Var b, double sign, OpKind kind) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Broadcast mode = broadcast_kind(av, bv, op_name(kind));
  Tensor out = av;
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double bi = mode == Broadcast::same ? bv[i] : mode == Broadcast::row ? bv[i % cols] : bv[0];
    out[i] += sign * bi;
  }
  return g.record(kind, {a.id, b.id}, std::move(out), [ia = a.id, ib = b.id, sign, mode, cols](Graph& g, std::size_t self) {
    const Tensor& up = g.grad_of(self);
    if (g.needs_grad(ia)) add_into(g.grad_buffer(ia), up);
    if (g.needs_grad(ib)) {
      Tensor& gb = g.grad_buffer(ib);
      for (std::size_t i = 0; i < up.numel(); ++i) {
        const std::size_t j = mode == Broadcast::same ? i : mode == Broadcast::row ? i % cols : 0;
        gb[j] += sign * up[i];
      }
    }
  });
}

template <typename Fwd, typename Deriv>
Var unary(Var a, OpKind kind, Fwd fwd, Deriv deriv) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (auto& x : out.data()) x = fwd(x);
  return g.record(kind, {a.id}, std::move(out), [ia = a.id, deriv](Graph& g, std::size_t self) {
    if (!g.needs_grad(ia)) return;
    const Tensor& up = g.grad_of(self);
    const Tensor& x = g.value_of(ia);
    const Tensor& y = g.value_of(self);
    Tensor& gx = g.grad_buffer(ia);
    for (std::size_t i = 0; i < up.numel(); ++i) gx[i] += up[i] * deriv(x[i], y[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != product(shape_))
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

const Tensor& Var::value() const { return graph->value(*this); }
const Shape& Var::shape() const { return graph->value(*this).shape(); }

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::reshape: return "reshape";
    case OpKind::row_l2_normalize: return "row_l2_normalize";
    case OpKind::softmax_rows: return "softmax_rows";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::relu: return "relu";
    case OpKind::conv1d_same: return "conv1d_same";
    case OpKind::attention: return "attention";
    case OpKind::mean_axis: return "mean_axis";
    case OpKind::sum: return "sum";
    case OpKind::squared_l2_norm: return "squared_l2_norm";
    case OpKind::bce: return "bce";
    case OpKind::hinge: return "hinge";
    case OpKind::topk_mean: return "topk_mean";
    case OpKind::grad_reverse: return "grad_reverse";
  }
  return "?";
}

// ---- Graph ----

const Graph::Node& Graph::node(Var v) const {
  if (v.graph != this || v.id >= nodes_.size()) throw std::invalid_argument("Var does not belong to this graph");
  return nodes_[v.id];
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.kind = OpKind::leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.grad = Tensor(n.value.shape(), 0.0);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn fn) {
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_[i].requires_grad; });
  n.inputs = std::move(inputs);
  if (n.requires_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

const Tensor& Graph::grad(Var v) const {
  const Node& n = node(v);
  if (!n.requires_grad) throw std::logic_error("grad() requested for a node that does not require grad");
  return n.grad;
}

void Graph::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value.numel() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(root.value.shape()));
  if (!root.requires_grad) return;
  for (auto& n : nodes_)
    if (n.requires_grad && n.kind != OpKind::leaf) std::fill(n.grad.data().begin(), n.grad.data().end(), 0.0);
  grad_buffer(loss.id)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.kind == OpKind::leaf || !n.requires_grad) continue;
    n.backward(*this, i);
  }
}

// ---- primitives ----

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  if (av.cols() != bv.rows())
    throw ShapeError("matmul: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out({m, n});
  kernels::gemm({m, n, k}, av.data(), bv.data(), out.data());
  return g.record(OpKind::matmul, {a.id, b.id}, std::move(out), [ia = a.id, ib = b.id, m, n, k](Graph& g, std::size_t self) {
    const Tensor& up = g.grad_of(self);
    if (g.needs_grad(ia))  // dA += dC * B^T
      kernels::gemm({m, k, n, false, true}, up.data(), g.value_of(ib).data(), g.grad_buffer(ia).data(), true);
    if (g.needs_grad(ib))  // dB += A^T * dC
      kernels::gemm({k, n, m, true, false}, g.value_of(ia).data(), up.data(), g.grad_buffer(ib).data(), true);
  });
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  require_rank2(av, "transpose");
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  return g.record(OpKind::transpose, {a.id}, std::move(out), [ia = a.id, r, c](Graph& g, std::size_t self) {
    const Tensor& up = g.grad_of(self);
    Tensor& ga = g.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga.at(i, j) += up.at(j, i);
  });
}

Var add(Var a, Var b) { return binary_add(a, b, 1.0, OpKind::add); }
Var sub(Var a, Var b) { return binary_add(a, b, -1.0, OpKind::sub); }

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.shape() != bv.shape())
    throw ShapeError("mul: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return g.record(OpKind::mul, {a.id, b.id}, std::move(out), [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
    const Tensor& up = g.grad_of(self);
    if (g.needs_grad(ia)) {
      Tensor& ga = g.grad_buffer(ia);
      const Tensor& bv = g.value_of(ib);
      for (std::size_t i = 0; i < up.numel(); ++i) ga[i] += up[i] * bv[i];
    }
    if (g.needs_grad(ib)) {
      Tensor& gb = g.grad_buffer(ib);
      const Tensor& av = g.value_of(ia);
      for (std::size_t i = 0; i < up.numel(); ++i) gb[i] += up[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  return unary(a, OpKind::scale, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, OpKind::add_scalar, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var sigmoid(Var a) {
  return unary(a, OpKind::sigmoid, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(a, OpKind::relu, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var hinge(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (auto& x : out.data()) x = x > 0 ? x : 0.0;
  return g.record(OpKind::hinge, {a.id}, std::move(out), [ia = a.id](Graph& g, std::size_t self) {
    const Tensor& up = g.grad_of(self);
    const Tensor& x = g.value_of(ia);
    Tensor& gx = g.grad_buffer(ia);
    for (std::size_t i = 0; i < up.numel(); ++i)
      if (x[i] > 0) gx[i] += up[i];
  });
}

Var grad_reverse(Var a, double lambda) {
  Graph& g = graph_of(a);
  return g.record(OpKind::grad_reverse, {a.id}, a.value(), [ia = a.id, lambda](Graph& g, std::size_t self) {
    add_into(g.grad_buffer(ia), g.grad_of(self), -lambda);
  });
}

Var reshape(Var a, Shape shape) {
  Graph& g = graph_of(a);
  if (product(shape) != a.value().numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor out(std::move(shape), a.value().data());
  return g.record(OpKind::reshape, {a.id}, std::move(out), [ia = a.id](Graph& g, std::size_t self) {
    add_into(g.grad_buffer(ia), g.grad_of(self));
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Graph& g = graph_of(parts[0]);
  const std::size_t rows = parts[0].value().rows();
  std::vector<std::size_t> ids, widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    graph_of(parts[0], p);
    require_rank2(p.value(), "concat_cols");
    if (p.value().rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    ids.push_back(p.id);
    widths.push_back(p.value().cols());
    total += p.value().cols();
  }
  Tensor out({rows, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out.at(r, off + c) = v.at(r, c);
    off += widths[k];
  }
  return g.record(OpKind::concat_cols, ids, std::move(out), [ids, widths, rows](Graph& g, std::size_t self) {
    const Tensor& up = g.grad_of(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (g.needs_grad(ids[k])) {
        Tensor& gk = g.grad_buffer(ids[k]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) gk.at(r, c) += up.at(r, off + c);
      }
      off += widths[k];
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Graph& g = graph_of(parts[0]);
  const std::size_t cols = parts[0].value().cols();
  std::vector<std::size_t> ids, sizes;
  std::vector<double> data;
  std::size_t rows = 0;
  for (const Var& p : parts) {
    graph_of(parts[0], p);
    require_rank2(p.value(), "concat_rows");
    if (p.value().cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    ids.push_back(p.id);
    sizes.push_back(p.value().numel());
    rows += p.value().rows();
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  Tensor out({rows, cols}, std::move(data));
  return g.record(OpKind::concat_rows, ids, std::move(out), [ids, sizes](Graph& g, std::size_t self) {
    const Tensor& up = g.grad_of(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (g.needs_grad(ids[k])) {
        Tensor& gk = g.grad_buffer(ids[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) gk[i] += up[off + i];
      }
      off += sizes[k];
    }
  });
}

Var row_l2_normalize(Var a, double eps) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  require_rank2(x, "row_l2_normalize");
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out({r, c});
  std::vector<double> inv(r);
  for (std::size_t i = 0; i < r; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += x.at(i, j) * x.at(i, j);
    inv[i] = 1.0 / std::sqrt(ss + eps);
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = x.at(i, j) * inv[i];
  }
  return g.record(OpKind::row_l2_normalize, {a.id}, std::move(out), [ia = a.id, inv, r, c](Graph& g, std::size_t self) {
    // y = x * s, s = (|x|^2 + eps)^(-1/2):  dx = s * (dy - y (y . dy))
    //   (exact: dx = s*dy - s^3 x (x . dy), and s^3 x (x . dy) = s y (y . dy))
    const Tensor& up = g.grad_of(self);
    const Tensor& y = g.value_of(self);
    Tensor& gx = g.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += y.at(i, j) * up.at(i, j);
      for (std::size_t j = 0; j < c; ++j) gx.at(i, j) += inv[i] * (up.at(i, j) - y.at(i, j) * dot);
    }
  });
}

Var softmax_rows(Var a) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  require_rank2(x, "softmax_rows");
  const std::size_t r = x.rows(), c = x.cols();
  if (c == 0) throw ShapeError("softmax_rows: empty axis");
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    double mx = x.at(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out.at(i, j) = std::exp(x.at(i, j) - mx));
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= z;
  }
  return g.record(OpKind::softmax_rows, {a.id}, std::move(out), [ia = a.id, r, c](Graph& g, std::size_t self) {
    const Tensor& up = g.grad_of(self);
    const Tensor& y = g.value_of(self);
    Tensor& gx = g.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += y.at(i, j) * up.at(i, j);
      for (std::size_t j = 0; j < c; ++j) gx.at(i, j) += y.at(i, j) * (up.at(i, j) - dot);
    }
  });
}

Var conv1d_same(Var x, Var w, Var b) {
  Graph& g = graph_of(x, w);
  graph_of(x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  require_rank2(xv, "conv1d_same");
  if (wv.rank() != 3 || wv.shape()[2] != 3 || wv.shape()[1] != xv.cols())
    throw ShapeError("conv1d_same: weight " + shape_str(wv.shape()) + " incompatible with input " +
                     shape_str(xv.shape()));
  const std::size_t T = xv.rows(), din = xv.cols(), dout = wv.shape()[0], width = din * 3;
  if (bv.numel() != dout) throw ShapeError("conv1d_same: bias length must equal output channels");

  // im2col: col[t, i*3 + j] = x[t + j - 1, i]; W viewed as dout x (din*3).
  Tensor col({T, width});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < din; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        const long src = static_cast<long>(t) + static_cast<long>(j) - 1;
        if (src >= 0 && src < static_cast<long>(T)) col.at(t, i * 3 + j) = xv.at(static_cast<std::size_t>(src), i);
      }
  Tensor out({T, dout});
  kernels::gemm({T, dout, width, false, true}, col.data(), wv.data(), out.data());
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t o = 0; o < dout; ++o) out.at(t, o) += bv[o];

  return g.record(OpKind::conv1d_same, {x.id, w.id, b.id}, std::move(out),
                  [ix = x.id, iw = w.id, ib = b.id, col = std::move(col), T, din, dout, width](Graph& g, std::size_t self) {
                    const Tensor& up = g.grad_of(self);
                    if (g.needs_grad(iw))  // dW += dy^T * col
                      kernels::gemm({dout, width, T, true, false}, up.data(), col.data(), g.grad_buffer(iw).data(), true);
                    if (g.needs_grad(ib)) {
                      Tensor& gb = g.grad_buffer(ib);
                      for (std::size_t t = 0; t < T; ++t)
                        for (std::size_t o = 0; o < dout; ++o) gb[o] += up.at(t, o);
                    }
                    if (g.needs_grad(ix)) {
                      Tensor dcol({T, width});
                      kernels::gemm({T, width, dout}, up.data(), g.value_of(iw).data(), dcol.data());
                      Tensor& gx = g.grad_buffer(ix);
                      for (std::size_t t = 0; t < T; ++t)
                        for (std::size_t i = 0; i < din; ++i)
                          for (std::size_t j = 0; j < 3; ++j) {
                            const long src = static_cast<long>(t) + static_cast<long>(j) - 1;
                            if (src >= 0 && src < static_cast<long>(T))
                              gx.at(static_cast<std::size_t>(src), i) += dcol.at(t, i * 3 + j);
                          }
                    }
                  });
}

Var attention(Var q, Var k, Var v, std::size_t heads) {
  Graph& g = graph_of(q, k);
  graph_of(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_rank2(qv, "attention");
  if (kv.shape() != qv.shape() || vv.shape() != qv.shape())
    throw ShapeError("attention: q, k, v must share shape " + shape_str(qv.shape()));
  const std::size_t T = qv.rows(), d = qv.cols();
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: model dim not divisible by head count");
  const std::size_t dh = d / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dh));

  // probs[h] is T x T, kept for backward.
  std::vector<Tensor> probs(heads, Tensor({T, T}));
  Tensor out({T, d});
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    Tensor& P = probs[h];
    for (std::size_t i = 0; i < T; ++i) {
      double mx = -INFINITY;
      for (std::size_t j = 0; j < T; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dot += qv.at(i, off + c) * kv.at(j, off + c);
        P.at(i, j) = dot * s;
        mx = std::max(mx, P.at(i, j));
      }
      double z = 0.0;
      for (std::size_t j = 0; j < T; ++j) z += (P.at(i, j) = std::exp(P.at(i, j) - mx));
      for (std::size_t j = 0; j < T; ++j) P.at(i, j) /= z;
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < T; ++j) acc += P.at(i, j) * vv.at(j, off + c);
        out.at(i, off + c) = acc;
      }
    }
  }

  return g.record(OpKind::attention, {q.id, k.id, v.id}, std::move(out),
                  [iq = q.id, ik = k.id, iv = v.id, probs = std::move(probs), T, dh, heads, s](Graph& g, std::size_t self) {
                    const Tensor& up = g.grad_of(self);
                    const Tensor& qv = g.value_of(iq);
                    const Tensor& kv = g.value_of(ik);
                    const Tensor& vv = g.value_of(iv);
                    Tensor dq(qv.shape()), dk(kv.shape()), dv(vv.shape());
                    Tensor dP({T, T}), dS({T, T});
                    for (std::size_t h = 0; h < heads; ++h) {
                      const std::size_t off = h * dh;
                      const Tensor& P = probs[h];
                      for (std::size_t i = 0; i < T; ++i)
                        for (std::size_t j = 0; j < T; ++j) {
                          double acc = 0.0;
                          for (std::size_t c = 0; c < dh; ++c) acc += up.at(i, off + c) * vv.at(j, off + c);
                          dP.at(i, j) = acc;
                        }
                      for (std::size_t j = 0; j < T; ++j)
                        for (std::size_t c = 0; c < dh; ++c) {
                          double acc = 0.0;
                          for (std::size_t i = 0; i < T; ++i) acc += P.at(i, j) * up.at(i, off + c);
                          dv.at(j, off + c) += acc;
                        }
                      for (std::size_t i = 0; i < T; ++i) {
                        double dot = 0.0;
                        for (std::size_t j = 0; j < T; ++j) dot += P.at(i, j) * dP.at(i, j);
                        for (std::size_t j = 0; j < T; ++j) dS.at(i, j) = P.at(i, j) * (dP.at(i, j) - dot) * s;
                      }
                      for (std::size_t i = 0; i < T; ++i)
                        for (std::size_t c = 0; c < dh; ++c) {
                          double aq = 0.0, ak = 0.0;
                          for (std::size_t j = 0; j < T; ++j) {
                            aq += dS.at(i, j) * kv.at(j, off + c);
                            ak += dS.at(j, i) * qv.at(j, off + c);
                          }
                          dq.at(i, off + c) += aq;
                          dk.at(i, off + c) += ak;
                        }
                    }
                    if (g.needs_grad(iq)) add_into(g.grad_buffer(iq), dq);
                    if (g.needs_grad(ik)) add_into(g.grad_buffer(ik), dk);
                    if (g.needs_grad(iv)) add_into(g.grad_buffer(iv), dv);
                  });
}

Var mean_axis(Var a, std::size_t axis) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  require_rank2(x, "mean_axis");
  if (axis > 1) throw ShapeError("mean_axis: axis must be 0 or 1");
  const std::size_t r = x.rows(), c = x.cols();
  const std::size_t n = axis == 0 ? r : c;
  if (n == 0) throw ShapeError("mean_axis: empty axis");
  Tensor out(axis == 0 ? Shape{1, c} : Shape{r, 1});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += x.at(i, j);
  for (auto& v : out.data()) v /= static_cast<double>(n);
  return g.record(OpKind::mean_axis, {a.id}, std::move(out), [ia = a.id, axis, r, c, n](Graph& g, std::size_t self) {
    const Tensor& up = g.grad_of(self);
    Tensor& gx = g.grad_buffer(ia);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx.at(i, j) += up[axis == 0 ? j : i] * inv;
  });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  const auto& d = a.value().data();
  Tensor out = Tensor::scalar(std::accumulate(d.begin(), d.end(), 0.0));
  return g.record(OpKind::sum, {a.id}, std::move(out), [ia = a.id](Graph& g, std::size_t self) {
    const double up = g.grad_of(self)[0];
    for (auto& v : g.grad_buffer(ia).data()) v += up;
  });
}

Var squared_l2_norm(Var a) {
  Graph& g = graph_of(a);
  double ss = 0.0;
  for (double x : a.value().data()) ss += x * x;
  return g.record(OpKind::squared_l2_norm, {a.id}, Tensor::scalar(ss), [ia = a.id](Graph& g, std::size_t self) {
    const double up = g.grad_of(self)[0];
    const Tensor& x = g.value_of(ia);
    Tensor& gx = g.grad_buffer(ia);
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += 2.0 * x[i] * up;
  });
}

Var bce(Var pred, const Tensor& target) {
  Graph& g = graph_of(pred);
  const Tensor& p = pred.value();
  if (target.numel() != p.numel())
    throw ShapeError("bce: target " + shape_str(target.shape()) + " vs pred " + shape_str(p.shape()));
  if (p.numel() == 0) throw ShapeError("bce: empty input");
  double loss = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double pc = std::clamp(p[i], kBceClamp, 1.0 - kBceClamp);
    loss -= target[i] * std::log(pc) + (1.0 - target[i]) * std::log(1.0 - pc);
  }
  const double n = static_cast<double>(p.numel());
  return g.record(OpKind::bce, {pred.id}, Tensor::scalar(loss / n), [ip = pred.id, target, n](Graph& g, std::size_t self) {
    const double up = g.grad_of(self)[0];
    const Tensor& p = g.value_of(ip);
    Tensor& gp = g.grad_buffer(ip);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      if (p[i] < kBceClamp || p[i] > 1.0 - kBceClamp) continue;  // clamped: zero slope
      gp[i] += up * (-(target[i] / p[i]) + (1.0 - target[i]) / (1.0 - p[i])) / n;
    }
  });
}

std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k) {
  if (k == 0 || k > values.size())
    throw std::out_of_range("topk: k=" + std::to_string(k) + " out of range for " + std::to_string(values.size()) +
                            " values");
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  idx.resize(k);
  return idx;
}

Var topk_mean(Var a, std::size_t k) {
  Graph& g = graph_of(a);
  const auto& x = a.value().data();
  auto idx = topk_indices(x, k);
  double acc = 0.0;
  for (auto i : idx) acc += x[i];
  return g.record(OpKind::topk_mean, {a.id}, Tensor::scalar(acc / static_cast<double>(k)),
                  [ia = a.id, idx = std::move(idx), k](Graph& g, std::size_t self) {
                    const double up = g.grad_of(self)[0] / static_cast<double>(k);
                    Tensor& gx = g.grad_buffer(ia);
                    for (auto i : idx) gx[i] += up;
                  });
}

}  // namespace pavad::ad
