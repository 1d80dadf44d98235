#include "distgp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "distgp/error.hpp"
#include "distgp/linalg.hpp"

namespace distgp::ad {

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->nodes_[id_].value; }

Tensor Var::grad() const {
  const auto& node = tape_->nodes_[id_];
  if (node.has_adjoint) return node.adjoint;
  return Tensor(node.value.shape(), 0.0);
}

bool Var::requires_grad() const { return tape_->nodes_[id_].requires_grad; }

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw Error(ErrorKind::NonFinite, "leaf value");
  nodes_.push_back(Node{std::move(value), Tensor(), false, grad_enabled_, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw Error(ErrorKind::NonFinite, "constant value");
  nodes_.push_back(Node{std::move(value), Tensor(), false, false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> inputs, Backward backward) {
  if (!value.all_finite()) throw Error(ErrorKind::NonFinite, std::string("output of ") + op);
  bool needs = false;
  if (grad_enabled_) {
    for (const Var& v : inputs) {
      if (v.tape_ != this) throw Error(ErrorKind::InvalidArgument, std::string(op) + ": foreign tape");
      needs = needs || nodes_[v.id_].requires_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), Tensor(), false, needs, needs ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(const Var& v, const Tensor& adjoint) {
  Node& node = nodes_[v.id_];
  if (!node.requires_grad) return;
  if (!node.has_adjoint) {
    node.adjoint = adjoint;
    node.has_adjoint = true;
    return;
  }
  auto dst = node.adjoint.data();
  auto src = adjoint.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::accumulate(const Var& v, Tensor&& adjoint) {
  Node& node = nodes_[v.id_];
  if (!node.requires_grad) return;
  if (!node.has_adjoint) {
    node.adjoint = std::move(adjoint);
    node.has_adjoint = true;
    return;
  }
  auto dst = node.adjoint.data();
  auto src = adjoint.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(const Var& root, double seed) {
  if (root.tape_ != this) throw Error(ErrorKind::InvalidArgument, "backward: foreign tape");
  Node& r = nodes_[root.id_];
  if (r.value.size() != 1) {
    throw Error(ErrorKind::NonScalarRoot, "root has shape " + shape_string(r.value.shape()));
  }
  if (!r.requires_grad) return;
  accumulate(root, Tensor(r.value.shape(), seed));
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_adjoint || !node.backward) continue;
    node.backward(*this, node.value, node.adjoint);
  }
}

// ---------------------------------------------------------------------------
// Broadcasting helpers

Tensor::Shape broadcast_shapes(const Tensor::Shape& a, const Tensor::Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Tensor::Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw Error(ErrorKind::ShapeMismatch,
                  "cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace {

// Strides of `in` laid over `out` (0 on broadcast axes).
std::vector<std::size_t> broadcast_strides(const Tensor::Shape& in, const Tensor::Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    const std::size_t axis = k + (rank - in.size());
    if (in[k] != 1) strides[axis] = stride;
    stride *= in[k];
  }
  return strides;
}

template <typename Fn>
void for_each_broadcast(const Tensor::Shape& in, const Tensor::Shape& out, Fn&& fn) {
  const auto strides = broadcast_strides(in, out);
  const std::size_t total = shape_size(out);
  const std::size_t rank = out.size();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    fn(flat, offset);
    for (std::size_t k = rank; k-- > 0;) {
      ++idx[k];
      offset += strides[k];
      if (idx[k] < out[k]) break;
      offset -= strides[k] * idx[k];
      idx[k] = 0;
    }
  }
}

}  // namespace

Tensor broadcast_tensor(const Tensor& t, const Tensor::Shape& shape) {
  if (t.shape() == shape) return t;
  if (broadcast_shapes(t.shape(), shape) != shape) {
    throw Error(ErrorKind::ShapeMismatch, "cannot broadcast " + shape_string(t.shape()) + " to " +
                                              shape_string(shape));
  }
  if (t.size() == 1) return Tensor(shape, t[0]);
  Tensor out(shape);
  auto o = out.data();
  auto in = t.data();
  for_each_broadcast(t.shape(), shape, [&](std::size_t flat, std::size_t off) { o[flat] = in[off]; });
  return out;
}

Tensor reduce_to_shape(const Tensor& t, const Tensor::Shape& shape) {
  if (t.shape() == shape) return t;
  Tensor out(shape, 0.0);
  auto o = out.data();
  auto in = t.data();
  if (out.size() == 1) {
    double s = 0.0;
    for (double v : in) s += v;
    o[0] = s;
    return out;
  }
  for_each_broadcast(shape, t.shape(), [&](std::size_t flat, std::size_t off) { o[off] += in[flat]; });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

template <typename Fn>
Tensor map_unary(const Tensor& a, Fn&& fn) {
  Tensor out(a.shape());
  auto o = out.data();
  auto in = a.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = fn(in[i]);
  return out;
}

template <typename Fn>
Tensor map_binary(const Tensor& a, const Tensor& b, Fn&& fn) {
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = fn(x[i], y[i]);
  return out;
}

enum class BinOp { Add, Sub, Mul, Div };

Var binary(const Var& a, const Var& b, BinOp op) {
  const auto shape = broadcast_shapes(a.shape(), b.shape());
  const Tensor av = broadcast_tensor(a.value(), shape);
  const Tensor bv = broadcast_tensor(b.value(), shape);
  Tensor value;
  const char* name = "";
  switch (op) {
    case BinOp::Add: value = map_binary(av, bv, [](double x, double y) { return x + y; }); name = "add"; break;
    case BinOp::Sub: value = map_binary(av, bv, [](double x, double y) { return x - y; }); name = "sub"; break;
    case BinOp::Mul: value = map_binary(av, bv, [](double x, double y) { return x * y; }); name = "mul"; break;
    case BinOp::Div: value = map_binary(av, bv, [](double x, double y) { return x / y; }); name = "div"; break;
  }
  return a.tape().record(name, std::move(value), {a, b}, [a, b, op, shape](Tape& t, const Tensor& out, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor ga;
      switch (op) {
        case BinOp::Add:
        case BinOp::Sub: ga = g; break;
        case BinOp::Mul: ga = map_binary(g, broadcast_tensor(b.value(), shape), [](double x, double y) { return x * y; }); break;
        case BinOp::Div: ga = map_binary(g, broadcast_tensor(b.value(), shape), [](double x, double y) { return x / y; }); break;
      }
      t.accumulate(a, reduce_to_shape(ga, a.shape()));
    }
    if (b.requires_grad()) {
      Tensor gb;
      switch (op) {
        case BinOp::Add: gb = g; break;
        case BinOp::Sub: gb = map_unary(g, [](double x) { return -x; }); break;
        case BinOp::Mul: gb = map_binary(g, broadcast_tensor(a.value(), shape), [](double x, double y) { return x * y; }); break;
        case BinOp::Div: {
          // d(a/b)/db = -(a/b)/b
          const Tensor bb = broadcast_tensor(b.value(), shape);
          gb = Tensor(shape);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = -g[i] * out[i] / bb[i];
          break;
        }
      }
      t.accumulate(b, reduce_to_shape(gb, b.shape()));
    }
  });
}

}  // namespace
Var add(const Var& a, const Var& b) { return binary(a, b, BinOp::Add); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinOp::Sub); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinOp::Mul); }
Var div(const Var& a, const Var& b) { return binary(a, b, BinOp::Div); }

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator/(const Var& a, const Var& b) { return div(a, b); }
Var operator-(const Var& a) { return neg(a); }
Var operator*(double s, const Var& a) { return scale(a, s); }
Var operator*(const Var& a, double s) { return scale(a, s); }
Var operator+(const Var& a, double s) { return add_scalar(a, s); }
Var operator-(double s, const Var& a) { return add_scalar(neg(a), s); }

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  return a.tape().record("scale", map_unary(a.value(), [s](double x) { return s * x; }), {a},
                         [a, s](Tape& t, const Tensor&, const Tensor& g) {
                           t.accumulate(a, map_unary(g, [s](double x) { return s * x; }));
                         });
}

Var add_scalar(const Var& a, double s) {
  return a.tape().record("add_scalar", map_unary(a.value(), [s](double x) { return x + s; }), {a},
                         [a](Tape& t, const Tensor&, const Tensor& g) { t.accumulate(a, g); });
}

Var exp(const Var& a) {
  return a.tape().record("exp", map_unary(a.value(), [](double x) { return std::exp(x); }), {a},
                         [a](Tape& t, const Tensor& out, const Tensor& g) {
                           t.accumulate(a, map_binary(g, out, [](double x, double y) { return x * y; }));
                         });
}

Var log(const Var& a) {
  return a.tape().record("log", map_unary(a.value(), [](double x) { return std::log(x); }), {a},
                         [a](Tape& t, const Tensor&, const Tensor& g) {
                           t.accumulate(a, map_binary(g, a.value(), [](double x, double y) { return x / y; }));
                         });
}

Var sqrt(const Var& a) {
  return a.tape().record("sqrt", map_unary(a.value(), [](double x) { return std::sqrt(x); }), {a},
                         [a](Tape& t, const Tensor& out, const Tensor& g) {
                           t.accumulate(a, map_binary(g, out, [](double x, double y) {
                                          return y > 0.0 ? x / (2.0 * y) : 0.0;
                                        }));
                         });
}

Var square(const Var& a) {
  return a.tape().record("square", map_unary(a.value(), [](double x) { return x * x; }), {a},
                         [a](Tape& t, const Tensor&, const Tensor& g) {
                           t.accumulate(a, map_binary(g, a.value(), [](double x, double y) { return 2.0 * x * y; }));
                         });
}

Var softplus(const Var& a) {
  auto sp = [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); };
  return a.tape().record("softplus", map_unary(a.value(), sp), {a},
                         [a](Tape& t, const Tensor&, const Tensor& g) {
                           t.accumulate(a, map_binary(g, a.value(), [](double x, double y) {
                                          const double s = y >= 0.0 ? 1.0 / (1.0 + std::exp(-y))
                                                                    : std::exp(y) / (1.0 + std::exp(y));
                                          return x * s;
                                        }));
                         });
}

Var clamp_min(const Var& a, double lo) {
  return a.tape().record("clamp_min", map_unary(a.value(), [lo](double x) { return x > lo ? x : lo; }), {a},
                         [a, lo](Tape& t, const Tensor&, const Tensor& g) {
                           t.accumulate(a, map_binary(g, a.value(), [lo](double x, double y) {
                                          return y > lo ? x : 0.0;
                                        }));
                         });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b) {
  return a.tape().record("matmul", distgp::matmul(a.value(), b.value()), {a, b},
                         [a, b](Tape& t, const Tensor&, const Tensor& g) {
                           if (a.requires_grad()) t.accumulate(a, distgp::matmul(g, b.value(), false, true));
                           if (b.requires_grad()) t.accumulate(b, distgp::matmul(a.value(), g, true, false));
                         });
}

Var transpose(const Var& a) {
  return a.tape().record("transpose", distgp::transpose(a.value()), {a},
                         [a](Tape& t, const Tensor&, const Tensor& g) { t.accumulate(a, distgp::transpose(g)); });
}

Var cholesky(const Var& a, double jitter) {
  Tensor l = cholesky_with_retry(a.value(), jitter).factor;
  return a.tape().record("cholesky", std::move(l), {a}, [a](Tape& t, const Tensor& out, const Tensor& g) {
    t.accumulate(a, cholesky_adjoint(out, g));
  });
}

namespace {

// -tril(x * y^T)
Tensor neg_tril_outer(const Tensor& x, const Tensor& y) {
  Tensor m = distgp::matmul(x, y, false, true);
  const std::size_t n = m.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) m(i, j) = j <= i ? -m(i, j) : 0.0;
  }
  return m;
}

}  // namespace

Var tri_solve(const Var& lower, const Var& rhs, bool transposed) {
  return lower.tape().record(
      "tri_solve", distgp::tri_solve(lower.value(), rhs.value(), transposed), {lower, rhs},
      [lower, rhs, transposed](Tape& t, const Tensor& x, const Tensor& g) {
        Tensor gb = distgp::tri_solve(lower.value(), g, !transposed);
        if (lower.requires_grad()) {
          t.accumulate(lower, transposed ? neg_tril_outer(x, gb) : neg_tril_outer(gb, x));
        }
        if (rhs.requires_grad()) t.accumulate(rhs, std::move(gb));
      });
}

Var pairwise_sqdist(const Var& x, const Var& z) {
  const Tensor& xv = x.value();
  const Tensor& zv = z.value();
  if (xv.rank() != 2 || zv.rank() != 2 || xv.dim(1) != zv.dim(1)) {
    throw Error(ErrorKind::DimensionMismatch,
                "pairwise_sqdist " + shape_string(xv.shape()) + " vs " + shape_string(zv.shape()));
  }
  const std::size_t n = xv.dim(0), m = zv.dim(0), d = xv.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = &xv.data()[i * d];
    for (std::size_t j = 0; j < m; ++j) {
      const double* zj = &zv.data()[j * d];
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = xi[k] - zj[k];
        s += diff * diff;
      }
      out(i, j) = s;
    }
  }
  return x.tape().record("pairwise_sqdist", std::move(out), {x, z}, [x, z](Tape& t, const Tensor&, const Tensor& g) {
    const auto gm = g.matrix();
    if (x.requires_grad()) {
      // 2 (rowsum(G) x - G z)
      Tensor gx({x.value().dim(0), x.value().dim(1)});
      auto gxm = gx.matrix();
      gxm.noalias() = -2.0 * gm * z.value().matrix();
      gxm += 2.0 * (gm.rowwise().sum().asDiagonal() * x.value().matrix());
      t.accumulate(x, std::move(gx));
    }
    if (z.requires_grad()) {
      Tensor gz({z.value().dim(0), z.value().dim(1)});
      auto gzm = gz.matrix();
      gzm.noalias() = -2.0 * gm.transpose() * x.value().matrix();
      gzm += 2.0 * (gm.colwise().sum().transpose().asDiagonal() * z.value().matrix());
      t.accumulate(z, std::move(gz));
    }
  });
}

Var conv2d(const Var& input, const Var& kernel, std::size_t dilation) {
  return input.tape().record(
      "conv2d", distgp::conv2d(input.value(), kernel.value(), dilation), {input, kernel},
      [input, kernel, dilation](Tape& t, const Tensor&, const Tensor& g) {
        if (input.requires_grad()) {
          t.accumulate(input, conv2d_input_adjoint(g, kernel.value(), dilation, input.shape()));
        }
        if (kernel.requires_grad()) {
          t.accumulate(kernel, conv2d_kernel_adjoint(g, input.value(), dilation, kernel.value().dim(0)));
        }
      });
}

// ---------------------------------------------------------------------------
// Shape ops

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record("sum", Tensor::scalar(s), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
    t.accumulate(a, Tensor(a.shape(), g[0]));
  });
}

Var sum_axis(const Var& a, std::size_t axis) {
  const auto& shape = a.shape();
  if (axis >= shape.size()) throw Error(ErrorKind::ShapeMismatch, "sum_axis: axis out of range");
  Tensor::Shape out_shape = shape;
  out_shape[axis] = 1;
  return a.tape().record("sum_axis", reduce_to_shape(a.value(), out_shape), {a},
                         [a](Tape& t, const Tensor&, const Tensor& g) {
                           t.accumulate(a, broadcast_tensor(g, a.shape()));
                         });
}

Var broadcast_to(const Var& a, const Tensor::Shape& shape) {
  return a.tape().record("broadcast_to", broadcast_tensor(a.value(), shape), {a},
                         [a](Tape& t, const Tensor&, const Tensor& g) {
                           t.accumulate(a, reduce_to_shape(g, a.shape()));
                         });
}

Var reshape(const Var& a, const Tensor::Shape& shape) {
  return a.tape().record("reshape", a.value().reshaped(shape), {a}, [a](Tape& t, const Tensor&, const Tensor& g) {
    t.accumulate(a, g.reshaped(a.shape()));
  });
}

namespace {

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Tensor::Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw Error(ErrorKind::ShapeMismatch, "axis out of range");
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto s = split_axis(a.shape(), axis);
  if (begin >= end || end > s.extent) throw Error(ErrorKind::ShapeMismatch, "slice range out of bounds");
  Tensor::Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t len = (end - begin) * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(a.value().data().begin() + (o * s.extent + begin) * s.inner, len,
                out.data().begin() + o * len);
  }
  return a.tape().record("slice", std::move(out), {a}, [a, s, begin, end](Tape& t, const Tensor&, const Tensor& g) {
    Tensor ga(a.shape(), 0.0);
    const std::size_t len = (end - begin) * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(g.data().begin() + o * len, len, ga.data().begin() + (o * s.extent + begin) * s.inner);
    }
    t.accumulate(a, std::move(ga));
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw Error(ErrorKind::EmptyInput, "concat of nothing");
  Tensor::Shape out_shape = parts[0].shape();
  std::size_t total = 0;
  for (const Var& p : parts) {
    Tensor::Shape sh = p.shape();
    if (sh.size() != out_shape.size()) throw Error(ErrorKind::ShapeMismatch, "concat rank mismatch");
    total += sh[axis];
    sh[axis] = out_shape[axis];
    if (sh != out_shape) throw Error(ErrorKind::ShapeMismatch, "concat shape mismatch");
  }
  out_shape[axis] = total;
  const auto so = split_axis(out_shape, axis);
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t ext = p.shape()[axis];
    const std::size_t len = ext * so.inner;
    for (std::size_t o = 0; o < so.outer; ++o) {
      std::copy_n(p.value().data().begin() + o * len, len,
                  out.data().begin() + (o * so.extent + offset) * so.inner);
    }
    offsets.push_back(offset);
    offset += ext;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(
      "concat", std::move(out), inputs, [inputs, offsets, so](Tape& t, const Tensor&, const Tensor& g) {
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          const Var& p = inputs[k];
          if (!p.requires_grad()) continue;
          const std::size_t len = p.value().size() / so.outer;
          Tensor gp(p.shape());
          for (std::size_t o = 0; o < so.outer; ++o) {
            std::copy_n(g.data().begin() + (o * so.extent + offsets[k]) * so.inner, len,
                        gp.data().begin() + o * len);
          }
          t.accumulate(p, std::move(gp));
        }
      });
}

}  // namespace distgp::ad
