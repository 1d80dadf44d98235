#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "distgp/tensor.hpp"

namespace distgp::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid as long as its tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor::Shape& shape() const { return value().shape(); }
  /// Accumulated adjoint after Tape::backward; a zero tensor if nothing reached this node.
  Tensor grad() const;
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so the
/// node index is a topological order and backward walks it once in reverse.
///
/// With gradients disabled the tape only stores values; ops record no
/// closures. Not thread-safe: use one tape per thread.
class Tape {
 public:
  using Backward =
      std::function<void(Tape&, const Tensor& out_value, const Tensor& out_adjoint)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  /// Seeds d(root)/d(root) = seed and propagates adjoints to every node.
  /// Throws NonScalarRoot unless root holds exactly one element.
  void backward(const Var& root, double seed = 1.0);

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Op-implementation interface.
  Var record(const char* op, Tensor value, std::span<const Var> inputs, Backward backward);
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }
  void accumulate(const Var& v, const Tensor& adjoint);
  void accumulate(const Var& v, Tensor&& adjoint);

 private:
  friend class Var;
  struct Node {
    Tensor value;
    Tensor adjoint;
    bool has_adjoint = false;
    bool requires_grad = false;
    Backward backward;
  };

  std::deque<Node> nodes_;
  bool grad_enabled_;
};

// Elementwise binary ops broadcast numpy-style.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(double s, const Var& a);
Var operator*(const Var& a, double s);
Var operator+(const Var& a, double s);
Var operator-(double s, const Var& a);

Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var exp(const Var& a);
Var log(const Var& a);
/// Adjoint at exactly zero is taken as zero (subgradient convention).
Var sqrt(const Var& a);
Var square(const Var& a);
Var softplus(const Var& a);
/// max(a, lo) elementwise; adjoint passes only where a > lo.
Var clamp_min(const Var& a, double lo);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

/// Sum of all elements -> rank-0.
Var sum(const Var& a);
/// Sum over one axis, keeping it with extent 1.
Var sum_axis(const Var& a, std::size_t axis);
Var broadcast_to(const Var& a, const Tensor::Shape& shape);
Var reshape(const Var& a, const Tensor::Shape& shape);
/// Half-open range [begin, end) along `axis`.
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);
Var concat(std::span<const Var> parts, std::size_t axis);

Var conv2d(const Var& input, const Var& kernel, std::size_t dilation);
/// Cholesky of A + jitter*I with 10x jitter escalation on failure.
Var cholesky(const Var& a, double jitter);
Var tri_solve(const Var& lower, const Var& rhs, bool transpose = false);
/// Squared Euclidean distances between rows: [N,D] x [M,D] -> [N,M].
Var pairwise_sqdist(const Var& x, const Var& z);

/// Numpy broadcast of two shapes; throws ShapeMismatch when incompatible.
Tensor::Shape broadcast_shapes(const Tensor::Shape& a, const Tensor::Shape& b);
/// Value-level broadcast and its adjoint (sum back to `shape`).
Tensor broadcast_tensor(const Tensor& t, const Tensor::Shape& shape);
Tensor reduce_to_shape(const Tensor& t, const Tensor::Shape& shape);

}  // namespace distgp::ad
