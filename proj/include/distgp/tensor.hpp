#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace distgp {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
// Fixed alignment keeps vectorized reductions independent of where the buffer lands.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

/// Dense row-major array of doubles with an explicit shape.
///
/// A rank-0 tensor (empty shape) holds exactly one scalar. Tensors are plain
/// values: copying copies the buffer, and nothing in the library mutates a
/// tensor after handing it out.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor identity(std::size_t n);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor column(std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const Buffer& values() const noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // Rank-2 and rank-3 element access (row-major).
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  double item() const;

  /// Same buffer, new shape; element count must agree.
  Tensor reshaped(Shape shape) const;

  /// Views a rank-2 tensor as an Eigen row-major matrix.
  ConstMatrixMap matrix() const;
  MatrixMap matrix();

  bool all_finite() const noexcept;

 private:
  Shape shape_;
  Buffer data_;
};

std::size_t shape_size(const Tensor::Shape& shape);
std::string shape_string(const Tensor::Shape& shape);

Tensor from_matrix(const RowMatrix& m);

/// Largest elementwise absolute difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace distgp
