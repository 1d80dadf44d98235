#pragma once

#include <cstddef>

#include "distgp/tensor.hpp"

namespace distgp {

inline constexpr double kTrainJitter = 1e-6;
inline constexpr double kTestJitter = 1e-8;
inline constexpr int kJitterRetries = 3;

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);
Tensor transpose(const Tensor& a);

/// Lower Cholesky factor of A + jitter*I. Only the lower triangle of A is read.
/// Throws NotPositiveDefinite when a pivot is <= 0.
Tensor cholesky(const Tensor& a, double jitter);

struct CholeskyResult {
  Tensor factor;
  double jitter_used = 0.0;
};

/// Factorizes with `jitter`, escalating it 10x on failure up to kJitterRetries times.
CholeskyResult cholesky_with_retry(const Tensor& a, double jitter);

/// Solves L X = B (or L^T X = B when `transpose` is set). Only the lower
/// triangle of L is read. Throws ZeroDiagonal if |L_ii| < 1e-300.
Tensor tri_solve(const Tensor& lower, const Tensor& rhs, bool transpose = false);

/// Reverse-mode adjoint of the Cholesky factorization: given L = chol(A) and
/// the adjoint of L, returns the adjoint of the lower triangle of A (the upper
/// triangle of the result is zero since the factorization never reads it).
Tensor cholesky_adjoint(const Tensor& lower, const Tensor& lower_adjoint);

/// Valid-padding dilated 2D convolution.
/// input [H,W,Cin], kernel [k,k,Cin,Cout] -> [H - d(k-1), W - d(k-1), Cout].
/// Accumulation order per output element is (i, j, c) starting from 0.0.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t dilation);

/// Adjoints of conv2d with respect to its input and its kernel.
Tensor conv2d_input_adjoint(const Tensor& out_adjoint, const Tensor& kernel, std::size_t dilation,
                            const Tensor::Shape& input_shape);
Tensor conv2d_kernel_adjoint(const Tensor& out_adjoint, const Tensor& input, std::size_t dilation,
                             std::size_t kernel_size);

/// Output spatial extent of a valid dilated convolution; throws ShapeMismatch if < 1.
std::size_t conv_output_extent(std::size_t extent, std::size_t kernel_size, std::size_t dilation);

/// Im2col: image [H,W,C] -> [P, k*k*C], one row per output position, flattened
/// over (spatial row offset, spatial column offset, channel).
Tensor extract_patches(const Tensor& image, std::size_t kernel_size, std::size_t dilation);

/// Largest absolute eigenvalue of a symmetric matrix.
double symmetric_spectral_norm(const Tensor& a);

}  // namespace distgp
