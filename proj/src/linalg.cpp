#include "distgp/linalg.hpp"

#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "distgp/error.hpp"

namespace distgp {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + ": expected rank " + std::to_string(rank) +
                                              ", got " + shape_string(t.shape()));
  }
}

void require_square(const Tensor& t, const char* what) {
  require_rank(t, 2, what);
  if (t.dim(0) != t.dim(1)) {
    throw Error(ErrorKind::ShapeMismatch, std::string(what) + ": not square " + shape_string(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t inner_a = transpose_a ? a.dim(0) : a.dim(1);
  const std::size_t inner_b = transpose_b ? b.dim(1) : b.dim(0);
  if (inner_a != inner_b) {
    throw Error(ErrorKind::ShapeMismatch,
                "matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t rows = transpose_a ? a.dim(1) : a.dim(0);
  const std::size_t cols = transpose_b ? b.dim(0) : b.dim(1);
  Tensor out({rows, cols});
  auto o = out.matrix();
  const auto am = a.matrix();
  const auto bm = b.matrix();
  if (!transpose_a && !transpose_b) {
    o.noalias() = am * bm;
  } else if (transpose_a && !transpose_b) {
    o.noalias() = am.transpose() * bm;
  } else if (!transpose_a && transpose_b) {
    o.noalias() = am * bm.transpose();
  } else {
    o.noalias() = am.transpose() * bm.transpose();
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  Tensor out({a.dim(1), a.dim(0)});
  out.matrix() = a.matrix().transpose();
  return out;
}

Tensor cholesky(const Tensor& a, double jitter) {
  require_square(a, "cholesky");
  if (!(jitter >= 0.0)) throw Error(ErrorKind::InvalidArgument, "cholesky jitter must be >= 0");
  const std::size_t n = a.dim(0);
  Tensor l({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    double pivot = a(j, j) + jitter;
    for (std::size_t k = 0; k < j; ++k) pivot -= l(j, k) * l(j, k);
    if (!(pivot > 0.0)) {
      throw Error(ErrorKind::NotPositiveDefinite,
                  "pivot " + std::to_string(j) + " = " + std::to_string(pivot) +
                      " with jitter " + std::to_string(jitter));
    }
    const double d = std::sqrt(pivot);
    l(j, j) = d;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / d;
    }
  }
  return l;
}

CholeskyResult cholesky_with_retry(const Tensor& a, double jitter) {
  double current = jitter;
  for (int attempt = 0;; ++attempt) {
    try {
      return {cholesky(a, current), current};
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NotPositiveDefinite || attempt == kJitterRetries) throw;
      current = current > 0.0 ? current * 10.0 : 1e-10;
    }
  }
}

Tensor tri_solve(const Tensor& lower, const Tensor& rhs, bool transpose) {
  require_square(lower, "tri_solve");
  require_rank(rhs, 2, "tri_solve");
  if (rhs.dim(0) != lower.dim(0)) {
    throw Error(ErrorKind::ShapeMismatch, "tri_solve rhs " + shape_string(rhs.shape()) +
                                              " against " + shape_string(lower.shape()));
  }
  for (std::size_t i = 0; i < lower.dim(0); ++i) {
    if (!(std::abs(lower(i, i)) >= 1e-300)) {
      throw Error(ErrorKind::ZeroDiagonal, "diagonal entry " + std::to_string(i));
    }
  }
  Tensor out = rhs;
  auto x = out.matrix();
  const auto l = lower.matrix();
  if (transpose) {
    l.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
  } else {
    l.triangularView<Eigen::Lower>().solveInPlace(x);
  }
  return out;
}

Tensor cholesky_adjoint(const Tensor& lower, const Tensor& lower_adjoint) {
  require_square(lower, "cholesky_adjoint");
  const auto l = lower.matrix();
  // P = Phi(L^T Lbar): lower triangle with the diagonal halved.
  RowMatrix p = (l.transpose() * lower_adjoint.matrix()).triangularView<Eigen::Lower>();
  p.diagonal() *= 0.5;
  // S = L^-T P L^-1
  l.triangularView<Eigen::Lower>().transpose().solveInPlace(p);
  RowMatrix st = p.transpose();
  l.triangularView<Eigen::Lower>().transpose().solveInPlace(st);
  const std::size_t n = lower.dim(0);
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    out(i, i) = st(i, i);
    for (std::size_t j = 0; j < i; ++j) out(i, j) = st(i, j) + st(j, i);
  }
  return out;
}

std::size_t conv_output_extent(std::size_t extent, std::size_t kernel_size, std::size_t dilation) {
  if (kernel_size == 0 || dilation == 0) {
    throw Error(ErrorKind::InvalidArgument, "kernel size and dilation must be positive");
  }
  const std::size_t span = dilation * (kernel_size - 1);
  if (extent < span + 1) {
    throw Error(ErrorKind::ShapeMismatch, "extent " + std::to_string(extent) + " too small for kernel " +
                                              std::to_string(kernel_size) + " dilation " +
                                              std::to_string(dilation));
  }
  return extent - span;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t dilation) {
  require_rank(input, 3, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  const std::size_t k = kernel.dim(0);
  if (kernel.dim(1) != k || kernel.dim(2) != input.dim(2)) {
    throw Error(ErrorKind::ShapeMismatch, "conv2d kernel " + shape_string(kernel.shape()) +
                                              " for input " + shape_string(input.shape()));
  }
  const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2), cout = kernel.dim(3);
  const std::size_t ho = conv_output_extent(h, k, dilation);
  const std::size_t wo = conv_output_extent(w, k, dilation);
  Tensor out({ho, wo, cout});
  const double* __restrict in = input.data().data();
  const double* __restrict ker = kernel.data().data();
  double* __restrict o = out.data().data();
  for (std::size_t p = 0; p < ho; ++p) {
    for (std::size_t q = 0; q < wo; ++q) {
      double* __restrict acc = o + (p * wo + q) * cout;
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double* px = in + ((p + i * dilation) * w + (q + j * dilation)) * cin;
          for (std::size_t c = 0; c < cin; ++c) {
            const double x = px[c];
            const double* krow = ker + ((i * k + j) * cin + c) * cout;
            for (std::size_t oc = 0; oc < cout; ++oc) acc[oc] += x * krow[oc];
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_input_adjoint(const Tensor& out_adjoint, const Tensor& kernel, std::size_t dilation,
                            const Tensor::Shape& input_shape) {
  const std::size_t k = kernel.dim(0), cin = kernel.dim(2), cout = kernel.dim(3);
  const std::size_t w = input_shape[1];
  const std::size_t ho = out_adjoint.dim(0), wo = out_adjoint.dim(1);
  Tensor grad(input_shape);
  double* __restrict g = grad.data().data();
  const double* __restrict ker = kernel.data().data();
  const double* __restrict ob = out_adjoint.data().data();
  for (std::size_t p = 0; p < ho; ++p) {
    for (std::size_t q = 0; q < wo; ++q) {
      const double* go = ob + (p * wo + q) * cout;
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          double* gx = g + ((p + i * dilation) * w + (q + j * dilation)) * cin;
          for (std::size_t c = 0; c < cin; ++c) {
            const double* krow = ker + ((i * k + j) * cin + c) * cout;
            double s = 0.0;
            for (std::size_t oc = 0; oc < cout; ++oc) s += go[oc] * krow[oc];
            gx[c] += s;
          }
        }
      }
    }
  }
  return grad;
}

Tensor conv2d_kernel_adjoint(const Tensor& out_adjoint, const Tensor& input, std::size_t dilation,
                             std::size_t kernel_size) {
  const std::size_t k = kernel_size, cin = input.dim(2), cout = out_adjoint.dim(2);
  const std::size_t w = input.dim(1);
  const std::size_t ho = out_adjoint.dim(0), wo = out_adjoint.dim(1);
  Tensor grad({k, k, cin, cout});
  double* __restrict g = grad.data().data();
  const double* __restrict in = input.data().data();
  const double* __restrict ob = out_adjoint.data().data();
  for (std::size_t p = 0; p < ho; ++p) {
    for (std::size_t q = 0; q < wo; ++q) {
      const double* go = ob + (p * wo + q) * cout;
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double* px = in + ((p + i * dilation) * w + (q + j * dilation)) * cin;
          for (std::size_t c = 0; c < cin; ++c) {
            double* __restrict grow = g + ((i * k + j) * cin + c) * cout;
            const double x = px[c];
            for (std::size_t oc = 0; oc < cout; ++oc) grow[oc] += x * go[oc];
          }
        }
      }
    }
  }
  return grad;
}

Tensor extract_patches(const Tensor& image, std::size_t kernel_size, std::size_t dilation) {
  require_rank(image, 3, "extract_patches");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const std::size_t ho = conv_output_extent(h, kernel_size, dilation);
  const std::size_t wo = conv_output_extent(w, kernel_size, dilation);
  const std::size_t row_len = kernel_size * kernel_size * c;
  Tensor out({ho * wo, row_len});
  double* o = out.data().data();
  const double* in = image.data().data();
  for (std::size_t p = 0; p < ho; ++p) {
    for (std::size_t q = 0; q < wo; ++q) {
      double* row = o + (p * wo + q) * row_len;
      for (std::size_t i = 0; i < kernel_size; ++i) {
        for (std::size_t j = 0; j < kernel_size; ++j) {
          const double* px = in + ((p + i * dilation) * w + (q + j * dilation)) * c;
          for (std::size_t ch = 0; ch < c; ++ch) *row++ = px[ch];
        }
      }
    }
  }
  return out;
}

double symmetric_spectral_norm(const Tensor& a) {
  require_square(a, "symmetric_spectral_norm");
  Eigen::SelfAdjointEigenSolver<RowMatrix> solver(a.matrix(), Eigen::EigenvaluesOnly);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace distgp
