#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "distgp/autodiff.hpp"
#include "distgp/kernels.hpp"
#include "distgp/linalg.hpp"
#include "distgp/tensor.hpp"

namespace distgp {

/// Per-pixel, per-channel diagonal Gaussian moments: mean and var are [H,W,C].
struct MeasureMap {
  Tensor mean;
  Tensor var;

  std::size_t height() const { return mean.dim(0); }
  std::size_t width() const { return mean.dim(1); }
  std::size_t channels() const { return mean.dim(2); }
  void validate() const;
};

/// Inducing inputs plus the variational posterior q(U) = N(q_mean, L L^T) per output channel.
/// `location_var` is present only for measure-valued inducing points.
struct InducingSet {
  Tensor locations;                   // [M, D]
  std::optional<Tensor> location_var; // [M, D], >= 0
  Tensor q_mean;                      // [M, C]
  std::vector<Tensor> q_chol;         // C lower-triangular [M, M]

  std::size_t size() const { return locations.dim(0); }
  std::size_t channels() const { return q_mean.dim(1); }
};

struct AffineMeasureConvParams {
  Tensor weights;  // [k, k, C_in, C_out]
  std::size_t dilation = 1;
  bool lipschitz_constrained = true;
};

struct GpLayerResult {
  MeasureMap out;  // var == h_var + g_var
  Tensor h_var;
  Tensor g_var;
};

/// Convolved GP on image patches with a Euclidean RBF kernel.
GpLayerResult conv_gp_forward(const Tensor& image, std::size_t kernel_size, std::size_t dilation,
                              const InducingSet& inducing, const KernelParams& kernel,
                              double jitter = kTestJitter);

/// mean_out = conv(mean_in, A), var_out = conv(var_in, A*A).
MeasureMap affine_measure_conv(const MeasureMap& in, const AffineMeasureConvParams& params);

/// Rescales every output-channel column c of A (flattened over k*k*C_in = C
/// rows) to A_c / (C^{1/4} |A_c|), so that sqrt(C) |A_c|^2 == 1.
/// Throws ZeroColumn for an all-zero column.
Tensor lipschitz_normalize(const Tensor& weights);

/// sqrt(C) * |A_c|^2 for every output channel of a [k,k,C_in,C_out] tensor.
std::vector<double> affine_lipschitz_constants(const Tensor& weights);

/// 1x1 DistGP activation: each pixel's C-channel moments form one diagonal
/// Gaussian measure, compared to the inducing measures through the W2 kernel.
GpLayerResult distgp_activation(const MeasureMap& in, const InducingSet& inducing, const KernelParams& kernel,
                                double jitter = kTestJitter);

namespace ad {

struct MeasureVars {
  Var mean;  // [H,W,C]
  Var var;
};

/// Differentiable view of one GP layer's parameters (already constrained).
struct GpVars {
  Var z_mean;               // [M,D]
  std::optional<Var> z_std; // measure-valued inducing points only
  Var q_mean;               // [M,C]
  std::vector<Var> q_chol;  // lower factors
  Var variance;
  Var lengthscale;
};

struct GpLayerOutput {
  MeasureVars out;
  Var h_var;
  Var g_var;
};

GpLayerOutput conv_gp_forward(const Tensor& image, std::size_t kernel_size, std::size_t dilation,
                              const GpVars& gp, double jitter);
Var lipschitz_normalize(const Var& weights);
MeasureVars affine_measure_conv(const MeasureVars& in, const Var& weights, std::size_t dilation,
                                bool lipschitz_constrained);
GpLayerOutput distgp_activation(const MeasureVars& in, const GpVars& gp, double jitter);

}  // namespace ad

}  // namespace distgp
