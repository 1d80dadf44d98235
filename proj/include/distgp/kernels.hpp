#pragma once

#include <span>

#include "distgp/autodiff.hpp"
#include "distgp/measures.hpp"
#include "distgp/tensor.hpp"

namespace distgp {

double softplus(double x);
/// Inverse of softplus for y > 0.
double softplus_inverse(double y);

/// RBF kernel hyperparameters, stored unconstrained: variance = softplus(raw_variance),
/// lengthscale = softplus(raw_lengthscale).
struct KernelParams {
  double raw_variance = 0.0;
  double raw_lengthscale = 0.0;

  static KernelParams from_natural(double variance, double lengthscale);
  double variance() const { return softplus(raw_variance); }
  double lengthscale() const { return softplus(raw_lengthscale); }
};

/// K[n,m] = variance * exp(-|x_n - z_m|^2 / lengthscale^2).
Tensor rbf_euclid(const Tensor& x, const Tensor& z, const KernelParams& params);

/// K[n,m] = variance * exp(-W2^2(mu_n, z_m) / lengthscale^2).
Tensor rbf_w2(std::span<const DiagGaussianMeasure> measures, std::span<const DiagGaussianMeasure> inducing,
              const KernelParams& params);

namespace ad {

/// Differentiable kernels. `variance` and `lengthscale` are the positive
/// (already softplus-transformed) hyperparameters, each holding one element.
Var rbf_euclid(const Var& x, const Var& z, const Var& variance, const Var& lengthscale);

/// Measures are given by their means and standard deviations as [N,D] and [M,D].
Var rbf_w2(const Var& mean, const Var& stddev, const Var& z_mean, const Var& z_stddev, const Var& variance,
           const Var& lengthscale);

}  // namespace ad

}  // namespace distgp
