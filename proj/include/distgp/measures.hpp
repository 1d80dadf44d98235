#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "distgp/autodiff.hpp"

namespace distgp {

/// Gaussian with diagonal covariance: per-dimension mean and variance.
struct DiagGaussianMeasure {
  std::vector<double> mean;
  std::vector<double> var;

  DiagGaussianMeasure() = default;
  DiagGaussianMeasure(std::vector<double> mean, std::vector<double> var);

  std::size_t dim() const noexcept { return mean.size(); }
  bool operator==(const DiagGaussianMeasure&) const = default;
};

/// Squared 2-Wasserstein distance between diagonal Gaussians:
/// sum (m1 - m2)^2 + sum (sqrt(v1) - sqrt(v2))^2.
double w2_squared(const DiagGaussianMeasure& mu, const DiagGaussianMeasure& nu);
double w2(const DiagGaussianMeasure& mu, const DiagGaussianMeasure& nu);

/// Clamps negative variances to zero, counting every clamped entry.
ad::Var clamp_variance(const ad::Var& var);
void clamp_variance_inplace(std::span<double> var);

std::size_t variance_clamp_events();
void reset_variance_clamp_events();

}  // namespace distgp
