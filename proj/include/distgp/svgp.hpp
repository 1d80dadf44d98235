#pragma once

#include <span>
#include <vector>

#include "distgp/autodiff.hpp"
#include "distgp/linalg.hpp"
#include "distgp/tensor.hpp"

namespace distgp {

/// Predictive moments of a sparse variational GP at N inputs for C output
/// channels, each [N, C]. var == h_var + g_var elementwise by construction:
/// h_var = diag(Knn - Knm Kmm^-1 Kmn) (distributional part),
/// g_var = diag(Knm Kmm^-1 S Kmm^-1 Kmn) (within-data part).
struct PosteriorMoments {
  Tensor mean;
  Tensor var;
  Tensor h_var;
  Tensor g_var;
};

struct GaussianComponent {
  Tensor mean;
  Tensor var;
};

/// f = g + h with g ~ N(mean, g_var) and h ~ N(0, h_var).
struct VarianceDecomposition {
  GaussianComponent within_data;
  GaussianComponent distributional;
};

/// Single-channel prediction; q_mean is [M] or [M,1] and q_chol the lower
/// factor of S. Knn_diag is [N] or [N,1].
PosteriorMoments predict(const Tensor& knm, const Tensor& kmm, const Tensor& knn_diag, const Tensor& q_mean,
                         const Tensor& q_chol, double jitter = kTestJitter);
/// Multi-channel prediction sharing inducing inputs: q_mean [M,C], one factor per channel.
PosteriorMoments predict(const Tensor& knm, const Tensor& kmm, const Tensor& knn_diag, const Tensor& q_mean,
                         std::span<const Tensor> q_chol, double jitter = kTestJitter);

/// KL(N(m, L L^T) || N(0, Kmm)), summed over channels.
double kl_term(const Tensor& q_mean, const Tensor& q_chol, const Tensor& kmm, double jitter = kTestJitter);
double kl_term(const Tensor& q_mean, std::span<const Tensor> q_chol, const Tensor& kmm,
               double jitter = kTestJitter);

VarianceDecomposition decompose(const PosteriorMoments& moments);

namespace ad {

struct Moments {
  Var mean;
  Var var;
  Var h_var;
  Var g_var;
};

/// Lower-triangular factor with softplus-positive diagonal from an
/// unconstrained square matrix (upper triangle ignored).
Var lower_from_raw(const Var& raw);

/// Sum of log of the diagonal of a square matrix.
Var log_diag_sum(const Var& lower);

/// `kmm_chol` is the Cholesky factor of Kmm (+jitter); knn_diag is [N,1].
Moments svgp_predict(const Var& knm, const Var& kmm_chol, const Var& knn_diag, const Var& q_mean,
                     std::span<const Var> q_chol);

Var svgp_kl(const Var& q_mean, std::span<const Var> q_chol, const Var& kmm_chol);

}  // namespace ad

}  // namespace distgp
