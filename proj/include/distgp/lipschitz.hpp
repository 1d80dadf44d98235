#pragma once

#include <cstddef>
#include <cstdint>

#include "distgp/kernels.hpp"
#include "distgp/layers.hpp"
#include "distgp/tensor.hpp"

namespace distgp {

/// Outcome of an empirical Lipschitz sweep. Distances are compared in squared
/// W2 on both sides: violation when W2^2(F mu, F nu) > L * W2^2(mu, nu) * (1 + rel_slack) + abs_slack.
struct LipschitzCheck {
  std::size_t trials = 0;
  std::size_t violations = 0;
  double constant = 0.0;
  /// Largest observed W2^2(F mu, F nu) / W2^2(mu, nu) over pairs with a nonzero input distance.
  double worst_ratio = 0.0;
};

inline constexpr double kLipschitzRelSlack = 1e-6;
inline constexpr double kLipschitzAbsSlack = 1e-12;

/// (4 sigma^2 / l)^2 * sum_c [ |K^-1 m_c|^2 + |K^-1 (K - S_c) K^-1|_2 ], with K = K_ZZ + jitter I.
double prop1_constant(const InducingSet& inducing, const KernelParams& kernel, double jitter = kTestJitter);

/// Centers each trial at a randomly chosen inducing measure and draws nu
/// uniformly in squared radius with 0.125 <= W2^2(mu, nu) / l^2 <= 1.
LipschitzCheck verify_prop1(const InducingSet& inducing, const KernelParams& kernel, std::size_t trials,
                            std::uint64_t seed, double jitter = kTestJitter);

/// f(mu) = N(m^T A, sum_i var_i A_i^2) for a column A of C weights; L = sqrt(C) |A|^2.
LipschitzCheck verify_prop2(const Tensor& column, std::size_t trials, std::uint64_t seed);

}  // namespace distgp
