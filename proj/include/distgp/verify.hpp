#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distgp/model.hpp"

namespace distgp {

struct SuiteResult {
  std::string name;
  bool passed = false;
  nlohmann::json detail;
};

struct VerifyOptions {
  std::size_t prop1_trials = 10000;
  std::size_t prop2_trials = 100000;
  std::size_t axiom_triples = 10000;
  std::size_t decomposition_tiles = 4;
  std::uint64_t seed = 0;
  // Treat every affine layer as constrained, so unconstrained weights count as violations.
  bool require_lipschitz = false;
};

inline constexpr double kNormalizationTolerance = 1e-9;
inline constexpr double kGradientTolerance = 1e-4;

/// Configuration of the 5-pixel model used for gradient checks: 1x1 kernels,
/// 1x1 tiles, M = 3.
SegNetConfig micro_model_config();

struct GradientReport {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  std::string worst_parameter;
};

/// Central finite differences of the ELBO of a randomized micro-model over 5
/// single-pixel tiles, compared against elbo_gradient for every entry of every
/// parameter. Relative error is |a - n| / max(|a|, |n|, floor).
GradientReport elbo_gradient_check(std::uint64_t seed, double step = 1e-4, double floor = 1e-6);

/// Weights each affine layer actually applies (normalized when constrained).
Tensor effective_affine_weights(const SegNet& net, std::size_t layer);

/// Runs every suite: normalization, the affine W2 bound per affine layer, the
/// DistGP bound per activation layer, W2 metric axioms, variance
/// decomposition, ELBO gradient.
std::vector<SuiteResult> verify_model(const SegNet& net, const VerifyOptions& options);

nlohmann::json to_json(const std::vector<SuiteResult>& suites);

}  // namespace distgp
