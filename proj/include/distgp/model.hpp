#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distgp/autodiff.hpp"
#include "distgp/kernels.hpp"
#include "distgp/layers.hpp"
#include "distgp/linalg.hpp"
#include "distgp/tensor.hpp"

namespace distgp {

enum class LayerKind { ConvGP, AffineMeasureConv, DistGPActivation };
const char* to_string(LayerKind kind);

struct LayerStackEntry {
  LayerKind kind = LayerKind::ConvGP;
  std::string name;  // parameter prefix
  std::size_t kernel_size = 1;
  std::size_t dilation = 1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t num_inducing = 0;
};

/// Architecture: ConvGP(k0, d0) -> [Affine(k_i, d_i) -> DistGP] for each
/// further kernel size, the last DistGP being the num_classes head.
struct SegNetConfig {
  std::size_t spatial_rank = 2;
  std::size_t input_channels = 1;
  std::size_t num_classes = 3;
  std::size_t input_tile = 32;
  std::size_t output_tile = 16;
  std::vector<std::size_t> kernel_sizes{5, 5, 5, 1};
  std::vector<std::size_t> dilations{1, 1, 2, 1};
  std::size_t num_inducing = 250;
  std::size_t activation_channels = 2;
  std::size_t pre_channels = 12;
  double likelihood_noise = 0.1;  // initial beta (a variance)
  bool lipschitz = true;
  std::uint64_t seed = 0;

  /// input_tile minus the receptive-field shrinkage of the stack.
  std::size_t derived_output_tile() const;
  /// Throws Config on any inconsistency.
  void validate() const;
  std::vector<LayerStackEntry> layer_stack() const;
};

nlohmann::json to_json(const SegNetConfig& config);
/// Unknown keys are rejected; missing keys keep their defaults.
SegNetConfig segnet_config_from_json(const nlohmann::json& j);

using ParameterSet = std::map<std::string, Tensor>;

/// Name -> shape of every trainable parameter of the architecture.
std::map<std::string, Tensor::Shape> parameter_shapes(const SegNetConfig& config);

struct SegForward {
  MeasureMap logits;
  Tensor h_var;  // [T_out, T_out, num_classes]
  Tensor g_var;
};

struct ElboTerms {
  double elbo = 0.0;
  double exp_log_lik = 0.0;  // (N / B) * sum of per-tile expected log-likelihoods
  double kl_total = 0.0;
};

struct ElboGradient {
  ElboTerms terms;
  ParameterSet grad;  // d elbo / d parameter
};

class SegNet {
 public:
  /// Validates the parameter set against the architecture.
  SegNet(SegNetConfig config, ParameterSet params);

  /// Z0 from patches of `training_images` ([H,W,C] each, any size >= k0),
  /// everything else from the seeded defaults.
  static SegNet initialize(const SegNetConfig& config, std::span<const Tensor> training_images, std::uint64_t seed);

  const SegNetConfig& config() const { return config_; }
  const std::vector<LayerStackEntry>& layers() const { return layers_; }
  const ParameterSet& parameters() const { return params_; }
  /// Replaces all values; names and shapes must match.
  void set_parameters(ParameterSet params);

  InducingSet inducing_set(std::size_t layer) const;
  KernelParams kernel_params(std::size_t layer) const;
  AffineMeasureConvParams affine_params(std::size_t layer) const;
  double beta() const;

  SegForward forward(const Tensor& tile, double jitter = kTestJitter) const;
  /// Argmax over class means; ties go to the lowest class index.
  Tensor predict_segmentation(const Tensor& tile, double jitter = kTestJitter) const;

 private:
  SegNetConfig config_;
  std::vector<LayerStackEntry> layers_;
  ParameterSet params_;
};

/// Per-pixel mean over labelled pixels (label >= 0) of
/// sum_k [ log N(y_k | mean_k, beta) - var_k / (2 beta) ] with one-hot y.
double expected_log_lik(const MeasureMap& logits, const Tensor& labels, double beta);
double kl_total(const SegNet& net, double jitter = kTrainJitter);

/// (N / B) sum_t ELL(tile t) - KL.
ElboTerms elbo(const SegNet& net, std::span<const Tensor> tiles, std::span<const Tensor> labels,
               std::size_t dataset_size, double jitter = kTrainJitter);
/// Same value plus gradients. Tiles are processed on up to `threads` workers
/// and reduced in tile order, so the result does not depend on `threads`.
ElboGradient elbo_gradient(const SegNet& net, std::span<const Tensor> tiles, std::span<const Tensor> labels,
                           std::size_t dataset_size, std::size_t threads = 1, double jitter = kTrainJitter,
                           double kl_weight = 1.0);

namespace ad {

using ParamVars = std::map<std::string, Var>;

ParamVars bind(Tape& tape, const ParameterSet& params, bool trainable);

struct SegForwardVars {
  MeasureVars logits;
  Var h_var;
  Var g_var;
};

SegForwardVars forward(const SegNet& net, const ParamVars& p, const Tensor& tile, double jitter);
Var expected_log_lik(const MeasureVars& logits, const Tensor& labels, const Var& beta);
Var kl_total(const SegNet& net, const ParamVars& p, double jitter);

}  // namespace ad

}  // namespace distgp
