#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distgp/data.hpp"
#include "distgp/model.hpp"
#include "distgp/tiling.hpp"

namespace distgp {

struct TrainConfig {
  std::size_t steps = 5000;
  std::size_t batch_size = 8;
  double learning_rate = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t checkpoint_every = 500;  // 0 = only the final checkpoint
  std::size_t log_every = 10;
  std::uint64_t seed = 0;
  std::string precision = "f64";
  double kl_weight = 1.0;
  std::size_t threads = 1;
  // Off makes the metrics log a pure function of (seed, config, data).
  bool record_wall_time = true;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct AdamState {
  std::size_t step = 0;
  ParameterSet m;
  ParameterSet v;

  static AdamState zeros_like(const ParameterSet& params);
};

/// One bias-corrected Adam descent step (params -= lr * mhat / (sqrt(vhat) + eps)).
/// Throws NonFiniteGradient naming the first offending parameter, and
/// NonFinite if an update would produce a non-finite value; in both cases
/// neither params nor state are modified.
void adam_step(ParameterSet& params, const ParameterSet& grads, AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double epsilon = 1e-8);

/// All output tiles of the given scans with their label tiles (edge fill = kIgnoreLabel).
struct TileSet {
  std::vector<Tensor> tiles;
  std::vector<Tensor> labels;
  std::size_t size() const { return tiles.size(); }
};

TileSet make_tile_set(std::span<const SyntheticScan> scans, const Tiler& tiler);

/// Indices of the minibatch used at `step`: a pure function of (seed, step).
/// When batch_size >= dataset_size the whole set is used in order.
std::vector<std::size_t> minibatch_indices(std::uint64_t seed, std::size_t step, std::size_t dataset_size,
                                           std::size_t batch_size);

struct MetricsRow {
  std::size_t step = 0;
  ElboTerms terms;
  double wall_ms = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,elbo,exp_log_lik,kl_total,wall_ms";
std::string format_metrics_row(const MetricsRow& row);

inline constexpr const char* kCheckpointFormatVersion = "1";

struct Checkpoint {
  SegNet net;
  AdamState optimizer;
  std::size_t step = 0;
  TrainConfig train;
};

/// Writes manifest.json, params/ and optimizer/ into a sibling temp directory
/// and renames it over `dir`.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
/// Throws Io on a missing or unreadable checkpoint, and Config on a version,
/// name or shape mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // metrics.csv and checkpoint/ go here
  std::function<void(const MetricsRow&)> on_log;
};

/// Runs ELBO ascent from `start` until `config.steps` updates have been
/// applied. Row `s` of the log holds the minibatch ELBO at the parameters
/// after s updates. On a non-finite objective, throws NonFiniteLoss and
/// leaves the last written checkpoint in place.
Checkpoint train(Checkpoint start, const TileSet& data, const TrainConfig& config, const TrainOptions& options = {});

}  // namespace distgp
