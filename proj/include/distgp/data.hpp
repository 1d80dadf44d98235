#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distgp/tensor.hpp"

namespace distgp {

inline constexpr double kIgnoreLabel = -1.0;
inline constexpr const char* kGeneratorVersion = "1";

struct SyntheticScan {
  Tensor image;         // [H,W,1] in [-1,1]
  Tensor labels;        // [H,W] class index, kIgnoreLabel on anomaly pixels
  Tensor anomaly_mask;  // [H,W] 0/1
  std::uint64_t seed = 0;

  bool has_anomaly() const;
};

/// SplitMix64 finalizer; used to derive independent generator streams.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Smooth random field (20 sinusoids, at most 6 cycles per image) cut at its
/// class quantiles; intensity = class mean from linspace(-0.5, 0.5) + N(0, noise_sd), clamped.
SyntheticScan gen_scan(std::uint64_t seed, std::size_t size, std::size_t num_classes = 3, double noise_sd = 0.1);

/// Paints 1-3 bright ellipses (semi-axes 4-12 px, base intensity U[0.8, 1]
/// plus noise). Resamples until the painted area is 1-15% of the scan.
SyntheticScan inject_anomaly(const SyntheticScan& scan, std::uint64_t seed, double noise_sd = 0.1);

struct DatasetConfig {
  std::uint64_t seed = 0;
  std::size_t n_train = 200;
  std::size_t n_val = 50;
  std::size_t n_ood = 50;
  std::size_t size = 64;
  std::size_t num_classes = 3;
  double noise_sd = 0.1;
  // First scan seed of each split. Defaults are derived from `seed`.
  std::optional<std::uint64_t> train_seed_start;
  std::optional<std::uint64_t> val_seed_start;
  std::optional<std::uint64_t> ood_seed_start;

  /// Throws Config on invalid counts, sizes or overlapping seed ranges.
  void validate() const;
  std::uint64_t split_start(const std::string& split) const;
};

nlohmann::json to_json(const DatasetConfig& c);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);

struct Dataset {
  DatasetConfig config;
  std::vector<SyntheticScan> train;
  std::vector<SyntheticScan> val;
  std::vector<SyntheticScan> ood;
};

Dataset make_dataset(const DatasetConfig& config);

/// Writes index.json plus per-scan array files; returns the index path.
std::filesystem::path save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace distgp
