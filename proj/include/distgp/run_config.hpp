#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distgp/data.hpp"
#include "distgp/model.hpp"
#include "distgp/ood.hpp"
#include "distgp/training.hpp"

namespace distgp {

struct OodConfig {
  HeatmapMode mode = HeatmapMode::Variance;
  std::vector<double> fpr_levels{kDefaultFprLevels.begin(), kDefaultFprLevels.end()};
  bool png = false;
};

/// Everything a CLI run needs. JSON layout:
///   {"seed": s, "data": {..., "dir": path}, "model": {...}, "train": {...}, "ood": {...}}
/// `seed` seeds data, model and train unless a section sets its own.
struct RunConfig {
  std::uint64_t seed = 0;
  DatasetConfig data;
  std::optional<std::string> data_dir;
  SegNetConfig model;
  TrainConfig train;
  OodConfig ood;
};

/// Parses JSON text; syntax errors become Config errors carrying line and column.
nlohmann::json parse_config_text(const std::string& text, const std::string& origin);

/// Applies "a.b.c=value"; the value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Validates and fills defaults. `seed_override` (DISTGP_SEED) replaces every seed.
RunConfig resolve_run_config(const nlohmann::json& j, std::optional<std::uint64_t> seed_override = std::nullopt);

nlohmann::json to_json(const RunConfig& c);

}  // namespace distgp
