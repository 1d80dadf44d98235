#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distgp/model.hpp"
#include "distgp/tensor.hpp"
#include "distgp/tiling.hpp"

namespace distgp {

enum class HeatmapMode { Variance, Entropy };
HeatmapMode heatmap_mode_from_string(const std::string& s);
const char* to_string(HeatmapMode mode);

/// Floor applied to h_var before taking logs in entropy mode.
inline constexpr double kEntropyVarianceFloor = 1e-12;

/// Stitched per-pixel outputs of a whole scan.
struct ScanPrediction {
  Tensor classes;     // [H,W] argmax of class means
  Tensor h_var_mean;  // [H,W] mean over classes of the final-layer h_var
  Tensor entropy;     // [H,W] 0.5 * sum over classes of log h_var
};

Tiler model_tiler(const SegNet& net);
ScanPrediction predict_scan(const SegNet& net, const Tensor& image, std::size_t threads = 1);
Tensor heatmap(const SegNet& net, const Tensor& image, HeatmapMode mode, std::size_t threads = 1);

/// Linear interpolation between order statistics (position q * (n - 1)).
double quantile(std::vector<double> values, double q);
/// (1 - fpr)-quantile of all pooled heatmap values. Throws EmptyInput.
double calibrate_threshold(std::span<const Tensor> in_dist_heatmaps, double fpr);
/// 1 where heatmap > tau, else 0.
Tensor ood_mask(const Tensor& heatmap, double tau);
/// 2|a and b| / (|a| + |b|); 1 when both are empty. Throws ShapeMismatch.
double dice(const Tensor& a, const Tensor& b);

struct OodLevel {
  double fpr = 0.0;
  double tau = 0.0;
  double dice = 0.0;  // pooled over all OOD scans
  std::size_t flagged = 0;
  std::size_t ground_truth = 0;
  std::size_t overlap = 0;
  double calibration_flagged_fraction = 0.0;  // on the in-distribution maps themselves
};

struct OodReport {
  std::string mode;
  std::vector<OodLevel> levels;
  /// Per OOD scan: mean heatmap over anomaly pixels and over the remaining pixels.
  std::vector<double> anomaly_mean;
  std::vector<double> normal_mean;
};

inline const std::vector<double> kDefaultFprLevels{0.001, 0.005, 0.01, 0.05};

OodReport ood_report(std::span<const Tensor> in_dist_heatmaps, std::span<const Tensor> ood_heatmaps,
                     std::span<const Tensor> ood_masks, std::span<const double> fpr_levels,
                     HeatmapMode mode = HeatmapMode::Variance);
nlohmann::json to_json(const OodReport& report);

struct SegmentationScores {
  std::vector<double> per_class_dice;  // pooled over all labelled pixels
  std::vector<std::size_t> predicted;
  std::vector<std::size_t> truth;
  std::vector<std::size_t> overlap;
};

/// Pixels labelled below zero are ignored.
SegmentationScores segmentation_dice(std::span<const Tensor> predictions, std::span<const Tensor> labels,
                                     std::size_t num_classes);
nlohmann::json to_json(const SegmentationScores& scores);

}  // namespace distgp
