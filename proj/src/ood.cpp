#include "distgp/ood.hpp"

#include <algorithm>
#include <cmath>

#include "distgp/error.hpp"
#include "distgp/parallel.hpp"

namespace distgp {

HeatmapMode heatmap_mode_from_string(const std::string& s) {
  if (s == "var") return HeatmapMode::Variance;
  if (s == "entropy") return HeatmapMode::Entropy;
  throw Error(ErrorKind::Config, "heatmap mode must be 'var' or 'entropy', got '" + s + "'");
}

const char* to_string(HeatmapMode mode) { return mode == HeatmapMode::Variance ? "var" : "entropy"; }

Tiler model_tiler(const SegNet& net) { return {net.config().input_tile, net.config().output_tile}; }

ScanPrediction predict_scan(const SegNet& net, const Tensor& image, std::size_t threads) {
  if (image.rank() != 3) throw Error(ErrorKind::ShapeMismatch, "scan image must be [H,W,C]");
  const TileGrid grid = plan_tiles(image.dim(0), image.dim(1), model_tiler(net));
  const std::size_t n = grid.tiler.output_tile, k = net.config().num_classes;
  std::vector<Tensor> classes(grid.count()), hmean(grid.count()), entropy(grid.count());
  parallel_for(grid.count(), threads, [&](std::size_t t) {
    const SegForward f = net.forward(extract_tile(image, grid, t));
    Tensor cls({n, n}), hm({n, n}), en({n, n});
    for (std::size_t p = 0; p < n * n; ++p) {
      std::size_t best = 0;
      double h = 0.0, e = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        if (f.logits.mean[p * k + c] > f.logits.mean[p * k + best]) best = c;
        h += f.h_var[p * k + c];
        e += std::log(std::max(f.h_var[p * k + c], kEntropyVarianceFloor));
      }
      cls[p] = static_cast<double>(best);
      hm[p] = h / static_cast<double>(k);
      en[p] = 0.5 * e;
    }
    classes[t] = std::move(cls);
    hmean[t] = std::move(hm);
    entropy[t] = std::move(en);
  });
  return {stitch(classes, grid), stitch(hmean, grid), stitch(entropy, grid)};
}

Tensor heatmap(const SegNet& net, const Tensor& image, HeatmapMode mode, std::size_t threads) {
  ScanPrediction p = predict_scan(net, image, threads);
  return mode == HeatmapMode::Variance ? std::move(p.h_var_mean) : std::move(p.entropy);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::EmptyInput, "quantile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorKind::InvalidArgument, "quantile level must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double calibrate_threshold(std::span<const Tensor> in_dist_heatmaps, double fpr) {
  if (!(fpr > 0.0 && fpr < 1.0)) throw Error(ErrorKind::InvalidArgument, "fpr must be in (0, 1)");
  std::vector<double> pooled;
  for (const Tensor& h : in_dist_heatmaps) pooled.insert(pooled.end(), h.data().begin(), h.data().end());
  if (pooled.empty()) throw Error(ErrorKind::EmptyInput, "no in-distribution heatmap values to calibrate on");
  return quantile(std::move(pooled), 1.0 - fpr);
}

Tensor ood_mask(const Tensor& heatmap, double tau) {
  Tensor out(heatmap.shape());
  for (std::size_t i = 0; i < heatmap.size(); ++i) out[i] = heatmap[i] > tau ? 1.0 : 0.0;
  return out;
}

namespace {

struct Overlap {
  std::size_t a = 0, b = 0, both = 0;
};

Overlap count_overlap(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::ShapeMismatch, "dice of " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  Overlap o;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0.0, y = b[i] != 0.0;
    o.a += x;
    o.b += y;
    o.both += x && y;
  }
  return o;
}

double dice_from_counts(std::size_t a, std::size_t b, std::size_t both) {
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

}  // namespace

double dice(const Tensor& a, const Tensor& b) {
  const Overlap o = count_overlap(a, b);
  return dice_from_counts(o.a, o.b, o.both);
}

OodReport ood_report(std::span<const Tensor> in_dist_heatmaps, std::span<const Tensor> ood_heatmaps,
                     std::span<const Tensor> ood_masks, std::span<const double> fpr_levels, HeatmapMode mode) {
  if (ood_heatmaps.empty()) throw Error(ErrorKind::EmptyInput, "empty OOD split");
  if (ood_heatmaps.size() != ood_masks.size()) {
    throw Error(ErrorKind::ShapeMismatch, "OOD heatmaps and masks differ in count");
  }
  OodReport report;
  report.mode = to_string(mode);
  std::vector<double> pooled;
  for (const Tensor& h : in_dist_heatmaps) pooled.insert(pooled.end(), h.data().begin(), h.data().end());
  if (pooled.empty()) throw Error(ErrorKind::EmptyInput, "no in-distribution heatmap values to calibrate on");

  for (double fpr : fpr_levels) {
    OodLevel level;
    level.fpr = fpr;
    level.tau = calibrate_threshold(in_dist_heatmaps, fpr);
    std::size_t self_flagged = 0;
    for (double v : pooled) self_flagged += v > level.tau;
    level.calibration_flagged_fraction = static_cast<double>(self_flagged) / static_cast<double>(pooled.size());
    for (std::size_t s = 0; s < ood_heatmaps.size(); ++s) {
      const Overlap o = count_overlap(ood_mask(ood_heatmaps[s], level.tau), ood_masks[s]);
      level.flagged += o.a;
      level.ground_truth += o.b;
      level.overlap += o.both;
    }
    level.dice = dice_from_counts(level.flagged, level.ground_truth, level.overlap);
    report.levels.push_back(level);
  }
  for (std::size_t s = 0; s < ood_heatmaps.size(); ++s) {
    double in = 0.0, out = 0.0;
    std::size_t n_in = 0, n_out = 0;
    for (std::size_t i = 0; i < ood_heatmaps[s].size(); ++i) {
      if (ood_masks[s][i] != 0.0) {
        in += ood_heatmaps[s][i];
        ++n_in;
      } else {
        out += ood_heatmaps[s][i];
        ++n_out;
      }
    }
    report.anomaly_mean.push_back(n_in ? in / static_cast<double>(n_in) : 0.0);
    report.normal_mean.push_back(n_out ? out / static_cast<double>(n_out) : 0.0);
  }
  return report;
}

nlohmann::json to_json(const OodReport& report) {
  nlohmann::json levels = nlohmann::json::array();
  for (const OodLevel& l : report.levels) {
    levels.push_back({{"fpr", l.fpr},
                      {"tau", l.tau},
                      {"dice", l.dice},
                      {"counts", {{"flagged", l.flagged}, {"ground_truth", l.ground_truth}, {"overlap", l.overlap}}},
                      {"calibration_flagged_fraction", l.calibration_flagged_fraction}});
  }
  std::size_t anomaly_higher = 0;
  for (std::size_t s = 0; s < report.anomaly_mean.size(); ++s) {
    anomaly_higher += report.anomaly_mean[s] > report.normal_mean[s];
  }
  return {{"mode", report.mode},
          {"levels", levels},
          {"scans", report.anomaly_mean.size()},
          {"scans_with_anomaly_mean_above_normal", anomaly_higher},
          {"anomaly_mean", report.anomaly_mean},
          {"normal_mean", report.normal_mean}};
}

SegmentationScores segmentation_dice(std::span<const Tensor> predictions, std::span<const Tensor> labels,
                                     std::size_t num_classes) {
  if (predictions.size() != labels.size()) {
    throw Error(ErrorKind::ShapeMismatch, "predictions and labels differ in count");
  }
  SegmentationScores s;
  s.predicted.assign(num_classes, 0);
  s.truth.assign(num_classes, 0);
  s.overlap.assign(num_classes, 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].size() != labels[i].size()) {
      throw Error(ErrorKind::ShapeMismatch, "prediction " + shape_string(predictions[i].shape()) + " vs labels " +
                                                shape_string(labels[i].shape()));
    }
    for (std::size_t p = 0; p < labels[i].size(); ++p) {
      if (labels[i][p] < 0.0) continue;
      const auto t = static_cast<std::size_t>(labels[i][p]);
      const auto q = static_cast<std::size_t>(predictions[i][p]);
      if (t >= num_classes || q >= num_classes) throw Error(ErrorKind::InvalidArgument, "class index out of range");
      ++s.truth[t];
      ++s.predicted[q];
      if (t == q) ++s.overlap[t];
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    s.per_class_dice.push_back(dice_from_counts(s.predicted[c], s.truth[c], s.overlap[c]));
  }
  return s;
}

nlohmann::json to_json(const SegmentationScores& s) {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < s.per_class_dice.size(); ++c) {
    classes.push_back(
        {{"class", c}, {"dice", s.per_class_dice[c]}, {"predicted", s.predicted[c]}, {"truth", s.truth[c]},
         {"overlap", s.overlap[c]}});
  }
  double mn = 1.0;
  for (double d : s.per_class_dice) mn = std::min(mn, d);
  return {{"per_class", classes}, {"min_dice", mn}};
}

}  // namespace distgp
