#include "distgp/tiling.hpp"

#include <string>

#include "distgp/error.hpp"

namespace distgp {

std::pair<std::size_t, std::size_t> TileGrid::origin(std::size_t t) const {
  return {(t / cols) * tiler.output_tile, (t % cols) * tiler.output_tile};
}

TileGrid plan_tiles(std::size_t height, std::size_t width, const Tiler& tiler) {
  if (tiler.output_tile < 1 || tiler.input_tile < tiler.output_tile ||
      (tiler.input_tile - tiler.output_tile) % 2 != 0) {
    throw Error(ErrorKind::InvalidArgument, "tile sizes " + std::to_string(tiler.input_tile) + " -> " +
                                                std::to_string(tiler.output_tile) + " need an even, non-negative margin");
  }
  if (height < tiler.output_tile || width < tiler.output_tile) {
    throw Error(ErrorKind::ScanTooSmall, "scan " + std::to_string(height) + "x" + std::to_string(width) +
                                             " is smaller than the output tile " + std::to_string(tiler.output_tile));
  }
  const std::size_t t = tiler.output_tile;
  return {tiler, height, width, (height + t - 1) / t, (width + t - 1) / t};
}

std::size_t reflect_index(long long i, std::size_t n) {
  if (n == 1) return 0;
  const long long period = 2 * (static_cast<long long>(n) - 1);
  long long m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<long long>(n)) m = period - m;
  return static_cast<std::size_t>(m);
}

Tensor extract_tile(const Tensor& image, const TileGrid& grid, std::size_t t) {
  if (image.rank() != 3 || image.dim(0) != grid.height || image.dim(1) != grid.width) {
    throw Error(ErrorKind::ShapeMismatch, "image " + shape_string(image.shape()) + " does not match the tile grid");
  }
  const std::size_t c = image.dim(2), n = grid.tiler.input_tile;
  const auto [oy, ox] = grid.origin(t);
  const long long y0 = static_cast<long long>(oy) - static_cast<long long>(grid.tiler.margin());
  const long long x0 = static_cast<long long>(ox) - static_cast<long long>(grid.tiler.margin());
  Tensor out({n, n, c});
  for (std::size_t y = 0; y < n; ++y) {
    const std::size_t sy = reflect_index(y0 + static_cast<long long>(y), grid.height);
    for (std::size_t x = 0; x < n; ++x) {
      const std::size_t sx = reflect_index(x0 + static_cast<long long>(x), grid.width);
      for (std::size_t ch = 0; ch < c; ++ch) out(y, x, ch) = image(sy, sx, ch);
    }
  }
  return out;
}

Tensor extract_label_tile(const Tensor& labels, const TileGrid& grid, std::size_t t, double fill) {
  if (labels.rank() != 2 || labels.dim(0) != grid.height || labels.dim(1) != grid.width) {
    throw Error(ErrorKind::ShapeMismatch, "labels " + shape_string(labels.shape()) + " do not match the tile grid");
  }
  const std::size_t n = grid.tiler.output_tile;
  const auto [oy, ox] = grid.origin(t);
  Tensor out({n, n}, fill);
  for (std::size_t y = 0; y < n && oy + y < grid.height; ++y) {
    for (std::size_t x = 0; x < n && ox + x < grid.width; ++x) out(y, x) = labels(oy + y, ox + x);
  }
  return out;
}

Tensor stitch(std::span<const Tensor> outputs, const TileGrid& grid) {
  if (outputs.size() != grid.count()) {
    throw Error(ErrorKind::ShapeMismatch, std::to_string(outputs.size()) + " tiles for a grid of " +
                                              std::to_string(grid.count()));
  }
  const std::size_t n = grid.tiler.output_tile;
  Tensor out({grid.height, grid.width});
  for (std::size_t t = 0; t < outputs.size(); ++t) {
    if (outputs[t].size() != n * n) {
      throw Error(ErrorKind::ShapeMismatch, "tile output " + shape_string(outputs[t].shape()));
    }
    const auto [oy, ox] = grid.origin(t);
    for (std::size_t y = 0; y < n && oy + y < grid.height; ++y) {
      for (std::size_t x = 0; x < n && ox + x < grid.width; ++x) out(oy + y, ox + x) = outputs[t][y * n + x];
    }
  }
  return out;
}

Tensor coverage(const TileGrid& grid) {
  const std::size_t n = grid.tiler.output_tile;
  Tensor out({grid.height, grid.width});
  for (std::size_t t = 0; t < grid.count(); ++t) {
    const auto [oy, ox] = grid.origin(t);
    for (std::size_t y = 0; y < n && oy + y < grid.height; ++y) {
      for (std::size_t x = 0; x < n && ox + x < grid.width; ++x) out(oy + y, ox + x) += 1.0;
    }
  }
  return out;
}

}  // namespace distgp
