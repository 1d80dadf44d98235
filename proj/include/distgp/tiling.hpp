#pragma once

#include <cstddef>
#include <span>
#include <utility>

#include "distgp/tensor.hpp"

namespace distgp {

struct Tiler {
  std::size_t input_tile = 32;
  std::size_t output_tile = 16;
  std::size_t margin() const { return (input_tile - output_tile) / 2; }
};

/// Partition of an H x W scan into ceil(H / T_out) x ceil(W / T_out) output
/// tiles. Inputs reach `margin` pixels beyond each output tile; pixels outside
/// the scan are taken by mirror reflection.
struct TileGrid {
  Tiler tiler;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t count() const { return rows * cols; }
  /// Top-left corner of tile t's output region in scan coordinates.
  std::pair<std::size_t, std::size_t> origin(std::size_t t) const;
};

/// Throws ScanTooSmall if either extent is below the output tile, and
/// InvalidArgument if the tile sizes are inconsistent.
TileGrid plan_tiles(std::size_t height, std::size_t width, const Tiler& tiler);

/// Mirror index into [0, n) without repeating the edge (..., 2, 1, 0, 1, 2, ...).
std::size_t reflect_index(long long i, std::size_t n);

/// Input window [T_in, T_in, C] of tile t from an [H, W, C] scan.
Tensor extract_tile(const Tensor& image, const TileGrid& grid, std::size_t t);
/// Output-region labels [T_out, T_out]; positions past the scan edge get `fill`.
Tensor extract_label_tile(const Tensor& labels, const TileGrid& grid, std::size_t t, double fill);
/// Writes each tile's [T_out, T_out] (or [T_out, T_out, 1]) output into an
/// [H, W] map, dropping positions past the scan edge.
Tensor stitch(std::span<const Tensor> outputs, const TileGrid& grid);
/// Number of times each scan pixel is written by stitch.
Tensor coverage(const TileGrid& grid);

}  // namespace distgp
