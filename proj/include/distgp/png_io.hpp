#pragma once

#include <filesystem>

#include "distgp/tensor.hpp"

namespace distgp {

/// 8-bit grayscale PNG of an [H,W] map, linearly scaled so [lo, hi] spans 0..255.
/// lo == hi renders a black image.
void write_png_gray(const std::filesystem::path& path, const Tensor& map, double lo, double hi);

/// write_png_gray over the map's own range.
void write_png_autoscale(const std::filesystem::path& path, const Tensor& map);

}  // namespace distgp
