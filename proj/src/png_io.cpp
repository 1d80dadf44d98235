#include "distgp/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include <png.h>

#include "distgp/error.hpp"

namespace distgp {

void write_png_gray(const std::filesystem::path& path, const Tensor& map, double lo, double hi) {
  if (map.rank() != 2) throw Error(ErrorKind::ShapeMismatch, "png map must be [H,W], got " + shape_string(map.shape()));
  const std::size_t h = map.dim(0), w = map.dim(1);
  std::vector<png_byte> pixels(h * w);
  const double span = hi - lo;
  for (std::size_t i = 0; i < h * w; ++i) {
    const double t = span > 0.0 ? (map[i] - lo) / span : 0.0;
    pixels[i] = static_cast<png_byte>(std::lround(255.0 * std::clamp(t, 0.0, 1.0)));
  }
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!file) throw Error(ErrorKind::Io, "cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::Io, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::Io, "libpng failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < h; ++r) png_write_row(png, pixels.data() + r * w);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_png_autoscale(const std::filesystem::path& path, const Tensor& map) {
  if (map.size() == 0) throw Error(ErrorKind::EmptyInput, "empty map");
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  write_png_gray(path, map, *lo, *hi);
}

}  // namespace distgp
