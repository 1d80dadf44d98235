#pragma once

#include <filesystem>
#include <string>

#include "distgp/tensor.hpp"

namespace distgp {

enum class DType { F32, F64 };

/// Portable array file:
///   bytes 0..7   magic "DGPTENSR"
///   bytes 8..15  header length n, unsigned 64-bit little-endian
///   next n bytes UTF-8 JSON {"dtype":"f32"|"f64","shape":[...]}
///   then         prod(shape) little-endian scalars, row-major
inline constexpr char kArrayMagic[8] = {'D', 'G', 'P', 'T', 'E', 'N', 'S', 'R'};

std::string encode_array(const Tensor& t, DType dtype = DType::F64);
Tensor decode_array(const std::string& bytes);

void write_array(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::F64);
Tensor read_array(const std::filesystem::path& path);

/// Writes `contents` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace distgp
