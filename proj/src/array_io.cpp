#include "distgp/array_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "distgp/error.hpp"

namespace distgp {

namespace {

static_assert(std::endian::native == std::endian::little, "array files assume a little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_array(const Tensor& t, DType dtype) {
  nlohmann::json header;
  header["dtype"] = dtype == DType::F64 ? "f64" : "f32";
  header["shape"] = t.shape();
  const std::string h = header.dump();
  std::string out(kArrayMagic, sizeof(kArrayMagic));
  put_u64(out, h.size());
  out += h;
  if (dtype == DType::F64) {
    out.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
  } else {
    for (double v : t.data()) {
      const float f = static_cast<float>(v);
      out.append(reinterpret_cast<const char*>(&f), sizeof(float));
    }
  }
  return out;
}

Tensor decode_array(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kArrayMagic, 8) != 0) {
    throw Error(ErrorKind::Io, "not a portable array file (bad magic)");
  }
  const std::uint64_t hlen = get_u64(bytes, 8);
  if (hlen > bytes.size() - 16) throw Error(ErrorKind::Io, "truncated array header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, std::string("bad array header: ") + e.what());
  }
  if (!header.contains("dtype") || !header.contains("shape")) {
    throw Error(ErrorKind::Io, "array header lacks dtype/shape");
  }
  const std::string dtype = header["dtype"].get<std::string>();
  const auto shape = header["shape"].get<Tensor::Shape>();
  const std::size_t n = shape_size(shape);
  const std::size_t width = dtype == "f64" ? 8 : dtype == "f32" ? 4 : 0;
  if (width == 0) throw Error(ErrorKind::Io, "unsupported dtype " + dtype);
  const std::size_t offset = 16 + hlen;
  if (bytes.size() != offset + n * width) {
    throw Error(ErrorKind::Io, "payload size does not match shape " + shape_string(shape));
  }
  std::vector<double> data(n);
  if (width == 8) {
    std::memcpy(data.data(), bytes.data() + offset, n * 8);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, bytes.data() + offset + 4 * i, 4);
      data[i] = f;
    }
  }
  return Tensor(shape, std::move(data));
}

void write_array(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  write_file_atomic(path, encode_array(t, dtype));
}

Tensor read_array(const std::filesystem::path& path) { return decode_array(read_file(path)); }

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorKind::Io, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::Io, "rename to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace distgp
