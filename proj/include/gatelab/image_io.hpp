#pragma once

#include <zlib.h>

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gatelab/env.hpp"
#include "gatelab/errors.hpp"

namespace gatelab {

inline std::vector<std::uint8_t> encode_ppm(const Frame& f) {
  const std::string header = "P6\n" + std::to_string(f.width) + " " + std::to_string(f.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), f.rgb.begin(), f.rgb.end());
  return out;
}

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(static_cast<std::uint8_t>(x >> 24));
  v.push_back(static_cast<std::uint8_t>(x >> 16));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
  v.push_back(static_cast<std::uint8_t>(x));
}

inline void png_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const auto crc = ::crc32(0L, out.data() + type_at, static_cast<uInt>(4 + data.size()));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

/// Lossless 8-bit RGB PNG (filter type 0 on every row).
inline std::vector<std::uint8_t> encode_png(const Frame& f) {
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(f.height * (1 + f.width * 3)));
  for (int y = 0; y < f.height; ++y) {
    raw.push_back(0);
    const auto* row = f.px(0, y);
    raw.insert(raw.end(), row, row + f.width * 3);
  }
  uLongf zsize = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(zsize);
  if (compress2(z.data(), &zsize, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw NumericError("zlib compression failed");
  z.resize(zsize);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(f.width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(f.height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", z);
  detail::png_chunk(out, "IEND", {});
  return out;
}

/// Inverse of encode_png for the subset it produces; used to verify round trips.
inline Frame decode_png(const std::vector<std::uint8_t>& bytes) {
  auto be32 = [&](std::size_t at) {
    return (std::uint32_t(bytes.at(at)) << 24) | (std::uint32_t(bytes.at(at + 1)) << 16) |
           (std::uint32_t(bytes.at(at + 2)) << 8) | std::uint32_t(bytes.at(at + 3));
  };
  if (bytes.size() < 8 || bytes[1] != 'P' || bytes[2] != 'N' || bytes[3] != 'G')
    throw ConfigError("not a PNG stream");
  std::size_t pos = 8;
  int w = 0, h = 0;
  std::vector<std::uint8_t> idat;
  while (pos + 8 <= bytes.size()) {
    const auto len = be32(pos);
    const std::string type(bytes.begin() + static_cast<std::ptrdiff_t>(pos + 4),
                           bytes.begin() + static_cast<std::ptrdiff_t>(pos + 8));
    const std::size_t data_at = pos + 8;
    if (type == "IHDR") {
      w = static_cast<int>(be32(data_at));
      h = static_cast<int>(be32(data_at + 4));
      if (bytes.at(data_at + 8) != 8 || bytes.at(data_at + 9) != 2) throw ConfigError("unsupported PNG format");
    } else if (type == "IDAT") {
      idat.insert(idat.end(), bytes.begin() + static_cast<std::ptrdiff_t>(data_at),
                  bytes.begin() + static_cast<std::ptrdiff_t>(data_at + len));
    }
    pos = data_at + len + 4;
  }
  Frame f(w, h);
  uLongf rawsize = static_cast<uLongf>(h * (1 + w * 3));
  std::vector<std::uint8_t> raw(rawsize);
  if (uncompress(raw.data(), &rawsize, idat.data(), static_cast<uLong>(idat.size())) != Z_OK)
    throw ConfigError("corrupt PNG data");
  for (int y = 0; y < h; ++y) {
    if (raw[static_cast<std::size_t>(y * (1 + w * 3))] != 0) throw ConfigError("unsupported PNG filter");
    std::copy_n(raw.begin() + y * (1 + w * 3) + 1, w * 3, f.px(0, y));
  }
  return f;
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace gatelab
