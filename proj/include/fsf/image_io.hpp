#pragma once

// Netpbm (PGM/PPM) reading and writing. Pixel values map to [0, 1].

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "fsf/error.hpp"
#include "fsf/tensor.hpp"

namespace fsf {

namespace detail {

inline void skip_pnm_space(std::istream& in) {
  for (;;) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (ch != EOF && std::isspace(ch)) {
      in.get();
    } else {
      return;
    }
  }
}

inline unsigned read_pnm_uint(std::istream& in, const std::string& path) {
  skip_pnm_space(in);
  unsigned v = 0;
  if (!(in >> v)) throw FormatError(path + ": malformed netpbm header");
  return v;
}

inline std::uint16_t to_sample(double v, unsigned maxval) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint16_t>(std::lround(c * maxval));
}

}  // namespace detail

inline Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '2' && magic[1] != '3' && magic[1] != '5' && magic[1] != '6'))
    throw FormatError(path.string() + ": not a PGM/PPM file");
  const std::string p = path.string();
  const unsigned w = detail::read_pnm_uint(in, p);
  const unsigned h = detail::read_pnm_uint(in, p);
  const unsigned maxval = detail::read_pnm_uint(in, p);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw FormatError(p + ": invalid netpbm dimensions or maxval");
  const bool color = magic[1] == '3' || magic[1] == '6';
  const bool ascii = magic[1] == '2' || magic[1] == '3';
  const std::size_t c_n = color ? 3 : 1;
  const std::size_t count = std::size_t(w) * h * c_n;
  std::vector<unsigned> samples(count);
  if (ascii) {
    for (auto& s : samples) s = detail::read_pnm_uint(in, p);
  } else {
    in.get();  // single whitespace byte after maxval
    const std::size_t bytes = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> raw(count * bytes);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (std::size_t(in.gcount()) != raw.size()) throw FormatError(p + ": truncated pixel data");
    for (std::size_t i = 0; i < count; ++i)
      samples[i] = bytes == 1 ? raw[i] : (unsigned(raw[2 * i]) << 8) | raw[2 * i + 1];
  }
  Image img(c_n, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < c_n; ++c) {
        const unsigned s = samples[(y * w + x) * c_n + c];
        if (s > maxval) throw FormatError(p + ": sample exceeds maxval");
        img(c, y, x) = double(s) / double(maxval);
      }
  return img;
}

// Binary PGM (1 channel) or PPM (3 channels); `bits` is 8 or 16.
inline void write_pnm(const std::filesystem::path& path, const Image& img, int bits = 8) {
  require_rank3(img.shape(), "write_pnm");
  const std::size_t c_n = img.channels();
  if (c_n != 1 && c_n != 3) throw DimensionError("write_pnm supports 1 or 3 channels, got " + std::to_string(c_n));
  if (bits != 8 && bits != 16) throw ParameterError("write_pnm bit depth must be 8 or 16");
  const unsigned maxval = bits == 8 ? 255 : 65535;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << (c_n == 1 ? "P5" : "P6") << '\n' << img.width() << ' ' << img.height() << '\n' << maxval << '\n';
  std::vector<unsigned char> raw;
  raw.reserve(img.size() * (bits / 8));
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < c_n; ++c) {
        const auto s = detail::to_sample(img(c, y, x), maxval);
        if (bits == 16) raw.push_back(static_cast<unsigned char>(s >> 8));
        raw.push_back(static_cast<unsigned char>(s & 0xFF));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// Collapses a color image to one luminance plane (Rec. 601 weights).
inline Image to_grayscale(const Image& img) {
  if (img.channels() == 1) return img;
  if (img.channels() != 3) throw DimensionError("to_grayscale expects 1 or 3 channels");
  Image out(1, img.height(), img.width());
  for (std::size_t i = 0; i < img.plane_size(); ++i)
    out[i] = 0.299 * img.channel(0)[i] + 0.587 * img.channel(1)[i] + 0.114 * img.channel(2)[i];
  return out;
}

}  // namespace fsf
