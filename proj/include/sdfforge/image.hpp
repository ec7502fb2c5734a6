#pragma once

// RGB images in [0,1] and 8-bit masks. Files: binary PPM (P6, maxval 255) and PGM (P5).

#include "sdfforge/core.hpp"

#include <fstream>
#include <sstream>

namespace sdfforge {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // row-major, 3 channels interleaved

  Image() = default;
  Image(int w, int h, double fill = 0.0) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::size_t index(int x, int y) const { return (static_cast<std::size_t>(y) * width + x) * 3; }
  Vec3 at(int x, int y) const {
    const auto i = index(x, y);
    return {data[i], data[i + 1], data[i + 2]};
  }
  void set(int x, int y, const Vec3 &c) {
    const auto i = index(x, y);
    for (int k = 0; k < 3; ++k) data[i + k] = c[k];
  }
};

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}
  bool valid(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { data[static_cast<std::size_t>(y) * width + x] = v ? 255 : 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto b) { return b != 0; })); }
};

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace detail {

inline void write_pnm(const std::string &path, const char *magic, int w, int h, const std::vector<std::uint8_t> &px) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
  out << magic << '\n' << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char *>(px.data()), static_cast<std::streamsize>(px.size()));
  require(static_cast<bool>(out), ErrorKind::Io, "short write to " + path);
}

inline std::vector<std::uint8_t> read_pnm(const std::string &path, const std::string &magic, int channels, int &w,
                                          int &h) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
  auto token = [&]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  require(token() == magic, ErrorKind::Data, path + ": expected " + magic);
  int maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception &) {
    throw Error(ErrorKind::Data, path + ": bad header");
  }
  require(w > 0 && h > 0 && maxval == 255, ErrorKind::Data, path + ": unsupported size or maxval");
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char *>(px.data()), static_cast<std::streamsize>(px.size()));
  require(in.gcount() == static_cast<std::streamsize>(px.size()), ErrorKind::Data, path + ": truncated pixel data");
  return px;
}

} // namespace detail

inline void write_ppm(const std::string &path, const Image &img) {
  std::vector<std::uint8_t> px(img.data.size());
  std::transform(img.data.begin(), img.data.end(), px.begin(), to_byte);
  detail::write_pnm(path, "P6", img.width, img.height, px);
}

inline Image read_ppm(const std::string &path) {
  Image img;
  auto px = detail::read_pnm(path, "P6", 3, img.width, img.height);
  img.data.resize(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) img.data[i] = px[i] / 255.0;
  return img;
}

inline void write_pgm(const std::string &path, const Mask &m) { detail::write_pnm(path, "P5", m.width, m.height, m.data); }

inline Mask read_pgm(const std::string &path) {
  Mask m;
  m.data = detail::read_pnm(path, "P5", 1, m.width, m.height);
  return m;
}

/// Rounds every channel to the nearest 8-bit level, as a PPM round trip would.
inline Image quantize(const Image &img) {
  Image q = img;
  for (auto &v : q.data) v = to_byte(v) / 255.0;
  return q;
}

} // namespace sdfforge
