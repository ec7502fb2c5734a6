#pragma once

// Network checkpoint file:
//   "SDFFORGE" | u32 version | architecture | u64 parameter count | f32[count] | u32 crc32
// architecture:
//   u32 input_kind | u32 n_hidden | u32 widths[n_hidden] | u32 n_skips | u32 skips[n_skips] |
//   u32 activation | f64 softplus_beta | u32 pe_octaves | u32 descriptor_in | u32 output_width |
//   u32 descriptor_width | u32 final_activation
// All integers and floats little-endian; the CRC covers every preceding byte.

#include "sdfforge/diffmlp.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string_view>

namespace sdfforge {

inline constexpr std::string_view kCheckpointMagic = "SDFFORGE";
inline constexpr std::uint32_t kCheckpointVersion = 1;

class ByteWriter {
public:
  template <class U>
  void put(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    unsigned char raw[sizeof(U)];
    std::memcpy(raw, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    bytes_.insert(bytes_.end(), raw, raw + sizeof(U));
  }
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<unsigned char> &bytes() const { return bytes_; }

private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
public:
  explicit ByteReader(const std::vector<unsigned char> &bytes) : bytes_(bytes) {}

  template <class U>
  U get() {
    require(pos_ + sizeof(U) <= bytes_.size(), ErrorKind::Data, "truncated file");
    unsigned char raw[sizeof(U)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, raw, sizeof(U));
    return v;
  }
  std::string get_bytes(std::size_t n) {
    require(pos_ + n <= bytes_.size(), ErrorKind::Data, "truncated file");
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }

private:
  const std::vector<unsigned char> &bytes_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const unsigned char *data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

inline std::vector<unsigned char> read_file_bytes(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string &path, const std::vector<unsigned char> &bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::Io, "short write to " + path);
}

inline void write_architecture(ByteWriter &w, const MlpArchitecture &a) {
  w.put(static_cast<std::uint32_t>(a.input));
  w.put(static_cast<std::uint32_t>(a.layer_widths.size()));
  for (int v : a.layer_widths) w.put(static_cast<std::uint32_t>(v));
  w.put(static_cast<std::uint32_t>(a.skip_layers.size()));
  for (int v : a.skip_layers) w.put(static_cast<std::uint32_t>(v));
  w.put(static_cast<std::uint32_t>(a.activation));
  w.put(a.softplus_beta);
  w.put(static_cast<std::uint32_t>(a.pe_octaves));
  w.put(static_cast<std::uint32_t>(a.descriptor_in));
  w.put(static_cast<std::uint32_t>(a.output_width));
  w.put(static_cast<std::uint32_t>(a.descriptor_width));
  w.put(static_cast<std::uint32_t>(a.final_activation));
}

inline MlpArchitecture read_architecture(ByteReader &r) {
  MlpArchitecture a;
  const auto input = r.get<std::uint32_t>();
  require(input <= 1, ErrorKind::Data, "unknown input kind");
  a.input = static_cast<InputKind>(input);
  const auto n = r.get<std::uint32_t>();
  require(n < 4096, ErrorKind::Data, "implausible layer count");
  a.layer_widths.resize(n);
  for (auto &v : a.layer_widths) v = static_cast<int>(r.get<std::uint32_t>());
  const auto s = r.get<std::uint32_t>();
  require(s <= n, ErrorKind::Data, "implausible skip count");
  a.skip_layers.resize(s);
  for (auto &v : a.skip_layers) v = static_cast<int>(r.get<std::uint32_t>());
  const auto act = r.get<std::uint32_t>();
  require(act <= 1, ErrorKind::Data, "unknown activation id");
  a.activation = static_cast<Activation>(act);
  a.softplus_beta = r.get<double>();
  a.pe_octaves = static_cast<int>(r.get<std::uint32_t>());
  a.descriptor_in = static_cast<int>(r.get<std::uint32_t>());
  a.output_width = static_cast<int>(r.get<std::uint32_t>());
  a.descriptor_width = static_cast<int>(r.get<std::uint32_t>());
  const auto fin = r.get<std::uint32_t>();
  require(fin <= 1, ErrorKind::Data, "unknown final activation id");
  a.final_activation = static_cast<FinalActivation>(fin);
  try {
    a.validate();
  } catch (const Error &e) {
    throw Error(ErrorKind::Data, std::string("checkpoint architecture invalid: ") + e.what());
  }
  return a;
}

template <class T>
std::vector<unsigned char> encode_checkpoint(const Mlp<T> &mlp) {
  ByteWriter w;
  w.put_bytes(kCheckpointMagic);
  w.put(kCheckpointVersion);
  write_architecture(w, mlp.arch);
  w.put(static_cast<std::uint64_t>(mlp.params.size()));
  for (T v : mlp.params.values) w.put(static_cast<float>(v));
  auto bytes = w.bytes();
  const std::uint32_t crc = crc32_of(bytes.data(), bytes.size());
  ByteWriter tail;
  tail.put(crc);
  bytes.insert(bytes.end(), tail.bytes().begin(), tail.bytes().end());
  return bytes;
}

template <class T>
Mlp<T> decode_checkpoint(const std::vector<unsigned char> &bytes) {
  require(bytes.size() >= kCheckpointMagic.size() + 8, ErrorKind::Data, "checkpoint too short");
  ByteReader r(bytes);
  require(r.get_bytes(kCheckpointMagic.size()) == kCheckpointMagic, ErrorKind::Data, "bad checkpoint magic");
  const auto version = r.get<std::uint32_t>();
  require(version == kCheckpointVersion, ErrorKind::Data, "unsupported checkpoint version " + std::to_string(version));
  Mlp<T> mlp = zero_mlp<T>(read_architecture(r));
  const auto count = r.get<std::uint64_t>();
  require(count == mlp.params.size(), ErrorKind::Data, "parameter count does not match architecture");
  for (auto &v : mlp.params.values) v = static_cast<T>(r.get<float>());
  const std::size_t body = r.position();
  const auto crc = r.get<std::uint32_t>();
  require(r.position() == bytes.size(), ErrorKind::Data, "trailing bytes after checkpoint");
  require(crc == crc32_of(bytes.data(), body), ErrorKind::Data, "checkpoint CRC mismatch");
  require(mlp.params.all_finite(), ErrorKind::Numeric, "checkpoint holds non-finite parameters");
  return mlp;
}

template <class T>
void save_checkpoint(const std::string &path, const Mlp<T> &mlp) {
  write_file_bytes(path, encode_checkpoint(mlp));
}

template <class T>
Mlp<T> load_checkpoint(const std::string &path) {
  return decode_checkpoint<T>(read_file_bytes(path));
}

} // namespace sdfforge
