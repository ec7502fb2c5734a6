#pragma once

// PLY point clouds: ASCII or binary little-endian, vertex properties x y z (float or double) and
// optional nx ny nz. Other vertex properties and other elements are skipped with a warning.

#include "sdfforge/checkpoint.hpp"
#include "sdfforge/kvconfig.hpp"
#include "sdfforge/pointcloud.hpp"

#include <sstream>

namespace sdfforge {

struct PlyCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;  // empty when the file has none
  std::vector<std::string> warnings;
};

namespace detail {

struct PlyProperty {
  std::string name;
  std::string type;        // scalar type, or item type for lists
  std::string count_type;  // non-empty for list properties
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

inline int ply_type_size(const std::string &t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  throw Error(ErrorKind::Data, "PLY: unknown property type '" + t + "'");
}

inline double ply_read_binary(ByteReader &r, const std::string &t) {
  if (t == "char" || t == "int8") return r.get<std::int8_t>();
  if (t == "uchar" || t == "uint8") return r.get<std::uint8_t>();
  if (t == "short" || t == "int16") return r.get<std::int16_t>();
  if (t == "ushort" || t == "uint16") return r.get<std::uint16_t>();
  if (t == "int" || t == "int32") return r.get<std::int32_t>();
  if (t == "uint" || t == "uint32") return r.get<std::uint32_t>();
  if (t == "float" || t == "float32") return r.get<float>();
  if (t == "double" || t == "float64") return r.get<double>();
  throw Error(ErrorKind::Data, "PLY: unknown property type '" + t + "'");
}

} // namespace detail

inline PlyCloud parse_ply(const std::vector<unsigned char> &bytes, const std::string &origin = "PLY") {
  using detail::PlyElement;
  std::size_t pos = 0;
  auto next_line = [&]() {
    require(pos < bytes.size(), ErrorKind::Data, origin + ": truncated header");
    std::string line;
    while (pos < bytes.size() && bytes[pos] != '\n') line.push_back(static_cast<char>(bytes[pos++]));
    ++pos;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };
  require(next_line() == "ply", ErrorKind::Data, origin + ": missing 'ply' magic");
  bool binary = false;
  std::vector<PlyElement> elems;
  for (;;) {
    std::istringstream ls(next_line());
    std::string kw;
    ls >> kw;
    if (kw == "end_header") break;
    if (kw == "comment" || kw == "obj_info" || kw.empty()) continue;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") binary = true;
      else require(fmt == "ascii", ErrorKind::Data, origin + ": unsupported format '" + fmt + "'");
    } else if (kw == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      require(static_cast<bool>(ls), ErrorKind::Data, origin + ": bad element line");
      elems.push_back(e);
    } else if (kw == "property") {
      require(!elems.empty(), ErrorKind::Data, origin + ": property before element");
      detail::PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") ls >> p.count_type >> p.type >> p.name;
      else {
        p.type = t;
        ls >> p.name;
      }
      require(static_cast<bool>(ls), ErrorKind::Data, origin + ": bad property line");
      detail::ply_type_size(p.type);
      elems.back().props.push_back(p);
    } else {
      throw Error(ErrorKind::Data, origin + ": unexpected header keyword '" + kw + "'");
    }
  }
  PlyCloud out;
  const auto vit = std::find_if(elems.begin(), elems.end(), [](const PlyElement &e) { return e.name == "vertex"; });
  require(vit != elems.end(), ErrorKind::Data, origin + ": no vertex element");
  auto slot = [&](const std::string &name) {
    for (std::size_t i = 0; i < vit->props.size(); ++i)
      if (vit->props[i].name == name && vit->props[i].count_type.empty()) return static_cast<int>(i);
    return -1;
  };
  const std::array<int, 3> xyz{slot("x"), slot("y"), slot("z")};
  const std::array<int, 3> nxyz{slot("nx"), slot("ny"), slot("nz")};
  require(xyz[0] >= 0 && xyz[1] >= 0 && xyz[2] >= 0, ErrorKind::Data, origin + ": vertex needs x, y, z");
  const int nnormal = (nxyz[0] >= 0) + (nxyz[1] >= 0) + (nxyz[2] >= 0);
  require(nnormal == 0 || nnormal == 3, ErrorKind::Data, origin + ": partial normal properties");
  for (const auto &p : vit->props)
    if (p.name != "x" && p.name != "y" && p.name != "z" && p.name != "nx" && p.name != "ny" && p.name != "nz")
      out.warnings.push_back("skipping vertex property '" + p.name + "'");
  for (const auto &e : elems)
    if (e.name != "vertex") out.warnings.push_back("skipping element '" + e.name + "'");

  std::vector<unsigned char> body(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  ByteReader br(body);
  std::istringstream text(binary ? std::string() : std::string(body.begin(), body.end()));
  auto read_value = [&](const std::string &type) -> double {
    if (binary) return detail::ply_read_binary(br, type);
    std::string tok;
    require(static_cast<bool>(text >> tok), ErrorKind::Data, origin + ": truncated ASCII body");
    try {
      return std::stod(tok);
    } catch (const std::exception &) {
      throw Error(ErrorKind::Data, origin + ": bad number '" + tok + "'");
    }
  };
  for (const auto &e : elems) {
    const bool is_vertex = &e == &*vit;
    std::vector<double> vals(e.props.size());
    for (std::size_t i = 0; i < e.count; ++i) {
      for (std::size_t p = 0; p < e.props.size(); ++p) {
        const auto &prop = e.props[p];
        if (prop.count_type.empty()) {
          vals[p] = read_value(prop.type);
        } else {
          const double n = read_value(prop.count_type);
          require(n >= 0 && n < 1e9, ErrorKind::Data, origin + ": bad list length");
          for (long long k = 0; k < static_cast<long long>(n); ++k) read_value(prop.type);
        }
      }
      if (!is_vertex) continue;
      const Vec3 x(vals[static_cast<std::size_t>(xyz[0])], vals[static_cast<std::size_t>(xyz[1])],
                   vals[static_cast<std::size_t>(xyz[2])]);
      require(x.allFinite(), ErrorKind::Data, origin + ": non-finite vertex position");
      out.positions.push_back(x);
      if (nnormal == 3)
        out.normals.emplace_back(vals[static_cast<std::size_t>(nxyz[0])], vals[static_cast<std::size_t>(nxyz[1])],
                                 vals[static_cast<std::size_t>(nxyz[2])]);
    }
  }
  return out;
}

inline PlyCloud read_ply(const std::string &path) { return parse_ply(read_file_bytes(path), path); }

/// Writes positions (and normals when given) as double-precision vertex properties.
inline std::vector<unsigned char> encode_ply(const std::vector<Vec3> &pts, const std::vector<Vec3> &normals,
                                             bool binary) {
  const bool with_n = !normals.empty();
  require(!with_n || normals.size() == pts.size(), ErrorKind::Precondition, "one normal per point required");
  std::ostringstream h;
  h << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n";
  h << "element vertex " << pts.size() << "\n";
  for (const char *p : {"x", "y", "z"}) h << "property double " << p << "\n";
  if (with_n)
    for (const char *p : {"nx", "ny", "nz"}) h << "property double " << p << "\n";
  h << "end_header\n";
  ByteWriter w;
  w.put_bytes(h.str());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::array<double, 6> v{pts[i][0], pts[i][1], pts[i][2], 0, 0, 0};
    if (with_n)
      for (int k = 0; k < 3; ++k) v[3 + k] = normals[i][k];
    const int n = with_n ? 6 : 3;
    if (binary) {
      for (int k = 0; k < n; ++k) w.put(v[k]);
    } else {
      std::string line;
      for (int k = 0; k < n; ++k) line += (k ? " " : "") + format_double(v[k]);
      w.put_bytes(line + "\n");
    }
  }
  return w.bytes();
}

inline void write_ply(const std::string &path, const std::vector<Vec3> &pts, const std::vector<Vec3> &normals = {},
                      bool binary = true) {
  write_file_bytes(path, encode_ply(pts, normals, binary));
}

} // namespace sdfforge
