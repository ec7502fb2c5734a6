#pragma once

// Dense lattice evaluation and Marching Cubes extraction of a level set. Values below the iso
// level are inside; triangles wind counter-clockwise seen from outside.

#include "sdfforge/checkpoint.hpp"
#include "sdfforge/field.hpp"

#include <map>
#include <sstream>

namespace sdfforge {

using GridResolution = std::array<int, 3>;

struct ScalarGrid {
  GridResolution resolution{2, 2, 2};
  Box bounds;
  std::vector<double> values;  // x fastest, then y, then z

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * resolution[1] + j) * resolution[0] + i;
  }
  double at(int i, int j, int k) const { return values[index(i, j, k)]; }
  Vec3 point(int i, int j, int k) const;

  void validate() const {
    for (int a = 0; a < 3; ++a) require(resolution[a] >= 2, ErrorKind::Precondition, "grid resolution must be >= 2");
    require(!bounds.degenerate(), ErrorKind::Precondition, "degenerate grid bounds");
    require(values.size() == static_cast<std::size_t>(resolution[0]) * resolution[1] * resolution[2],
            ErrorKind::Precondition, "grid value count does not match its resolution");
    for (std::size_t n = 0; n < values.size(); ++n)
      require(std::isfinite(values[n]), ErrorKind::Numeric, "non-finite grid value");
  }
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec3> normals;  // per vertex, optional

  bool empty() const { return triangles.empty(); }

  void validate() const {
    const int nv = static_cast<int>(vertices.size());
    for (const auto &t : triangles) {
      for (int v : t) require(v >= 0 && v < nv, ErrorKind::Data, "triangle index out of range");
      require(t[0] != t[1] && t[1] != t[2] && t[0] != t[2], ErrorKind::Data, "triangle with repeated vertex");
    }
    require(normals.empty() || normals.size() == vertices.size(), ErrorKind::Data, "normal count mismatch");
    for (const auto &n : normals) require(std::abs(n.norm() - 1.0) < 1e-6, ErrorKind::Data, "vertex normal not unit length");
  }
};

namespace detail {

inline double lattice_coord(const Box &b, int axis, int i, int n) {
  return b.lo[axis] + b.extent()[axis] * (static_cast<double>(i) / (n - 1));
}

} // namespace detail

inline Vec3 ScalarGrid::point(int i, int j, int k) const {
  return {detail::lattice_coord(bounds, 0, i, resolution[0]), detail::lattice_coord(bounds, 1, j, resolution[1]),
          detail::lattice_coord(bounds, 2, k, resolution[2])};
}

namespace detail {

// Cell corners 0..3 go counter-clockwise around the bottom, 4..7 sit above them. Edges run from their first to their second corner along +axis.
inline constexpr std::array<std::array<int, 2>, 12> kCubeEdges{{{0, 1}, {1, 2}, {3, 2}, {0, 3}, {4, 5}, {5, 6},
                                                                {7, 6}, {4, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}}};
inline constexpr std::array<std::array<int, 3>, 8> kCubeCorners{
    {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}}};
// Faces with corners counter-clockwise seen from outside the cell.
inline constexpr std::array<std::array<int, 4>, 6> kCubeFaces{
    {{0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4}, {3, 7, 6, 2}, {0, 4, 7, 3}, {1, 2, 6, 5}}};

struct McCase {
  int count = 0;
  std::array<std::array<int, 3>, 12> tris{};
};

inline int cube_edge_between(int a, int b) {
  for (int e = 0; e < 12; ++e)
    if ((kCubeEdges[e][0] == a && kCubeEdges[e][1] == b) || (kCubeEdges[e][0] == b && kCubeEdges[e][1] == a)) return e;
  return -1;
}

inline bool edges_share_face(int a, int b) {
  for (const auto &f : kCubeFaces) {
    bool ha = false, hb = false;
    for (int k = 0; k < 4; ++k) {
      const int e = cube_edge_between(f[k], f[(k + 1) % 4]);
      ha = ha || e == a;
      hb = hb || e == b;
    }
    if (ha && hb) return true;
  }
  return false;
}

// Triangulates the polygon loop[i..j]. A diagonal between two vertices on the same cell face is
// refused: the neighbouring cell could pick the same chord and the edge would join four triangles.
inline bool triangulate_loop(const std::vector<int> &loop, int i, int j, std::vector<std::array<int, 3>> &out) {
  if (j - i < 2) return true;
  const std::size_t mark = out.size();
  for (int k = i + 1; k < j; ++k) {
    const bool ik = k == i + 1 || !edges_share_face(loop[i], loop[k]);
    const bool kj = k == j - 1 || !edges_share_face(loop[k], loop[j]);
    const bool ij = (i == 0 && j == static_cast<int>(loop.size()) - 1) || !edges_share_face(loop[i], loop[j]);
    if (!ik || !kj || !ij) continue;
    out.push_back({loop[i], loop[j], loop[k]});
    if (triangulate_loop(loop, i, k, out) && triangulate_loop(loop, k, j, out)) return true;
    out.resize(mark);
  }
  return false;
}

// Builds the triangles of one sign configuration (bit c set = corner c inside). On every face the
// contour leaves through the edge after an inside run and enters through the edge before it, so
// ambiguous faces keep their inside corners apart. Neighbouring cells see the same face signs and
// cut it the same way, which keeps the surface watertight.
inline McCase build_mc_case(int config) {
  std::array<int, 12> next;
  next.fill(-1);
  for (const auto &f : kCubeFaces) {
    auto inside = [&](int k) { return ((config >> f[(k + 4) % 4]) & 1) != 0; };
    for (int k = 0; k < 4; ++k) {
      if (!(inside(k) && !inside(k + 1))) continue;
      int j = k - 1;
      while (inside(j)) --j;
      next[cube_edge_between(f[(k + 4) % 4], f[(k + 1) % 4])] = cube_edge_between(f[(j + 4) % 4], f[(j + 5) % 4]);
    }
  }
  McCase out;
  std::array<bool, 12> used{};
  for (int start = 0; start < 12; ++start) {
    if (next[start] < 0 || used[start]) continue;
    std::vector<int> loop;
    for (int e = start; !used[e]; e = next[e]) {
      used[e] = true;
      loop.push_back(e);
    }
    std::vector<std::array<int, 3>> tris;
    if (!triangulate_loop(loop, 0, static_cast<int>(loop.size()) - 1, tris))
      throw Error(ErrorKind::Precondition, "marching cubes table: no admissible triangulation");
    for (const auto &t : tris) out.tris[out.count++] = t;
  }
  return out;
}

inline const std::array<McCase, 256> &mc_table() {
  static const std::array<McCase, 256> table = [] {
    std::array<McCase, 256> t;
    for (int c = 0; c < 256; ++c) t[c] = build_mc_case(c);
    return t;
  }();
  return table;
}

// Marches the cells between two lattice layers. Edge vertices are welded through per-layer index
// caches, so a vertex is created once per lattice edge regardless of how many cells share it.
class SlabMarcher {
public:
  SlabMarcher(const Box &box, GridResolution res, double iso)
      : box_(box), res_(res), iso_(iso), tie_(1e-9 * box.diagonal()) {
    const std::size_t plane = static_cast<std::size_t>(res[0]) * res[1];
    for (auto *v : {&xb_, &yb_, &xt_, &yt_, &z_}) v->assign(plane, -1);
  }

  void march(const std::vector<double> &lower, const std::vector<double> &upper, int k, TriangleMesh &mesh) {
    const int nx = res_[0], ny = res_[1];
    std::fill(xt_.begin(), xt_.end(), -1);
    std::fill(yt_.begin(), yt_.end(), -1);
    std::fill(z_.begin(), z_.end(), -1);
    const auto &table = mc_table();
    for (int j = 0; j + 1 < ny; ++j)
      for (int i = 0; i + 1 < nx; ++i) {
        std::array<double, 8> v;
        int config = 0;
        for (int c = 0; c < 8; ++c) {
          const auto &o = kCubeCorners[c];
          const std::size_t idx = static_cast<std::size_t>(j + o[1]) * nx + (i + o[0]);
          v[c] = adjust(o[2] ? upper[idx] : lower[idx]);
          if (v[c] < iso_) config |= 1 << c;
        }
        const McCase &mc = table[config];
        if (mc.count == 0) continue;
        std::array<int, 12> vid;
        vid.fill(-1);
        for (int t = 0; t < mc.count; ++t)
          for (int e : mc.tris[t])
            if (vid[e] < 0) vid[e] = edge_vertex(i, j, k, e, v, mesh);
        for (int t = 0; t < mc.count; ++t)
          mesh.triangles.push_back({vid[mc.tris[t][0]], vid[mc.tris[t][1]], vid[mc.tris[t][2]]});
      }
    std::swap(xb_, xt_);
    std::swap(yb_, yt_);
  }

private:
  double adjust(double value) const { return value == iso_ ? iso_ + tie_ : value; }

  int edge_vertex(int i, int j, int k, int e, const std::array<double, 8> &v, TriangleMesh &mesh) {
    const int a = kCubeEdges[e][0], b = kCubeEdges[e][1];
    const auto &oa = kCubeCorners[a];
    const int ci = i + oa[0], cj = j + oa[1];
    const std::size_t idx = static_cast<std::size_t>(cj) * res_[0] + ci;
    const int axis = e == 0 || e == 2 || e == 4 || e == 6 ? 0 : (e < 8 ? 1 : 2);
    std::vector<int> &cache = axis == 2 ? z_ : (oa[2] ? (axis == 0 ? xt_ : yt_) : (axis == 0 ? xb_ : yb_));
    if (cache[idx] >= 0) return cache[idx];
    const double t = (iso_ - v[a]) / (v[b] - v[a]);
    std::array<int, 3> lo{ci, cj, k + oa[2]};
    Vec3 p;
    for (int d = 0; d < 3; ++d) p[d] = lattice_coord(box_, d, lo[d], res_[d]);
    std::array<int, 3> hi = lo;
    ++hi[axis];
    p[axis] += t * (lattice_coord(box_, axis, hi[axis], res_[axis]) - p[axis]);
    cache[idx] = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(p);
    return cache[idx];
  }

  Box box_;
  GridResolution res_;
  double iso_;
  double tie_;
  std::vector<int> xb_, yb_, xt_, yt_, z_;
};

inline void check_resolution(const Box &box, GridResolution res) {
  for (int a = 0; a < 3; ++a) require(res[a] >= 2, ErrorKind::Precondition, "grid resolution must be >= 2");
  require(!box.degenerate(), ErrorKind::Precondition, "degenerate grid bounds");
}

template <ScalarField F>
std::vector<double> evaluate_layer(const F &field, const Box &box, GridResolution res, int k) {
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(res[0]) * res[1]);
  const double z = lattice_coord(box, 2, k, res[2]);
  for (int j = 0; j < res[1]; ++j)
    for (int i = 0; i < res[0]; ++i) pts.emplace_back(lattice_coord(box, 0, i, res[0]), lattice_coord(box, 1, j, res[1]), z);
  auto values = field.sample(std::span<const Vec3>(pts), 0).value;
  for (std::size_t n = 0; n < values.size(); ++n)
    if (!std::isfinite(values[n])) {
      const int i = static_cast<int>(n % res[0]), j = static_cast<int>(n / res[0]);
      throw Error(ErrorKind::Numeric, "non-finite field value at lattice (" + std::to_string(i) + ", " +
                                          std::to_string(j) + ", " + std::to_string(k) + ")");
    }
  return values;
}

} // namespace detail

/// Field values at the cell corners of a regular lattice spanning the box.
template <ScalarField F>
ScalarGrid evaluate_grid(const F &field, const Box &box, GridResolution res) {
  detail::check_resolution(box, res);
  ScalarGrid g;
  g.resolution = res;
  g.bounds = box;
  g.values.reserve(static_cast<std::size_t>(res[0]) * res[1] * res[2]);
  for (int k = 0; k < res[2]; ++k) {
    auto layer = detail::evaluate_layer(field, box, res, k);
    g.values.insert(g.values.end(), layer.begin(), layer.end());
  }
  return g;
}

inline TriangleMesh marching_cubes(const ScalarGrid &grid, double iso = 0.0) {
  grid.validate();
  const std::size_t plane = static_cast<std::size_t>(grid.resolution[0]) * grid.resolution[1];
  detail::SlabMarcher marcher(grid.bounds, grid.resolution, iso);
  TriangleMesh mesh;
  std::vector<double> lower(grid.values.begin(), grid.values.begin() + static_cast<std::ptrdiff_t>(plane)), upper;
  for (int k = 0; k + 1 < grid.resolution[2]; ++k) {
    const auto first = grid.values.begin() + static_cast<std::ptrdiff_t>((k + 1) * plane);
    upper.assign(first, first + static_cast<std::ptrdiff_t>(plane));
    marcher.march(lower, upper, k, mesh);
    std::swap(lower, upper);
  }
  return mesh;
}

/// Evaluates and marches two lattice layers at a time, so memory stays proportional to one layer.
/// Gives the same mesh as marching_cubes(evaluate_grid(...)).
template <ScalarField F>
TriangleMesh extract_mesh(const F &field, const Box &box, GridResolution res, double iso = 0.0) {
  detail::check_resolution(box, res);
  detail::SlabMarcher marcher(box, res, iso);
  TriangleMesh mesh;
  auto lower = detail::evaluate_layer(field, box, res, 0);
  for (int k = 0; k + 1 < res[2]; ++k) {
    auto upper = detail::evaluate_layer(field, box, res, k + 1);
    marcher.march(lower, upper, k, mesh);
    lower = std::move(upper);
  }
  return mesh;
}

// ---- mesh queries ----

inline Vec3 triangle_normal(const TriangleMesh &m, const std::array<int, 3> &t) {
  return (m.vertices[t[1]] - m.vertices[t[0]]).cross(m.vertices[t[2]] - m.vertices[t[0]]);
}

inline double mesh_area(const TriangleMesh &m) {
  double a = 0;
  for (const auto &t : m.triangles) a += 0.5 * triangle_normal(m, t).norm();
  return a;
}

/// Enclosed volume by the divergence theorem; positive for outward winding.
inline double signed_volume(const TriangleMesh &m) {
  double v = 0;
  for (const auto &t : m.triangles) v += m.vertices[t[0]].dot(m.vertices[t[1]].cross(m.vertices[t[2]])) / 6.0;
  return v;
}

struct MeshTopology {
  std::size_t vertices = 0, edges = 0, faces = 0;
  std::size_t boundary_edges = 0;     // used by one triangle
  std::size_t nonmanifold_edges = 0;  // used by more than two
  std::size_t inconsistent_edges = 0; // traversed in the same direction by two triangles
  long long euler() const {
    return static_cast<long long>(vertices) - static_cast<long long>(edges) + static_cast<long long>(faces);
  }
  bool closed_manifold() const { return boundary_edges == 0 && nonmanifold_edges == 0 && inconsistent_edges == 0; }
};

/// Counts only vertices referenced by a triangle.
inline MeshTopology mesh_topology(const TriangleMesh &m) {
  std::map<std::pair<int, int>, std::pair<int, int>> edges;  // (lo, hi) -> (uses, lo->hi uses)
  std::vector<char> used(m.vertices.size(), 0);
  for (const auto &t : m.triangles)
    for (int e = 0; e < 3; ++e) {
      const int a = t[e], b = t[(e + 1) % 3];
      used[a] = 1;
      auto &rec = edges[{std::min(a, b), std::max(a, b)}];
      ++rec.first;
      if (a < b) ++rec.second;
    }
  MeshTopology topo;
  topo.faces = m.triangles.size();
  topo.edges = edges.size();
  topo.vertices = static_cast<std::size_t>(std::count(used.begin(), used.end(), 1));
  for (const auto &[key, rec] : edges) {
    if (rec.first == 1) ++topo.boundary_edges;
    if (rec.first > 2) ++topo.nonmanifold_edges;
    if (rec.first == 2 && rec.second != 1) ++topo.inconsistent_edges;
  }
  return topo;
}

/// Area-weighted vertex normals.
inline void compute_vertex_normals(TriangleMesh &m) {
  m.normals.assign(m.vertices.size(), Vec3::Zero());
  for (const auto &t : m.triangles) {
    const Vec3 n = triangle_normal(m, t);
    for (int v : t) m.normals[v] += n;
  }
  for (auto &n : m.normals) {
    const double len = n.norm();
    n = len > 0 ? Vec3(n / len) : Vec3(0, 0, 1);
  }
}

/// Applies x -> fn(x) to every vertex. Normals are dropped; recompute them if needed.
template <class Fn>
void map_vertices(TriangleMesh &m, Fn &&fn) {
  for (auto &v : m.vertices) v = fn(v);
  m.normals.clear();
}

// ---- writers ----

inline std::string encode_obj(const TriangleMesh &m) {
  std::ostringstream os;
  os.precision(17);
  for (const auto &v : m.vertices) os << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto &n : m.normals) os << "vn " << n.x() << ' ' << n.y() << ' ' << n.z() << '\n';
  const bool with_normals = !m.normals.empty();
  for (const auto &t : m.triangles) {
    os << 'f';
    for (int v : t) {
      os << ' ' << v + 1;
      if (with_normals) os << "//" << v + 1;
    }
    os << '\n';
  }
  return os.str();
}

inline void write_obj(const std::string &path, const TriangleMesh &m) {
  const std::string s = encode_obj(m);
  write_file_bytes(path, std::vector<unsigned char>(s.begin(), s.end()));
}

/// Reads `v` and `f` records; polygons are fanned into triangles. Vertex normals, texture
/// coordinates and every other record are ignored, so the result carries no normals.
inline TriangleMesh parse_obj(const std::string &text, const std::string &origin = "OBJ") {
  TriangleMesh m;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string &what) { throw Error(ErrorKind::Data, origin + ":" + std::to_string(lineno) + ": " + what); };
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ls >> p.x() >> p.y() >> p.z()) || !p.allFinite()) fail("bad vertex");
      m.vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<int> poly;
      std::string tok;
      while (ls >> tok) {
        long idx = 0;
        try {
          idx = std::stol(tok.substr(0, tok.find('/')));
        } catch (const std::exception &) {
          fail("bad face index '" + tok + "'");
        }
        const long n = static_cast<long>(m.vertices.size());
        if (idx < 0) idx += n + 1;
        if (idx < 1 || idx > n) fail("face index out of range");
        poly.push_back(static_cast<int>(idx - 1));
      }
      if (poly.size() < 3) fail("face with fewer than three vertices");
      for (std::size_t i = 1; i + 1 < poly.size(); ++i) m.triangles.push_back({poly[0], poly[i], poly[i + 1]});
    }
  }
  return m;
}

inline TriangleMesh read_obj(const std::string &path) {
  const auto bytes = read_file_bytes(path);
  return parse_obj(std::string(bytes.begin(), bytes.end()), path);
}

/// Binary little-endian PLY with double vertices, optional normals and int32 face lists.
inline std::vector<unsigned char> encode_mesh_ply(const TriangleMesh &m) {
  std::ostringstream h;
  h << "ply\nformat binary_little_endian 1.0\nelement vertex " << m.vertices.size()
    << "\nproperty double x\nproperty double y\nproperty double z\n";
  const bool with_normals = !m.normals.empty();
  if (with_normals) h << "property double nx\nproperty double ny\nproperty double nz\n";
  h << "element face " << m.triangles.size() << "\nproperty list uchar int vertex_indices\nend_header\n";
  ByteWriter w;
  w.put_bytes(h.str());
  for (std::size_t i = 0; i < m.vertices.size(); ++i) {
    for (int d = 0; d < 3; ++d) w.put(m.vertices[i][d]);
    if (with_normals)
      for (int d = 0; d < 3; ++d) w.put(m.normals[i][d]);
  }
  for (const auto &t : m.triangles) {
    w.put(static_cast<std::uint8_t>(3));
    for (int v : t) w.put(static_cast<std::int32_t>(v));
  }
  return w.bytes();
}

inline void write_mesh_ply(const std::string &path, const TriangleMesh &m) { write_file_bytes(path, encode_mesh_ply(m)); }

/// Chooses the writer from the extension (.obj or .ply).
inline void write_mesh(const std::string &path, const TriangleMesh &m) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".obj") write_obj(path, m);
  else if (ext == ".ply") write_mesh_ply(path, m);
  else throw Error(ErrorKind::Config, "mesh output must end in .obj or .ply: " + path);
}

} // namespace sdfforge
