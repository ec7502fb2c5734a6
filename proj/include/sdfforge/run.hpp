#pragma once

// Run-level configuration and on-disk layout shared by the command-line tool.
//
// Data directory:  points.ply  processed.ply  cameras.txt  images/<camera>.ppm  masks/<camera>.pgm  boundary.txt
// Run directory:   run.cfg  transform.txt  sdf.ckpt  slf.ckpt  trainer.state  loss.log

#include "sdfforge/metrics.hpp"
#include "sdfforge/ply.hpp"
#include "sdfforge/render.hpp"
#include "sdfforge/trainer.hpp"

#include <filesystem>
#include <fstream>

namespace sdfforge {

/// Everything a pipeline run needs besides its data.
struct RunConfig {
  TrainConfig train;
  int mesh_resolution = 512;
  double eval_density = 0.01;  // resampling spacing in scene units
  double eval_angle_deg = kDefaultAngleDeg;
  int trace_max_steps = 128;
  double trace_hit_tol = 0;  // 0: scaled to the scene box
  int normal_k = 16;
  int boundary_grid = 1;
  bool downsample = true;
  std::string data_dir;
  std::string run_dir;

  void validate() const {
    train.validate();
    require(mesh_resolution >= 2, ErrorKind::Config, "mesh_resolution must be >= 2");
    require(eval_density > 0, ErrorKind::Config, "eval_density must be > 0");
    require(eval_angle_deg > 0 && eval_angle_deg <= 180, ErrorKind::Config, "eval_angle must lie in (0, 180]");
    require(trace_max_steps >= 1, ErrorKind::Config, "trace_max_steps must be >= 1");
    require(trace_hit_tol >= 0, ErrorKind::Config, "trace_hit_tol must be >= 0");
    require(normal_k >= 3, ErrorKind::Config, "normal_k must be >= 3");
    require(boundary_grid >= 1, ErrorKind::Config, "boundary_grid must be >= 1");
  }

  TraceSettings trace_settings(const Box &box) const {
    auto s = TraceSettings::for_box(box);
    s.max_steps = trace_max_steps;
    if (trace_hit_tol > 0) s.hit_tol = trace_hit_tol;
    return s;
  }
};

inline const std::set<std::string> &run_only_keys() {
  static const std::set<std::string> keys{"mesh_resolution", "eval_density", "eval_angle",  "trace_max_steps",
                                          "trace_hit_tol",   "normal_k",     "boundary_grid", "downsample",
                                          "data_dir",        "run_dir"};
  return keys;
}

inline const std::set<std::string> &run_keys() {
  static const std::set<std::string> keys = [] {
    auto k = train_keys();
    k.insert(run_only_keys().begin(), run_only_keys().end());
    return k;
  }();
  return keys;
}

inline RunConfig run_config_from(const KvConfig &kv) {
  kv.check_known(run_keys());
  KvConfig tk;
  for (const auto &k : kv.keys())
    if (!run_only_keys().count(k)) tk.set(k, kv.str(k, ""));
  RunConfig r;
  r.train = train_config_from(tk);
  r.mesh_resolution = static_cast<int>(kv.integer("mesh_resolution", r.mesh_resolution));
  r.eval_density = kv.real("eval_density", r.eval_density);
  r.eval_angle_deg = kv.real("eval_angle", r.eval_angle_deg);
  r.trace_max_steps = static_cast<int>(kv.integer("trace_max_steps", r.trace_max_steps));
  r.trace_hit_tol = kv.real("trace_hit_tol", r.trace_hit_tol);
  r.normal_k = static_cast<int>(kv.integer("normal_k", r.normal_k));
  r.boundary_grid = static_cast<int>(kv.integer("boundary_grid", r.boundary_grid));
  r.downsample = kv.boolean("downsample", r.downsample);
  r.data_dir = kv.str("data_dir", "");
  r.run_dir = kv.str("run_dir", "");
  r.validate();
  return r;
}

inline KvConfig to_kv(const RunConfig &r) {
  KvConfig kv = to_kv(r.train);
  kv.set("mesh_resolution", r.mesh_resolution);
  kv.set("eval_density", r.eval_density);
  kv.set("eval_angle", r.eval_angle_deg);
  kv.set("trace_max_steps", r.trace_max_steps);
  kv.set("trace_hit_tol", r.trace_hit_tol);
  kv.set("normal_k", r.normal_k);
  kv.set("boundary_grid", r.boundary_grid);
  kv.set("downsample", r.downsample);
  if (!r.data_dir.empty()) kv.set("data_dir", r.data_dir);
  if (!r.run_dir.empty()) kv.set("run_dir", r.run_dir);
  return kv;
}

// ---------------------------------------------------------------------------------------------
// Small text files.

inline std::string read_text_file(const std::string &path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

inline void write_text_file(const std::string &path, const std::string &text) {
  write_file_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

inline std::string format_transform(const SimilarityTransform &t) {
  KvConfig kv;
  kv.set("scale", t.scale);
  kv.set("offset", t.offset);
  return kv.format();
}

inline SimilarityTransform parse_transform(const std::string &text, const std::string &origin = "transform") {
  const auto kv = KvConfig::parse(text, origin);
  kv.check_known({"scale", "offset"});
  require(kv.has("scale") && kv.has("offset"), ErrorKind::Data, origin + ": needs scale and offset");
  SimilarityTransform t;
  t.scale = kv.real("scale", 1.0);
  t.offset = kv.vec3("offset", Vec3::Zero());
  require(t.scale > 0 && std::isfinite(t.scale) && t.offset.allFinite(), ErrorKind::Data, origin + ": bad transform");
  return t;
}

/// One "x y z target_distance" line per point.
inline std::string format_boundary(const std::vector<BoundaryPoint> &pts) {
  std::string out = "# x y z target_distance\n";
  for (const auto &b : pts)
    out += format_double(b.position.x()) + " " + format_double(b.position.y()) + " " + format_double(b.position.z()) +
           " " + format_double(b.target_distance) + "\n";
  return out;
}

inline std::vector<BoundaryPoint> parse_boundary(const std::string &text, const std::string &origin = "boundary") {
  std::vector<BoundaryPoint> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    BoundaryPoint b;
    std::string extra;
    const bool ok = static_cast<bool>(ls >> b.position.x() >> b.position.y() >> b.position.z() >> b.target_distance) &&
                    !(ls >> extra);
    require(ok && b.position.allFinite() && std::isfinite(b.target_distance) && b.target_distance >= 0, ErrorKind::Data,
            origin + ":" + std::to_string(lineno) + ": expected 'x y z distance'");
    out.push_back(b);
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Data directory.

/// A data directory in its own (original) units.
struct DataSet {
  OrientedPointCloud cloud;
  std::vector<Camera> cameras;
  std::vector<Image> images;  // parallel to cameras; empty when the directory has no images
  std::vector<Mask> masks;
  std::vector<BoundaryPoint> boundary;
};

/// The cloud is processed.ply when present, otherwise points.ply. Missing masks mark every pixel valid.
inline DataSet load_data_dir(const std::string &dir) {
  namespace fs = std::filesystem;
  require(fs::is_directory(dir), ErrorKind::Data, "data directory '" + dir + "' does not exist");
  DataSet d;
  const std::string cloud_path = dir + (fs::exists(dir + "/processed.ply") ? "/processed.ply" : "/points.ply");
  auto ply = read_ply(cloud_path);
  require(!ply.normals.empty(), ErrorKind::Data, cloud_path + " has no normals; run preprocess first");
  d.cloud.positions = std::move(ply.positions);
  d.cloud.normals = std::move(ply.normals);
  for (auto &n : d.cloud.normals) {
    const double len = n.norm();
    require(len > 0 && std::isfinite(len), ErrorKind::Data, cloud_path + ": zero-length normal");
    n /= len;
  }
  d.cloud.validate();
  if (fs::exists(dir + "/cameras.txt")) d.cameras = load_cameras(dir + "/cameras.txt");
  bool any_image = false;
  for (const auto &c : d.cameras) any_image = any_image || fs::exists(dir + "/images/" + c.name + ".ppm");
  if (any_image) {
    for (const auto &c : d.cameras) {
      d.images.push_back(read_ppm(dir + "/images/" + c.name + ".ppm"));
      const std::string mp = dir + "/masks/" + c.name + ".pgm";
      if (fs::exists(mp)) {
        d.masks.push_back(read_pgm(mp));
      } else {
        Mask m(c.width, c.height);
        std::fill(m.data.begin(), m.data.end(), std::uint8_t{255});
        d.masks.push_back(std::move(m));
      }
    }
  }
  if (fs::exists(dir + "/boundary.txt")) d.boundary = parse_boundary(read_text_file(dir + "/boundary.txt"), dir + "/boundary.txt");
  return d;
}

/// The data set mapped into the training domain [-1,1]^3.
inline std::pair<TrainingScene, SimilarityTransform> training_scene(const DataSet &d) {
  auto norm = normalize_scene(d.cloud, d.cameras);
  TrainingScene s;
  s.cloud = std::move(norm.cloud);
  s.box = norm.box;
  for (std::size_t i = 0; i < d.images.size(); ++i) s.views.push_back({norm.cameras[i], d.images[i], d.masks[i]});
  for (const auto &b : d.boundary) s.boundary.push_back({norm.transform.apply(b.position), norm.transform.scale * b.target_distance});
  return {std::move(s), norm.transform};
}

/// Normals (estimated and oriented toward the nearest camera when missing), optional downsampling and
/// boundary points with target distances. Everything stays in the input's units; boundary points
/// are placed on the box that normalization maps onto [-1,1]^3.
struct Preprocessed {
  OrientedPointCloud cloud;
  std::vector<BoundaryPoint> boundary;
  OrientationReport orientation;
  std::size_t boundary_skipped = 0;
};

inline Preprocessed preprocess_cloud(const PlyCloud &raw, const std::vector<Camera> &cams, const RunConfig &rc) {
  require(!raw.positions.empty(), ErrorKind::Data, "input point cloud is empty");
  Preprocessed out;
  out.cloud.positions = raw.positions;
  if (!raw.normals.empty()) {
    out.cloud.normals = raw.normals;
    for (auto &n : out.cloud.normals) {
      const double len = n.norm();
      require(len > 0 && std::isfinite(len), ErrorKind::Data, "input normal of zero length");
      n /= len;
    }
  } else {
    // Estimated normals have arbitrary sign; given normals are trusted as they are.
    require(!cams.empty(), ErrorKind::Data, "a cloud without normals needs cameras to orient them");
    out.cloud.normals = estimate_normals(out.cloud.positions, rc.normal_k);
    std::vector<Vec3> centers;
    for (const auto &c : cams) centers.push_back(c.center());
    out.orientation = orient_normals(out.cloud.positions, out.cloud.normals, centers);
  }
  if (rc.downsample && out.cloud.size() >= 2) out.cloud = downsample_uniform(out.cloud);
  if (!cams.empty()) {
    const auto norm = normalize_scene(out.cloud, cams);
    const auto pts = make_boundary_points(norm.cameras, norm.box, rc.boundary_grid);
    out.boundary_skipped = pts.skipped;
    for (const auto &b : boundary_points_with_targets(pts.points, norm.cloud))
      out.boundary.push_back({norm.transform.inverse(b.position), b.target_distance / norm.transform.scale});
  }
  return out;
}

} // namespace sdfforge
