#pragma once

// Pinhole camera. Camera frame: x right, y down, z forward. rotation/translation map camera
// coordinates to world coordinates, so the center is `translation` and the optical axis is
// rotation.col(2).
//
// Camera file (text, one camera per non-comment line, 19 tokens):
//   name width height fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz
// Lines starting with '#' and blank lines are ignored. Names contain no whitespace.

#include "sdfforge/core.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace sdfforge {

struct Camera {
  std::string name;
  int width = 0;
  int height = 0;
  double fx = 1, fy = 1, cx = 0, cy = 0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 center() const { return translation; }
  Vec3 forward() const { return rotation.col(2); }

  void validate() const {
    require(fx > 0 && fy > 0, ErrorKind::Data, "camera " + name + ": focal lengths must be positive");
    require(width > 0 && height > 0, ErrorKind::Data, "camera " + name + ": empty image");
    const double err = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    require(err < 1e-8, ErrorKind::Data, "camera " + name + ": rotation not orthonormal");
  }
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit
  Vec3 at(double t) const { return origin + t * direction; }
};

/// Back-projects pixel coordinates (u right, v down; integer + 0.5 is a pixel center).
inline Ray pixel_ray(const Camera &cam, double u, double v) {
  const Vec3 d_cam((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
  return {cam.center(), (cam.rotation * d_cam).normalized()};
}

/// Projects a world point; returns (u, v) and the camera-space depth.
inline std::pair<Eigen::Vector2d, double> project(const Camera &cam, const Vec3 &x) {
  const Vec3 p = cam.rotation.transpose() * (x - cam.translation);
  return {Eigen::Vector2d(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy), p.z()};
}

/// Rotation whose z axis points from eye to target, x axis horizontal (perpendicular to up).
inline Mat3 look_at_rotation(const Vec3 &eye, const Vec3 &target, Vec3 up = Vec3(0, 0, 1)) {
  const Vec3 z = (target - eye).normalized();
  if (std::abs(z.dot(up)) > 1.0 - 1e-9) up = Vec3(0, 1, 0);
  const Vec3 x = z.cross(up).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

struct Intrinsics {
  int width = 64;
  int height = 64;
  double fx = 64, fy = 64;
  double cx = 32, cy = 32;

  static Intrinsics from_fov(int w, int h, double fov_x_deg) {
    Intrinsics k;
    k.width = w;
    k.height = h;
    k.fx = k.fy = 0.5 * w / std::tan(0.5 * fov_x_deg * kPi / 180.0);
    k.cx = 0.5 * w;
    k.cy = 0.5 * h;
    return k;
  }
};

inline std::string format_cameras(const std::vector<Camera> &cams) {
  std::ostringstream os;
  os << "# name width height fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, " %.17g", v);
    os << buf;
  };
  for (const auto &c : cams) {
    os << c.name << ' ' << c.width << ' ' << c.height;
    for (double v : {c.fx, c.fy, c.cx, c.cy}) num(v);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) num(c.rotation(i, j));
    for (int i = 0; i < 3; ++i) num(c.translation[i]);
    os << '\n';
  }
  return os.str();
}

inline std::vector<Camera> parse_cameras(const std::string &text) {
  std::vector<Camera> cams;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    Camera c;
    ls >> c.name >> c.width >> c.height >> c.fx >> c.fy >> c.cx >> c.cy;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) ls >> c.rotation(i, j);
    for (int i = 0; i < 3; ++i) ls >> c.translation[i];
    require(static_cast<bool>(ls), ErrorKind::Data, "camera file line " + std::to_string(lineno) + ": expected 19 fields");
    std::string extra;
    require(!(ls >> extra), ErrorKind::Data, "camera file line " + std::to_string(lineno) + ": trailing tokens");
    c.validate();
    cams.push_back(std::move(c));
  }
  return cams;
}

inline std::vector<Camera> load_cameras(const std::string &path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_cameras(ss.str());
}

inline void save_cameras(const std::string &path, const std::vector<Camera> &cams) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
  out << format_cameras(cams);
}

} // namespace sdfforge
