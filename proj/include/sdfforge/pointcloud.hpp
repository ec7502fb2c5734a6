#pragma once

#include "sdfforge/camera.hpp"
#include "sdfforge/kdtree.hpp"

#include <Eigen/Eigenvalues>

namespace sdfforge {

struct OrientedPointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;
  double density = 0;    // inter-point spacing, scene units (0 when unknown)
  bool thinned = false;  // true once downsample_uniform has enforced `density` as a minimum spacing

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }

  void validate() const {
    require(normals.size() == positions.size(), ErrorKind::Data, "point cloud needs one normal per point");
    for (std::size_t i = 0; i < size(); ++i) {
      require(positions[i].allFinite(), ErrorKind::Data, "non-finite point position");
      require(std::abs(normals[i].norm() - 1.0) <= 1e-6, ErrorKind::Data, "point normal is not unit length");
    }
  }
};

struct BoundaryPoint {
  Vec3 position = Vec3::Zero();
  double target_distance = 0;
};

/// Distance from every point to its nearest non-coincident neighbor (0 if it has none).
inline std::vector<double> nearest_spacings(const std::vector<Vec3> &pts, const KdTree &tree) {
  std::vector<double> d(pts.size(), 0.0);
  for_each_chunk(pts.size(), 1024, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      for (std::size_t k = 2;; k *= 2) {
        auto nn = tree.knn(pts[i], k);
        auto it = std::find_if(nn.begin(), nn.end(), [](const Neighbor &n) { return n.dist2 > 0; });
        if (it != nn.end()) {
          d[i] = std::sqrt(it->dist2);
          break;
        }
        if (nn.size() < k) break;
      }
    }
  });
  return d;
}

/// Percentile (in [0,1]) of the positive nearest-neighbor spacings.
inline double spacing_percentile(const std::vector<Vec3> &pts, const KdTree &tree, double q) {
  auto d = nearest_spacings(pts, tree);
  std::erase_if(d, [](double v) { return v <= 0; });
  if (d.empty()) return 0;
  const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(d.size()))) - 1;
  const auto pos = d.begin() + static_cast<std::ptrdiff_t>(std::min(idx, d.size() - 1));
  std::nth_element(d.begin(), pos, d.end());
  return *pos;
}

/// Unit normals from PCA of each point's k-neighborhood (the point itself included). Signs arbitrary.
inline std::vector<Vec3> estimate_normals(const std::vector<Vec3> &pts, int k = 16) {
  require(k >= 3, ErrorKind::Precondition, "normal estimation needs k >= 3");
  require(pts.size() >= static_cast<std::size_t>(k), ErrorKind::Precondition, "fewer points than k");
  KdTree tree(pts);
  std::vector<Vec3> normals(pts.size());
  std::vector<char> bad(pts.size(), 0);
  for_each_chunk(pts.size(), 512, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      auto nn = tree.knn(pts[i], static_cast<std::size_t>(k));
      Vec3 mean = Vec3::Zero();
      for (const auto &n : nn) mean += pts[n.index];
      mean /= static_cast<double>(nn.size());
      Mat3 cov = Mat3::Zero();
      for (const auto &n : nn) {
        const Vec3 d = pts[n.index] - mean;
        cov += d * d.transpose();
      }
      Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
      const Vec3 ev = es.eigenvalues();  // ascending
      // A normal needs a 2-dimensional spread: the middle eigenvalue must not vanish.
      if (!(ev[2] > 0) || ev[1] <= 1e-12 * ev[2]) {
        bad[i] = 1;
        continue;
      }
      normals[i] = es.eigenvectors().col(0).normalized();
    }
  });
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (bad[i])
      throw Error(ErrorKind::DegenerateNeighborhood,
                  "point " + std::to_string(i) + ": neighborhood is coincident or collinear");
  return normals;
}

struct OrientationReport {
  std::size_t flipped = 0;
  std::size_t perpendicular = 0;  // kept their sign
};

/// Flips normals to face their assigned camera center. `assignment[i]` indexes `centers`; when empty
/// each point uses its nearest camera.
inline OrientationReport orient_normals(const std::vector<Vec3> &pts, std::vector<Vec3> &normals,
                                        const std::vector<Vec3> &centers,
                                        const std::vector<std::size_t> &assignment = {}) {
  require(!centers.empty(), ErrorKind::Precondition, "orientation needs at least one camera");
  require(normals.size() == pts.size(), ErrorKind::Precondition, "one normal per point required");
  require(assignment.empty() || assignment.size() == pts.size(), ErrorKind::Precondition,
          "camera assignment must cover every point");
  OrientationReport rep;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::size_t c = 0;
    if (!assignment.empty()) {
      c = assignment[i];
      require(c < centers.size(), ErrorKind::Precondition, "camera assignment out of range");
    } else {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < centers.size(); ++j) {
        const double d = (centers[j] - pts[i]).squaredNorm();
        if (d < best) {
          best = d;
          c = j;
        }
      }
    }
    const double s = normals[i].dot(centers[c] - pts[i]);
    if (s < 0) {
      normals[i] = -normals[i];
      ++rep.flipped;
    } else if (s == 0) {
      ++rep.perpendicular;
    }
  }
  return rep;
}

/// Greedy pair-discard thinning. The spacing t is the 90th percentile of the nearest non-coincident
/// neighbor distances; a cloud already thinned keeps its recorded spacing, which makes the operation
/// idempotent. Walking points in order, every later point closer than t to a kept one is dropped, and
/// exact duplicates are always dropped.
inline OrientedPointCloud downsample_uniform(const OrientedPointCloud &cloud) {
  require(cloud.size() >= 2, ErrorKind::Precondition, "downsampling needs at least two points");
  KdTree tree(cloud.positions);
  const double t = cloud.thinned ? cloud.density : spacing_percentile(cloud.positions, tree, 0.9);
  std::vector<char> dropped(cloud.size(), 0);
  OrientedPointCloud out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (dropped[i]) continue;
    out.positions.push_back(cloud.positions[i]);
    if (!cloud.normals.empty()) out.normals.push_back(cloud.normals[i]);
    for (const auto &n : tree.radius(cloud.positions[i], t * t))
      if (n.index > i && (n.dist2 < t * t || n.dist2 == 0)) dropped[n.index] = 1;
  }
  out.density = t;
  out.thinned = true;
  return out;
}

struct BoundaryResult {
  std::vector<Vec3> points;
  std::size_t skipped = 0;
};

/// Free-space points: camera centers inside the box, otherwise the first box entry of the view line.
/// With grid > 1 each camera also contributes the rays through a grid x grid lattice of pixel
/// centers; grid == 1 uses the principal view line only.
inline BoundaryResult make_boundary_points(const std::vector<Camera> &cams, const Box &box, int grid = 1) {
  require(!box.degenerate(), ErrorKind::Precondition, "degenerate bounding box");
  require(grid >= 1, ErrorKind::Precondition, "boundary grid must be >= 1");
  BoundaryResult out;
  for (const auto &cam : cams) {
    if (box.contains(cam.center())) {
      out.points.push_back(cam.center());
      continue;
    }
    std::vector<Vec3> dirs;
    if (grid == 1) {
      dirs.push_back(cam.forward());
    } else {
      for (int j = 0; j < grid; ++j)
        for (int i = 0; i < grid; ++i)
          dirs.push_back(pixel_ray(cam, (i + 0.5) * cam.width / grid, (j + 0.5) * cam.height / grid).direction);
    }
    for (const auto &d : dirs) {
      auto iv = box.intersect(cam.center(), d);
      if (!iv || iv->second < 0) {
        ++out.skipped;
        continue;
      }
      out.points.push_back(cam.center() + std::max(iv->first, 0.0) * d);
    }
  }
  return out;
}

/// Mean point-to-plane distance to the k nearest oriented points whose normal is within max_angle
/// of the offset direction; falls back to the nearest point when every neighbor is excluded.
inline double boundary_target_distance(const Vec3 &xb, const OrientedPointCloud &cloud, const KdTree &tree,
                                       int k = 4, double max_angle_deg = 60.0) {
  require(k >= 1, ErrorKind::Precondition, "k must be >= 1");
  require(!cloud.empty(), ErrorKind::Precondition, "empty point cloud");
  const auto nn = tree.knn(xb, static_cast<std::size_t>(k));
  const double cos_max = std::cos(max_angle_deg * kPi / 180.0);
  double sum = 0;
  int kept = 0;
  for (const auto &n : nn) {
    const Vec3 off = xb - cloud.positions[n.index];
    const Vec3 &nrm = cloud.normals[n.index];
    const double len = off.norm();
    if (len > 0 && off.dot(nrm) < cos_max * len * nrm.norm()) continue;
    sum += std::abs(off.dot(nrm));
    ++kept;
  }
  if (kept > 0) return sum / kept;
  const auto &n0 = nn.front();
  return std::abs((xb - cloud.positions[n0.index]).dot(cloud.normals[n0.index]));
}

inline std::vector<BoundaryPoint> boundary_points_with_targets(const std::vector<Vec3> &pts,
                                                               const OrientedPointCloud &cloud, int k = 4,
                                                               double max_angle_deg = 60.0) {
  KdTree tree(cloud.positions);
  std::vector<BoundaryPoint> out;
  for (const auto &p : pts) out.push_back({p, boundary_target_distance(p, cloud, tree, k, max_angle_deg)});
  return out;
}

} // namespace sdfforge
