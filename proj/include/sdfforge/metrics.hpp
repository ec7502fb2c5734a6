#pragma once

// Mesh and image evaluation: uniform oriented resampling of meshes, distance-only and
// normal-aware inlier F-scores, symmetric Chamfer distance and PSNR.

#include "sdfforge/image.hpp"
#include "sdfforge/kdtree.hpp"
#include "sdfforge/kvconfig.hpp"
#include "sdfforge/mesher.hpp"
#include "sdfforge/pointcloud.hpp"

#include <random>
#include <sstream>

namespace sdfforge {

/// Candidates drawn per density^2 of area before thinning, and the thinning radius in units of
/// the density. Together they leave roughly one point per density^2 of surface.
inline constexpr double kResampleCandidates = 16.0;
inline constexpr double kThinningRadius = 0.8;
inline constexpr double kDefaultAngleDeg = 30.0;
inline constexpr double kDistanceFactor = 3.0;
inline constexpr double kPsnrCap = 99.0;

/// Area-weighted random points on the mesh, thinned by discarding the later point of every pair
/// closer than kThinningRadius * density. Normals are the unit face normals.
inline OrientedPointCloud sample_mesh_uniform(const TriangleMesh &mesh, double density, std::uint64_t seed) {
  require(density > 0 && std::isfinite(density), ErrorKind::Precondition, "sample density must be > 0");
  OrientedPointCloud out;
  out.density = density;
  std::vector<double> cumulative;
  std::vector<std::size_t> face;
  double area = 0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const double a = 0.5 * triangle_normal(mesh, mesh.triangles[t]).norm();
    if (!(a > 0)) continue;
    area += a;
    cumulative.push_back(area);
    face.push_back(t);
  }
  if (face.empty()) return out;
  const auto n = static_cast<std::size_t>(std::ceil(kResampleCandidates * area / (density * density)));
  require(n <= (std::size_t{1} << 31), ErrorKind::Precondition, "sample density too fine for the mesh area");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> pts, nrm;
  pts.reserve(n);
  nrm.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pick = u(rng) * area;
    std::size_t k = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
    k = std::min(k, face.size() - 1);
    const auto &t = mesh.triangles[face[k]];
    const double r1 = std::sqrt(u(rng)), r2 = u(rng);
    const Vec3 &a = mesh.vertices[t[0]], &b = mesh.vertices[t[1]], &c = mesh.vertices[t[2]];
    pts.push_back((1 - r1) * a + r1 * (1 - r2) * b + r1 * r2 * c);
    nrm.push_back(triangle_normal(mesh, t).normalized());
  }
  KdTree tree(pts);
  const double r = kThinningRadius * density;
  std::vector<char> dropped(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (dropped[i]) continue;
    out.positions.push_back(pts[i]);
    out.normals.push_back(nrm[i]);
    for (const auto &nb : tree.radius(pts[i], r * r))
      if (nb.index > i) dropped[nb.index] = 1;
  }
  out.thinned = true;
  return out;
}

struct FScore {
  double accuracy_pct = 0;      // inliers among predicted points
  double completeness_pct = 0;  // inliers among ground-truth points
  double fscore_pct = 0;
};

struct EvalReport {
  FScore distance_only;
  FScore normal_aware;
  double chamfer = 0;
  double dist_thresh = 0;
  double angle_thresh_deg = kDefaultAngleDeg;
  double sample_density = 0;
};

namespace detail {

inline std::vector<std::size_t> nearest_indices(const std::vector<Vec3> &from, const KdTree &to) {
  std::vector<std::size_t> idx(from.size());
  for_each_chunk(from.size(), 2048, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) idx[i] = to.nearest(from[i]).index;
  });
  return idx;
}

inline double inlier_pct(const OrientedPointCloud &from, const OrientedPointCloud &to, const std::vector<std::size_t> &nn,
                         double dist_thresh, double cos_thresh, bool use_normals) {
  std::size_t inliers = 0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const std::size_t j = nn[i];
    if ((from.positions[i] - to.positions[j]).norm() > dist_thresh) continue;
    if (use_normals && from.normals[i].dot(to.normals[j]) < cos_thresh) continue;
    ++inliers;
  }
  return 100.0 * static_cast<double>(inliers) / static_cast<double>(from.size());
}

inline double harmonic(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

inline void require_metric_inputs(const OrientedPointCloud &pred, const OrientedPointCloud &gt, bool use_normals) {
  require(!pred.empty() && !gt.empty(), ErrorKind::UndefinedMetric, "F-score of an empty point cloud");
  if (use_normals)
    require(pred.normals.size() == pred.size() && gt.normals.size() == gt.size(), ErrorKind::UndefinedMetric,
            "normal-aware F-score needs normals on both clouds");
}

} // namespace detail

/// A point is an inlier when its nearest neighbor in the other cloud lies within dist_thresh and,
/// with use_normals, the two normals differ by at most angle_thresh_deg.
inline FScore fscore(const OrientedPointCloud &pred, const OrientedPointCloud &gt, double dist_thresh,
                     double angle_thresh_deg, bool use_normals) {
  require(dist_thresh > 0 && angle_thresh_deg > 0, ErrorKind::Precondition, "F-score thresholds must be > 0");
  detail::require_metric_inputs(pred, gt, use_normals);
  const KdTree tp(pred.positions), tg(gt.positions);
  const double c = std::cos(angle_thresh_deg * kPi / 180.0);
  FScore s;
  s.accuracy_pct = detail::inlier_pct(pred, gt, detail::nearest_indices(pred.positions, tg), dist_thresh, c, use_normals);
  s.completeness_pct = detail::inlier_pct(gt, pred, detail::nearest_indices(gt.positions, tp), dist_thresh, c, use_normals);
  s.fscore_pct = detail::harmonic(s.accuracy_pct, s.completeness_pct);
  return s;
}

namespace detail {

inline double mean_nearest_distance(const std::vector<Vec3> &from, const KdTree &to) {
  std::vector<double> d(from.size());
  for_each_chunk(from.size(), 2048, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) d[i] = std::sqrt(to.nearest(from[i]).dist2);
  });
  double sum = 0;
  for (double v : d) sum += v;
  return sum / static_cast<double>(from.size());
}

} // namespace detail

/// Average of the mean nearest-neighbor distances in both directions.
inline double chamfer(const std::vector<Vec3> &pred, const std::vector<Vec3> &gt) {
  require(!pred.empty() && !gt.empty(), ErrorKind::UndefinedMetric, "Chamfer distance of an empty point set");
  const KdTree tp(pred), tg(gt);
  return 0.5 * (detail::mean_nearest_distance(pred, tg) + detail::mean_nearest_distance(gt, tp));
}

/// Both F-score variants and the Chamfer distance, with distance threshold 3 x density.
inline EvalReport evaluate_clouds(const OrientedPointCloud &pred, const OrientedPointCloud &gt, double density,
                                  double angle_thresh_deg = kDefaultAngleDeg) {
  require(density > 0, ErrorKind::Precondition, "sample density must be > 0");
  EvalReport r;
  r.sample_density = density;
  r.dist_thresh = kDistanceFactor * density;
  r.angle_thresh_deg = angle_thresh_deg;
  r.distance_only = fscore(pred, gt, r.dist_thresh, angle_thresh_deg, false);
  r.normal_aware = fscore(pred, gt, r.dist_thresh, angle_thresh_deg, true);
  r.chamfer = chamfer(pred.positions, gt.positions);
  return r;
}

/// Resamples the mesh at `density` and compares it to the ground-truth cloud.
inline EvalReport evaluate_mesh(const TriangleMesh &mesh, const OrientedPointCloud &gt, double density,
                                std::uint64_t seed = 1, double angle_thresh_deg = kDefaultAngleDeg) {
  const auto pred = sample_mesh_uniform(mesh, density, seed);
  require(!pred.empty(), ErrorKind::UndefinedMetric, "mesh has no area to sample");
  return evaluate_clouds(pred, gt, density, angle_thresh_deg);
}

/// key=value block, one entry per line.
inline std::string format_report_kv(const EvalReport &r) {
  std::ostringstream os;
  auto put = [&](const char *k, double v) { os << k << '=' << format_double(v) << '\n'; };
  put("accuracy_pct", r.distance_only.accuracy_pct);
  put("completeness_pct", r.distance_only.completeness_pct);
  put("fscore_pct", r.distance_only.fscore_pct);
  put("normal_accuracy_pct", r.normal_aware.accuracy_pct);
  put("normal_completeness_pct", r.normal_aware.completeness_pct);
  put("normal_fscore_pct", r.normal_aware.fscore_pct);
  put("chamfer", r.chamfer);
  put("dist_thresh", r.dist_thresh);
  put("angle_thresh_deg", r.angle_thresh_deg);
  put("sample_density", r.sample_density);
  return os.str();
}

inline std::string format_report_text(const EvalReport &r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "                 accuracy  completeness  F-score\n"
                "distance only    %7.2f%%  %11.2f%%  %6.2f%%\n"
                "normal aware     %7.2f%%  %11.2f%%  %6.2f%%\n"
                "chamfer %.6g  (distance threshold %.6g, angle threshold %.6g deg, density %.6g)\n",
                r.distance_only.accuracy_pct, r.distance_only.completeness_pct, r.distance_only.fscore_pct,
                r.normal_aware.accuracy_pct, r.normal_aware.completeness_pct, r.normal_aware.fscore_pct, r.chamfer,
                r.dist_thresh, r.angle_thresh_deg, r.sample_density);
  return buf;
}

/// 10 log10(1 / MSE) over all channels, capped at `cap` (identical images reach the cap).
inline double psnr(const Image &a, const Image &b, double cap = kPsnrCap) {
  require(a.width == b.width && a.height == b.height && a.data.size() == b.data.size(), ErrorKind::Precondition,
          "PSNR of images with different dimensions");
  require(!a.data.empty(), ErrorKind::UndefinedMetric, "PSNR of empty images");
  double se = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data.size());
  if (mse == 0) return cap;
  return std::min(cap, 10.0 * std::log10(1.0 / mse));
}

} // namespace sdfforge
