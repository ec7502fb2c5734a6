#include "oracles.hpp"

#include "sdfforge/ply.hpp"
#include "sdfforge/synth.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace sdfforge;

namespace {

std::vector<Neighbor> brute_knn(const std::vector<Vec3> &pts, const Vec3 &q, std::size_t k) {
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < pts.size(); ++i) all.push_back({i, (pts[i] - q).squaredNorm()});
  std::sort(all.begin(), all.end());
  all.resize(std::min(k, all.size()));
  return all;
}

std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed, double half = 1.0) {
  std::mt19937_64 rng(seed);
  std::vector<Vec3> p(n);
  for (auto &x : p) x = oracle::random_point(rng, half);
  return p;
}

std::vector<Vec3> plane_grid(int n, double spacing) {
  std::vector<Vec3> p;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) p.emplace_back((i - n / 2) * spacing, (j - n / 2) * spacing, 0.0);
  return p;
}

OrientedPointCloud with_up_normals(std::vector<Vec3> pts) {
  OrientedPointCloud c;
  c.normals.assign(pts.size(), Vec3::UnitZ());
  c.positions = std::move(pts);
  return c;
}

std::string temp_path(const std::string &name) {
  return (std::filesystem::temp_directory_path() / ("sdfforge_pc_" + name)).string();
}

} // namespace

TEST(KdTree, MatchesBruteForce) {
  for (std::size_t n : {1u, 7u, 1000u, 50000u}) {
    auto pts = random_points(n, n);
    // Duplicates and ties exercise the ordering contract.
    if (n > 10)
      for (int i = 0; i < 10; ++i) pts[static_cast<std::size_t>(i) * 3] = pts[0];
    KdTree tree(pts);
    std::mt19937_64 rng(n + 1);
    for (int q = 0; q < 200; ++q) {
      const Vec3 x = q % 10 == 0 ? pts[static_cast<std::size_t>(q) % n] : oracle::random_point(rng, 1.2);
      for (std::size_t k : {1u, 5u, 16u}) {
        auto a = tree.knn(x, k);
        auto b = brute_knn(pts, x, k);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
          EXPECT_EQ(a[i].index, b[i].index);
          EXPECT_EQ(a[i].dist2, b[i].dist2);
        }
      }
      const double r2 = 0.01;
      auto r = tree.radius(x, r2);
      auto all = brute_knn(pts, x, pts.size());
      std::size_t expect = 0;
      while (expect < all.size() && all[expect].dist2 <= r2) ++expect;
      ASSERT_EQ(r.size(), expect);
      for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r[i].index, all[i].index);
    }
  }
}

TEST(EstimateNormals, PlaneGivesVerticalNormals) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> pts;
  for (int i = 0; i < 100; ++i) pts.emplace_back(u(rng), u(rng), 0.0);
  for (const auto &n : estimate_normals(pts, 10)) EXPECT_NEAR(std::abs(n.z()), 1.0, 1e-6);
}

TEST(EstimateNormals, SphereNormalsAreRadial) {
  AnalyticScene sc;
  sc.shape = SphereShape{Vec3::Zero(), 0.8};
  auto c = sample_scene(sc, 5000, {}, 1);
  auto normals = estimate_normals(c.positions, 16);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double cosang = std::abs(normals[i].dot(c.positions[i].normalized()));
    EXPECT_GT(cosang, std::cos(5 * kPi / 180)) << i;
    EXPECT_NEAR(normals[i].norm(), 1.0, 1e-12);
  }
}

TEST(EstimateNormals, CollinearOrCoincidentIsDegenerate) {
  auto kind = [](const std::vector<Vec3> &pts) {
    try {
      estimate_normals(pts, 3);
    } catch (const Error &e) {
      return e.kind();
    }
    return ErrorKind::Config;
  };
  EXPECT_EQ(kind({Vec3(0, 0, 0), Vec3(1, 1, 1), Vec3(2, 2, 2)}), ErrorKind::DegenerateNeighborhood);
  EXPECT_EQ(kind({Vec3(1, 0, 0), Vec3(1, 0, 0), Vec3(1, 0, 0)}), ErrorKind::DegenerateNeighborhood);
  EXPECT_THROW(estimate_normals({Vec3::Zero(), Vec3::UnitX()}, 3), Error);
}

TEST(OrientNormals, FacesTheCamera) {
  auto pts = plane_grid(10, 0.1);
  for (double side : {10.0, -10.0}) {
    std::vector<Vec3> normals(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) normals[i] = i % 2 ? Vec3::UnitZ() : Vec3(-Vec3::UnitZ());
    auto rep = orient_normals(pts, normals, {Vec3(0, 0, side)});
    EXPECT_EQ(rep.flipped, pts.size() / 2);
    for (const auto &n : normals) EXPECT_EQ(n, Vec3(0, 0, side > 0 ? 1 : -1));
  }
}

TEST(OrientNormals, PerpendicularKeepsSignAndIsCounted) {
  std::vector<Vec3> pts{Vec3::Zero()}, normals{Vec3::UnitX()};
  auto rep = orient_normals(pts, normals, {Vec3(0, 0, 5)});
  EXPECT_EQ(rep.perpendicular, 1u);
  EXPECT_EQ(normals[0], Vec3::UnitX());
}

TEST(OrientNormals, SphereWithOrbitCamerasIsOutward) {
  AnalyticScene sc;
  sc.shape = SphereShape{Vec3::Zero(), 0.8};
  auto c = sample_scene(sc, 4000, {}, 8);
  auto normals = estimate_normals(c.positions, 16);
  std::vector<Vec3> centers;
  for (const auto &cam : orbit_cameras(6, 2.5, 25, Vec3::Zero(), Intrinsics{})) centers.push_back(cam.center());
  for (const auto &cam : orbit_cameras(6, 2.5, -25, Vec3::Zero(), Intrinsics{})) centers.push_back(cam.center());
  orient_normals(c.positions, normals, centers);
  std::size_t outward = 0;
  for (std::size_t i = 0; i < c.size(); ++i) outward += normals[i].dot(c.positions[i]) > 0;
  EXPECT_GE(outward, static_cast<std::size_t>(0.99 * c.size()));
}

TEST(DownsampleUniform, SeparatedLatticeUnchanged) {
  auto c = with_up_normals(plane_grid(20, 0.0625));
  auto d = downsample_uniform(c);
  EXPECT_EQ(d.positions, c.positions);
  EXPECT_EQ(d.density, 0.0625);
}

TEST(DownsampleUniform, DuplicatesCollapseToOneCopy) {
  auto grid = plane_grid(12, 0.125);
  std::vector<Vec3> pts;
  for (const auto &p : grid) {
    pts.push_back(p);
    pts.push_back(p);
  }
  auto d = downsample_uniform(with_up_normals(pts));
  EXPECT_EQ(d.positions, grid);
}

TEST(DownsampleUniform, SurvivorsAreSeparatedAndIdempotent) {
  auto c = with_up_normals(random_points(10000, 3));
  auto d = downsample_uniform(c);
  KdTree t0(c.positions);
  EXPECT_NEAR(d.density, spacing_percentile(c.positions, t0, 0.9), 0);
  EXPECT_LT(d.size(), c.size());
  // Brute force over all surviving pairs.
  const double t2 = d.density * d.density;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = i + 1; j < d.size(); ++j) ASSERT_GE((d.positions[i] - d.positions[j]).squaredNorm(), t2);
  auto e = downsample_uniform(d);
  EXPECT_EQ(e.positions, d.positions);
  EXPECT_EQ(e.density, d.density);
}

TEST(BoundaryPoints, InsideCenterKeptAndAxisEntry) {
  const Box box = Box::cube(1.0);
  Camera in;
  in.width = in.height = 8;
  in.translation = Vec3(0.2, 0.1, 0.0);
  Camera out = in;
  out.translation = Vec3(0, 0, 5);
  out.rotation = look_at_rotation(out.translation, Vec3::Zero());
  Camera away = out;
  away.rotation = look_at_rotation(away.translation, Vec3(0, 0, 10));
  auto r = make_boundary_points({in, out, away}, box);
  ASSERT_EQ(r.points.size(), 2u);
  EXPECT_EQ(r.points[0], in.translation);
  EXPECT_NEAR((r.points[1] - Vec3(0, 0, 1)).norm(), 0.0, 1e-12);
  EXPECT_EQ(r.skipped, 1u);
}

TEST(BoundaryPoints, PixelGridPointsLieOnTheBox) {
  const Box box = Box::cube(1.0);
  auto cams = orbit_cameras(4, 3.0, 20, Vec3::Zero(), Intrinsics::from_fov(32, 32, 50));
  auto r = make_boundary_points(cams, box, 4);
  EXPECT_EQ(r.points.size() + r.skipped, 64u);
  for (const auto &p : r.points) {
    EXPECT_TRUE(box.contains(p, 1e-12));
    EXPECT_NEAR((p.cwiseAbs()).maxCoeff(), 1.0, 1e-12);
  }
}

TEST(BoundaryTargetDistance, PointToPlane) {
  auto c = with_up_normals({Vec3(0, 0, 1)});
  KdTree t(c.positions);
  EXPECT_DOUBLE_EQ(boundary_target_distance(Vec3(0, 0, 5), c, t, 1), 4.0);
}

TEST(BoundaryTargetDistance, DensePlaneHeight) {
  auto c = with_up_normals(plane_grid(60, 0.02));
  c.density = 0.02;
  KdTree t(c.positions);
  for (double h : {0.05, 0.3, 0.9}) {
    const double d = boundary_target_distance(Vec3(0.013, -0.007, h), c, t, 8, 60);
    EXPECT_NEAR(d, h, 2 * c.density);
    EXPECT_GE(d, 0);
  }
}

TEST(BoundaryTargetDistance, AngleFilterAndFallback) {
  OrientedPointCloud c;
  c.positions = {Vec3(0, 0, 0), Vec3(0.1, 0, 0)};
  c.normals = {Vec3::UnitX(), Vec3::UnitZ()};
  KdTree t(c.positions);
  // Only neighbor has a normal perpendicular to the offset: excluded, then used as the fallback.
  EXPECT_DOUBLE_EQ(boundary_target_distance(Vec3(0, 0, 2), c, t, 1, 30), 0.0);
  // With two neighbors the perpendicular one is dropped and the other is averaged alone.
  EXPECT_DOUBLE_EQ(boundary_target_distance(Vec3(0, 0, 2), c, t, 2, 30), 2.0);
}

TEST(PlyFiles, BinaryAndAsciiRoundTrip) {
  AnalyticScene sc;
  auto c = sample_scene(sc, 200, {}, 2);
  for (bool binary : {true, false}) {
    write_ply(temp_path("c.ply"), c.positions, c.normals, binary);
    auto r = read_ply(temp_path("c.ply"));
    EXPECT_EQ(r.positions, c.positions);
    EXPECT_EQ(r.normals, c.normals);
    EXPECT_TRUE(r.warnings.empty());
  }
}

TEST(PlyFiles, FloatPropertiesAndUnknownsSkipped) {
  const std::string text =
      "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\nproperty float x\nproperty float y\n"
      "property float z\nproperty uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
      "0.5 1 2 255\n3 4 5 0\n3 0 1 1\n";
  auto r = parse_ply(std::vector<unsigned char>(text.begin(), text.end()));
  ASSERT_EQ(r.positions.size(), 2u);
  EXPECT_EQ(r.positions[1], Vec3(3, 4, 5));
  EXPECT_TRUE(r.normals.empty());
  EXPECT_EQ(r.warnings.size(), 2u);

  ByteWriter w;
  w.put_bytes("ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
              "property float z\nproperty int flag\nproperty float nx\nproperty float ny\nproperty float nz\nend_header\n");
  for (float v : {1.5f, -2.0f, 0.25f}) w.put(v);
  w.put(std::int32_t(7));
  for (float v : {0.0f, 0.0f, 1.0f}) w.put(v);
  auto b = parse_ply(w.bytes());
  EXPECT_EQ(b.positions[0], Vec3(1.5, -2.0, 0.25));
  EXPECT_EQ(b.normals[0], Vec3(0, 0, 1));
  EXPECT_EQ(b.warnings.size(), 1u);
}

TEST(PlyFiles, MalformedFilesAreDataErrors) {
  auto kind = [](const std::string &text) {
    try {
      parse_ply(std::vector<unsigned char>(text.begin(), text.end()));
    } catch (const Error &e) {
      return e.kind();
    }
    return ErrorKind::Config;
  };
  EXPECT_EQ(kind("plx\n"), ErrorKind::Data);
  EXPECT_EQ(kind("ply\nformat binary_big_endian 1.0\nend_header\n"), ErrorKind::Data);
  EXPECT_EQ(kind("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n"),
            ErrorKind::Data);
  EXPECT_EQ(kind("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n"), ErrorKind::Data);
}
