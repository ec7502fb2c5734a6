#include "oracles.hpp"

#include "sdfforge/synth.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace sdfforge;

namespace {

AnalyticScene scene_with(Shape s) {
  AnalyticScene sc;
  sc.shape = std::move(s);
  return sc;
}

std::string temp_path(const std::string &name) {
  return (std::filesystem::temp_directory_path() / ("sdfforge_synth_" + name)).string();
}

} // namespace

TEST(AnalyticSdf, SphereValues) {
  Shape s = SphereShape{Vec3::Zero(), 1.0};
  EXPECT_DOUBLE_EQ(analytic_sdf(s, Vec3(2, 0, 0)), 1.0);
  EXPECT_DOUBLE_EQ(analytic_sdf(s, Vec3::Zero()), -1.0);
}

TEST(AnalyticSdf, TorusSurfacePoint) {
  Shape s = TorusShape{Vec3::Zero(), 0.6, 0.2};
  EXPECT_NEAR(analytic_sdf(s, Vec3(0.6, 0, 0.2)), 0.0, 1e-15);
  EXPECT_NEAR(analytic_sdf(s, Vec3(0, 0, 0)), 0.4, 1e-15);
}

TEST(AnalyticSdf, BoxAndUnion) {
  Shape b = BoxShape{Vec3::Zero(), Vec3(0.5, 0.3, 0.2)};
  EXPECT_NEAR(analytic_sdf(b, Vec3(1, 0, 0)), 0.5, 1e-15);
  EXPECT_NEAR(analytic_sdf(b, Vec3::Zero()), -0.2, 1e-15);
  EXPECT_NEAR(analytic_sdf(b, Vec3(0.8, 0.7, 0.2)), 0.5, 1e-15);
  Shape u = SphereUnion{{{Vec3(-0.5, 0, 0), 0.3}, {Vec3(0.5, 0, 0), 0.2}}};
  EXPECT_NEAR(analytic_sdf(u, Vec3(0.5, 0, 0.5)), 0.3, 1e-15);
  EXPECT_NEAR(analytic_sdf(u, Vec3(-0.5, 0, 0)), -0.3, 1e-15);
}

TEST(AnalyticSdf, EikonalPropertyPerPrimitive) {
  const std::vector<Shape> shapes{SphereShape{Vec3(0.1, 0, 0), 0.7}, TorusShape{Vec3::Zero(), 0.6, 0.2},
                                  BoxShape{Vec3::Zero(), Vec3(0.5, 0.4, 0.3)},
                                  SphereUnion{{{Vec3(-0.45, 0, 0), 0.35}, {Vec3(0.45, 0.1, 0), 0.3}}}};
  std::mt19937_64 rng(1);
  for (const auto &s : shapes) {
    int checked = 0;
    while (checked < 10000) {
      const Vec3 x = oracle::random_point(rng, 1.0);
      const Vec3 g = oracle::fd_gradient([&](const Vec3 &p) { return analytic_sdf(s, p); }, x, 1e-6);
      // Skip points near medial sets, where the FD stencil straddles a crease.
      const Vec3 ga = analytic_gradient(s, x);
      if ((g - ga).norm() > 1e-3) continue;
      ++checked;
      ASSERT_NEAR(g.norm(), 1.0, 1e-4);
      ASSERT_NEAR(ga.norm(), 1.0, 1e-12);
    }
  }
}

TEST(AnalyticScene, ValidationEnforcesMargin) {
  EXPECT_NO_THROW(scene_with(SphereShape{Vec3::Zero(), 0.8}).validate());
  EXPECT_THROW(scene_with(SphereShape{Vec3::Zero(), 0.95}).validate(), Error);
  EXPECT_THROW(scene_with(SphereShape{Vec3::Zero(), -1}).validate(), Error);
  EXPECT_THROW(scene_with(SphereUnion{{{Vec3::Zero(), 0.3}, {Vec3(0.5, 0, 0), 0.3}}}).validate(), Error);
}

TEST(SampleScene, CleanSphereSamplesAreExact) {
  auto sc = scene_with(SphereShape{Vec3::Zero(), 0.8});
  auto c = sample_scene(sc, 2000, {}, 3);
  ASSERT_EQ(c.size(), 2000u);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_LT(std::abs(analytic_sdf(sc, c.positions[i])), 1e-12);
    EXPECT_LT((c.normals[i] - c.positions[i].normalized()).norm(), 1e-12);
  }
  EXPECT_NO_THROW(c.validate());
}

TEST(SampleScene, CleanSamplesOnEveryPrimitive) {
  for (Shape s : {Shape(TorusShape{}), Shape(BoxShape{}), Shape(SphereUnion{{{Vec3(-0.45, 0, 0), 0.3}, {Vec3(0.45, 0, 0), 0.3}}})}) {
    auto c = sample_scene(scene_with(s), 500, {}, 9);
    for (std::size_t i = 0; i < c.size(); ++i) {
      EXPECT_LT(std::abs(analytic_sdf(s, c.positions[i])), 1e-12);
      EXPECT_LT((c.normals[i] - analytic_gradient(s, c.positions[i] + 1e-9 * c.normals[i])).norm(), 1e-6);
    }
  }
}

TEST(SampleScene, TorusSamplingIsAreaUniform) {
  // The outer half (cos b > 0) of the torus holds (1/2 + r/(pi R)) of the area.
  TorusShape t{Vec3::Zero(), 0.6, 0.2};
  auto c = sample_scene(scene_with(t), 40000, {}, 4);
  double outer = 0;
  for (const auto &p : c.positions) outer += std::hypot(p.x(), p.y()) > t.major;
  const double expected = 0.5 + t.minor / (kPi * t.major);
  EXPECT_NEAR(outer / c.size(), expected, 0.01);
}

TEST(SampleScene, PolarHoleRemovesCap) {
  auto sc = scene_with(SphereShape{Vec3::Zero(), 0.8});
  DegradationSpec d;
  d.hole = std::make_pair(Vec3(0, 0, 1), 30.0);
  auto c = sample_scene(sc, 5000, d, 3);
  const double cap = (1 - std::cos(kPi / 6)) / 2;
  EXPECT_NEAR(static_cast<double>(c.size()) / 5000, 1 - cap, 0.02);
  for (const auto &n : c.normals) EXPECT_LE(n.z(), std::cos(kPi / 6));
}

TEST(SampleScene, HoleRemovingEverythingIsEmptyOutput) {
  DegradationSpec d;
  d.hole = std::make_pair(Vec3(0, 0, 1), 180.0);
  try {
    sample_scene(scene_with(SphereShape{}), 100, d, 1);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyOutput);
  }
}

TEST(SampleScene, JitterRmsMatchesSigma) {
  auto sc = scene_with(SphereShape{Vec3::Zero(), 0.8});
  DegradationSpec d;
  d.jitter_sigma = 0.01;
  auto c = sample_scene(sc, 10000, d, 5);
  double ss = 0;
  for (const auto &p : c.positions) ss += std::pow(analytic_sdf(sc, p), 2);
  const double rms = std::sqrt(ss / c.size());
  EXPECT_NEAR(rms, 0.01, 0.002);
}

TEST(SampleScene, NormalNoiseHasRequestedSpread) {
  auto sc = scene_with(SphereShape{Vec3::Zero(), 0.8});
  DegradationSpec d;
  d.normal_noise_deg = 5;
  auto c = sample_scene(sc, 5000, d, 6);
  double ss = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double a = std::acos(std::clamp(c.normals[i].dot(c.positions[i].normalized()), -1.0, 1.0)) * 180 / kPi;
    ss += a * a;
    EXPECT_NEAR(c.normals[i].norm(), 1.0, 1e-12);
  }
  EXPECT_NEAR(std::sqrt(ss / c.size()), 5.0, 0.3);
}

TEST(SampleScene, SameSeedSameSamples) {
  auto sc = scene_with(TorusShape{});
  DegradationSpec d;
  d.jitter_sigma = 0.01;
  auto a = sample_scene(sc, 300, d, 42), b = sample_scene(sc, 300, d, 42), c = sample_scene(sc, 300, d, 43);
  EXPECT_EQ(a.positions, b.positions);
  EXPECT_NE(a.positions, c.positions);
}

TEST(OrbitCameras, FourViewsOnTheAxes) {
  auto cams = orbit_cameras(4, 3.0, 0, Vec3::Zero(), Intrinsics::from_fov(32, 32, 45));
  const std::array<Vec3, 4> expect{Vec3(3, 0, 0), Vec3(0, 3, 0), Vec3(-3, 0, 0), Vec3(0, -3, 0)};
  for (int i = 0; i < 4; ++i) EXPECT_LT((cams[i].center() - expect[i]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(OrbitCameras, OrthonormalAndCentered) {
  const Vec3 target(0.1, -0.2, 0.05);
  auto cams = orbit_cameras(7, 2.5, 35, target, Intrinsics::from_fov(40, 30, 60));
  for (const auto &c : cams) {
    EXPECT_NO_THROW(c.validate());
    EXPECT_NEAR(c.rotation.determinant(), 1.0, 1e-12);
    auto [uv, depth] = project(c, target);
    EXPECT_NEAR(uv.x(), c.cx, 1e-6);
    EXPECT_NEAR(uv.y(), c.cy, 1e-6);
    EXPECT_NEAR(depth, 2.5, 1e-12);
  }
}

TEST(RenderViews, CenterPixelLitHeadOn) {
  AnalyticScene sc = scene_with(SphereShape{Vec3::Zero(), 0.8});
  sc.albedo = ConstantAlbedo{Vec3(0.6, 0.5, 0.4)};
  auto cams = orbit_cameras(1, 3.0, 0, Vec3::Zero(), Intrinsics::from_fov(33, 33, 40));
  sc.light_dir = (cams[0].center()).normalized();
  auto views = render_views(sc, cams);
  ASSERT_TRUE(views[0].mask.valid(16, 16));
  const Vec3 expected = Vec3(0.6, 0.5, 0.4) * (sc.ambient + (1 - sc.ambient));
  EXPECT_NEAR((views[0].image.at(16, 16) - expected).norm(), 0.0, 1e-6);
}

TEST(RenderViews, MissesAreInvalidAndHitsLieOnSurface) {
  AnalyticScene sc = scene_with(TorusShape{});
  sc.albedo = CheckerAlbedo{};
  auto cams = orbit_cameras(3, 2.5, 30, Vec3::Zero(), Intrinsics::from_fov(32, 32, 50));
  auto views = render_views(sc, cams);
  const double tol = synth_trace_settings().hit_tol;
  for (const auto &v : views) {
    EXPECT_FALSE(v.mask.valid(0, 0));
    EXPECT_EQ(v.image.at(0, 0), Vec3::Zero());
    EXPECT_EQ(v.hits.size(), v.mask.count());
    EXPECT_GT(v.hits.size(), 50u);
    for (const auto &h : v.hits) EXPECT_LE(std::abs(analytic_sdf(sc, h)), tol);
  }
}

TEST(RenderViews, DeterministicAndPermutationEquivariant) {
  AnalyticScene sc = scene_with(SphereShape{Vec3(0.1, 0, 0), 0.6});
  sc.albedo = CheckerAlbedo{};
  auto cams = orbit_cameras(3, 2.5, 20, Vec3::Zero(), Intrinsics::from_fov(24, 24, 50));
  auto a = render_views(sc, cams);
  std::vector<Camera> rev(cams.rbegin(), cams.rend());
  auto b = render_views(sc, rev);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].image.data, b[2 - i].image.data);
    EXPECT_EQ(a[i].mask.data, b[2 - i].mask.data);
  }
}

TEST(ImageFiles, PpmAndPgmRoundTrip) {
  Image img(5, 3);
  Mask m(5, 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x) {
      img.set(x, y, Vec3(x / 4.0, y / 2.0, 0.3));
      m.set(x, y, (x + y) % 2 == 0);
    }
  write_ppm(temp_path("a.ppm"), img);
  write_pgm(temp_path("a.pgm"), m);
  auto img2 = read_ppm(temp_path("a.ppm"));
  auto m2 = read_pgm(temp_path("a.pgm"));
  EXPECT_EQ(img2.data, quantize(img).data);
  EXPECT_EQ(m2.data, m.data);
  EXPECT_EQ(to_byte(0.3), 77);
}

TEST(ImageFiles, TruncatedFileIsDataError) {
  {
    std::ofstream out(temp_path("bad.ppm"), std::ios::binary);
    out << "P6\n4 4\n255\nabc";
  }
  try {
    read_ppm(temp_path("bad.ppm"));
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::Data);
  }
}

TEST(SynthSpec, ParsesAndRejectsUnknownKeys) {
  auto s = synth_spec_from(KvConfig::parse("shape = torus\nmajor_radius = 0.5\nminor_radius = 0.15\n"
                                           "albedo = checker\njitter = 0.01\nhole_half_angle = 30\nviews = 4\n"));
  EXPECT_TRUE(std::holds_alternative<TorusShape>(s.scene.shape));
  EXPECT_DOUBLE_EQ(std::get<TorusShape>(s.scene.shape).major, 0.5);
  EXPECT_TRUE(s.degradation.hole.has_value());
  EXPECT_EQ(s.views, 4);
  try {
    synth_spec_from(KvConfig::parse("shape = sphere\nradiuss = 0.5\n"));
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
    EXPECT_NE(std::string(e.what()).find("radiuss"), std::string::npos);
  }
  EXPECT_THROW(synth_spec_from(KvConfig::parse("shape = cone\n")), Error);
  EXPECT_THROW(synth_spec_from(KvConfig::parse("radius = 1.5\n")), Error);
}
