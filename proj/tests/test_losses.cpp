#include "oracles.hpp"

#include "sdfforge/losses.hpp"
#include "sdfforge/synth.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace sdfforge;

namespace {

FunctionField constant_field(double v) {
  return FunctionField([=](const Vec3 &) { return v; }, [](const Vec3 &) { return Vec3::Zero().eval(); },
                       [](const Vec3 &) { return Mat3::Zero().eval(); });
}

std::vector<Vec3> sphere_points(std::size_t n, double r, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(r * detail::random_unit(rng));
  return out;
}

std::vector<Vec3> box_points(std::size_t n, double half, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(oracle::random_point(rng, half));
  return out;
}

Mlp<double> small_sdf(std::uint64_t seed, int descriptor = 3) {
  return init_params<double>(MlpArchitecture::sdf({16, 16}, {}, 2, descriptor), seed);
}

// Mostly the plane z = 0.02 with a curved random perturbation, so traced hits exist and every
// derivative channel is non-trivial. Unit 0 of the skip layer passes z through the softplus in its
// linear regime.
Mlp<double> bumpy_plane(std::uint64_t seed, int descriptor = 3) {
  auto m = init_params<double>(MlpArchitecture::sdf({16, 16}, {1}, 2, descriptor), seed);
  auto w1 = m.params.weight(1);
  w1.row(0).setZero();
  w1(0, 18) = 1.0;
  m.params.bias(1)(0) = 5.0;
  auto w2 = m.params.weight(2);
  w2 *= 0.1;
  w2(0, 0) = 1.0;
  m.params.bias(2)(0) = -5.02;
  return m;
}

Mlp<double> small_slf(std::uint64_t seed, int descriptor = 3) {
  return init_params<double>(MlpArchitecture::light_field({16, 16}, descriptor, 2), seed);
}

std::vector<Camera> top_camera(int size = 8) {
  Camera c;
  c.name = "top";
  c.width = c.height = size;
  c.fx = c.fy = size;
  c.cx = c.cy = 0.5 * size;
  c.translation = Vec3(0.3, -0.2, 1.5);
  c.rotation = look_at_rotation(c.translation, Vec3(0.1, 0.05, 0));
  return {c};
}

std::vector<PixelSample> all_pixels(const Camera &cam, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<PixelSample> px;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) px.push_back({0, x + 0.5, y + 0.5, Vec3(u(rng), u(rng), u(rng))});
  return px;
}

SampleBatch random_batch(std::uint64_t seed, std::size_t n = 40) {
  std::mt19937_64 rng(seed);
  SampleBatch b;
  b.data_positions = box_points(n, 0.8, seed + 1);
  for (std::size_t i = 0; i < n; ++i) b.data_normals.push_back(detail::random_unit(rng));
  std::uniform_real_distribution<double> u(0, 1);
  for (const auto &x : box_points(n / 2, 1.0, seed + 2)) b.boundary.push_back({x, u(rng)});
  b.uniform = box_points(n, 1.0, seed + 3);
  return b;
}

LossWeights only(const std::string &term) {
  LossWeights w;
  w.data = w.boundary = w.eikonal = w.hessian = w.minimal = w.render = 0;
  if (term == "data") w.data = 1;
  if (term == "boundary") w.boundary = 1;
  if (term == "eikonal") w.eikonal = 1;
  if (term == "hessian") w.hessian = 1;
  if (term == "minimal") w.minimal = 1;
  if (term == "render") w.render = 1;
  w.epsilon = 0.5;
  return w;
}

} // namespace

TEST(Dirac, ClosedForm) {
  EXPECT_NEAR(dirac(0, 10), 1.0 / (10 * kPi), 1e-12);
  EXPECT_NEAR(dirac(10, 10), 1.0 / (20 * kPi), 1e-12);
  EXPECT_NEAR(dirac(-10, 10), 1.0 / (20 * kPi), 1e-12);
  for (double z = 0.1; z < 100; z *= 1.5) EXPECT_LT(dirac(z * 1.5, 10), dirac(z, 10));
  const double h = 1e-5;
  for (double z : {-3.0, -0.2, 0.0, 0.7, 12.0})
    EXPECT_NEAR(dirac_derivative(z, 2), (dirac(z + h, 2) - dirac(z - h, 2)) / (2 * h), 1e-9);
}

TEST(DataLoss, ExactSphereSamplesVanish) {
  auto x = sphere_points(2000, 1.0, 1);
  auto n = x;
  EXPECT_LT(data_loss(sphere_field(1.0), std::span<const Vec3>(x), std::span<const Vec3>(n), 1, 1), 1e-7);
}

TEST(DataLoss, AntiparallelNormalsCostTwoLambdaN) {
  auto x = sphere_points(100, 1.0, 2);
  std::vector<Vec3> n;
  for (const auto &p : x) n.push_back(-p);
  EXPECT_NEAR(data_loss(sphere_field(1.0), std::span<const Vec3>(x), std::span<const Vec3>(n), 1, 0.5), 1.0, 1e-12);
}

TEST(DataLoss, VanishingGradientGetsMaximumPenalty) {
  auto x = box_points(10, 1, 3);
  auto n = sphere_points(10, 1, 4);
  std::size_t bad = 0;
  const double l = data_loss(constant_field(0.25), std::span<const Vec3>(x), std::span<const Vec3>(n), 2, 3, &bad);
  EXPECT_NEAR(l, 2 * 0.25 + 3 * 2.0, 1e-12);
  EXPECT_EQ(bad, 10u);
}

TEST(BoundaryLoss, Examples) {
  std::vector<BoundaryPoint> pts;
  for (int a = 0; a < 3; ++a)
    for (double s : {-2.0, 2.0}) {
      Vec3 x = Vec3::Zero();
      x[a] = s;
      pts.push_back({x, 1.0});  // exact distance to the unit sphere
    }
  EXPECT_LT(boundary_loss(sphere_field(1.0), std::span<const BoundaryPoint>(pts)), 1e-7);
  for (auto &p : pts) p.target_distance = 4.0;
  EXPECT_NEAR(boundary_loss(constant_field(0), std::span<const BoundaryPoint>(pts)), 4.0, 1e-12);
  pts[0].target_distance = -1;
  EXPECT_THROW(boundary_loss(constant_field(0), std::span<const BoundaryPoint>(pts)), Error);
}

TEST(EikonalLoss, Examples) {
  auto x = box_points(5000, 2, 5);
  EXPECT_LT(eikonal_loss(sphere_field(1.0), std::span<const Vec3>(x)), 1e-7);
  FunctionField lin([](const Vec3 &p) { return 2 * p[0]; }, [](const Vec3 &) { return Vec3(2, 0, 0); });
  EXPECT_NEAR(eikonal_loss(lin, std::span<const Vec3>(x)), 1.0, 1e-12);
}

TEST(EikonalLoss, RandomNetMatchesDirectEvaluation) {
  auto m = small_sdf(6);
  auto x = box_points(300, 1, 7);
  double ref = 0;
  for (const auto &p : x) {
    auto g = oracle::fd_gradient([&](const Vec3 &q) { return oracle::sdf(m.arch, m.params.values, q); }, p, 1e-5);
    ref += std::abs(g.norm() - 1);
  }
  ref /= 300;
  EXPECT_NEAR(eikonal_loss(NeuralField<double>(m), std::span<const Vec3>(x)), ref, 1e-8);
}

TEST(HessianLoss, Examples) {
  std::vector<Vec3> x{Vec3(2, 0, 0)};
  EXPECT_NEAR(hessian_loss(sphere_field(1.0), std::span<const Vec3>(x)), 1.0, 1e-6);
  // Central-difference Hessian of the analytic distance.
  FunctionField fd_only([](const Vec3 &p) { return p.norm() - 1; });
  EXPECT_NEAR(hessian_loss(fd_only, std::span<const Vec3>(x)), 1.0, 1e-4);
  FunctionField lin([](const Vec3 &p) { return p.dot(Vec3(0.6, 0, 0.8)) - 0.1; },
                    [](const Vec3 &) { return Vec3(0.6, 0, 0.8); }, [](const Vec3 &) { return Mat3::Zero().eval(); });
  auto y = box_points(100, 1, 8);
  EXPECT_EQ(hessian_loss(lin, std::span<const Vec3>(y)), 0.0);
  EXPECT_LT(eikonal_loss(lin, std::span<const Vec3>(y)), 1e-12);
}

TEST(HessianLoss, RandomNetMatchesFiniteDifferenceOfGradient) {
  auto m = small_sdf(9);
  NeuralField<double> f(m);
  auto x = box_points(50, 1, 10);
  double ref = 0;
  for (const auto &p : x) {
    auto grad = [&](const Vec3 &q) {
      std::array<Vec3, 1> one{q};
      return f.sample(std::span<const Vec3>(one), 1).gradient[0];
    };
    ref += oracle::fd_jacobian(grad, p, 1e-5).cwiseAbs().sum();
  }
  ref /= 50;
  EXPECT_NEAR(hessian_loss(f, std::span<const Vec3>(x)) / ref, 1.0, 1e-4);
}

TEST(MinimalSurfaceLoss, Examples) {
  auto x = box_points(20, 1, 11);
  EXPECT_NEAR(minimal_surface_loss(constant_field(0), std::span<const Vec3>(x), 10), 1.0 / (10 * kPi), 1e-12);
  EXPECT_NEAR(minimal_surface_loss(constant_field(10), std::span<const Vec3>(x), 10), 1.0 / (20 * kPi), 1e-12);
  double prev = minimal_surface_loss(sphere_field(1.0), std::span<const Vec3>(x), 0.1);
  for (double r : {1.5, 2.0, 3.0, 5.0, 10.0}) {
    // Every sample is inside the unit-or-larger sphere, so |f| grows pointwise with r.
    const double cur = minimal_surface_loss(sphere_field(r), std::span<const Vec3>(x), 0.1);
    EXPECT_LT(cur, prev);
    prev = cur;
  }
  EXPECT_THROW(minimal_surface_loss(constant_field(0), std::span<const Vec3>(x), 0), Error);
}

TEST(RenderLoss, GrayAgainstBlackAndAllMiss) {
  auto cams = top_camera();
  auto field = FunctionField([](const Vec3 &p) { return p[2]; }, [](const Vec3 &) { return Vec3(0, 0, 1); });
  std::vector<PixelSample> px;
  for (int i = 0; i < 8; ++i) px.push_back({0, i + 0.5, 3.5, Vec3::Zero()});
  auto gray = [](const Vec3 &, const Vec3 &, const Vec3 &) { return Vec3::Constant(0.5).eval(); };
  auto settings = TraceSettings::for_box(Box::cube(1));
  auto r = render_loss(field, gray, cams, std::span<const PixelSample>(px), settings, Box::cube(1));
  EXPECT_EQ(r.hits, 8u);
  EXPECT_NEAR(r.loss, 1.5, 1e-12);
  auto away = FunctionField([](const Vec3 &) { return 5.0; });
  r = render_loss(away, gray, cams, std::span<const PixelSample>(px), settings, Box::cube(1));
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_TRUE(r.all_miss);
  EXPECT_EQ(r.misses, 8u);
}

TEST(RenderLoss, SyntheticSceneWithMatchedShading) {
  AnalyticScene scene;
  scene.albedo = CheckerAlbedo{};
  auto cams = orbit_cameras(2, 2.5, 25, Vec3::Zero(), Intrinsics::from_fov(32, 32, 45));
  auto views = render_views(scene, cams);
  std::vector<PixelSample> px;
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if (views[c].mask.valid(x, y))
          px.push_back({c, x + 0.5, y + 0.5, views[c].image.at(x, y)});
  ASSERT_GT(px.size(), 200u);
  auto color = [&](const Vec3 &x, const Vec3 &n, const Vec3 &) { return shade(scene, x, n); };
  auto r = render_loss(analytic_field(scene), color, cams, std::span<const PixelSample>(px), synth_trace_settings(),
                       Box::cube(1));
  EXPECT_EQ(r.hits, px.size());
  EXPECT_LT(r.loss, 1e-3);
}

TEST(Estimators, SphereAreaAndVolume) {
  const Box box = Box::cube(2);
  const double area = estimate_area(sphere_field(1.0), box, 0.01, 10'000'000, 1);
  EXPECT_NEAR(area / (4 * kPi), 1.0, 0.05);
  const double vol = estimate_volume(sphere_field(1.0), box, 10'000'000, 2);
  EXPECT_NEAR(vol / (4 * kPi / 3), 1.0, 0.02);
}

TEST(Estimators, TwoDisjointSpheresAdd) {
  FunctionField two([](const Vec3 &x) {
    return std::min((x - Vec3(-1.5, 0, 0)).norm() - 1, (x - Vec3(1.5, 0, 0)).norm() - 1);
  });
  const Box box({-3, -2, -2}, {3, 2, 2});
  EXPECT_NEAR(estimate_area(two, box, 0.01, 4'000'000, 3) / (8 * kPi), 1.0, 0.05);
}

TEST(Estimators, ConstantFields) {
  const Box box = Box::cube(2);
  EXPECT_LT(estimate_area(constant_field(1e6), box, 0.01, 1000, 4), 1e-9);
  EXPECT_EQ(estimate_volume(constant_field(1), box, 1000, 5), 0.0);
  EXPECT_DOUBLE_EQ(estimate_volume(constant_field(-1), box, 1000, 6), 64.0);
}

TEST(Estimators, SeedDeterminism) {
  const Box box = Box::cube(2);
  EXPECT_EQ(estimate_area(sphere_field(1.0), box, 0.1, 200'000, 7), estimate_area(sphere_field(1.0), box, 0.1, 200'000, 7));
  EXPECT_NE(estimate_area(sphere_field(1.0), box, 0.1, 200'000, 7), estimate_area(sphere_field(1.0), box, 0.1, 200'000, 8));
}

TEST(ComputeLosses, BreakdownMatchesFieldLosses) {
  auto sdf = small_sdf(12);
  auto slf = small_slf(13);
  auto batch = random_batch(14, 1500);
  auto cams = top_camera();
  batch.pixels = all_pixels(cams[0], 15);
  auto net = bumpy_plane(16);
  RenderContext ctx{&cams, Box::cube(1), TraceSettings::for_box(Box::cube(1)), RenderMode::Frozen, 1.0};
  LossWeights w;
  w.epsilon = 0.5;
  auto t = compute_losses(net, &slf, batch, w, &ctx, nullptr);
  NeuralField<double> f(net);
  std::size_t bad = 0;
  EXPECT_NEAR(t.data, data_loss(f, std::span<const Vec3>(batch.data_positions), std::span<const Vec3>(batch.data_normals),
                                1, 1, &bad), 1e-12);
  EXPECT_EQ(t.vanishing_normals, bad);
  EXPECT_NEAR(t.boundary, boundary_loss(f, std::span<const BoundaryPoint>(batch.boundary)), 1e-12);
  EXPECT_NEAR(t.eikonal, eikonal_loss(f, std::span<const Vec3>(batch.uniform)), 1e-12);
  EXPECT_NEAR(t.hessian, hessian_loss(f, std::span<const Vec3>(batch.uniform)), 1e-10);
  EXPECT_NEAR(t.minimal, minimal_surface_loss(f, std::span<const Vec3>(batch.uniform), 0.5), 1e-12);

  // Light field evaluated by the straight-loop oracle on the SDF descriptor at the hit.
  auto color = [&](const Vec3 &x, const Vec3 &n, const Vec3 &v) {
    auto head = oracle::forward(net.arch, net.params.values, oracle::encode(x, net.arch.pe_octaves));
    std::vector<double> z(head.begin() + 1, head.end());
    auto c = oracle::forward(slf.arch, slf.params.values, oracle::slf_input(slf.arch, x, n, v, z));
    return Vec3(c[0], c[1], c[2]);
  };
  auto r = render_loss(f, color, cams, std::span<const PixelSample>(batch.pixels), ctx.settings, ctx.box);
  ASSERT_GT(r.hits, 40u);
  EXPECT_EQ(t.render_hits, r.hits);
  EXPECT_EQ(t.render_misses, r.misses);
  EXPECT_NEAR(t.render, r.loss, 1e-12);

  const double total = t.data + t.boundary + 0.1 * t.eikonal + 0.01 * t.hessian + 0.01 * t.minimal + t.render;
  EXPECT_NEAR(t.total, total, 1e-12 * total);
  (void)sdf;
}

TEST(ComputeLosses, InvariantToSampleOrder) {
  auto net = small_sdf(17);
  auto batch = random_batch(18, 3000);
  auto perm = batch;
  std::mt19937_64 rng(19);
  std::vector<std::size_t> idx(batch.data_positions.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    perm.data_positions[i] = batch.data_positions[idx[i]];
    perm.data_normals[i] = batch.data_normals[idx[i]];
  }
  std::shuffle(perm.uniform.begin(), perm.uniform.end(), rng);
  std::shuffle(perm.boundary.begin(), perm.boundary.end(), rng);
  LossWeights w;
  auto a = compute_losses(net, nullptr, batch, w, nullptr, nullptr);
  auto b = compute_losses(net, nullptr, perm, w, nullptr, nullptr);
  EXPECT_NEAR(a.total, b.total, 1e-12 * a.total);
  for (double v : {a.data, a.boundary, a.eikonal, a.hessian, a.minimal, a.render}) EXPECT_GE(v, 0.0);
}

TEST(ComputeLosses, Deterministic) {
  auto net = small_sdf(20);
  auto batch = random_batch(21, 5000);
  LossGradients g1, g2;
  auto a = compute_losses(net, nullptr, batch, LossWeights{}, nullptr, &g1);
  auto b = compute_losses(net, nullptr, batch, LossWeights{}, nullptr, &g2);
  EXPECT_EQ(a.total, b.total);
  EXPECT_EQ(g1.theta, g2.theta);
}

TEST(ComputeLosses, ZeroWeightsGiveZeroTotalAndGradient) {
  auto net = small_sdf(22);
  auto batch = random_batch(23);
  LossWeights w = only("none");
  LossGradients g;
  auto t = compute_losses(net, nullptr, batch, w, nullptr, &g);
  EXPECT_EQ(t.total, 0.0);
  EXPECT_GT(t.data, 0.0);
  for (double v : g.theta) EXPECT_EQ(v, 0.0);
}

TEST(ComputeLosses, RectifierHessianIsRejectedWithTermName) {
  auto arch = MlpArchitecture::sdf({8}, {}, 0, 0);
  arch.activation = Activation::Relu;
  auto net = init_params<double>(arch, 24);
  auto batch = random_batch(25);
  try {
    compute_losses(net, nullptr, batch, LossWeights{}, nullptr, nullptr);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnsupportedActivation);
    EXPECT_NE(std::string(e.what()).find("hessian"), std::string::npos);
  }
  LossWeights w;
  w.hessian = 0;
  EXPECT_NO_THROW(compute_losses(net, nullptr, batch, w, nullptr, nullptr));
}

TEST(ComputeLosses, FloatAgreesWithDouble) {
  auto net = small_sdf(26);
  auto batch = random_batch(27, 500);
  LossGradients gd, gf;
  auto d = compute_losses(net, nullptr, batch, LossWeights{}, nullptr, &gd);
  auto f = compute_losses(net.cast<float>(), nullptr, batch, LossWeights{}, nullptr, &gf);
  EXPECT_NEAR(f.total, d.total, 1e-4 * d.total);
  EXPECT_LT(oracle::relative_error(gf.theta, gd.theta), 1e-3);
}

class TermGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(TermGradient, MatchesFiniteDifferences) {
  auto net = small_sdf(28);
  auto batch = random_batch(29, 30);
  const LossWeights w = only(GetParam());
  LossGradients g;
  compute_losses(net, nullptr, batch, w, nullptr, &g);
  auto loss = [&](const std::vector<double> &theta) {
    auto m = net;
    m.params.values = theta;
    return compute_losses(m, nullptr, batch, w, nullptr, nullptr).total;
  };
  auto fd = oracle::fd_params(loss, net.params.values, 1e-6);
  EXPECT_LT(oracle::relative_error(g.theta, fd), 1e-5) << GetParam();
}

INSTANTIATE_TEST_SUITE_P(Losses, TermGradient, ::testing::Values("data", "boundary", "eikonal", "hessian", "minimal"));

// Render loss with the hit frozen at x0 and moved by the differentiable intersection, evaluated by
// the oracle networks.
class RenderGradient : public ::testing::TestWithParam<double> {};

TEST_P(RenderGradient, MatchesFrozenHitOracle) {
  const double scale = GetParam();
  auto net = bumpy_plane(30);
  auto slf = small_slf(31);
  auto cams = top_camera();
  SampleBatch batch;
  batch.pixels = all_pixels(cams[0], 32);
  RenderContext ctx{&cams, Box::cube(1), TraceSettings::for_box(Box::cube(1)), RenderMode::Differentiable, scale};
  const LossWeights w = only("render");
  LossGradients g;
  auto t = compute_losses(net, &slf, batch, w, &ctx, &g);
  ASSERT_GT(t.render_hits, 40u);

  std::vector<PixelRef> refs;
  for (const auto &p : batch.pixels) refs.push_back({p.camera, p.u, p.v});
  auto hits = shade_pixels(net, slf, cams, std::span<const PixelRef>(refs), ctx.settings, ctx.box, ctx.mode);
  ASSERT_EQ(hits.size(), t.render_hits);

  auto oracle_loss = [&](const std::vector<double> &theta, const std::vector<double> &phi) {
    double sum = 0;
    for (std::size_t k = 0; k < hits.size(); ++k) {
      const Vec3 &x0 = hits.x0[k], &v = hits.view[k];
      auto f_at = [&](const Vec3 &q) { return oracle::sdf(net.arch, theta, q); };
      const Vec3 x = x0 - scale * v * (f_at(x0) - hits.f0[k]) / v.dot(hits.gradient[k]);
      Mlp<double> m = net;
      m.params.values = theta;
      std::array<Vec3, 1> one{x};
      auto pass = forward_points(m, std::span<const Vec3>(one), 1, m.arch.head_width());
      const Vec3 grad(pass.output(0, 1), pass.output(0, 2), pass.output(0, 3));
      auto head = oracle::forward(net.arch, theta, oracle::encode(x, net.arch.pe_octaves));
      std::vector<double> z(head.begin() + 1, head.end());
      auto c = oracle::forward(slf.arch, phi, oracle::slf_input(slf.arch, x, grad.normalized(), v, z));
      sum += (Vec3(c[0], c[1], c[2]) - batch.pixels[hits.pixel[k]].rgb).cwiseAbs().sum();
    }
    return sum / static_cast<double>(hits.size());
  };
  EXPECT_NEAR(oracle_loss(net.params.values, slf.params.values), t.render, 1e-12);
  auto fd_theta = oracle::fd_params([&](const std::vector<double> &th) { return oracle_loss(th, slf.params.values); },
                                    net.params.values, 1e-6);
  EXPECT_LT(oracle::relative_error(g.theta, fd_theta), 1e-4);
  auto fd_phi = oracle::fd_params([&](const std::vector<double> &ph) { return oracle_loss(net.params.values, ph); },
                                  slf.params.values, 1e-6);
  EXPECT_LT(oracle::relative_error(g.phi, fd_phi), 1e-5);
}

INSTANTIATE_TEST_SUITE_P(Losses, RenderGradient, ::testing::Values(1.0, 0.1));

TEST(ComputeLosses, FrozenRenderTrainsLightFieldOnly) {
  auto net = bumpy_plane(33);
  auto slf = small_slf(34);
  auto cams = top_camera();
  SampleBatch batch;
  batch.pixels = all_pixels(cams[0], 35);
  RenderContext ctx{&cams, Box::cube(1), TraceSettings::for_box(Box::cube(1)), RenderMode::Frozen, 1.0};
  LossGradients g;
  compute_losses(net, &slf, batch, only("render"), &ctx, &g);
  for (double v : g.theta) EXPECT_EQ(v, 0.0);
  double norm = 0;
  for (double v : g.phi) norm += v * v;
  EXPECT_GT(norm, 0.0);
}

TEST(ComputeLosses, AllMissRenderIsZeroWithFlag) {
  auto net = bumpy_plane(36);
  net.params.bias(2)(0) = 5.0;
  auto slf = small_slf(37);
  auto cams = top_camera();
  SampleBatch batch;
  batch.pixels = all_pixels(cams[0], 38);
  RenderContext ctx{&cams, Box::cube(1), TraceSettings::for_box(Box::cube(1)), RenderMode::Differentiable, 1.0};
  LossGradients g;
  auto t = compute_losses(net, &slf, batch, LossWeights{}, &ctx, &g);
  EXPECT_TRUE(t.render_all_miss);
  EXPECT_EQ(t.render, 0.0);
  EXPECT_EQ(t.skipped_pixels(), batch.pixels.size());
  EXPECT_NE(format_terms(t).find("render_all_miss=1"), std::string::npos);
}
