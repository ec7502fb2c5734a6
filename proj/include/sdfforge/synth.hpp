#pragma once

// Analytic scenes with exact distances, normals and a reference renderer.

#include "sdfforge/image.hpp"
#include "sdfforge/kvconfig.hpp"
#include "sdfforge/pointcloud.hpp"
#include "sdfforge/tracer.hpp"

#include <random>
#include <variant>

namespace sdfforge {

struct SphereShape {
  Vec3 center = Vec3::Zero();
  double radius = 0.8;
};
struct TorusShape {  // axis along z
  Vec3 center = Vec3::Zero();
  double major = 0.6;
  double minor = 0.2;
};
struct BoxShape {
  Vec3 center = Vec3::Zero();
  Vec3 half = Vec3::Constant(0.5);
};
struct SphereUnion {
  std::vector<SphereShape> spheres;
};
using Shape = std::variant<SphereShape, TorusShape, BoxShape, SphereUnion>;

struct ConstantAlbedo {
  Vec3 rgb = Vec3(0.8, 0.6, 0.4);
};
struct CheckerAlbedo {
  double period = 0.25;
  Vec3 a = Vec3(0.9, 0.9, 0.9);
  Vec3 b = Vec3(0.2, 0.3, 0.6);
};
using Albedo = std::variant<ConstantAlbedo, CheckerAlbedo>;

struct AnalyticScene {
  Shape shape = SphereShape{};
  Albedo albedo = ConstantAlbedo{};
  Vec3 light_dir = Vec3(0.3, -0.4, 0.866).normalized();
  double ambient = 0.3;

  Box bounds() const;
  void validate() const;
};

struct DegradationSpec {
  double jitter_sigma = 0;
  std::optional<std::pair<Vec3, double>> hole;  // (axis, half angle in degrees)
  double normal_noise_deg = 0;
};

namespace detail {

inline double sphere_sdf(const SphereShape &s, const Vec3 &x) { return (x - s.center).norm() - s.radius; }

inline Vec3 safe_normalized(const Vec3 &v, const Vec3 &fallback) {
  const double n = v.norm();
  return n > 0 ? Vec3(v / n) : fallback;
}

} // namespace detail

inline double analytic_sdf(const Shape &shape, const Vec3 &x) {
  return std::visit(
      [&](const auto &s) -> double {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, SphereShape>) {
          return detail::sphere_sdf(s, x);
        } else if constexpr (std::is_same_v<S, TorusShape>) {
          const Vec3 p = x - s.center;
          const double q = std::hypot(p.x(), p.y()) - s.major;
          return std::hypot(q, p.z()) - s.minor;
        } else if constexpr (std::is_same_v<S, BoxShape>) {
          const Vec3 q = (x - s.center).cwiseAbs() - s.half;
          return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
        } else {
          double d = std::numeric_limits<double>::infinity();
          for (const auto &m : s.spheres) d = std::min(d, detail::sphere_sdf(m, x));
          return d;
        }
      },
      shape);
}

inline double analytic_sdf(const AnalyticScene &scene, const Vec3 &x) { return analytic_sdf(scene.shape, x); }

/// Gradient of the analytic distance (unit wherever it is defined).
inline Vec3 analytic_gradient(const Shape &shape, const Vec3 &x) {
  return std::visit(
      [&](const auto &s) -> Vec3 {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, SphereShape>) {
          return detail::safe_normalized(x - s.center, Vec3::UnitZ());
        } else if constexpr (std::is_same_v<S, TorusShape>) {
          const Vec3 p = x - s.center;
          const double rho = std::hypot(p.x(), p.y());
          const Vec3 radial = rho > 0 ? Vec3(p.x() / rho, p.y() / rho, 0) : Vec3::UnitX();
          const Vec3 ring = s.major * radial;
          return detail::safe_normalized(p - ring, radial);
        } else if constexpr (std::is_same_v<S, BoxShape>) {
          const Vec3 p = x - s.center;
          const Vec3 q = p.cwiseAbs() - s.half;
          Vec3 sgn;
          for (int i = 0; i < 3; ++i) sgn[i] = p[i] < 0 ? -1.0 : 1.0;
          if (q.maxCoeff() > 0) return detail::safe_normalized(q.cwiseMax(0.0).cwiseProduct(sgn), Vec3::UnitZ());
          int axis;
          q.maxCoeff(&axis);
          Vec3 g = Vec3::Zero();
          g[axis] = sgn[axis];
          return g;
        } else {
          double d = std::numeric_limits<double>::infinity();
          Vec3 g = Vec3::UnitZ();
          for (const auto &m : s.spheres) {
            const double dm = detail::sphere_sdf(m, x);
            if (dm < d) {
              d = dm;
              g = detail::safe_normalized(x - m.center, Vec3::UnitZ());
            }
          }
          return g;
        }
      },
      shape);
}

/// Axis-aligned bounds of the shape.
inline Box shape_bounds(const Shape &shape) {
  return std::visit(
      [&](const auto &s) -> Box {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, SphereShape>) {
          return {s.center.array() - s.radius, s.center.array() + s.radius};
        } else if constexpr (std::is_same_v<S, TorusShape>) {
          const Vec3 h(s.major + s.minor, s.major + s.minor, s.minor);
          return {s.center - h, s.center + h};
        } else if constexpr (std::is_same_v<S, BoxShape>) {
          return {s.center - s.half, s.center + s.half};
        } else {
          Box b{Vec3::Constant(std::numeric_limits<double>::infinity()),
                Vec3::Constant(-std::numeric_limits<double>::infinity())};
          for (const auto &m : s.spheres) {
            b.lo = b.lo.cwiseMin(Vec3(m.center.array() - m.radius));
            b.hi = b.hi.cwiseMax(Vec3(m.center.array() + m.radius));
          }
          return b;
        }
      },
      shape);
}

inline Box AnalyticScene::bounds() const { return shape_bounds(shape); }

inline void AnalyticScene::validate() const {
  std::visit(
      [&](const auto &s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, SphereShape>) {
          require(s.radius > 0, ErrorKind::Config, "sphere radius must be positive");
        } else if constexpr (std::is_same_v<S, TorusShape>) {
          require(s.minor > 0 && s.major > s.minor, ErrorKind::Config, "torus needs major > minor > 0");
        } else if constexpr (std::is_same_v<S, BoxShape>) {
          require((s.half.array() > 0).all(), ErrorKind::Config, "box half extents must be positive");
        } else {
          require(!s.spheres.empty(), ErrorKind::Config, "sphere union is empty");
          for (std::size_t i = 0; i < s.spheres.size(); ++i) {
            require(s.spheres[i].radius > 0, ErrorKind::Config, "sphere radius must be positive");
            for (std::size_t j = 0; j < i; ++j)
              require((s.spheres[i].center - s.spheres[j].center).norm() > s.spheres[i].radius + s.spheres[j].radius,
                      ErrorKind::Config, "union spheres must be disjoint");
          }
        }
      },
      shape);
  const Box b = bounds();
  require(b.lo.minCoeff() >= -0.9 && b.hi.maxCoeff() <= 0.9, ErrorKind::Config,
          "scene must fit inside [-0.9, 0.9]^3 (10% margin in the unit box)");
  require(std::abs(light_dir.norm() - 1.0) < 1e-9, ErrorKind::Config, "light direction must be unit length");
  require(ambient >= 0 && ambient <= 1, ErrorKind::Config, "ambient must lie in [0, 1]");
  if (auto *c = std::get_if<CheckerAlbedo>(&albedo)) require(c->period > 0, ErrorKind::Config, "checker period must be positive");
}

inline Vec3 albedo_at(const Albedo &albedo, const Vec3 &x) {
  if (auto *c = std::get_if<ConstantAlbedo>(&albedo)) return c->rgb;
  const auto &ch = std::get<CheckerAlbedo>(albedo);
  long long parity = 0;
  for (int i = 0; i < 3; ++i) parity += static_cast<long long>(std::floor(x[i] / ch.period));
  return (parity & 1) ? ch.b : ch.a;
}

/// Lambertian shading with an ambient floor.
inline Vec3 shade(const AnalyticScene &scene, const Vec3 &x, const Vec3 &n) {
  return albedo_at(scene.albedo, x) * (scene.ambient + (1.0 - scene.ambient) * std::max(0.0, n.dot(scene.light_dir)));
}

/// The analytic scene as a batched field.
inline FunctionField analytic_field(const AnalyticScene &scene) {
  return FunctionField([shape = scene.shape](const Vec3 &x) { return analytic_sdf(shape, x); },
                       [shape = scene.shape](const Vec3 &x) { return analytic_gradient(shape, x); });
}

namespace detail {

inline Vec3 random_unit(std::mt19937_64 &rng) {
  std::normal_distribution<double> g;
  for (;;) {
    Vec3 v(g(rng), g(rng), g(rng));
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

/// Exact surface point and outward normal, area-uniform.
inline std::pair<Vec3, Vec3> surface_sample(const Shape &shape, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  return std::visit(
      [&](const auto &s) -> std::pair<Vec3, Vec3> {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, SphereShape>) {
          const Vec3 n = random_unit(rng);
          return {s.center + s.radius * n, n};
        } else if constexpr (std::is_same_v<S, TorusShape>) {
          for (;;) {
            const double a = 2 * kPi * u01(rng), b = 2 * kPi * u01(rng);
            // Area element is proportional to (R + r cos b).
            if (u01(rng) * (s.major + s.minor) > s.major + s.minor * std::cos(b)) continue;
            const Vec3 n(std::cos(b) * std::cos(a), std::cos(b) * std::sin(a), std::sin(b));
            const Vec3 ring(s.major * std::cos(a), s.major * std::sin(a), 0);
            return {s.center + ring + s.minor * n, n};
          }
        } else if constexpr (std::is_same_v<S, BoxShape>) {
          const Vec3 &h = s.half;
          const std::array<double, 3> area{h[1] * h[2], h[0] * h[2], h[0] * h[1]};
          std::discrete_distribution<int> pick(area.begin(), area.end());
          const int axis = pick(rng);
          const double sign = u01(rng) < 0.5 ? -1.0 : 1.0;
          Vec3 p;
          for (int i = 0; i < 3; ++i) p[i] = (2 * u01(rng) - 1) * h[i];
          p[axis] = sign * h[axis];
          Vec3 n = Vec3::Zero();
          n[axis] = sign;
          return {s.center + p, n};
        } else {
          std::vector<double> w;
          for (const auto &m : s.spheres) w.push_back(m.radius * m.radius);
          std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
          const auto &m = s.spheres[pick(rng)];
          const Vec3 n = random_unit(rng);
          return {m.center + m.radius * n, n};
        }
      },
      shape);
}

/// Rotates a unit vector by a random angle with standard deviation `deg` about a random tangent axis.
inline Vec3 perturb_normal(const Vec3 &n, double deg, std::mt19937_64 &rng) {
  if (deg <= 0) return n;
  std::normal_distribution<double> g(0.0, deg * kPi / 180.0);
  Vec3 axis = n.cross(random_unit(rng));
  while (axis.norm() < 1e-9) axis = n.cross(random_unit(rng));
  return Eigen::AngleAxisd(g(rng), axis.normalized()) * n;
}

} // namespace detail

/// n area-uniform surface samples with exact normals, then hole cut, jitter and normal noise.
inline OrientedPointCloud sample_scene(const AnalyticScene &scene, std::size_t n, const DegradationSpec &deg,
                                       std::uint64_t seed) {
  require(n >= 1, ErrorKind::Precondition, "sample count must be >= 1");
  require(deg.jitter_sigma >= 0 && deg.normal_noise_deg >= 0, ErrorKind::Precondition,
          "degradation parameters must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, deg.jitter_sigma > 0 ? deg.jitter_sigma : 1.0);
  std::optional<std::pair<Vec3, double>> hole;
  if (deg.hole) hole = std::make_pair(deg.hole->first.normalized(), std::cos(deg.hole->second * kPi / 180.0));
  OrientedPointCloud cloud;
  for (std::size_t i = 0; i < n; ++i) {
    auto [p, nrm] = detail::surface_sample(scene.shape, rng);
    if (hole && nrm.dot(hole->first) > hole->second) continue;
    if (deg.jitter_sigma > 0) p += Vec3(jitter(rng), jitter(rng), jitter(rng));
    cloud.positions.push_back(p);
    cloud.normals.push_back(detail::perturb_normal(nrm, deg.normal_noise_deg, rng));
  }
  require(!cloud.empty(), ErrorKind::EmptyOutput, "the hole removed every sample");
  return cloud;
}

/// Cameras equally spaced in azimuth at a fixed elevation (degrees), all looking at `target`.
inline std::vector<Camera> orbit_cameras(int n_views, double radius, double elevation_deg, const Vec3 &target,
                                         const Intrinsics &k) {
  require(n_views >= 1, ErrorKind::Precondition, "need at least one view");
  require(radius > 0, ErrorKind::Precondition, "orbit radius must be positive");
  std::vector<Camera> cams;
  const double e = elevation_deg * kPi / 180.0;
  for (int i = 0; i < n_views; ++i) {
    const double a = 2 * kPi * i / n_views;
    Camera c;
    char name[32];
    std::snprintf(name, sizeof name, "view_%03d", i);
    c.name = name;
    c.width = k.width;
    c.height = k.height;
    c.fx = k.fx;
    c.fy = k.fy;
    c.cx = k.cx;
    c.cy = k.cy;
    c.translation = target + radius * Vec3(std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e));
    c.rotation = look_at_rotation(c.translation, target);
    cams.push_back(c);
  }
  return cams;
}

struct RenderedView {
  Image image;
  Mask mask;
  std::vector<Vec3> hits;  // hit point per valid pixel, row-major order
};

inline TraceSettings synth_trace_settings() { return TraceSettings::for_box(Box::cube(1.0)); }

/// Reference images: pixel-center rays traced against the analytic distance. Background pixels are
/// black and invalid in the mask.
inline std::vector<RenderedView> render_views(const AnalyticScene &scene, const std::vector<Camera> &cams) {
  const auto field = analytic_field(scene);
  const auto settings = synth_trace_settings();
  const Box box = Box::cube(1.0);
  std::vector<RenderedView> views;
  for (const auto &cam : cams) {
    cam.validate();
    RenderedView v{Image(cam.width, cam.height), Mask(cam.width, cam.height), {}};
    std::vector<Ray> rays;
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) rays.push_back(pixel_ray(cam, x + 0.5, y + 0.5));
    auto res = sphere_trace(field, std::span<const Ray>(rays), settings, &box);
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) {
        const auto &r = res[static_cast<std::size_t>(y) * cam.width + x];
        if (r.outcome != TraceOutcome::Hit) continue;
        v.mask.set(x, y, true);
        v.image.set(x, y, shade(scene, r.hit.point, analytic_gradient(scene.shape, r.hit.point)));
        v.hits.push_back(r.hit.point);
      }
    views.push_back(std::move(v));
  }
  return views;
}

/// Everything the synth command produces, as one config.
struct SynthSpec {
  AnalyticScene scene;
  DegradationSpec degradation;
  std::size_t n_points = 10000;
  int views = 6;
  double camera_radius = 2.5;
  double elevation_deg = 25.0;
  int image_width = 64;
  int image_height = 64;
  double fov_deg = 45.0;
  std::uint64_t seed = 1;
};

inline const std::set<std::string> &synth_keys() {
  static const std::set<std::string> keys{"shape",      "center",         "radius",        "major_radius",
                                          "minor_radius", "half_extents", "spheres",       "albedo",
                                          "color",      "checker_period", "checker_colors", "light_dir",
                                          "ambient",    "points",         "jitter",        "hole_axis",
                                          "hole_half_angle", "normal_noise", "views",      "camera_radius",
                                          "elevation",  "image_width",    "image_height",  "fov",
                                          "seed"};
  return keys;
}

inline SynthSpec synth_spec_from(const KvConfig &kv) {
  kv.check_known(synth_keys());
  SynthSpec s;
  const std::string shape = kv.str("shape", "sphere");
  const Vec3 center = kv.vec3("center", Vec3::Zero());
  if (shape == "sphere") {
    s.scene.shape = SphereShape{center, kv.real("radius", 0.8)};
  } else if (shape == "torus") {
    s.scene.shape = TorusShape{center, kv.real("major_radius", 0.6), kv.real("minor_radius", 0.2)};
  } else if (shape == "box") {
    s.scene.shape = BoxShape{center, kv.vec3("half_extents", Vec3::Constant(0.5))};
  } else if (shape == "spheres") {
    require(kv.has("spheres"), ErrorKind::Config, "shape = spheres needs 'spheres = x y z r, ...'");
    auto v = kv.reals("spheres");
    require(!v.empty() && v.size() % 4 == 0, ErrorKind::Config, "'spheres' needs groups of four numbers");
    SphereUnion u;
    for (std::size_t i = 0; i < v.size(); i += 4) u.spheres.push_back({Vec3(v[i], v[i + 1], v[i + 2]), v[i + 3]});
    s.scene.shape = u;
  } else {
    throw Error(ErrorKind::Config, "unknown shape '" + shape + "'");
  }
  const std::string albedo = kv.str("albedo", "constant");
  if (albedo == "constant") {
    s.scene.albedo = ConstantAlbedo{kv.vec3("color", ConstantAlbedo{}.rgb)};
  } else if (albedo == "checker") {
    CheckerAlbedo c;
    c.period = kv.real("checker_period", c.period);
    if (kv.has("checker_colors")) {
      auto v = kv.reals("checker_colors");
      require(v.size() == 6, ErrorKind::Config, "'checker_colors' needs six numbers");
      c.a = Vec3(v[0], v[1], v[2]);
      c.b = Vec3(v[3], v[4], v[5]);
    }
    s.scene.albedo = c;
  } else {
    throw Error(ErrorKind::Config, "unknown albedo '" + albedo + "'");
  }
  if (kv.has("light_dir")) s.scene.light_dir = kv.vec3("light_dir", s.scene.light_dir).normalized();
  s.scene.ambient = kv.real("ambient", s.scene.ambient);
  const long long pts = kv.integer("points", static_cast<long long>(s.n_points));
  require(pts >= 1, ErrorKind::Config, "points must be >= 1");
  s.n_points = static_cast<std::size_t>(pts);
  s.degradation.jitter_sigma = kv.real("jitter", 0.0);
  s.degradation.normal_noise_deg = kv.real("normal_noise", 0.0);
  require(s.degradation.jitter_sigma >= 0 && s.degradation.normal_noise_deg >= 0, ErrorKind::Config,
          "jitter and normal_noise must be non-negative");
  if (kv.has("hole_half_angle")) {
    const Vec3 axis = kv.vec3("hole_axis", Vec3::UnitZ());
    require(axis.norm() > 0, ErrorKind::Config, "hole_axis must be non-zero");
    s.degradation.hole = std::make_pair(axis.normalized(), kv.real("hole_half_angle", 30.0));
  }
  s.views = static_cast<int>(kv.integer("views", s.views));
  s.camera_radius = kv.real("camera_radius", s.camera_radius);
  s.elevation_deg = kv.real("elevation", s.elevation_deg);
  s.image_width = static_cast<int>(kv.integer("image_width", s.image_width));
  s.image_height = static_cast<int>(kv.integer("image_height", s.image_height));
  s.fov_deg = kv.real("fov", s.fov_deg);
  s.seed = static_cast<std::uint64_t>(kv.integer("seed", static_cast<long long>(s.seed)));
  require(s.views >= 1 && s.image_width >= 1 && s.image_height >= 1, ErrorKind::Config,
          "views and image size must be positive");
  require(s.fov_deg > 0 && s.fov_deg < 180, ErrorKind::Config, "fov must lie in (0, 180) degrees");
  require(s.camera_radius > std::sqrt(3.0), ErrorKind::Config, "cameras must orbit outside the unit box");
  s.scene.validate();
  return s;
}

inline std::vector<Camera> synth_cameras(const SynthSpec &s) {
  return orbit_cameras(s.views, s.camera_radius, s.elevation_deg, Vec3::Zero(),
                       Intrinsics::from_fov(s.image_width, s.image_height, s.fov_deg));
}

} // namespace sdfforge
