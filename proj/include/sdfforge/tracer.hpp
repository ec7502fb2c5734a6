#pragma once

#include "sdfforge/camera.hpp"
#include "sdfforge/field.hpp"

namespace sdfforge {

struct TraceSettings {
  double t_min = 0.0;
  double t_max = 0.0;
  double hit_tol = 0.0;
  int max_steps = 128;
  double step_max = 0.0;

  /// Defaults scaled to the scene box: hit_tol = 5e-5 diag, t_max = 2 diag, step_max = 0.5 diag.
  static TraceSettings for_box(const Box &box) {
    const double d = box.diagonal();
    TraceSettings s;
    s.t_max = 2.0 * d;
    s.hit_tol = 5e-5 * d;
    s.step_max = 0.5 * d;
    return s;
  }
};

enum class TraceOutcome { Hit, Miss, NonConverged };

struct SurfaceHit {
  Vec3 point = Vec3::Zero();
  double t = 0.0;
  double sdf_value = 0.0;
  Vec3 normal = Vec3::Zero();    // unit
  Vec3 gradient = Vec3::Zero();  // unnormalized field gradient at the hit
  int steps = 0;
  bool converged = false;
};

struct TraceResult {
  TraceOutcome outcome = TraceOutcome::Miss;
  SurfaceHit hit;
};

/// Sphere traces every ray together. When `clip` is given each ray's [t_min, t_max] is further
/// restricted to its interval inside the box, so the field is never queried far outside the domain.
template <ScalarField F>
std::vector<TraceResult> sphere_trace(const F &field, std::span<const Ray> rays, const TraceSettings &s,
                                      const Box *clip = nullptr) {
  require(s.t_min < s.t_max && s.hit_tol > 0, ErrorKind::Precondition, "invalid trace settings");
  const double step_max = s.step_max > 0 ? s.step_max : std::numeric_limits<double>::infinity();
  const std::size_t n = rays.size();
  std::vector<TraceResult> out(n);
  std::vector<double> t(n), t_lo(n), t_hi(n);
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < n; ++i) {
    t_lo[i] = s.t_min;
    t_hi[i] = s.t_max;
    if (clip) {
      auto iv = clip->intersect(rays[i].origin, rays[i].direction);
      if (!iv) continue;
      t_lo[i] = std::max(t_lo[i], iv->first);
      t_hi[i] = std::min(t_hi[i], iv->second);
      if (t_lo[i] > t_hi[i]) continue;
    }
    t[i] = t_lo[i];
    active.push_back(i);
  }
  std::vector<Vec3> pts;
  for (int step = 0; step <= s.max_steps && !active.empty(); ++step) {
    pts.resize(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) pts[k] = rays[active[k]].at(t[active[k]]);
    auto f = field.sample(std::span<const Vec3>(pts), 0).value;
    std::vector<std::size_t> still;
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t i = active[k];
      auto &r = out[i];
      r.hit.steps = step;
      if (!std::isfinite(f[k])) throw Error(ErrorKind::Numeric, "non-finite field value while tracing");
      if (std::abs(f[k]) <= s.hit_tol) {
        r.outcome = TraceOutcome::Hit;
        r.hit.point = pts[k];
        r.hit.t = t[i];
        r.hit.sdf_value = f[k];
        r.hit.converged = true;
        continue;
      }
      if (step == s.max_steps) {
        r.outcome = TraceOutcome::NonConverged;
        r.hit.point = pts[k];
        r.hit.sdf_value = f[k];
        continue;
      }
      t[i] = std::max(t_lo[i], t[i] + std::clamp(f[k], -step_max, step_max));
      if (t[i] > t_hi[i]) {
        r.outcome = TraceOutcome::Miss;
        continue;
      }
      still.push_back(i);
    }
    active.swap(still);
  }
  std::vector<Vec3> hit_pts;
  std::vector<std::size_t> hit_idx;
  for (std::size_t i = 0; i < n; ++i)
    if (out[i].outcome == TraceOutcome::Hit) {
      hit_idx.push_back(i);
      hit_pts.push_back(out[i].hit.point);
    }
  if (!hit_pts.empty()) {
    auto g = field.sample(std::span<const Vec3>(hit_pts), 1).gradient;
    for (std::size_t k = 0; k < hit_idx.size(); ++k) {
      auto &h = out[hit_idx[k]].hit;
      h.gradient = g[k];
      const double gn = g[k].norm();
      h.normal = gn > 0 ? Vec3(g[k] / gn) : Vec3::Zero();
    }
  }
  return out;
}

template <ScalarField F>
TraceResult sphere_trace(const F &field, const Ray &ray, const TraceSettings &s, const Box *clip = nullptr) {
  std::array<Ray, 1> rays{ray};
  return sphere_trace(field, std::span<const Ray>(rays), s, clip)[0];
}

inline constexpr double kTangentialRayFloor = 1e-4;

/// First-order reparameterized hit point
///   x(theta) = x0 - scale * v * (f(x0; theta) - f_frozen) / (v . grad_frozen),
/// where f_frozen and grad_frozen were taken at the parameters that produced x0.
inline Vec3 differentiable_intersection(const Vec3 &x0, const Vec3 &v, double f_frozen, const Vec3 &grad_frozen,
                                        double f_current, double scale = 1.0) {
  const double vg = v.dot(grad_frozen);
  if (std::abs(vg) < kTangentialRayFloor) throw Error(ErrorKind::TangentialRay, "view ray tangent to the surface");
  return x0 - scale * v * ((f_current - f_frozen) / vg);
}

template <ScalarField F>
Vec3 differentiable_intersection(const F &field, const Vec3 &x0, const Vec3 &v, double f_frozen,
                                 const Vec3 &grad_frozen, double scale = 1.0) {
  return differentiable_intersection(x0, v, f_frozen, grad_frozen, field_value(field, x0), scale);
}

/// Adjoint reaching f(x0; theta) from an adjoint on x(theta).
inline double intersection_value_adjoint(const Vec3 &adj_x, const Vec3 &v, const Vec3 &grad_frozen,
                                         double scale = 1.0) {
  const double vg = v.dot(grad_frozen);
  if (std::abs(vg) < kTangentialRayFloor) throw Error(ErrorKind::TangentialRay, "view ray tangent to the surface");
  return -scale * adj_x.dot(v) / vg;
}

enum class RenderMode { Frozen, Differentiable };

struct PixelRef {
  int camera = 0;
  double u = 0;
  double v = 0;
};

/// Shading of a set of traced hits. Keeps both network passes so a render loss can back-propagate.
template <class T>
struct ShadedHits {
  std::vector<std::size_t> pixel;  // index into the pixel list
  std::vector<Vec3> x0, view, normal, gradient;
  std::vector<double> f0;
  MlpPass<T> sdf_pass;  // at x0, every head row
  MlpPass<T> slf_pass;
  std::size_t misses = 0;
  std::size_t non_converged = 0;
  std::size_t tangential = 0;

  std::size_t size() const { return pixel.size(); }
  Vec3 rgb(std::size_t k) const {
    return slf_pass.output.col(static_cast<Eigen::Index>(k)).template head<3>().template cast<double>();
  }
};

/// Traces pixels against the SDF network and evaluates the light field at the hits.
/// `order` is the derivative order kept in the SDF pass (2 when a differentiable render loss will
/// back-propagate through the normal). In Differentiable mode tangential rays are dropped.
template <class T>
ShadedHits<T> shade_pixels(const Mlp<T> &sdf, const Mlp<T> &slf, const std::vector<Camera> &cams,
                           std::span<const PixelRef> pixels, const TraceSettings &settings, const Box &box,
                           RenderMode mode, int order = 1) {
  std::vector<Ray> rays(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i)
    rays[i] = pixel_ray(cams.at(static_cast<std::size_t>(pixels[i].camera)), pixels[i].u, pixels[i].v);
  NeuralField<T> field(sdf);
  auto traced = sphere_trace(field, std::span<const Ray>(rays), settings, &box);
  ShadedHits<T> out;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const auto &r = traced[i];
    if (r.outcome == TraceOutcome::Miss) {
      ++out.misses;
      continue;
    }
    if (r.outcome == TraceOutcome::NonConverged) {
      ++out.non_converged;
      continue;
    }
    const double gn = r.hit.gradient.norm();
    if (!(gn > 1e-12) ||
        (mode == RenderMode::Differentiable && std::abs(rays[i].direction.dot(r.hit.gradient)) < kTangentialRayFloor)) {
      ++out.tangential;
      continue;
    }
    out.pixel.push_back(i);
    out.x0.push_back(r.hit.point);
    out.view.push_back(rays[i].direction);
    out.normal.push_back(r.hit.normal);
    out.gradient.push_back(r.hit.gradient);
    out.f0.push_back(r.hit.sdf_value);
  }
  if (out.pixel.empty()) return out;
  out.sdf_pass = forward_points(sdf, std::span<const Vec3>(out.x0), std::max(order, 1), sdf.arch.head_width());
  const Eigen::Index m = static_cast<Eigen::Index>(out.size());
  MatrixX<T> descriptor = out.sdf_pass.output.block(1, 0, sdf.arch.descriptor_width, m);
  out.slf_pass = forward_surface(slf, std::span<const Vec3>(out.x0), std::span<const Vec3>(out.normal),
                                 std::span<const Vec3>(out.view), descriptor);
  return out;
}

/// Renders one pixel; nullopt when the ray misses, does not converge, or (in Differentiable mode)
/// grazes the surface.
template <class T>
std::optional<Vec3> render_pixel(const Mlp<T> &sdf, const Mlp<T> &slf, const Camera &cam, double u, double v,
                                 const TraceSettings &settings, const Box &box, RenderMode mode) {
  std::vector<Camera> cams{cam};
  std::array<PixelRef, 1> px{PixelRef{0, u, v}};
  auto shaded = shade_pixels(sdf, slf, cams, std::span<const PixelRef>(px), settings, box, mode);
  if (shaded.size() == 0) return std::nullopt;
  if (mode == RenderMode::Differentiable) {
    // x(theta) at the parameters that produced the hit is x0 itself; the shading is unchanged.
    const Vec3 x = differentiable_intersection(shaded.x0[0], shaded.view[0], shaded.f0[0], shaded.gradient[0],
                                               static_cast<double>(shaded.sdf_pass.output(0, 0)));
    (void)x;
  }
  return shaded.rgb(0);
}

} // namespace sdfforge
