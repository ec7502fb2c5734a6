#pragma once

#include "sdfforge/kvconfig.hpp"
#include "sdfforge/pointcloud.hpp"
#include "sdfforge/tracer.hpp"

#include <random>

namespace sdfforge {

struct LossWeights {
  double data = 1.0;       // lambda_D
  double boundary = 1.0;   // lambda_B
  double eikonal = 0.1;    // lambda_E
  double hessian = 0.01;   // lambda_H
  double minimal = 0.01;   // lambda_M
  double render = 1.0;     // lambda_R
  double lambda_d = 1.0;   // distance part of the data term
  double lambda_n = 1.0;   // normal part of the data term
  double epsilon = 10.0;   // Dirac width, in units of f

  void validate() const {
    for (double w : {data, boundary, eikonal, hessian, minimal, render, lambda_d, lambda_n})
      require(w >= 0 && std::isfinite(w), ErrorKind::Config, "loss weights must be finite and non-negative");
    require(epsilon > 0, ErrorKind::Config, "epsilon must be positive");
  }
};

struct PixelSample {
  int camera = 0;
  double u = 0, v = 0;  // pixel coordinates (integer + 0.5 = pixel center)
  Vec3 rgb = Vec3::Zero();
};

struct SampleBatch {
  std::vector<Vec3> data_positions;
  std::vector<Vec3> data_normals;
  std::vector<BoundaryPoint> boundary;
  std::vector<Vec3> uniform;
  std::vector<PixelSample> pixels;
  bool data_with_replacement = false;
};

struct LossTerms {
  double data = 0, boundary = 0, eikonal = 0, hessian = 0, minimal = 0, render = 0;
  double total = 0;
  std::size_t vanishing_normals = 0;  // data samples whose gradient vanished
  std::size_t render_hits = 0;
  std::size_t render_misses = 0;  // misses plus non-converged rays
  std::size_t render_tangential = 0;
  bool render_all_miss = false;

  std::size_t skipped_pixels() const { return render_misses + render_tangential; }
};

inline double weighted_total(const LossTerms &t, const LossWeights &w) {
  return w.data * t.data + w.boundary * t.boundary + w.eikonal * t.eikonal + w.hessian * t.hessian +
         w.minimal * t.minimal + w.render * t.render;
}

/// Regularized Dirac delta (eps / pi) / (eps^2 + z^2).
inline double dirac(double z, double eps) { return (eps / kPi) / (eps * eps + z * z); }
inline double dirac_derivative(double z, double eps) {
  const double d = eps * eps + z * z;
  return -(eps / kPi) * 2 * z / (d * d);
}

inline constexpr double kVanishingGradient = 1e-9;

inline double sign_of(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

namespace detail {

inline std::size_t chunk_count(std::size_t n, std::size_t chunk) { return (n + chunk - 1) / chunk; }

/// Sums per-chunk loss values in chunk order.
template <class Fn>
double chunked_sum(std::size_t n, std::size_t chunk, Fn fn) {
  std::vector<double> part(chunk_count(n, chunk), 0.0);
  for_each_chunk(n, chunk, [&](std::size_t c, std::size_t b, std::size_t e) { part[c] = fn(b, e); });
  double s = 0;
  for (double p : part) s += p;
  return s;
}

template <class Fn>
auto with_term(const char *name, Fn fn) {
  try {
    return fn();
  } catch (const Error &e) {
    throw Error(e.kind(), std::string(name) + " loss: " + e.what());
  }
}

} // namespace detail

// ---------------------------------------------------------------------------------------------
// Loss values for any field.

template <ScalarField F>
double data_loss(const F &field, std::span<const Vec3> x, std::span<const Vec3> n, double lambda_d, double lambda_n,
                 std::size_t *vanishing = nullptr) {
  require(x.size() == n.size(), ErrorKind::Precondition, "one normal per data point required");
  if (x.empty()) return 0.0;
  auto s = field.sample(x, 1);
  double sum = 0;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double gn = s.gradient[i].norm();
    double normal_term = 2.0;
    if (gn >= kVanishingGradient) normal_term = 1.0 - n[i].dot(s.gradient[i]) / gn;
    else ++bad;
    sum += lambda_d * std::abs(s.value[i]) + lambda_n * normal_term;
  }
  if (vanishing) *vanishing = bad;
  return sum / static_cast<double>(x.size());
}

template <ScalarField F>
double boundary_loss(const F &field, std::span<const BoundaryPoint> pts) {
  if (pts.empty()) return 0.0;
  std::vector<Vec3> x;
  for (const auto &p : pts) {
    require(p.target_distance >= 0, ErrorKind::Precondition, "boundary targets must be non-negative");
    x.push_back(p.position);
  }
  auto s = field.sample(std::span<const Vec3>(x), 0);
  double sum = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) sum += std::abs(s.value[i] - pts[i].target_distance);
  return sum / static_cast<double>(pts.size());
}

template <ScalarField F>
double eikonal_loss(const F &field, std::span<const Vec3> x) {
  if (x.empty()) return 0.0;
  auto s = field.sample(x, 1);
  double sum = 0;
  for (const auto &g : s.gradient) sum += std::abs(g.norm() - 1.0);
  return sum / static_cast<double>(x.size());
}

template <ScalarField F>
double hessian_loss(const F &field, std::span<const Vec3> x) {
  if (x.empty()) return 0.0;
  auto s = field.sample(x, 2);
  double sum = 0;
  for (const auto &h : s.hessian) sum += h.cwiseAbs().sum();
  return sum / static_cast<double>(x.size());
}

template <ScalarField F>
double minimal_surface_loss(const F &field, std::span<const Vec3> x, double eps) {
  require(eps > 0, ErrorKind::Precondition, "epsilon must be positive");
  if (x.empty()) return 0.0;
  auto s = field.sample(x, 0);
  double sum = 0;
  for (double f : s.value) sum += dirac(f, eps);
  return sum / static_cast<double>(x.size());
}

struct RenderLossValue {
  double loss = 0;
  std::size_t hits = 0;
  std::size_t misses = 0;
  bool all_miss = false;
};

/// Mean L1 color error over pixels whose rays hit, for any field and any color function
/// color(x, n, v). Misses and non-converged rays are excluded and counted.
template <ScalarField F, class ColorFn>
RenderLossValue render_loss(const F &field, ColorFn &&color, const std::vector<Camera> &cams,
                            std::span<const PixelSample> pixels, const TraceSettings &settings, const Box &box) {
  RenderLossValue out;
  std::vector<Ray> rays;
  for (const auto &p : pixels) rays.push_back(pixel_ray(cams.at(static_cast<std::size_t>(p.camera)), p.u, p.v));
  auto res = sphere_trace(field, std::span<const Ray>(rays), settings, &box);
  double sum = 0;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (res[i].outcome != TraceOutcome::Hit) {
      ++out.misses;
      continue;
    }
    ++out.hits;
    sum += (color(res[i].hit.point, res[i].hit.normal, rays[i].direction) - pixels[i].rgb).cwiseAbs().sum();
  }
  out.all_miss = out.hits == 0 && !pixels.empty();
  out.loss = out.hits ? sum / static_cast<double>(out.hits) : 0.0;
  return out;
}

/// Monte-Carlo surface area: volume(box) * mean of dirac(f) over uniform samples.
template <ScalarField F>
double estimate_area(const F &field, const Box &box, double eps, std::size_t n, std::uint64_t seed) {
  require(n >= 1, ErrorKind::Precondition, "need at least one sample");
  require(eps > 0, ErrorKind::Precondition, "epsilon must be positive");
  constexpr std::size_t chunk = 1 << 16;
  const double s = detail::chunked_sum(n, chunk, [&](std::size_t b, std::size_t e) {
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + b / chunk);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<Vec3> x(e - b);
    for (auto &p : x) p = box.lo + Vec3(u(rng), u(rng), u(rng)).cwiseProduct(box.extent());
    double acc = 0;
    for (double f : field.sample(std::span<const Vec3>(x), 0).value) acc += dirac(f, eps);
    return acc;
  });
  return box.volume() * s / static_cast<double>(n);
}

/// Monte-Carlo interior volume with a hard indicator of f < 0.
template <ScalarField F>
double estimate_volume(const F &field, const Box &box, std::size_t n, std::uint64_t seed) {
  require(n >= 1, ErrorKind::Precondition, "need at least one sample");
  constexpr std::size_t chunk = 1 << 16;
  const double s = detail::chunked_sum(n, chunk, [&](std::size_t b, std::size_t e) {
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + b / chunk);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<Vec3> x(e - b);
    for (auto &p : x) p = box.lo + Vec3(u(rng), u(rng), u(rng)).cwiseProduct(box.extent());
    double acc = 0;
    for (double f : field.sample(std::span<const Vec3>(x), 0).value) acc += f < 0;
    return acc;
  });
  return box.volume() * s / static_cast<double>(n);
}

// ---------------------------------------------------------------------------------------------
// Network losses with parameter gradients.

struct RenderContext {
  const std::vector<Camera> *cameras = nullptr;
  Box box;
  TraceSettings settings;
  RenderMode mode = RenderMode::Frozen;
  double grad_scale = 1.0;
};

struct LossGradients {
  std::vector<double> theta;  // SDF network
  std::vector<double> phi;    // light-field network
};

inline constexpr std::size_t kLossChunk = 512;
inline constexpr std::size_t kRenderChunk = 256;

namespace detail {

/// Runs fn(b, e, gtheta, gphi) over fixed chunks and reduces values and gradients in chunk order.
/// At most worker_count() chunk buffers are alive at once.
template <class T, class Fn>
double reduce_chunks(std::size_t n, std::size_t chunk, std::size_t n_theta, std::size_t n_phi,
                     std::vector<double> *g_theta, std::vector<double> *g_phi, Fn fn) {
  const std::size_t chunks = chunk_count(n, chunk);
  const std::size_t slots = std::max<std::size_t>(1, std::min<std::size_t>(worker_count(), chunks));
  const bool grads = g_theta != nullptr;
  std::vector<std::vector<T>> bt(slots), bp(slots);
  std::vector<double> part(slots);
  double total = 0;
  for (std::size_t c0 = 0; c0 < chunks; c0 += slots) {
    const std::size_t wave = std::min(slots, chunks - c0);
    for_each_chunk(wave, 1, [&](std::size_t s, std::size_t, std::size_t) {
      const std::size_t c = c0 + s;
      if (grads) {
        bt[s].assign(n_theta, T(0));
        bp[s].assign(n_phi, T(0));
      }
      part[s] = fn(c * chunk, std::min(n, (c + 1) * chunk), grads ? bt[s].data() : nullptr,
                   grads ? bp[s].data() : nullptr);
    });
    for (std::size_t s = 0; s < wave; ++s) {
      total += part[s];
      if (!grads) continue;
      for (std::size_t i = 0; i < n_theta; ++i) (*g_theta)[i] += static_cast<double>(bt[s][i]);
      if (g_phi)
        for (std::size_t i = 0; i < n_phi; ++i) (*g_phi)[i] += static_cast<double>(bp[s][i]);
    }
  }
  return total;
}

template <class T>
Vec3 channel_vec(const MatrixX<T> &out, Eigen::Index row, Eigen::Index k, Eigen::Index m) {
  return Vec3(static_cast<double>(out(row, m + k)), static_cast<double>(out(row, 2 * m + k)),
              static_cast<double>(out(row, 3 * m + k)));
}

} // namespace detail

/// Every loss term and, when `grads` is given, the gradient of the weighted total with respect to
/// both networks. Terms with zero weight are still reported but contribute no gradient. The light
/// field and render context may be null when the batch has no pixels.
template <class T>
LossTerms compute_losses(const Mlp<T> &sdf, const std::type_identity_t<Mlp<T>> *slf, const SampleBatch &batch, const LossWeights &w,
                         const RenderContext *render, LossGradients *grads) {
  w.validate();
  require(batch.data_positions.size() == batch.data_normals.size(), ErrorKind::Precondition,
          "one normal per data point required");
  if (!sdf.params.all_finite()) throw Error(ErrorKind::Numeric, "non-finite SDF parameter");
  const std::size_t n_theta = sdf.params.size();
  const std::size_t n_phi = slf ? slf->params.size() : 0;
  std::vector<double> *gt = nullptr, *gp = nullptr;
  if (grads) {
    grads->theta.assign(n_theta, 0.0);
    grads->phi.assign(n_phi, 0.0);
    gt = &grads->theta;
    gp = &grads->phi;
  }
  LossTerms t;

  // Data term: f and grad f on the oriented points.
  const std::size_t nd = batch.data_positions.size();
  std::vector<std::size_t> vanishing(detail::chunk_count(nd, kLossChunk), 0);
  if (nd > 0) {
    const double scale = w.data / static_cast<double>(nd);
    const double sum = detail::with_term("data", [&] {
      return detail::reduce_chunks<T>(nd, kLossChunk, n_theta, 0, gt, nullptr, [&](std::size_t b, std::size_t e, T *g, T *) {
        auto xs = std::span<const Vec3>(batch.data_positions).subspan(b, e - b);
        auto pass = forward_points(sdf, xs, 1, 1);
        const Eigen::Index m = static_cast<Eigen::Index>(e - b);
        MatrixX<T> adj = MatrixX<T>::Zero(1, 4 * m);
        double acc = 0;
        for (Eigen::Index k = 0; k < m; ++k) {
          const double f = static_cast<double>(pass.output(0, k));
          const Vec3 grad = detail::channel_vec(pass.output, 0, k, m);
          const Vec3 &nrm = batch.data_normals[b + static_cast<std::size_t>(k)];
          const double gn = grad.norm();
          double normal_term = 2.0;
          Vec3 adj_g = Vec3::Zero();
          if (gn >= kVanishingGradient) {
            const Vec3 ghat = grad / gn;
            normal_term = 1.0 - nrm.dot(ghat);
            adj_g = -w.lambda_n * (nrm - nrm.dot(ghat) * ghat) / gn;
          } else {
            ++vanishing[b / kLossChunk];
          }
          acc += w.lambda_d * std::abs(f) + w.lambda_n * normal_term;
          adj(0, k) = static_cast<T>(scale * w.lambda_d * sign_of(f));
          for (int i = 0; i < 3; ++i) adj(0, (1 + i) * m + k) = static_cast<T>(scale * adj_g[i]);
        }
        if (g && w.data > 0) backward(sdf, pass, adj, g);
        return acc;
      });
    });
    t.data = sum / static_cast<double>(nd);
    for (auto v : vanishing) t.vanishing_normals += v;
  }

  // Boundary term.
  const std::size_t nb = batch.boundary.size();
  if (nb > 0) {
    const double scale = w.boundary / static_cast<double>(nb);
    const double sum = detail::with_term("boundary", [&] {
      return detail::reduce_chunks<T>(nb, kLossChunk, n_theta, 0, gt, nullptr, [&](std::size_t b, std::size_t e, T *g, T *) {
        std::vector<Vec3> xs;
        for (std::size_t i = b; i < e; ++i) xs.push_back(batch.boundary[i].position);
        auto pass = forward_points(sdf, std::span<const Vec3>(xs), 0, 1);
        const Eigen::Index m = static_cast<Eigen::Index>(e - b);
        MatrixX<T> adj(1, m);
        double acc = 0;
        for (Eigen::Index k = 0; k < m; ++k) {
          const double r = static_cast<double>(pass.output(0, k)) - batch.boundary[b + static_cast<std::size_t>(k)].target_distance;
          acc += std::abs(r);
          adj(0, k) = static_cast<T>(scale * sign_of(r));
        }
        if (g && w.boundary > 0) backward(sdf, pass, adj, g);
        return acc;
      });
    });
    t.boundary = sum / static_cast<double>(nb);
  }

  // Eikonal, Hessian and minimal-surface terms share one pass over the uniform samples.
  const std::size_t nu = batch.uniform.size();
  if (nu > 0) {
    const bool smooth = sdf.arch.twice_differentiable();
    if (w.hessian > 0 && !smooth)
      throw Error(ErrorKind::UnsupportedActivation, "hessian loss: rectifier networks have no usable second derivative");
    const int order = smooth ? 2 : 1;
    const double inv = 1.0 / static_cast<double>(nu);
    std::vector<std::array<double, 3>> parts(detail::chunk_count(nu, kLossChunk));
    detail::with_term("regularizer", [&] {
      return detail::reduce_chunks<T>(nu, kLossChunk, n_theta, 0, gt, nullptr, [&](std::size_t b, std::size_t e, T *g, T *) {
        auto xs = std::span<const Vec3>(batch.uniform).subspan(b, e - b);
        auto pass = forward_points(sdf, xs, order, 1);
        const Eigen::Index m = static_cast<Eigen::Index>(e - b);
        MatrixX<T> adj = MatrixX<T>::Zero(1, static_cast<Eigen::Index>(jet_channels(order)) * m);
        std::array<double, 3> acc{0, 0, 0};
        for (Eigen::Index k = 0; k < m; ++k) {
          const double f = static_cast<double>(pass.output(0, k));
          const Vec3 grad = detail::channel_vec(pass.output, 0, k, m);
          const double gn = grad.norm();
          acc[0] += std::abs(gn - 1.0);
          acc[2] += dirac(f, w.epsilon);
          adj(0, k) = static_cast<T>(w.minimal * inv * dirac_derivative(f, w.epsilon));
          if (gn > 0) {
            const Vec3 a = w.eikonal * inv * sign_of(gn - 1.0) * grad / gn;
            for (int i = 0; i < 3; ++i) adj(0, (1 + i) * m + k) = static_cast<T>(a[i]);
          }
          if (order >= 2)
            for (int q = 0; q < 6; ++q) {
              const double h = static_cast<double>(pass.output(0, (4 + q) * m + k));
              const double mult = kHessianPairs[q][0] == kHessianPairs[q][1] ? 1.0 : 2.0;
              acc[1] += mult * std::abs(h);
              adj(0, (4 + q) * m + k) = static_cast<T>(w.hessian * inv * mult * sign_of(h));
            }
        }
        parts[b / kLossChunk] = acc;
        if (g && (w.eikonal > 0 || w.hessian > 0 || w.minimal > 0)) {
          if (w.hessian > 0) {
            backward(sdf, pass, adj, g);
          } else {
            const int o = w.eikonal > 0 ? 1 : 0;
            backward(sdf, truncate_pass(pass, o), MatrixX<T>(adj.leftCols(static_cast<Eigen::Index>(jet_channels(o)) * m)), g);
          }
        }
        return 0.0;
      });
    });
    for (const auto &p : parts) {
      t.eikonal += p[0];
      t.hessian += p[1];
      t.minimal += p[2];
    }
    t.eikonal *= inv;
    t.hessian *= inv;
    t.minimal *= inv;
  }

  // Render term: gradients of the summed error are scaled by 1/hits once every chunk is traced.
  const std::size_t np = batch.pixels.size();
  if (np > 0) {
    require(slf && render && render->cameras, ErrorKind::Precondition, "render loss needs a light field and cameras");
    const bool differentiable = render->mode == RenderMode::Differentiable;
    const bool want = grads && w.render > 0;
    std::vector<double> rt, rp;
    if (want) {
      rt.assign(n_theta, 0.0);
      rp.assign(n_phi, 0.0);
    }
    const int D = sdf.arch.descriptor_width;
    std::vector<std::array<std::size_t, 3>> counts(detail::chunk_count(np, kRenderChunk));
    const double sum = detail::with_term("render", [&] {
      return detail::reduce_chunks<T>(np, kRenderChunk, n_theta, n_phi, want ? &rt : nullptr, want ? &rp : nullptr,
                                      [&](std::size_t b, std::size_t e, T *g_t, T *g_p) {
        std::vector<PixelRef> refs;
        for (std::size_t i = b; i < e; ++i) refs.push_back({batch.pixels[i].camera, batch.pixels[i].u, batch.pixels[i].v});
        auto hits = shade_pixels(sdf, *slf, *render->cameras, std::span<const PixelRef>(refs), render->settings,
                                 render->box, render->mode, want && differentiable ? 2 : 1);
        counts[b / kRenderChunk] = {hits.size(), hits.misses + hits.non_converged, hits.tangential};
        const Eigen::Index m = static_cast<Eigen::Index>(hits.size());
        if (m == 0) return 0.0;
        MatrixX<T> adj_c(3, m);
        double acc = 0;
        for (Eigen::Index k = 0; k < m; ++k) {
          const Vec3 r = hits.rgb(static_cast<std::size_t>(k)) - batch.pixels[b + hits.pixel[static_cast<std::size_t>(k)]].rgb;
          acc += r.cwiseAbs().sum();
          for (int c = 0; c < 3; ++c) adj_c(c, k) = static_cast<T>(sign_of(r[c]));
        }
        if (!want) return acc;
        MatrixX<T> adj_enc;
        backward(*slf, hits.slf_pass, adj_c, g_p, differentiable ? &adj_enc : nullptr);
        if (!differentiable) return acc;
        // Chain through x(theta) = x0 - s v (f(x0; theta) - f0) / (v . g0), the normal and the descriptor.
        const auto &out = hits.sdf_pass.output;
        MatrixX<T> adj = MatrixX<T>::Zero(out.rows(), 4 * m);
        for (Eigen::Index k = 0; k < m; ++k) {
          const std::size_t kk = static_cast<std::size_t>(k);
          const Vec3 adj_x = adj_enc.col(k).template head<3>().template cast<double>();
          const Vec3 adj_n = adj_enc.col(k).template segment<3>(3).template cast<double>();
          const Vec3 &g0 = hits.gradient[kk];
          const double gn = g0.norm();
          const Vec3 nh = g0 / gn;
          const Vec3 adj_g = (adj_n - nh.dot(adj_n) * nh) / gn;
          Vec3 dldx = adj_x + hessian_from_channels<T>(out, 0, k, m).template cast<double>() * adj_g;
          for (int d = 0; d < D; ++d) {
            const double az = static_cast<double>(adj_enc(adj_enc.rows() - D + d, k));
            adj(1 + d, k) = static_cast<T>(az);
            dldx += az * detail::channel_vec(out, 1 + d, k, m);
          }
          adj(0, k) = static_cast<T>(intersection_value_adjoint(dldx, hits.view[kk], g0, render->grad_scale));
          for (int i = 0; i < 3; ++i) adj(0, (1 + i) * m + k) = static_cast<T>(adj_g[i]);
        }
        backward(sdf, truncate_pass(hits.sdf_pass, 1), adj, g_t);
        return acc;
      });
    });
    for (const auto &c : counts) {
      t.render_hits += c[0];
      t.render_misses += c[1];
      t.render_tangential += c[2];
    }
    t.render_all_miss = t.render_hits == 0;
    t.render = t.render_hits ? sum / static_cast<double>(t.render_hits) : 0.0;
    if (want && t.render_hits) {
      const double scale = w.render / static_cast<double>(t.render_hits);
      for (std::size_t i = 0; i < n_theta; ++i) grads->theta[i] += scale * rt[i];
      for (std::size_t i = 0; i < n_phi; ++i) grads->phi[i] += scale * rp[i];
    }
  }

  t.total = weighted_total(t, w);
  if (grads) {
    for (double g : grads->theta)
      if (!std::isfinite(g)) throw Error(ErrorKind::Numeric, "non-finite SDF parameter gradient");
    for (double g : grads->phi)
      if (!std::isfinite(g)) throw Error(ErrorKind::Numeric, "non-finite light-field parameter gradient");
  }
  return t;
}

/// One structured log record: key=value pairs with round-trip precision.
inline std::string format_terms(const LossTerms &t) {
  std::string s;
  auto kv = [&](const char *k, double v) { s += std::string(s.empty() ? "" : " ") + k + "=" + format_double(v); };
  kv("data", t.data);
  kv("boundary", t.boundary);
  kv("eikonal", t.eikonal);
  kv("hessian", t.hessian);
  kv("minimal", t.minimal);
  kv("render", t.render);
  kv("total", t.total);
  s += " skipped_pixels=" + std::to_string(t.skipped_pixels());
  s += " vanishing_normals=" + std::to_string(t.vanishing_normals);
  if (t.render_all_miss) s += " render_all_miss=1";
  return s;
}

} // namespace sdfforge
