#pragma once

// Scalar fields queried in batches: the learned SDF, analytic SDFs and ad-hoc test functions all
// expose the same sample() so losses, the tracer and the mesher are written once.

#include "sdfforge/diffmlp.hpp"

#include <concepts>
#include <functional>
#include <span>

namespace sdfforge {

/// Field values and, depending on the requested order, gradients and Hessians.
struct FieldSamples {
  std::vector<double> value;
  std::vector<Vec3> gradient;
  std::vector<Mat3> hessian;
};

template <class F>
concept ScalarField = requires(const F &f, std::span<const Vec3> xs, int order) {
  { f.sample(xs, order) } -> std::same_as<FieldSamples>;
};

inline constexpr std::size_t kFieldChunk = 256;
inline constexpr std::size_t kFieldPad = 16;

/// The scalar head of a position network viewed as a field.
template <class T>
class NeuralField {
public:
  explicit NeuralField(const Mlp<T> &mlp) : mlp_(&mlp) {}

  const Mlp<T> &mlp() const { return *mlp_; }

  FieldSamples sample(std::span<const Vec3> xs, int order) const {
    FieldSamples out;
    const std::size_t n = xs.size();
    out.value.resize(n);
    if (order >= 1) out.gradient.resize(n);
    if (order >= 2) out.hessian.resize(n);
    for_each_chunk(n, kFieldChunk, [&](std::size_t, std::size_t b, std::size_t e) {
      // Single-precision products round differently for ragged batch widths, so chunks are padded
      // to a multiple of kFieldPad by repeating the last point. A value then does not depend on
      // how the query was batched.
      const std::size_t padded = (e - b + kFieldPad - 1) / kFieldPad * kFieldPad;
      std::vector<Vec3> pts(xs.begin() + static_cast<std::ptrdiff_t>(b), xs.begin() + static_cast<std::ptrdiff_t>(e));
      pts.resize(padded, pts.back());
      auto pass = forward_points(*mlp_, std::span<const Vec3>(pts), order, 1);
      const Eigen::Index m = static_cast<Eigen::Index>(padded);
      for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(e - b); ++k) {
        const std::size_t i = b + static_cast<std::size_t>(k);
        out.value[i] = static_cast<double>(pass.output(0, k));
        if (order >= 1)
          out.gradient[i] = Vec3(pass.output(0, m + k), pass.output(0, 2 * m + k), pass.output(0, 3 * m + k));
        if (order >= 2) out.hessian[i] = hessian_from_channels<T>(pass.output, 0, k, m).template cast<double>();
      }
    });
    return out;
  }

private:
  const Mlp<T> *mlp_;
};

/// A field given by closures. Missing derivatives fall back to central differences.
class FunctionField {
public:
  using ValueFn = std::function<double(const Vec3 &)>;
  using GradFn = std::function<Vec3(const Vec3 &)>;
  using HessFn = std::function<Mat3(const Vec3 &)>;

  explicit FunctionField(ValueFn f, GradFn g = {}, HessFn h = {})
      : f_(std::move(f)), g_(std::move(g)), h_(std::move(h)) {}

  double value(const Vec3 &x) const { return f_(x); }

  Vec3 gradient(const Vec3 &x) const {
    if (g_) return g_(x);
    constexpr double h = 1e-6;
    Vec3 g;
    for (int i = 0; i < 3; ++i) {
      Vec3 a = x, b = x;
      a[i] += h;
      b[i] -= h;
      g[i] = (f_(a) - f_(b)) / (2 * h);
    }
    return g;
  }

  Mat3 hessian(const Vec3 &x) const {
    if (h_) return h_(x);
    constexpr double h = 1e-4;
    Mat3 H;
    for (int j = 0; j < 3; ++j) {
      Vec3 a = x, b = x;
      a[j] += h;
      b[j] -= h;
      H.col(j) = (gradient(a) - gradient(b)) / (2 * h);
    }
    return 0.5 * (H + H.transpose());
  }

  FieldSamples sample(std::span<const Vec3> xs, int order) const {
    FieldSamples out;
    for (const auto &x : xs) {
      out.value.push_back(f_(x));
      if (order >= 1) out.gradient.push_back(gradient(x));
      if (order >= 2) out.hessian.push_back(hessian(x));
    }
    return out;
  }

private:
  ValueFn f_;
  GradFn g_;
  HessFn h_;
};

/// Exact signed distance to a sphere, with analytic derivatives.
inline FunctionField sphere_field(double radius, Vec3 center = Vec3::Zero()) {
  return FunctionField(
      [=](const Vec3 &x) { return (x - center).norm() - radius; },
      [=](const Vec3 &x) { return Vec3((x - center).normalized()); },
      [=](const Vec3 &x) {
        const Vec3 d = x - center;
        const double r = d.norm();
        const Vec3 u = d / r;
        return Mat3((Mat3::Identity() - u * u.transpose()) / r);
      });
}

template <ScalarField F>
double field_value(const F &f, const Vec3 &x) {
  std::array<Vec3, 1> xs{x};
  return f.sample(std::span<const Vec3>(xs), 0).value[0];
}

} // namespace sdfforge
