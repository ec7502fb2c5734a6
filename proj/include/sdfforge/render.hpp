#pragma once

// Full-view rendering of a trained SDF and surface light field.

#include "sdfforge/image.hpp"
#include "sdfforge/tracer.hpp"

namespace sdfforge {

struct NeuralView {
  Image image;  // black where the ray misses
  Mask mask;    // valid where the ray hit
  std::size_t misses = 0;
  std::size_t non_converged = 0;
};

inline constexpr std::size_t kRenderRows = 4096;  // pixels shaded per batch

/// Pixel-center rays, traced and shaded in row-major batches.
template <class T>
NeuralView render_view(const Mlp<T> &sdf, const Mlp<T> &slf, const Camera &cam, const Box &box,
                       const TraceSettings &settings) {
  cam.validate();
  NeuralView out{Image(cam.width, cam.height), Mask(cam.width, cam.height)};
  const std::vector<Camera> cams{cam};
  const std::size_t n = static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(cam.height);
  std::vector<PixelRef> px;
  for (std::size_t b = 0; b < n; b += kRenderRows) {
    const std::size_t e = std::min(n, b + kRenderRows);
    px.clear();
    for (std::size_t i = b; i < e; ++i) {
      const int x = static_cast<int>(i % static_cast<std::size_t>(cam.width));
      const int y = static_cast<int>(i / static_cast<std::size_t>(cam.width));
      px.push_back({0, x + 0.5, y + 0.5});
    }
    auto shaded = shade_pixels(sdf, slf, cams, std::span<const PixelRef>(px), settings, box, RenderMode::Frozen);
    out.misses += shaded.misses + shaded.tangential;
    out.non_converged += shaded.non_converged;
    for (std::size_t k = 0; k < shaded.size(); ++k) {
      const std::size_t i = b + shaded.pixel[k];
      const int x = static_cast<int>(i % static_cast<std::size_t>(cam.width));
      const int y = static_cast<int>(i / static_cast<std::size_t>(cam.width));
      const Vec3 c = shaded.rgb(k).cwiseMax(0.0).cwiseMin(1.0);
      if (!c.allFinite()) throw Error(ErrorKind::Numeric, "non-finite color while rendering " + cam.name);
      out.image.set(x, y, c);
      out.mask.set(x, y, true);
    }
  }
  return out;
}

} // namespace sdfforge
