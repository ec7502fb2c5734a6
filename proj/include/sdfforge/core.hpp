#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#if defined(__SSE__) || defined(__x86_64__)
#include <xmmintrin.h>
#endif

namespace sdfforge {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

template <class T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline constexpr double kPi = 3.14159265358979323846;

/// Failure categories. The CLI maps them onto process exit codes.
enum class ErrorKind {
  Config,
  Data,
  Io,
  Numeric,
  NonConvergence,
  Precondition,
  DegenerateNeighborhood,
  DegenerateScene,
  UnsupportedActivation,
  TangentialRay,
  UndefinedMetric,
  EmptyOutput,
};

inline const char *to_string(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::Config: return "config error";
  case ErrorKind::Data: return "data error";
  case ErrorKind::Io: return "io error";
  case ErrorKind::Numeric: return "numeric fault";
  case ErrorKind::NonConvergence: return "non-convergence";
  case ErrorKind::Precondition: return "precondition violated";
  case ErrorKind::DegenerateNeighborhood: return "degenerate neighborhood";
  case ErrorKind::DegenerateScene: return "degenerate scene";
  case ErrorKind::UnsupportedActivation: return "unsupported activation";
  case ErrorKind::TangentialRay: return "tangential ray";
  case ErrorKind::UndefinedMetric: return "undefined metric";
  case ErrorKind::EmptyOutput: return "empty output";
  }
  return "error";
}

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

/// Process exit code for an error category: 2 config, 3 data, 4 numeric, 5 non-convergence.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::Config: return 2;
  case ErrorKind::Numeric:
  case ErrorKind::UnsupportedActivation: return 4;
  case ErrorKind::NonConvergence: return 5;
  default: return 3;
  }
}

inline void require(bool cond, ErrorKind kind, const std::string &what) {
  if (!cond) throw Error(kind, what);
}

/// Axis-aligned box; the scene domain.
struct Box {
  Vec3 lo = Vec3::Constant(-1.0);
  Vec3 hi = Vec3::Constant(1.0);

  static Box cube(double half) { return {Vec3::Constant(-half), Vec3::Constant(half)}; }
  static Box around(const std::vector<Vec3> &pts) {
    Box b{Vec3::Constant(std::numeric_limits<double>::infinity()), Vec3::Constant(-std::numeric_limits<double>::infinity())};
    for (const auto &p : pts) {
      b.lo = b.lo.cwiseMin(p);
      b.hi = b.hi.cwiseMax(p);
    }
    return b;
  }

  Vec3 extent() const { return hi - lo; }
  Vec3 center() const { return 0.5 * (lo + hi); }
  double diagonal() const { return extent().norm(); }
  double volume() const { return extent().prod(); }
  bool degenerate() const { return !((hi - lo).array() > 0.0).all(); }

  bool contains(const Vec3 &p, double tol = 0.0) const {
    return (p.array() >= lo.array() - tol).all() && (p.array() <= hi.array() + tol).all();
  }

  /// Slab test. Returns the parametric interval [t_enter, t_exit] of the line o + t*d inside the box.
  std::optional<std::pair<double, double>> intersect(const Vec3 &o, const Vec3 &d) const {
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      if (std::abs(d[a]) < 1e-300) {
        if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
        continue;
      }
      double ta = (lo[a] - o[a]) / d[a];
      double tb = (hi[a] - o[a]) / d[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
    }
    if (t0 > t1) return std::nullopt;
    return std::make_pair(t0, t1);
  }
};

/// Number of worker threads used by batch evaluation. 0 means hardware concurrency.
inline unsigned &thread_cap() {
  static unsigned cap = 0;
  return cap;
}

inline unsigned worker_count() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  unsigned cap = thread_cap();
  return cap == 0 ? hw : std::min(cap, hw);
}

/// Flush-to-zero and denormals-are-zero for the current thread while alive. Single-precision
/// softplus with a large beta underflows into denormals, which x86 handles ~100x slower.
class DenormalGuard {
public:
#if defined(__SSE__) || defined(__x86_64__)
  DenormalGuard() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~DenormalGuard() { _mm_setcsr(saved_); }

private:
  unsigned saved_;
#endif
public:
  DenormalGuard(const DenormalGuard &) = delete;
  DenormalGuard &operator=(const DenormalGuard &) = delete;
};

/// Runs fn(chunk, begin, end) over fixed-size chunks of [0, n). Chunk boundaries depend only on
/// n and chunk_size, so per-chunk results reduced in chunk order are schedule independent.
template <class Fn>
void for_each_chunk(std::size_t n, std::size_t chunk_size, Fn &&fn) {
  if (n == 0) return;
  const std::size_t chunks = (n + chunk_size - 1) / chunk_size;
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), chunks));
  auto run = [&](std::size_t c) { fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size)); };
  if (workers <= 1) {
    DenormalGuard guard;
    for (std::size_t c = 0; c < chunks; ++c) run(c);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      DenormalGuard guard;
      try {
        for (std::size_t c = w; c < chunks; c += workers) run(c);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto &t : pool) t.join();
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);
}

inline bool all_finite(const Vec3 &v) { return v.allFinite(); }

} // namespace sdfforge
