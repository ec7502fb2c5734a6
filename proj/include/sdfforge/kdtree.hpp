#pragma once

// Exact nearest-neighbor queries over a fixed point set. Results are ordered by (distance, index),
// so equal distances resolve the same way a sorted brute-force scan would.

#include "sdfforge/core.hpp"

#include <queue>
#include <span>

namespace sdfforge {

struct Neighbor {
  std::size_t index = 0;
  double dist2 = 0;
  bool operator<(const Neighbor &o) const { return dist2 != o.dist2 ? dist2 < o.dist2 : index < o.index; }
};

class KdTree {
public:
  KdTree() = default;
  explicit KdTree(std::vector<Vec3> pts) : pts_(std::move(pts)) {
    order_.resize(pts_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    if (!pts_.empty()) build(0, pts_.size());
  }

  std::size_t size() const { return pts_.size(); }
  const std::vector<Vec3> &points() const { return pts_; }

  std::vector<Neighbor> knn(const Vec3 &q, std::size_t k) const {
    k = std::min(k, pts_.size());
    std::priority_queue<Neighbor> heap;
    if (k > 0) search_knn(0, q, k, heap);
    std::vector<Neighbor> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
      out[i] = heap.top();
      heap.pop();
    }
    return out;
  }

  Neighbor nearest(const Vec3 &q) const {
    require(!pts_.empty(), ErrorKind::Precondition, "nearest neighbor of an empty set");
    return knn(q, 1)[0];
  }

  /// All points with squared distance <= r2, sorted.
  std::vector<Neighbor> radius(const Vec3 &q, double r2) const {
    std::vector<Neighbor> out;
    if (!pts_.empty()) search_radius(0, q, r2, out);
    std::sort(out.begin(), out.end());
    return out;
  }

private:
  struct Node {
    std::size_t begin = 0, end = 0;
    int axis = -1;  // -1 for leaves
    double split = 0;
    std::size_t left = 0, right = 0;
    Vec3 lo, hi;
  };
  static constexpr std::size_t kLeaf = 12;

  std::size_t build(std::size_t b, std::size_t e) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({});
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (std::size_t i = b; i < e; ++i) {
      lo = lo.cwiseMin(pts_[order_[i]]);
      hi = hi.cwiseMax(pts_[order_[i]]);
    }
    Node n;
    n.begin = b;
    n.end = e;
    n.lo = lo;
    n.hi = hi;
    if (e - b > kLeaf) {
      int axis;
      (hi - lo).maxCoeff(&axis);
      if (hi[axis] > lo[axis]) {
        const std::size_t mid = b + (e - b) / 2;
        auto first = order_.begin() + static_cast<std::ptrdiff_t>(b);
        std::nth_element(first, order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(e),
                         [&](std::size_t a, std::size_t c) { return pts_[a][axis] < pts_[c][axis]; });
        n.axis = axis;
        n.split = pts_[order_[mid]][axis];
        n.left = build(b, mid);
        n.right = build(mid, e);
      }
    }
    nodes_[id] = n;
    return id;
  }

  static double box_dist2(const Node &n, const Vec3 &q) {
    const Vec3 d = (n.lo - q).cwiseMax(q - n.hi).cwiseMax(0.0);
    return d.squaredNorm();
  }

  void search_knn(std::size_t id, const Vec3 &q, std::size_t k, std::priority_queue<Neighbor> &heap) const {
    const Node &n = nodes_[id];
    if (heap.size() == k && box_dist2(n, q) > heap.top().dist2) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const Neighbor c{order_[i], (pts_[order_[i]] - q).squaredNorm()};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    const bool go_left = q[n.axis] < n.split;
    search_knn(go_left ? n.left : n.right, q, k, heap);
    search_knn(go_left ? n.right : n.left, q, k, heap);
  }

  void search_radius(std::size_t id, const Vec3 &q, double r2, std::vector<Neighbor> &out) const {
    const Node &n = nodes_[id];
    if (box_dist2(n, q) > r2) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const double d2 = (pts_[order_[i]] - q).squaredNorm();
        if (d2 <= r2) out.push_back({order_[i], d2});
      }
      return;
    }
    search_radius(n.left, q, r2, out);
    search_radius(n.right, q, r2, out);
  }

  std::vector<Vec3> pts_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

} // namespace sdfforge
