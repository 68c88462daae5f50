#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "bugsift/common.hpp"
#include "bugsift/io.hpp"
#include "bugsift/tensor.hpp"

namespace bugsift {

// Exact nearest-neighbor index. Each node bounds its subtree's points by a
// hypersphere (centroid, radius); queries prune a branch whenever the
// sphere provably cannot hold a closer point than the current k-th best.
//
// Construction is deterministic: split dimension is the one of greatest
// spread, the split is at the median (lower half takes the extra point for
// odd counts), and all ordering ties fall back to point ids.
template <typename T = double>
class BallTree {
 public:
  struct Node {
    std::vector<T> centroid;
    double radius = 0.0;
    int left = -1;           // children, -1 for leaves
    int right = -1;
    std::size_t begin = 0;   // leaf range into the permutation array
    std::size_t end = 0;
    bool is_leaf() const { return left < 0; }
  };

  struct Neighbor {
    std::size_t index;  // row into points()
    double distance;
  };

  BallTree() = default;

  static BallTree build(Matrix<T> points, std::vector<std::string> ids,
                        std::size_t leaf_size = 40) {
    if (points.rows == 0) throw DataError("ball tree: empty input");
    if (points.cols == 0) throw DataError("ball tree: zero-dimensional points");
    if (ids.size() != points.rows)
      throw DataError("ball tree: id count does not match point count");
    if (leaf_size == 0) throw UsageError("ball tree: leaf_size must be >= 1");
    if (!all_finite(points))
      throw DataError("ball tree: non-finite coordinate");
    BallTree tree;
    tree.points_ = std::move(points);
    tree.ids_ = std::move(ids);
    tree.leaf_size_ = leaf_size;
    tree.order_.resize(tree.points_.rows);
    std::iota(tree.order_.begin(), tree.order_.end(), 0);
    tree.root_ = tree.build_node(0, tree.points_.rows);
    return tree;
  }

  // Exact Euclidean k nearest neighbors, ascending by (distance, id).
  std::vector<Neighbor> knn(std::span<const T> query, std::size_t k) const {
    if (query.size() != points_.cols)
      throw UsageError("ball tree: query dimension mismatch");
    if (k < 1 || k > points_.rows)
      throw UsageError("ball tree: k out of range");
    for (T v : query)
      if (!std::isfinite(static_cast<double>(v)))
        throw DataError("ball tree: non-finite query");

    // Max-heap on (distance, id): top is the current worst of the k best.
    auto worse = [this](const Neighbor& a, const Neighbor& b) {
      if (a.distance != b.distance) return a.distance < b.distance;
      return ids_[a.index] < ids_[b.index];
    };
    std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(worse)> heap(
        worse);
    search(root_, query, k, heap);

    std::vector<Neighbor> result(heap.size());
    for (std::size_t i = result.size(); i-- > 0;) {
      result[i] = heap.top();
      heap.pop();
    }
    return result;
  }

  const Matrix<T>& points() const { return points_; }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const T> point(std::size_t row) const { return points_.row(row); }
  std::size_t size() const { return points_.rows; }
  std::size_t dim() const { return points_.cols; }
  std::size_t leaf_size() const { return leaf_size_; }

  std::size_t depth() const { return node_depth(root_); }

  // Full-traversal structural check: sphere containment, leaf occupancy,
  // binary internal nodes, and disjoint coverage of the input set.
  bool check_invariants(std::string* why = nullptr) const {
    std::vector<char> seen(points_.rows, 0);
    std::string reason;
    bool ok = check_node(root_, seen, reason);
    if (ok) {
      for (std::size_t i = 0; i < seen.size(); ++i)
        if (!seen[i]) {
          ok = false;
          reason = "point " + std::to_string(i) + " missing from leaves";
          break;
        }
    }
    if (!ok && why) *why = reason;
    return ok;
  }

  static constexpr const char* kMagic = "BSFTTREE";
  static constexpr std::uint32_t kVersion = 1;

  void save(const std::filesystem::path& path) const {
    BinaryWriter w(kMagic, kVersion);
    w.u64(points_.rows);
    w.u64(points_.cols);
    w.u64(leaf_size_);
    w.u64(static_cast<std::uint64_t>(root_));
    w.u64(nodes_.size());
    for (const auto& n : nodes_) {
      for (T c : n.centroid) w.f64(static_cast<double>(c));
      w.f64(n.radius);
      w.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(n.left)));
      w.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(n.right)));
      w.u64(n.begin);
      w.u64(n.end);
    }
    for (std::size_t i : order_) w.u64(i);
    for (const auto& id : ids_) w.str(id);
    for (T v : points_.data) w.f64(static_cast<double>(v));
    w.save(path);
  }

  static BallTree load(const std::filesystem::path& path) {
    BinaryReader r = BinaryReader::open(path, kMagic, kVersion);
    BallTree tree;
    std::size_t rows = r.u64();
    std::size_t cols = r.u64();
    tree.leaf_size_ = r.u64();
    tree.root_ = static_cast<int>(static_cast<std::int64_t>(r.u64()));
    std::size_t n_nodes = r.u64();
    tree.nodes_.resize(n_nodes);
    for (auto& n : tree.nodes_) {
      n.centroid.resize(cols);
      for (auto& c : n.centroid) c = static_cast<T>(r.f64());
      n.radius = r.f64();
      n.left = static_cast<int>(static_cast<std::int64_t>(r.u64()));
      n.right = static_cast<int>(static_cast<std::int64_t>(r.u64()));
      n.begin = r.u64();
      n.end = r.u64();
    }
    tree.order_.resize(rows);
    for (auto& i : tree.order_) i = r.u64();
    tree.ids_.resize(rows);
    for (auto& id : tree.ids_) id = r.str();
    tree.points_ = Matrix<T>(rows, cols);
    for (auto& v : tree.points_.data) v = static_cast<T>(r.f64());
    return tree;
  }

 private:
  Matrix<T> points_;
  std::vector<std::string> ids_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_ = 40;
  int root_ = -1;

  int build_node(std::size_t lo, std::size_t hi) {
    Node node;
    node.centroid.assign(points_.cols, T{});
    {
      std::vector<double> acc(points_.cols, 0.0);
      for (std::size_t i = lo; i < hi; ++i) {
        std::span<const T> p = points_.row(order_[i]);
        for (std::size_t d = 0; d < p.size(); ++d)
          acc[d] += static_cast<double>(p[d]);
      }
      double inv = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t d = 0; d < acc.size(); ++d)
        node.centroid[d] = static_cast<T>(acc[d] * inv);
    }
    node.radius = 0.0;
    for (std::size_t i = lo; i < hi; ++i)
      node.radius = std::max(
          node.radius, euclidean_distance<T>(node.centroid,
                                             points_.row(order_[i])));

    if (hi - lo <= leaf_size_) {
      node.begin = lo;
      node.end = hi;
      nodes_.push_back(std::move(node));
      return static_cast<int>(nodes_.size() - 1);
    }

    // Split along the dimension of greatest spread, at the median.
    std::size_t split_dim = 0;
    double best_spread = -1.0;
    for (std::size_t d = 0; d < points_.cols; ++d) {
      double lo_v = std::numeric_limits<double>::infinity();
      double hi_v = -std::numeric_limits<double>::infinity();
      for (std::size_t i = lo; i < hi; ++i) {
        double v = static_cast<double>(points_(order_[i], d));
        lo_v = std::min(lo_v, v);
        hi_v = std::max(hi_v, v);
      }
      if (hi_v - lo_v > best_spread) {
        best_spread = hi_v - lo_v;
        split_dim = d;
      }
    }
    // Full sort (not nth_element) so the stored order is a pure function of
    // the input, independent of the standard library's partition choices.
    std::sort(order_.begin() + static_cast<std::ptrdiff_t>(lo),
              order_.begin() + static_cast<std::ptrdiff_t>(hi),
              [&](std::size_t a, std::size_t b) {
                T va = points_(a, split_dim), vb = points_(b, split_dim);
                if (va != vb) return va < vb;
                return ids_[a] < ids_[b];
              });
    std::size_t mid = lo + (hi - lo + 1) / 2;  // lower half takes the odd one

    int left = build_node(lo, mid);
    int right = build_node(mid, hi);
    node.left = left;
    node.right = right;
    nodes_.push_back(std::move(node));
    return static_cast<int>(nodes_.size() - 1);
  }

  template <typename Heap>
  void search(int node_id, std::span<const T> query, std::size_t k,
              Heap& heap) const {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    double center_dist = euclidean_distance<T>(query, node.centroid);
    if (heap.size() == k && center_dist - node.radius > heap.top().distance)
      return;

    if (node.is_leaf()) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        std::size_t row = order_[i];
        Neighbor cand{row, euclidean_distance<T>(query, points_.row(row))};
        if (heap.size() < k) {
          heap.push(cand);
        } else {
          const Neighbor& worst = heap.top();
          bool better = cand.distance < worst.distance ||
                        (cand.distance == worst.distance &&
                         ids_[cand.index] < ids_[worst.index]);
          if (better) {
            heap.pop();
            heap.push(cand);
          }
        }
      }
      return;
    }

    const Node& l = nodes_[static_cast<std::size_t>(node.left)];
    const Node& r = nodes_[static_cast<std::size_t>(node.right)];
    double dl = euclidean_distance<T>(query, l.centroid);
    double dr = euclidean_distance<T>(query, r.centroid);
    if (dl <= dr) {
      search(node.left, query, k, heap);
      search(node.right, query, k, heap);
    } else {
      search(node.right, query, k, heap);
      search(node.left, query, k, heap);
    }
  }

  std::size_t node_depth(int node_id) const {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.is_leaf()) return 1;
    return 1 + std::max(node_depth(node.left), node_depth(node.right));
  }

  bool check_node(int node_id, std::vector<char>& seen,
                  std::string& reason) const {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.is_leaf()) {
      std::size_t count = node.end - node.begin;
      if (count < 1 || count > leaf_size_) {
        reason = "leaf occupancy out of bounds";
        return false;
      }
    } else if (node.right < 0) {
      reason = "internal node without two children";
      return false;
    }
    // Containment: every point of the subtree inside (centroid, radius).
    bool ok = true;
    visit_leaf_ranges(node_id, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        std::size_t row = order_[i];
        double d = euclidean_distance<T>(node.centroid, points_.row(row));
        if (d > node.radius * (1.0 + 1e-9) + 1e-12) {
          reason = "containment violated at node " + std::to_string(node_id);
          ok = false;
        }
      }
    });
    if (!ok) return false;
    if (node.is_leaf()) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        if (seen[order_[i]]) {
          reason = "point assigned to two leaves";
          return false;
        }
        seen[order_[i]] = 1;
      }
      return true;
    }
    return check_node(node.left, seen, reason) &&
           check_node(node.right, seen, reason);
  }

  template <typename Fn>
  void visit_leaf_ranges(int node_id, Fn&& fn) const {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.is_leaf()) {
      fn(node.begin, node.end);
      return;
    }
    visit_leaf_ranges(node.left, fn);
    visit_leaf_ranges(node.right, fn);
  }
};

}  // namespace bugsift
