#pragma once

#include "fmcw/core.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <span>
#include <unordered_map>
#include <vector>

namespace fmcw {

inline constexpr int kNoise = -1;

template <typename Scalar>
using Points3 = Eigen::Matrix<Scalar, 3, Eigen::Dynamic>;

namespace detail {

// Uniform grid with cell edge eps; a radius query inspects the 27 cells
// around the query cell.
template <typename Scalar>
class EpsGrid {
 public:
  template <typename Derived>
  EpsGrid(const Eigen::MatrixBase<Derived>& pts, Scalar eps) : eps_(eps) {
    const Eigen::Index n = pts.cols();
    keys_.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = key(cell(pts.col(i)));
      keys_[static_cast<std::size_t>(i)] = k;
      cells_[k].push_back(static_cast<int>(i));
    }
  }

  template <typename Derived, typename Fn>
  void for_each_candidate(const Eigen::MatrixBase<Derived>& p, Fn&& fn) const {
    const auto c = cell(p);
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find(key({c[0] + dx, c[1] + dy, c[2] + dz}));
          if (it == cells_.end()) continue;
          for (int j : it->second) fn(j);
        }
  }

 private:
  template <typename Derived>
  std::array<std::int64_t, 3> cell(const Eigen::MatrixBase<Derived>& p) const {
    return {static_cast<std::int64_t>(std::floor(p[0] / eps_)), static_cast<std::int64_t>(std::floor(p[1] / eps_)),
            static_cast<std::int64_t>(std::floor(p[2] / eps_))};
  }
  static std::uint64_t key(const std::array<std::int64_t, 3>& c) {
    constexpr std::uint64_t mask = (1ull << 21) - 1;
    return ((static_cast<std::uint64_t>(c[0]) & mask) << 42) | ((static_cast<std::uint64_t>(c[1]) & mask) << 21) |
           (static_cast<std::uint64_t>(c[2]) & mask);
  }

  Scalar eps_;
  std::vector<std::uint64_t> keys_;
  std::unordered_map<std::uint64_t, std::vector<int>> cells_;
};

}  // namespace detail

/// DBSCAN over the columns of a 3xN matrix. A point is core when at least
/// `min_pts` points (itself included) lie within `eps` (inclusive). Border
/// points join the cluster of their lowest-index core neighbor. Clusters with
/// fewer than `min_pts` members are dissolved into noise. Returns a cluster
/// id per point, numbered 0..K-1 by lowest member index, or kNoise.
template <typename Derived>
std::vector<int> dbscan(const Eigen::MatrixBase<Derived>& pts, typename Derived::Scalar eps, int min_pts) {
  using Scalar = typename Derived::Scalar;
  static_assert(Derived::RowsAtCompileTime == 3 || Derived::RowsAtCompileTime == Eigen::Dynamic);
  if (!(eps > Scalar(0))) throw ConfigError("dbscan eps must be > 0");
  if (min_pts < 1) throw ConfigError("dbscan min_pts must be >= 1");

  const auto n = static_cast<std::size_t>(pts.cols());
  std::vector<int> label(n, kNoise);
  if (n == 0) return label;

  const detail::EpsGrid<Scalar> grid(pts, eps);
  const Scalar eps2 = eps * eps;

  // CSR neighbor lists, each sorted ascending.
  std::vector<std::size_t> offset(n + 1, 0);
  std::vector<int> adj;
  for (std::size_t i = 0; i < n; ++i) {
    const auto begin = adj.size();
    grid.for_each_candidate(pts.col(static_cast<Eigen::Index>(i)), [&](int j) {
      if ((pts.col(static_cast<Eigen::Index>(i)) - pts.col(j)).squaredNorm() <= eps2) adj.push_back(j);
    });
    std::sort(adj.begin() + static_cast<std::ptrdiff_t>(begin), adj.end());
    offset[i + 1] = adj.size();
  }
  auto neighbors = [&](std::size_t i) {
    return std::span<const int>(adj.data() + offset[i], offset[i + 1] - offset[i]);
  };

  std::vector<char> core(n, 0);
  for (std::size_t i = 0; i < n; ++i) core[i] = neighbors(i).size() >= static_cast<std::size_t>(min_pts);

  int clusters = 0;
  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i] || label[i] != kNoise) continue;
    label[i] = clusters;
    queue.push_back(i);
    while (!queue.empty()) {
      const std::size_t q = queue.front();
      queue.pop_front();
      for (int j : neighbors(q)) {
        const auto uj = static_cast<std::size_t>(j);
        if (core[uj] && label[uj] == kNoise) {
          label[uj] = clusters;
          queue.push_back(uj);
        }
      }
    }
    ++clusters;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    for (int j : neighbors(i)) {
      if (core[static_cast<std::size_t>(j)]) {
        label[i] = label[static_cast<std::size_t>(j)];
        break;
      }
    }
  }

  std::vector<std::size_t> size(static_cast<std::size_t>(clusters), 0);
  for (int l : label)
    if (l != kNoise) ++size[static_cast<std::size_t>(l)];
  std::vector<int> remap(static_cast<std::size_t>(clusters), kNoise);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int l = label[i];
    if (l == kNoise) continue;
    auto& r = remap[static_cast<std::size_t>(l)];
    if (r == kNoise && size[static_cast<std::size_t>(l)] >= static_cast<std::size_t>(min_pts)) r = next++;
    label[i] = size[static_cast<std::size_t>(l)] >= static_cast<std::size_t>(min_pts) ? r : kNoise;
  }
  return label;
}

/// Convenience overload on point positions.
inline std::vector<int> dbscan(std::span<const Point> points, double eps, int min_pts) {
  Points3<double> m(3, static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = points[i].position;
  return dbscan(m, eps, min_pts);
}

/// Number of clusters in a dbscan labeling.
inline int cluster_count(std::span<const int> labels) {
  int k = 0;
  for (int l : labels) k = std::max(k, l + 1);
  return k;
}

}  // namespace fmcw
