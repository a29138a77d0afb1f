#pragma once

#include "fmcw/dbscan.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <vector>

namespace dbscan_oracle {

using fmcw::Points3;
using fmcw::Vec3;
using fmcw::kNoise;


struct Instance {
  Points3<double> pts;
  double eps = 1.0;
  int min_pts = 5;
};

inline Instance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> blobs(1, 5), size(1, 40), minp(2, 20);
  std::uniform_real_distribution<double> center(-15, 15), spread(0.2, 2.0), eps(0.5, 2.0);
  std::normal_distribution<double> g(0, 1);
  std::vector<Vec3> pts;
  const int b = blobs(rng);
  for (int k = 0; k < b; ++k) {
    const Vec3 c(center(rng), center(rng), center(rng) * 0.1);
    const double s = spread(rng);
    const int m = size(rng);
    for (int i = 0; i < m && pts.size() < 200; ++i) pts.push_back(c + s * Vec3(g(rng), g(rng), g(rng)));
  }
  Instance inst;
  inst.pts.resize(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) inst.pts.col(static_cast<Eigen::Index>(i)) = pts[i];
  inst.eps = eps(rng);
  inst.min_pts = minp(rng);
  return inst;
}

struct OracleResult {
  std::vector<int> label;
  bool ambiguous = false;  // some border point touches two core components
};

// Brute-force density connectivity: O(n^2) neighbor graph, union-find over
// core-core edges, borders to the component of their lowest-index core
// neighbor, undersized components dissolved.
inline OracleResult oracle(const Instance& inst) {
  const auto n = static_cast<std::size_t>(inst.pts.cols());
  std::vector<std::vector<std::size_t>> nb(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if ((inst.pts.col(static_cast<Eigen::Index>(i)) - inst.pts.col(static_cast<Eigen::Index>(j))).norm() <=
          inst.eps)
        nb[i].push_back(j);
  std::vector<char> core(n);
  for (std::size_t i = 0; i < n; ++i) core[i] = nb[i].size() >= static_cast<std::size_t>(inst.min_pts);

  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i)
    if (core[i])
      for (std::size_t j : nb[i])
        if (core[j]) parent[find(i)] = find(j);

  OracleResult r;
  std::vector<long> comp(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) {
      comp[i] = static_cast<long>(find(i));
      continue;
    }
    std::vector<std::size_t> roots;
    for (std::size_t j : nb[i])
      if (core[j]) roots.push_back(find(j));
    if (roots.empty()) continue;
    comp[i] = static_cast<long>(roots.front());
    std::sort(roots.begin(), roots.end());
    r.ambiguous |= std::unique(roots.begin(), roots.end()) - roots.begin() > 1;
  }
  std::map<long, std::size_t> size;
  for (long c : comp)
    if (c >= 0) ++size[c];
  r.label.assign(n, kNoise);
  std::map<long, int> renumber;
  for (std::size_t i = 0; i < n; ++i) {
    if (comp[i] < 0 || size[comp[i]] < static_cast<std::size_t>(inst.min_pts)) continue;
    auto [it, fresh] = renumber.try_emplace(comp[i], static_cast<int>(renumber.size()));
    r.label[i] = it->second;
  }
  return r;
}

// Same partition up to a bijective relabeling, noise fixed.
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] == kNoise) != (b[i] == kNoise)) return false;
    if (a[i] == kNoise) continue;
    auto [x, nx] = ab.try_emplace(a[i], b[i]);
    auto [y, ny] = ba.try_emplace(b[i], a[i]);
    if (x->second != b[i] || y->second != a[i]) return false;
  }
  return true;
}

}  // namespace dbscan_oracle
