#include <doctest.h>

#include "dbscan_oracle.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>

using namespace fmcw;
using namespace dbscan_oracle;

TEST_CASE("two blobs give two clusters") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  Points3<double> pts(3, 100);
  for (int i = 0; i < 100; ++i) {
    Vec3 d;
    do d = Vec3(u(rng), u(rng), u(rng)); while (d.norm() > 1.0);
    pts.col(i) = (i < 50 ? Vec3(0, 0, 0) : Vec3(10, 0, 0)) + 0.5 * d;
  }
  const auto labels = dbscan(pts, 1.2, 20);
  CHECK(cluster_count(labels) == 2);
  for (int i = 0; i < 100; ++i) CHECK(labels[static_cast<std::size_t>(i)] == (i < 50 ? 0 : 1));
}

TEST_CASE("too few points is all noise") {
  Points3<double> pts = Points3<double>::Zero(3, 10);
  const auto labels = dbscan(pts, 1.2, 20);
  for (int l : labels) CHECK(l == kNoise);
  CHECK(dbscan(Points3<double>(3, 0), 1.0, 3).empty());
}

TEST_CASE("parameter validation") {
  Points3<double> pts = Points3<double>::Zero(3, 3);
  CHECK_THROWS_AS(dbscan(pts, 0.0, 3), ConfigError);
  CHECK_THROWS_AS(dbscan(pts, 1.0, 0), ConfigError);
}

TEST_CASE("matches brute-force oracle on random instances") {
  std::mt19937_64 rng(11);
  int with_clusters = 0;
  for (int k = 0; k < 100; ++k) {
    const Instance inst = random_instance(rng);
    const auto got = dbscan(inst.pts, inst.eps, inst.min_pts);
    const auto want = oracle(inst);
    CHECK(same_partition(got, want.label));
    with_clusters += cluster_count(got) > 0;
  }
  CHECK(with_clusters > 50);
}

TEST_CASE("float scalar gives the same partition") {
  std::mt19937_64 rng(4);
  const Instance inst = random_instance(rng);
  const Points3<float> f = inst.pts.cast<float>();
  const auto a = dbscan(inst.pts, inst.eps, inst.min_pts);
  const auto b = dbscan(f, static_cast<float>(inst.eps), inst.min_pts);
  CHECK(same_partition(a, b));
}

TEST_CASE("partition is invariant under point permutation") {
  std::mt19937_64 rng(21);
  int tested = 0;
  for (int k = 0; k < 200 && tested < 50; ++k) {
    const Instance inst = random_instance(rng);
    if (oracle(inst).ambiguous) continue;
    ++tested;
    const auto n = static_cast<std::size_t>(inst.pts.cols());
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Points3<double> shuffled(3, inst.pts.cols());
    for (std::size_t i = 0; i < n; ++i)
      shuffled.col(static_cast<Eigen::Index>(i)) = inst.pts.col(static_cast<Eigen::Index>(perm[i]));
    const auto a = dbscan(inst.pts, inst.eps, inst.min_pts);
    const auto b = dbscan(shuffled, inst.eps, inst.min_pts);
    std::vector<int> back(n);
    for (std::size_t i = 0; i < n; ++i) back[perm[i]] = b[i];
    CHECK(same_partition(a, back));
  }
  CHECK(tested >= 20);
}
