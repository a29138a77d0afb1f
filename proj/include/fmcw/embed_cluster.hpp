#pragma once

#include "fmcw/core.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace fmcw {

struct ClusterInferParams {
  double p_threshold = 0.4;
  double overlap_threshold = 0.8;
  std::size_t max_instances = 256;      // per window
  std::size_t min_instance_points = 20;  // smaller instances become background

  void validate() const;
};

/// Gaussian association probability density of e_j under N(e_i, diag(var_i)).
/// Unnormalized: the peak exceeds 1 for small variances. Throws Error on a
/// non-positive variance.
template <typename DerivedA, typename DerivedV, typename DerivedB>
typename DerivedA::Scalar assoc_prob(const Eigen::MatrixBase<DerivedA>& e_i, const Eigen::MatrixBase<DerivedV>& var_i,
                                     const Eigen::MatrixBase<DerivedB>& e_j) {
  using Scalar = typename DerivedA::Scalar;
  using std::exp;
  using std::pow;
  using std::sqrt;
  const Eigen::Index d = e_i.size();
  if (var_i.size() != d || e_j.size() != d) throw Error("assoc_prob: dimension mismatch");
  Scalar prod(1), q(0);
  for (Eigen::Index k = 0; k < d; ++k) {
    const Scalar v = var_i(k);
    if (!(v > Scalar(0))) throw Error("non-positive variance");
    const Scalar diff = e_i(k) - e_j(k);
    prod *= v;
    q += diff * diff / v;
  }
  const Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  return pow(two_pi, -Scalar(d) / Scalar(2)) / sqrt(prod) * exp(-q / Scalar(2));
}

// Per-point head outputs for a whole window, one row per point.
struct HeadOutputs {
  Eigen::MatrixXd embedding;   // N x D
  Eigen::MatrixXd variance;    // N x D, strictly positive
  Eigen::VectorXd objectness;  // N, in [0, 1]

  std::size_t size() const { return static_cast<std::size_t>(objectness.size()); }
  static HeadOutputs from_points(std::span<const PointHeadOutput> points);
};

// Instance index per window point (0..count-1), or -1 for none.
struct VolumeAssignment {
  std::vector<int> instance;
  int count = 0;
};

/// Peeling: the remaining point with the highest objectness (lowest index on
/// ties) becomes a center; every remaining point whose assoc_prob under the
/// center's Gaussian exceeds p_threshold joins it, the center always does.
/// Repeats until no point remains. Throws Error("fragmented clustering") once
/// more than max_instances centers are needed.
VolumeAssignment cluster_volume(const HeadOutputs& head, const ClusterInferParams& params);

/// Unassigns instances with fewer than `min_points` members and renumbers the
/// survivors in order of first appearance.
VolumeAssignment drop_small_instances(const VolumeAssignment& a, std::size_t min_points);

/// Greedy one-to-one matching on an overlap matrix (rows: current instances,
/// columns: previous instances). Pairs are taken by descending overlap, ties
/// by row then column; a pair is accepted when overlap >= threshold. Returns
/// the matched column per row, or -1.
std::vector<int> greedy_overlap_match(const Eigen::MatrixXd& overlap, double threshold);

// Instance ids of the points of one window.
struct WindowLabels {
  std::vector<PointId> point_ids;
  std::vector<std::uint32_t> ids;  // 0 = none
};

struct IdSource {
  std::uint32_t next = 1;
  std::uint32_t allocate() { return next++; }
};

/// Gives the instances of `cur` ids consistent with `prev`. Overlap is point
/// IoU over the frames the two windows share; matches at or above the
/// threshold inherit the previous id, every other instance gets a fresh one.
/// Returns one id per instance of `cur`.
std::vector<std::uint32_t> associate_volumes(const WindowLabels& prev, std::span<const PointId> cur_point_ids,
                                             const VolumeAssignment& cur, double overlap_threshold, IdSource& ids);

}  // namespace fmcw
