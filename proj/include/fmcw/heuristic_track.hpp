#pragma once

#include "fmcw/core.hpp"
#include "fmcw/preprocess.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace fmcw {

struct TrackerParams {
  double eps = 1.2;   // DBSCAN density radius, m
  int min_pts = 20;   // minimum neighborhood and cluster size
  double d_n = 1.0;   // association distance threshold (BEV), m
  int tau = 4;        // window size, frames

  void validate() const;
};

// Hands out instance ids >= 1.
struct IdAllocator {
  std::uint32_t next = 1;
  std::uint32_t allocate() { return next++; }
};

/// BEV displacement mean_v * dt along the ray from the current sensor origin
/// to the centroid. Throws Error("degenerate radial direction") at the origin.
Vec2 compensation_displacement(const Cluster& cluster, double dt);
/// Cluster centroid shifted by compensation_displacement.
Vec2 compensate_position(const Cluster& cluster, double dt);
/// Shifts points in place by the cluster's displacement (heights untouched).
void compensate_points(std::span<Point> points, const Cluster& cluster, double dt);

/// Shifts every window point along its own BEV ray by object_v[i] * dt, with
/// dt measured from the point's slot to the newest slot.
void compensate_window_points(Window& window, std::span<const double> object_v);

/// Greedy nearest-neighbor association over adjacent slots. `clusters` carry
/// already-compensated centroids. Clusters with a preassigned id keep it;
/// every other cluster either inherits the id of its match in the previous
/// slot (distance <= d_n, one-to-one, ascending distance, ties by index) or
/// receives a fresh id. Returns one id per cluster.
std::vector<std::uint32_t> associate_clusters(std::span<const Cluster> clusters, double d_n, IdAllocator& ids,
                                              std::span<const std::optional<std::uint32_t>> preassigned = {});

// Clusters found in one frame, in that frame's sensor coordinates.
struct FrameClusters {
  std::vector<std::uint32_t> raw_index;  // dynamic points, index into the raw frame
  std::vector<Point> points;             // dynamic points (sensor frame)
  std::vector<double> object_v;          // ego-compensated radial velocity
  std::vector<int> cluster;              // dbscan id per dynamic point
  std::vector<std::uint32_t> ids;        // instance id per cluster
};

struct HeuristicResult {
  InstanceLabeling labels;
  std::vector<FrameClusters> frames;
  std::vector<Mask> dynamic;  // per raw frame point
  std::vector<EgoEstimate> ego;
};

/// Preprocessing, per-frame DBSCAN and windowed compensate-and-associate with
/// stride 1; ids are handed from one window to the next through shared frames.
HeuristicResult heuristic_track(std::span<const Frame> frames, const PreprocessParams& pre,
                                const TrackerParams& trk, std::uint64_t seed = 0);

/// Per-frame preprocessing plus clustering (no association).
FrameClusters cluster_frame(const PreprocessedFrame& pre, const TrackerParams& trk);

// A cluster pair of adjacent frames on which the two association routes differ.
struct AssociationDisagreement {
  std::size_t frame = 0;        // the later frame of the pair
  std::uint32_t prev_id = 0;    // id of the cluster in frame - 1
  std::uint32_t id = 0;         // id of the cluster in frame
  bool associated = false;      // nearest-neighbor route: same instance
  bool reclustered = false;     // DBSCAN over the compensated pair: same instance
};

/// Second association route for double-checking a result: the clustered
/// points of each adjacent frame pair are aligned, the older frame is shifted
/// by its cluster's compensation, and DBSCAN runs over the union. Two clusters
/// count as one instance when most points of the smaller one share a DBSCAN
/// cluster with most points of the other. Returns the pairs where this and the
/// id assignment of `result` disagree.
std::vector<AssociationDisagreement> verify_association(std::span<const Frame> frames, const HeuristicResult& result,
                                                        const TrackerParams& trk);

}  // namespace fmcw
