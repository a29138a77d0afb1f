#include "fmcw/heuristic_track.hpp"

#include "fmcw/dbscan.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <tuple>

namespace fmcw {

void TrackerParams::validate() const {
  if (!(eps > 0.0)) throw ConfigError("tracker.eps must be > 0");
  if (min_pts < 1) throw ConfigError("tracker.min_pts must be >= 1");
  if (!(d_n > 0.0)) throw ConfigError("tracker.d_n must be > 0");
  if (tau < 1) throw ConfigError("tracker.tau must be >= 1");
}

Vec2 compensation_displacement(const Cluster& cluster, double dt) {
  const double r = cluster.centroid_bev.norm();
  if (!(r > 0.0)) throw Error("degenerate radial direction");
  return cluster.mean_v * dt * (cluster.centroid_bev / r);
}

Vec2 compensate_position(const Cluster& cluster, double dt) {
  return cluster.centroid_bev + compensation_displacement(cluster, dt);
}

void compensate_points(std::span<Point> points, const Cluster& cluster, double dt) {
  const Vec2 d = compensation_displacement(cluster, dt);
  for (std::size_t i : cluster.point_indices) points[i].position.head<2>() += d;
}

void compensate_window_points(Window& window, std::span<const double> object_v) {
  const double now = window.current_time();
  for (std::size_t i = 0; i < window.size(); ++i) {
    const double dt = now - window.timestamps[static_cast<std::size_t>(window.frame_index[i])];
    if (dt == 0.0) continue;
    auto bev = window.points[i].position.head<2>();
    const double r = bev.norm();
    if (r > 0.0) bev += object_v[i] * dt * (bev / r);
  }
}

std::vector<std::uint32_t> associate_clusters(std::span<const Cluster> clusters, double d_n, IdAllocator& ids,
                                              std::span<const std::optional<std::uint32_t>> preassigned) {
  const std::size_t n = clusters.size();
  std::vector<std::uint32_t> out(n, 0);
  std::vector<char> assigned(n, 0);
  if (!preassigned.empty()) {
    for (std::size_t i = 0; i < n; ++i)
      if (preassigned[i]) {
        out[i] = *preassigned[i];
        assigned[i] = 1;
      }
  }

  int max_slot = -1;
  for (const auto& c : clusters) max_slot = std::max(max_slot, c.frame_index);

  std::vector<std::size_t> prev;
  for (int slot = 0; slot <= max_slot; ++slot) {
    std::vector<std::size_t> cur;
    for (std::size_t i = 0; i < n; ++i)
      if (clusters[i].frame_index == slot) cur.push_back(i);

    // A previous cluster whose id is already carried by a preassigned cluster
    // in this slot is no longer available.
    std::vector<char> prev_taken(prev.size(), 0);
    for (std::size_t b : cur) {
      if (!assigned[b]) continue;
      for (std::size_t a = 0; a < prev.size(); ++a)
        if (out[prev[a]] == out[b]) prev_taken[a] = 1;
    }

    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t a = 0; a < prev.size(); ++a) {
      if (prev_taken[a]) continue;
      for (std::size_t b : cur) {
        if (assigned[b]) continue;
        const double d = (clusters[prev[a]].centroid_bev - clusters[b].centroid_bev).norm();
        if (d <= d_n) pairs.emplace_back(d, prev[a], b);
      }
    }
    std::sort(pairs.begin(), pairs.end());
    std::vector<char> used(n, 0);
    for (const auto& [d, a, b] : pairs) {
      if (used[a] || assigned[b]) continue;
      used[a] = 1;
      out[b] = out[a];
      assigned[b] = 1;
    }
    for (std::size_t b : cur)
      if (!assigned[b]) {
        out[b] = ids.allocate();
        assigned[b] = 1;
      }
    prev = std::move(cur);
  }
  return out;
}

FrameClusters cluster_frame(const PreprocessedFrame& pre, const TrackerParams& trk) {
  FrameClusters fc;
  for (std::size_t i = 0; i < pre.kept.size(); ++i) {
    if (!pre.dynamic[i]) continue;
    fc.raw_index.push_back(pre.kept_index[i]);
    fc.points.push_back(pre.kept.points[i]);
    fc.object_v.push_back(pre.object_v[i]);
  }
  fc.cluster = dbscan(std::span<const Point>(fc.points), trk.eps, trk.min_pts);
  fc.ids.assign(static_cast<std::size_t>(cluster_count(fc.cluster)), 0);
  return fc;
}

HeuristicResult heuristic_track(std::span<const Frame> frames, const PreprocessParams& pre,
                                const TrackerParams& trk, std::uint64_t seed) {
  pre.validate();
  trk.validate();
  HeuristicResult result;
  const std::size_t n = frames.size();
  result.frames.reserve(n);
  IdAllocator ids;

  for (std::size_t t = 0; t < n; ++t) {
    const auto pf = preprocess_frame(frames[t], pre, seed + t);
    result.ego.push_back(pf.ego);
    result.frames.push_back(cluster_frame(pf, trk));
    Mask dyn(frames[t].size(), 0);
    for (auto r : result.frames.back().raw_index) dyn[r] = 1;
    result.dynamic.push_back(std::move(dyn));

    // Window over frames max(0, t+1-tau)..t, clusters in current coordinates.
    const std::size_t first = t + 1 >= static_cast<std::size_t>(trk.tau) ? t + 1 - static_cast<std::size_t>(trk.tau) : 0;
    const Pose& current = frames[t].pose;
    std::vector<Cluster> clusters;
    std::vector<std::optional<std::uint32_t>> preassigned;
    std::vector<std::pair<std::size_t, std::size_t>> origin;  // (frame, cluster)
    for (std::size_t k = first; k <= t; ++k) {
      const FrameClusters& fc = result.frames[k];
      const int count = static_cast<int>(fc.ids.size());
      std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(count));
      for (std::size_t i = 0; i < fc.points.size(); ++i)
        if (fc.cluster[i] != kNoise) members[static_cast<std::size_t>(fc.cluster[i])].push_back(i);
      const double dt = frames[t].timestamp - frames[k].timestamp;
      for (int c = 0; c < count; ++c) {
        Vec3 centroid = Vec3::Zero();
        double v = 0.0;
        for (std::size_t i : members[static_cast<std::size_t>(c)]) {
          centroid += fc.points[i].position;
          v += fc.object_v[i];
        }
        const double m = static_cast<double>(members[static_cast<std::size_t>(c)].size());
        Cluster cl;
        cl.frame_index = static_cast<int>(k - first);
        cl.centroid_bev = current.from_world(frames[k].pose.to_world(centroid / m)).head<2>();
        cl.mean_v = v / m;
        cl.point_indices = std::move(members[static_cast<std::size_t>(c)]);
        if (dt > 0.0 && cl.centroid_bev.norm() > 0.0) cl.centroid_bev = compensate_position(cl, dt);
        clusters.push_back(std::move(cl));
        preassigned.push_back(k < t ? std::optional<std::uint32_t>(fc.ids[static_cast<std::size_t>(c)])
                                    : std::nullopt);
        origin.emplace_back(k, static_cast<std::size_t>(c));
      }
    }
    const auto assigned = associate_clusters(clusters, trk.d_n, ids, preassigned);
    for (std::size_t i = 0; i < clusters.size(); ++i)
      if (origin[i].first == t) result.frames[t].ids[origin[i].second] = assigned[i];

    std::vector<std::uint32_t> labels(frames[t].size(), 0);
    const FrameClusters& fc = result.frames[t];
    for (std::size_t i = 0; i < fc.points.size(); ++i)
      if (fc.cluster[i] != kNoise) labels[fc.raw_index[i]] = fc.ids[static_cast<std::size_t>(fc.cluster[i])];
    result.labels.frames.push_back(std::move(labels));
  }
  return result;
}

}  // namespace fmcw

namespace fmcw {

namespace {

// Majority DBSCAN label among `members`; kNoise when most are noise.
int majority(std::span<const int> labels, std::span<const std::size_t> members) {
  std::map<int, std::size_t> count;
  for (auto i : members) ++count[labels[i]];
  int best = kNoise;
  std::size_t best_n = 0;
  for (const auto& [l, c] : count)
    if (c > best_n) best = l, best_n = c;
  return best;
}

}  // namespace

std::vector<AssociationDisagreement> verify_association(std::span<const Frame> frames, const HeuristicResult& result,
                                                        const TrackerParams& trk) {
  trk.validate();
  if (result.frames.size() != frames.size()) throw Error("verify_association: result does not match the frames");
  std::vector<AssociationDisagreement> out;
  for (std::size_t t = 1; t < frames.size(); ++t) {
    const Pose& current = frames[t].pose;
    const double dt = frames[t].timestamp - frames[t - 1].timestamp;
    std::vector<Point> pts;
    std::array<std::vector<std::vector<std::size_t>>, 2> members;  // per slot, per cluster, index into pts
    for (int slot = 0; slot < 2; ++slot) {
      const std::size_t k = t - 1 + static_cast<std::size_t>(slot);
      const FrameClusters& fc = result.frames[k];
      auto& mem = members[static_cast<std::size_t>(slot)];
      mem.assign(fc.ids.size(), {});
      for (std::size_t i = 0; i < fc.points.size(); ++i) {
        if (fc.cluster[i] == kNoise) continue;
        mem[static_cast<std::size_t>(fc.cluster[i])].push_back(pts.size());
        pts.push_back(transform_point(fc.points[i], frames[k].pose, current));
      }
      if (slot == 1) break;
      std::vector<double> vsum(mem.size(), 0.0);
      for (std::size_t i = 0; i < fc.points.size(); ++i)
        if (fc.cluster[i] != kNoise) vsum[static_cast<std::size_t>(fc.cluster[i])] += fc.object_v[i];
      for (std::size_t c = 0; c < mem.size(); ++c) {
        if (mem[c].empty()) continue;
        Cluster cl;
        for (auto i : mem[c]) cl.centroid_bev += pts[i].position.head<2>();
        cl.centroid_bev /= static_cast<double>(mem[c].size());
        cl.mean_v = vsum[c] / static_cast<double>(mem[c].size());
        if (cl.centroid_bev.norm() == 0.0) continue;
        const Vec2 d = compensation_displacement(cl, dt);
        for (auto i : mem[c]) pts[i].position.head<2>() += d;
      }
    }
    const auto labels = dbscan(std::span<const Point>(pts), trk.eps, trk.min_pts);
    const auto& prev = result.frames[t - 1];
    const auto& cur = result.frames[t];
    for (std::size_t a = 0; a < prev.ids.size(); ++a) {
      if (members[0][a].empty()) continue;
      const int la = majority(labels, members[0][a]);
      for (std::size_t b = 0; b < cur.ids.size(); ++b) {
        if (members[1][b].empty()) continue;
        const int lb = majority(labels, members[1][b]);
        const bool associated = prev.ids[a] == cur.ids[b];
        const bool reclustered = la != kNoise && la == lb;
        if (associated != reclustered) out.push_back({t, prev.ids[a], cur.ids[b], associated, reclustered});
      }
    }
  }
  return out;
}

}  // namespace fmcw
