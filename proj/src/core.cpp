#include "fmcw/core.hpp"

#include <algorithm>
#include <cmath>

namespace fmcw {

double Pose::orthonormality_error(const Mat3& r) {
  const double ortho = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  return std::max(ortho, std::abs(r.determinant() - 1.0));
}

Pose::Pose(const Mat3& rotation, const Vec3& translation) : rotation_(rotation), translation_(translation) {
  if (!rotation.allFinite() || !translation.allFinite()) throw Error("pose has non-finite entries");
  if (orthonormality_error(rotation) > 1e-9) throw Error("pose rotation is not orthonormal");
}

Pose Pose::from_yaw(double yaw_rad, const Vec3& translation) {
  return Pose(Eigen::AngleAxisd(yaw_rad, Vec3::UnitZ()).toRotationMatrix(), translation);
}

Frame Frame::subset(std::span<const std::uint8_t> keep) const {
  Frame out;
  out.timestamp = timestamp;
  out.pose = pose;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!keep[i]) continue;
    out.points.push_back(points[i]);
    if (!point_ids.empty()) out.point_ids.push_back(point_ids[i]);
  }
  return out;
}

Frame Frame::subset(std::span<const std::size_t> indices) const {
  Frame out;
  out.timestamp = timestamp;
  out.pose = pose;
  out.points.reserve(indices.size());
  for (std::size_t i : indices) {
    out.points.push_back(points[i]);
    if (!point_ids.empty()) out.point_ids.push_back(point_ids[i]);
  }
  return out;
}

void assign_point_ids(Frame& frame, std::uint32_t frame_number) {
  frame.point_ids.resize(frame.points.size());
  for (std::size_t i = 0; i < frame.points.size(); ++i)
    frame.point_ids[i] = make_point_id(frame_number, static_cast<std::uint32_t>(i));
}

Point transform_point(const Point& point, const Pose& from, const Pose& to) {
  return {to.from_world(from.to_world(point.position)), point.v};
}

Window build_window(std::span<const Frame> frames, int tau) {
  std::vector<Pose> poses;
  poses.reserve(frames.size());
  for (const auto& f : frames) poses.push_back(f.pose);
  return build_window(frames, poses, tau);
}

Window build_window(std::span<const Frame> frames, std::span<const Pose> poses, int tau) {
  if (tau < 1) throw ConfigError("window size must be >= 1");
  if (frames.empty()) throw Error("window needs at least one frame");
  if (poses.size() != frames.size()) throw DataError("missing pose for a window frame");

  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(tau), frames.size());
  const std::size_t first = frames.size() - count;
  const Pose& current = poses.back();

  Window w;
  w.tau = tau;
  std::size_t total = 0;
  for (std::size_t k = first; k < frames.size(); ++k) total += frames[k].size();
  w.points.reserve(total);
  w.frame_index.reserve(total);
  w.point_ids.reserve(total);
  w.source_index.reserve(total);

  for (std::size_t k = first; k < frames.size(); ++k) {
    const Frame& f = frames[k];
    const int slot = static_cast<int>(k - first);
    w.timestamps.push_back(f.timestamp);
    // Compose once per frame instead of per point.
    const Mat3 r = current.rotation().transpose() * poses[k].rotation();
    const Vec3 t = current.rotation().transpose() * (poses[k].translation() - current.translation());
    for (std::size_t i = 0; i < f.size(); ++i) {
      w.points.emplace_back(r * f.points[i].position + t, f.points[i].v);
      w.frame_index.push_back(slot);
      w.point_ids.push_back(f.point_ids.empty() ? make_point_id(static_cast<std::uint32_t>(k),
                                                                static_cast<std::uint32_t>(i))
                                                : f.point_ids[i]);
      w.source_index.push_back(static_cast<std::uint32_t>(i));
    }
  }
  return w;
}

Cluster make_cluster(int frame_index, std::vector<std::size_t> members, std::span<const Point> points,
                     std::span<const double> v) {
  Cluster c;
  c.frame_index = frame_index;
  c.point_indices = std::move(members);
  if (c.point_indices.empty()) return c;
  Vec2 sum = Vec2::Zero();
  double vsum = 0.0;
  for (std::size_t i : c.point_indices) {
    sum += points[i].position.head<2>();
    vsum += v[i];
  }
  const double n = static_cast<double>(c.point_indices.size());
  c.centroid_bev = sum / n;
  c.mean_v = vsum / n;
  return c;
}

std::size_t InstanceLabeling::point_count() const {
  std::size_t n = 0;
  for (const auto& f : frames) n += f.size();
  return n;
}

std::uint32_t InstanceLabeling::max_id() const {
  std::uint32_t m = 0;
  for (const auto& f : frames)
    for (auto id : f) m = std::max(m, id);
  return m;
}

}  // namespace fmcw
