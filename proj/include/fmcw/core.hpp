#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fmcw {

// Error hierarchy. The CLI maps ConfigError -> exit 2, DataError -> exit 3,
// anything else -> exit 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Per-point boolean mask (std::vector<bool> does not expose contiguous storage).
using Mask = std::vector<std::uint8_t>;

// Stable identifier of a point inside a sequence: frame number in the high
// 32 bits, index inside the scan in the low 32 bits.
using PointId = std::uint64_t;
constexpr PointId make_point_id(std::uint32_t frame, std::uint32_t index) {
  return (static_cast<PointId>(frame) << 32) | index;
}
constexpr std::uint32_t point_id_frame(PointId id) { return static_cast<std::uint32_t>(id >> 32); }
constexpr std::uint32_t point_id_index(PointId id) { return static_cast<std::uint32_t>(id & 0xffffffffu); }

// One Doppler LiDAR return. Position in meters (sensor frame), v is the
// radial velocity in m/s; negative means the surface approaches the sensor.
struct Point {
  Vec3 position = Vec3::Zero();
  double v = 0.0;

  Point() = default;
  Point(double x, double y, double z, double v_) : position(x, y, z), v(v_) {}
  Point(const Vec3& p, double v_) : position(p), v(v_) {}

  double x() const { return position.x(); }
  double y() const { return position.y(); }
  double z() const { return position.z(); }
  bool finite() const { return position.allFinite() && std::isfinite(v); }
};

// Rigid sensor->world transform.
class Pose {
 public:
  Pose() = default;
  /// Throws Error when the rotation is not orthonormal with det +1 (1e-9).
  Pose(const Mat3& rotation, const Vec3& translation);

  static Pose identity() { return {}; }
  static Pose from_yaw(double yaw_rad, const Vec3& translation);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 to_world(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 from_world(const Vec3& p) const { return rotation_.transpose() * (p - translation_); }

  // Largest deviation of R^T R from I, and |det R - 1|.
  static double orthonormality_error(const Mat3& r);

 private:
  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
};

struct Frame {
  double timestamp = 0.0;
  std::vector<Point> points;
  Pose pose;
  std::vector<PointId> point_ids;

  std::size_t size() const { return points.size(); }
  /// Keeps points[i] for which keep[i] is true, preserving order and ids.
  Frame subset(std::span<const std::uint8_t> keep) const;
  Frame subset(std::span<const std::size_t> indices) const;
};

/// Assigns point ids following the (frame, index) convention.
void assign_point_ids(Frame& frame, std::uint32_t frame_number);

/// Maps a point's position from the `from` sensor frame into the `to` sensor
/// frame. The Doppler value is the raw measurement and is left untouched.
Point transform_point(const Point& point, const Pose& from, const Pose& to);

// Tau consecutive frames expressed in the coordinates of the last one.
struct Window {
  int tau = 1;
  std::vector<double> timestamps;        // per slot, oldest first
  std::vector<Point> points;             // aligned to the last slot
  std::vector<int> frame_index;          // slot per point, 0 = oldest
  std::vector<PointId> point_ids;
  std::vector<std::uint32_t> source_index;  // index inside the source frame

  std::size_t size() const { return points.size(); }
  int slots() const { return static_cast<int>(timestamps.size()); }
  double current_time() const { return timestamps.back(); }
};

/// Aligns the last min(tau, frames.size()) frames into the newest frame's
/// coordinates, using each frame's own pose.
Window build_window(std::span<const Frame> frames, int tau);
/// Same, with poses supplied separately (one per frame).
Window build_window(std::span<const Frame> frames, std::span<const Pose> poses, int tau);

// Group of moving points from one slot of a window.
struct Cluster {
  int frame_index = 0;
  std::vector<std::size_t> point_indices;
  Vec2 centroid_bev = Vec2::Zero();
  double mean_v = 0.0;
};

/// Builds a cluster, computing the BEV centroid and the mean of `v` over the
/// members. `v` is indexed like `points`.
Cluster make_cluster(int frame_index, std::vector<std::size_t> members, std::span<const Point> points,
                     std::span<const double> v);

// Per-point instance ids over a sequence, one array per frame. 0 is the
// background; moving instances use ids >= 1.
struct InstanceLabeling {
  std::vector<std::vector<std::uint32_t>> frames;

  std::size_t frame_count() const { return frames.size(); }
  std::size_t point_count() const;
  std::uint32_t max_id() const;
  bool operator==(const InstanceLabeling&) const = default;
};

struct PointHeadOutput {
  Eigen::VectorXd embedding;
  Eigen::VectorXd variance;  // diagonal of the covariance, strictly positive
  double objectness = 0.0;   // in [0, 1]
};

}  // namespace fmcw
