#pragma once

#include "fmcw/core.hpp"

#include <cstdint>
#include <span>

namespace fmcw {

enum class BandMode {
  paper_faithful,   // static iff |v - V_g| <= V_m
  angle_corrected,  // static iff |v - expected(ray)| <= V_m
};

struct PreprocessParams {
  double v_abs_max = 60.0;
  double range_max = 300.0;
  int ransac_iters = 200;
  double ransac_inlier_dist = 0.15;
  double front_view_bearing_deg = 10.0;
  double v_m = 0.2;  // half width of the static velocity band, m/s
  BandMode band_mode = BandMode::angle_corrected;
  std::size_t min_ground_inliers = 50;

  void validate() const;
};

struct Plane {
  Vec3 normal = Vec3::UnitZ();  // unit length, oriented +z
  double offset = 0.0;          // normal . p + offset = 0

  double distance(const Vec3& p) const { return std::abs(normal.dot(p) + offset); }
};

struct EgoEstimate {
  double v_g = 0.0;            // mean Doppler of front-view ground points
  double v_car = 0.0;          // -v_g
  double forward_speed = 0.0;  // ray-cosine normalized ego speed
  Plane ground_plane;
  Mask ground_mask;

  /// Estimate built from a known mean ground velocity (forward_speed = -v_g).
  static EgoEstimate from_ground_velocity(double v_g);

  /// Doppler a static point at `p` would produce under this estimate.
  double expected_static_v(const Vec3& p, BandMode mode) const;
};

struct FilterResult {
  Frame kept;
  Mask removed;
};

/// Drops points with |v| > v_abs_max, range > range_max or non-finite fields.
FilterResult filter_outliers(const Frame& frame, const PreprocessParams& params);

struct GroundFit {
  Plane plane;
  Mask inliers;
};

/// RANSAC plane over 3-point samples scored by truncated squared residuals
/// (MSAC), then refined by least squares on a narrow band around the model.
/// `inliers` holds the points within `inlier_dist` of the refined plane.
/// Throws Error("no ground") with fewer than 3 points or `min_inliers`
/// inliers.
GroundFit fit_ground_plane(std::span<const Point> points, int iters, double inlier_dist, std::uint64_t seed,
                           std::size_t min_inliers = 50);

/// Mean Doppler over ground points within the front-view wedge. Throws
/// Error("no front ground") when the wedge holds no ground point.
EgoEstimate estimate_ego_velocity(const Frame& frame, std::span<const std::uint8_t> ground_mask,
                                  const PreprocessParams& params);

/// Dynamic mask over `frame`: non-ground points outside the static band.
Mask split_dynamic(const Frame& frame, const EgoEstimate& ego, const PreprocessParams& params);

// Full per-frame pass used by both trackers.
struct PreprocessedFrame {
  Frame kept;                             // after the outlier filter
  std::vector<std::uint32_t> kept_index;  // index of each kept point in the raw frame
  EgoEstimate ego;
  Mask dynamic;                           // over `kept`
  std::vector<double> object_v;           // v minus the static expectation, over `kept`

  /// Dynamic points of the frame, with their object (ego-compensated) radial velocity.
  Frame dynamic_frame() const;
  std::vector<double> dynamic_object_v() const;
  std::vector<std::uint32_t> dynamic_raw_index() const;
};

PreprocessedFrame preprocess_frame(const Frame& frame, const PreprocessParams& params, std::uint64_t seed);

}  // namespace fmcw
