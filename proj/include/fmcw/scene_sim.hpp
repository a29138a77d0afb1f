#pragma once

#include "fmcw/core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fmcw::sim {

// Piecewise-constant world-frame velocity of an actor.
struct VelocitySegment {
  double duration = 1.0;  // seconds; the last segment extends indefinitely
  Vec3 velocity = Vec3::Zero();
};

// Ego motion: speed along the body x axis with an optional yaw rate. The
// sensor sits at the rotation center, so yaw rate never shows up in Doppler.
struct EgoSegment {
  double duration = 1.0;
  double speed = 0.0;
  double yaw_rate = 0.0;  // rad/s
};

// Rigid box actor. `start` is the world BEV center at t = 0; the box spans
// [clearance, clearance + size.z()] in height above the ground.
struct ActorSpec {
  std::uint32_t id = 1;
  Vec3 size{4.5, 1.8, 1.5};  // length, width, height
  Vec2 start = Vec2::Zero();
  double yaw = 0.0;
  double clearance = 0.2;
  double point_density = 20.0;  // samples per square meter of visible surface
  std::vector<VelocitySegment> motion;
};

// Static box (wall, guard rail, pole), world frame, bottom on the ground.
struct StaticBox {
  Vec2 center = Vec2::Zero();
  Vec3 size{1.0, 1.0, 1.0};
  double yaw = 0.0;
  double point_density = 5.0;
};

struct GroundSpec {
  bool enabled = true;
  double extent_m = 100.0;      // ground is sampled up to this BEV range
  double point_density = 2.0;   // samples per square meter
};

struct SceneConfig {
  double duration_s = 4.0;
  double rate_hz = 10.0;
  double h_fov_deg = 37.5;
  double v_fov_deg = 16.7;
  double max_range_m = 300.0;
  double v_noise_sigma = 0.05;
  double pos_noise_sigma = 0.02;
  double outlier_rate = 0.002;
  double outlier_v_max = 60.0;  // outliers draw v uniformly in [-max, max]
  double sensor_height = 1.8;

  Vec2 ego_start = Vec2::Zero();
  double ego_yaw = 0.0;
  std::vector<EgoSegment> ego;  // empty: static sensor

  std::vector<ActorSpec> actors;
  GroundSpec ground;
  std::vector<StaticBox> statics;
  std::uint64_t seed = 1;

  std::size_t frame_count() const;
  /// Throws ConfigError on invalid settings.
  void validate() const;
  /// Zeroes every noise source (positions, Doppler, outliers).
  SceneConfig noiseless() const;
};

struct ActorTrajectory {
  std::uint32_t id = 0;
  std::vector<Vec3> center;    // world, per frame
  std::vector<Vec3> velocity;  // world, per frame
};

struct SceneGroundTruth {
  std::vector<Frame> frames;
  InstanceLabeling labels;
  std::vector<Vec3> ego_velocity;  // world frame, per frame
  std::vector<ActorTrajectory> actors;
};

/// Radial (Doppler) velocity of a point relative to a sensor, negative when
/// the range shrinks. Throws Error("degenerate ray") for coincident positions.
double radial_velocity(const Vec3& point_pos, const Vec3& point_vel, const Vec3& sensor_pos,
                       const Vec3& sensor_vel);

/// Doppler of a static point at BEV bearing `bearing_deg` seen from a sensor
/// moving forward at `ego_speed`.
double ideal_ego_radial_profile(double ego_speed, double bearing_deg);

/// Renders the configured scene. Deterministic given config.seed.
SceneGroundTruth generate_sequence(const SceneConfig& config);

// Ego state at time t.
struct EgoState {
  Vec3 position = Vec3::Zero();  // sensor position in world
  double yaw = 0.0;
  Vec3 velocity = Vec3::Zero();
};
EgoState ego_state(const SceneConfig& config, double t);
/// Actor BEV center (z = box mid height) and velocity at time t.
std::pair<Vec3, Vec3> actor_state(const ActorSpec& actor, double t);

/// True when every actor box stays inside the FOV and range for the whole
/// sequence, is never occluded, keeps at least `min_points` samples per frame,
/// and stays `min_gap` meters (BEV) away from every other actor.
bool scene_is_clean(const SceneConfig& config, std::size_t min_points = 40, double min_gap = 3.0);

// Presets ------------------------------------------------------------------

/// Ego at 20 m/s on a straight road with three well-separated actors.
SceneConfig default_scene(std::uint64_t seed = 1);
/// Randomized highway scene with `actors` vehicles, rejection-sampled until
/// scene_is_clean() holds.
SceneConfig highway_scene(std::uint64_t seed, int actors);
/// Slower ego and actors, closer range, one pedestrian.
SceneConfig urban_scene(std::uint64_t seed, int actors);

struct NamedScene {
  std::string name;
  SceneConfig config;
};
/// Five highway and two urban scenes.
std::vector<NamedScene> seven_scene_preset(std::uint64_t seed);

}  // namespace fmcw::sim
