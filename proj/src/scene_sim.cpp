#include "fmcw/scene_sim.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace fmcw::sim {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::mt19937_64 frame_rng(std::uint64_t seed, std::uint64_t frame) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ (frame * 0xd1342543de82ef95ull + 1)));
}

// Oriented box in world coordinates.
struct Box {
  Vec3 center;  // geometric center
  Vec3 half;    // half extents along local axes
  double yaw;

  Mat3 axes() const { return Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix(); }
};

Box actor_box(const ActorSpec& a, double t) {
  const auto [c, v] = actor_state(a, t);
  (void)v;
  return {c, a.size / 2.0, a.yaw};
}

Box static_box(const StaticBox& s) {
  return {Vec3(s.center.x(), s.center.y(), s.size.z() / 2.0), s.size / 2.0, s.yaw};
}

// Segment-box intersection for the open interval (lo, hi) of the segment
// parameter, slab method in the box frame.
bool segment_hits_box(const Vec3& from, const Vec3& to, const Box& box, double lo, double hi) {
  const Mat3 r = box.axes();
  const Vec3 o = r.transpose() * (from - box.center);
  const Vec3 d = r.transpose() * (to - from);
  double t0 = lo, t1 = hi;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(d[k]) < 1e-15) {
      if (std::abs(o[k]) > box.half[k]) return false;
      continue;
    }
    double a = (-box.half[k] - o[k]) / d[k];
    double b = (box.half[k] - o[k]) / d[k];
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return false;
  }
  return true;
}

struct Sample {
  Vec3 world;
  Vec3 velocity;
  std::uint32_t label;
  int owner;  // index into the occluder list, -1 for ground
};

// Jittered grid over the rectangle origin + u*a + w*b, u,w in [0,1].
template <typename Rng, typename Fn>
void sample_rect(const Vec3& origin, const Vec3& a, const Vec3& b, double density, Rng& rng, Fn&& emit) {
  const double step = std::sqrt(density);
  const int na = std::max(1, static_cast<int>(std::ceil(a.norm() * step)));
  const int nb = std::max(1, static_cast<int>(std::ceil(b.norm() * step)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < na; ++i) {
    for (int j = 0; j < nb; ++j) {
      const double u = (i + unit(rng)) / na;
      const double w = (j + unit(rng)) / nb;
      emit(Vec3(origin + u * a + w * b));
    }
  }
}

// Samples the faces of `box` that face `eye`.
template <typename Rng, typename Fn>
void sample_box(const Box& box, const Vec3& eye, double density, Rng& rng, Fn&& emit) {
  const Mat3 r = box.axes();
  for (int axis = 0; axis < 3; ++axis) {
    for (int sign : {-1, 1}) {
      const Vec3 normal = sign * r.col(axis);
      const Vec3 face_center = box.center + normal * box.half[axis];
      if (normal.dot(eye - face_center) <= 0.0) continue;
      const int ia = (axis + 1) % 3, ib = (axis + 2) % 3;
      const Vec3 a = r.col(ia) * (2.0 * box.half[ia]);
      const Vec3 b = r.col(ib) * (2.0 * box.half[ib]);
      sample_rect(face_center - a / 2.0 - b / 2.0, a, b, density, rng, emit);
    }
  }
}

bool in_fov(const SceneConfig& c, const Vec3& p) {
  const double range = p.norm();
  if (range <= 0.0 || range > c.max_range_m) return false;
  const double bearing = std::atan2(p.y(), p.x());
  const double elevation = std::atan2(p.z(), std::hypot(p.x(), p.y()));
  return std::abs(bearing) <= c.h_fov_deg * kDeg / 2.0 && std::abs(elevation) <= c.v_fov_deg * kDeg / 2.0;
}

struct Scene {
  std::vector<Box> boxes;  // actors first, then statics
  std::vector<double> densities;
  std::vector<Vec3> velocities;
  std::vector<std::uint32_t> labels;
};

Scene scene_at(const SceneConfig& c, double t, bool with_statics) {
  Scene s;
  for (const auto& a : c.actors) {
    s.boxes.push_back(actor_box(a, t));
    s.densities.push_back(a.point_density);
    s.velocities.push_back(actor_state(a, t).second);
    s.labels.push_back(a.id);
  }
  if (with_statics) {
    for (const auto& st : c.statics) {
      s.boxes.push_back(static_box(st));
      s.densities.push_back(st.point_density);
      s.velocities.push_back(Vec3::Zero());
      s.labels.push_back(0);
    }
  }
  return s;
}

struct Rendered {
  Vec3 sensor_point;  // noiseless, sensor frame
  Vec3 world;
  Vec3 velocity;
  std::uint32_t label;
  int owner;
  bool occluded;
};

// Renders every visible surface sample of one frame (no noise, no outliers).
template <typename Rng>
std::vector<Rendered> render(const SceneConfig& c, const Scene& scene, const EgoState& ego, bool ground,
                             Rng& rng, std::size_t sampled_boxes = std::numeric_limits<std::size_t>::max()) {
  const Pose pose = Pose::from_yaw(ego.yaw, ego.position);
  std::vector<Rendered> out;
  auto push = [&](const Vec3& world, const Vec3& vel, std::uint32_t label, int owner) {
    const Vec3 local = pose.from_world(world);
    if (!in_fov(c, local)) return;
    bool occluded = false;
    for (std::size_t b = 0; b < scene.boxes.size() && !occluded; ++b) {
      if (static_cast<int>(b) == owner) continue;
      occluded = segment_hits_box(ego.position, world, scene.boxes[b], 1e-9, 1.0 - 1e-9);
    }
    out.push_back({local, world, vel, label, owner, occluded});
  };

  if (ground && c.ground.enabled) {
    const double extent = std::min(c.ground.extent_m, c.max_range_m);
    const double half_width = extent * std::tan(c.h_fov_deg * kDeg / 2.0);
    const Mat3 r = pose.rotation();
    const Vec3 origin = ego.position + r * Vec3(0.0, -half_width, 0.0) - Vec3(0, 0, c.sensor_height);
    sample_rect(origin, r * Vec3(extent, 0, 0), r * Vec3(0, 2 * half_width, 0), c.ground.point_density, rng,
                [&](const Vec3& w) { push(w, Vec3::Zero(), 0, -1); });
  }
  for (std::size_t b = 0; b < std::min(sampled_boxes, scene.boxes.size()); ++b) {
    sample_box(scene.boxes[b], ego.position, scene.densities[b], rng, [&](const Vec3& w) {
      push(w, scene.velocities[b], scene.labels[b], static_cast<int>(b));
    });
  }
  return out;
}

}  // namespace

std::size_t SceneConfig::frame_count() const {
  return static_cast<std::size_t>(std::floor(duration_s * rate_hz + 1e-9));
}

void SceneConfig::validate() const {
  if (!(rate_hz > 0.0)) throw ConfigError("rate_hz must be > 0");
  if (!(duration_s > 0.0) || frame_count() == 0) throw ConfigError("duration_s must cover at least one frame");
  if (!(h_fov_deg > 0.0 && h_fov_deg < 180.0)) throw ConfigError("h_fov_deg must lie in (0, 180)");
  if (!(v_fov_deg > 0.0 && v_fov_deg < 180.0)) throw ConfigError("v_fov_deg must lie in (0, 180)");
  if (!(max_range_m > 0.0)) throw ConfigError("max_range_m must be > 0");
  if (!(v_noise_sigma >= 0.0) || !(pos_noise_sigma >= 0.0)) throw ConfigError("noise sigmas must be >= 0");
  if (!(outlier_rate >= 0.0 && outlier_rate <= 1.0)) throw ConfigError("outlier_rate must lie in [0, 1]");
  if (!(outlier_v_max >= 0.0)) throw ConfigError("outlier_v_max must be >= 0");
  for (const auto& a : actors) {
    if (a.id == 0) throw ConfigError("actor id 0 is reserved for the background");
    if ((a.size.array() <= 0.0).any() || !(a.point_density > 0.0)) throw ConfigError("invalid actor geometry");
  }
  for (std::size_t i = 0; i < actors.size(); ++i)
    for (std::size_t j = i + 1; j < actors.size(); ++j)
      if (actors[i].id == actors[j].id) throw ConfigError("duplicate actor id");
  if (!ground.enabled && actors.empty() && statics.empty()) throw ConfigError("empty scene: no geometry");
}

SceneConfig SceneConfig::noiseless() const {
  SceneConfig c = *this;
  c.v_noise_sigma = 0.0;
  c.pos_noise_sigma = 0.0;
  c.outlier_rate = 0.0;
  return c;
}

double radial_velocity(const Vec3& point_pos, const Vec3& point_vel, const Vec3& sensor_pos,
                       const Vec3& sensor_vel) {
  const Vec3 ray = point_pos - sensor_pos;
  const double n = ray.norm();
  if (!(n > 0.0)) throw Error("degenerate ray");
  return ray.dot(point_vel - sensor_vel) / n;
}

double ideal_ego_radial_profile(double ego_speed, double bearing_deg) {
  return -ego_speed * std::cos(bearing_deg * kDeg);
}

EgoState ego_state(const SceneConfig& c, double t) {
  EgoState s;
  Vec2 xy = c.ego_start;
  double yaw = c.ego_yaw;
  double elapsed = 0.0;
  EgoSegment seg;
  for (std::size_t i = 0; i < c.ego.size() && elapsed < t; ++i) {
    seg = c.ego[i];
    const bool last = i + 1 == c.ego.size();
    const double dt = last ? t - elapsed : std::min(seg.duration, t - elapsed);
    if (std::abs(seg.yaw_rate) < 1e-12) {
      xy += seg.speed * dt * Vec2(std::cos(yaw), std::sin(yaw));
    } else {
      const double k = seg.speed / seg.yaw_rate;
      const double yaw1 = yaw + seg.yaw_rate * dt;
      xy += k * Vec2(std::sin(yaw1) - std::sin(yaw), std::cos(yaw) - std::cos(yaw1));
      yaw = yaw1;
    }
    elapsed += dt;
  }
  // Active segment at time t determines the instantaneous velocity.
  double acc = 0.0;
  double speed = 0.0;
  for (std::size_t i = 0; i < c.ego.size(); ++i) {
    speed = c.ego[i].speed;
    acc += c.ego[i].duration;
    if (t < acc) break;
  }
  s.position = Vec3(xy.x(), xy.y(), c.sensor_height);
  s.yaw = yaw;
  s.velocity = speed * Vec3(std::cos(yaw), std::sin(yaw), 0.0);
  return s;
}

std::pair<Vec3, Vec3> actor_state(const ActorSpec& a, double t) {
  Vec3 pos(a.start.x(), a.start.y(), a.clearance + a.size.z() / 2.0);
  Vec3 vel = Vec3::Zero();
  double elapsed = 0.0;
  for (std::size_t i = 0; i < a.motion.size(); ++i) {
    const bool last = i + 1 == a.motion.size();
    vel = a.motion[i].velocity;
    const double dt = last ? t - elapsed : std::min(a.motion[i].duration, t - elapsed);
    pos += vel * std::max(dt, 0.0);
    elapsed += a.motion[i].duration;
    if (t < elapsed) break;
  }
  return {pos, vel};
}

SceneGroundTruth generate_sequence(const SceneConfig& config) {
  config.validate();
  SceneGroundTruth gt;
  const std::size_t n = config.frame_count();
  gt.frames.reserve(n);
  gt.labels.frames.reserve(n);
  for (const auto& a : config.actors) gt.actors.push_back({a.id, {}, {}});

  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / config.rate_hz;
    const EgoState ego = ego_state(config, t);
    const Pose pose = Pose::from_yaw(ego.yaw, ego.position);
    auto rng = frame_rng(config.seed, k);

    const Scene scene = scene_at(config, t, true);
    const auto rendered = render(config, scene, ego, true, rng);

    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Frame frame;
    frame.timestamp = t;
    frame.pose = pose;
    std::vector<std::uint32_t> labels;
    std::size_t outliers = 0;
    for (const auto& r : rendered) {
      if (r.occluded) continue;
      double v = radial_velocity(r.world, r.velocity, ego.position, ego.velocity);
      Vec3 p = r.sensor_point;
      if (config.v_noise_sigma > 0.0) v += config.v_noise_sigma * gauss(rng);
      if (config.pos_noise_sigma > 0.0) {
        const Vec3 noise(gauss(rng), gauss(rng), gauss(rng));
        p += config.pos_noise_sigma * noise;
        if (!in_fov(config, p)) continue;
      }
      frame.points.emplace_back(p, v);
      labels.push_back(r.label);
      if (config.outlier_rate > 0.0 && unit(rng) < config.outlier_rate) ++outliers;
    }
    const double half_h = config.h_fov_deg * kDeg / 2.0;
    const double half_v = config.v_fov_deg * kDeg / 2.0;
    for (std::size_t o = 0; o < outliers; ++o) {
      const double bearing = (2.0 * unit(rng) - 1.0) * half_h;
      const double elevation = (2.0 * unit(rng) - 1.0) * half_v;
      const double range = std::max(1.0, unit(rng) * config.max_range_m);
      const Vec3 dir(std::cos(elevation) * std::cos(bearing), std::cos(elevation) * std::sin(bearing),
                     std::sin(elevation));
      const double v = (2.0 * unit(rng) - 1.0) * config.outlier_v_max;
      frame.points.emplace_back(range * dir, v);
      labels.push_back(0);
    }
    assign_point_ids(frame, static_cast<std::uint32_t>(k));
    gt.frames.push_back(std::move(frame));
    gt.labels.frames.push_back(std::move(labels));
    gt.ego_velocity.push_back(ego.velocity);
    for (std::size_t a = 0; a < config.actors.size(); ++a) {
      const auto [c, v] = actor_state(config.actors[a], t);
      gt.actors[a].center.push_back(c);
      gt.actors[a].velocity.push_back(v);
    }
  }
  return gt;
}

bool scene_is_clean(const SceneConfig& config, std::size_t min_points, double min_gap) {
  const std::size_t n = config.frame_count();
  const std::size_t na = config.actors.size();
  // Geometry over every frame first; rendering is the expensive part.
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / config.rate_hz;
    const EgoState ego = ego_state(config, t);
    const Pose pose = Pose::from_yaw(ego.yaw, ego.position);
    const Scene scene = scene_at(config, t, true);
    for (std::size_t a = 0; a < na; ++a) {
      const Box& b = scene.boxes[a];
      const Mat3 r = b.axes();
      for (int corner = 0; corner < 8; ++corner) {
        const Vec3 s((corner & 1) ? 1 : -1, (corner & 2) ? 1 : -1, (corner & 4) ? 1 : -1);
        const Vec3 w = b.center + r * b.half.cwiseProduct(s);
        if (!in_fov(config, pose.from_world(w))) return false;
      }
      // Pairwise BEV separation, separating-axis lower bound.
      for (std::size_t o = a + 1; o < na; ++o) {
        const Box& c = scene.boxes[o];
        double gap = -1e300;
        for (const Box* bx : {&b, &c}) {
          const Mat3 rr = bx->axes();
          for (int ax = 0; ax < 2; ++ax) {
            const Vec2 axis = rr.col(ax).head<2>();
            auto extent = [&](const Box& q) {
              const Mat3 qr = q.axes();
              return std::abs(axis.dot(qr.col(0).head<2>())) * q.half.x() +
                     std::abs(axis.dot(qr.col(1).head<2>())) * q.half.y();
            };
            const double d = std::abs(axis.dot((b.center - c.center).head<2>()));
            gap = std::max(gap, d - extent(b) - extent(c));
          }
        }
        if (gap < min_gap) return false;
      }
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / config.rate_hz;
    const EgoState ego = ego_state(config, t);
    const Scene scene = scene_at(config, t, true);
    auto rng = frame_rng(config.seed, k);
    const auto rendered = render(config, scene, ego, false, rng, na);
    std::vector<std::size_t> visible(na, 0);
    for (const auto& r : rendered) {
      if (r.owner < 0 || static_cast<std::size_t>(r.owner) >= na) continue;
      if (r.occluded) return false;
      ++visible[static_cast<std::size_t>(r.owner)];
    }
    for (auto count : visible)
      if (count < min_points) return false;
  }
  return true;
}

// Presets -------------------------------------------------------------------

namespace {

ActorSpec vehicle(std::uint32_t id, int kind, Vec2 start, double speed) {
  ActorSpec a;
  a.id = id;
  switch (kind) {
    case 1: a.size = {5.5, 2.0, 2.2}; break;   // van
    case 2: a.size = {10.0, 2.5, 3.2}; break;  // truck
    default: a.size = {4.5, 1.8, 1.5}; break;  // car
  }
  a.start = start;
  a.motion = {{1.0, Vec3(speed, 0, 0)}};
  return a;
}

void add_roadside(SceneConfig& c, double rail_offset, double pole_offset, double length) {
  for (double side : {-1.0, 1.0}) {
    c.statics.push_back({Vec2(length / 2.0, side * rail_offset), Vec3(length, 0.3, 0.8), 0.0, 3.0});
    for (double x = 20.0; x < length; x += 40.0)
      c.statics.push_back({Vec2(x, side * pole_offset), Vec3(0.3, 0.3, 6.0), 0.0, 20.0});
  }
}

}  // namespace

SceneConfig default_scene(std::uint64_t seed) {
  SceneConfig c;
  c.seed = seed;
  c.ego = {{1.0, 20.0, 0.0}};
  c.actors.push_back(vehicle(1, 0, Vec2(30.0, 0.0), 22.0));
  c.actors.push_back(vehicle(2, 0, Vec2(45.0, 3.5), 21.0));
  c.actors.push_back(vehicle(3, 2, Vec2(60.0, -3.5), 22.0));
  add_roadside(c, 10.0, 11.5, 400.0);
  return c;
}

namespace {

SceneConfig random_scene(std::uint64_t seed, int actors, bool urban) {
  std::mt19937_64 rng(splitmix64(seed ^ (urban ? 0x5eedull : 0x4177ull)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  for (int attempt = 0; attempt < 64; ++attempt) {
    SceneConfig c;
    c.seed = seed;
    const double ego_speed = urban ? uniform(5.0, 10.0) : uniform(15.0, 25.0);
    c.ego = {{1.0, ego_speed, 0.0}};
    if (urban) {
      for (double side : {-1.0, 1.0})
        c.statics.push_back({Vec2(150.0, side * 13.0), Vec3(300.0, 0.5, 8.0), 0.0, 2.0});
      for (double x = 15.0; x < 300.0; x += 25.0)
        c.statics.push_back({Vec2(x, -8.0), Vec3(0.3, 0.3, 4.0), 0.0, 20.0});
    } else {
      add_roadside(c, 10.5, 12.0, 600.0);
    }
    const std::array<double, 5> lanes{-7.0, -3.5, 0.0, 3.5, 7.0};
    std::uint32_t next_id = 1;
    if (urban) {
      ActorSpec ped;
      ped.id = next_id;
      ped.size = {0.6, 0.6, 1.7};
      ped.clearance = 0.0;
      ped.point_density = 40.0;
      ped.start = Vec2(uniform(30.0, 45.0), 6.0);
      ped.motion = {{1.0, Vec3(1.5, 0, 0)}};
      c.actors.push_back(ped);
      if (scene_is_clean(c)) {
        ++next_id;
      } else {
        c.actors.pop_back();
      }
    }
    int failures = 0;
    while (static_cast<int>(c.actors.size()) < actors && failures < 300) {
      const double pick = unit(rng);
      const int kind = pick < 0.7 ? 0 : (pick < 0.85 ? 1 : 2);
      const double lane = lanes[static_cast<std::size_t>(unit(rng) * (urban ? 4 : 5)) % lanes.size()];
      const double x0 = urban ? uniform(18.0, 50.0) : uniform(28.0, 90.0);
      double speed = ego_speed + (urban ? uniform(-4.0, 4.0) : uniform(-5.0, 5.0));
      if (std::abs(speed) < 3.0) speed = speed < 0 ? -3.0 : 3.0;
      c.actors.push_back(vehicle(next_id, kind, Vec2(x0, lane), speed));
      if (scene_is_clean(c)) {
        ++next_id;
      } else {
        c.actors.pop_back();
        ++failures;
      }
    }
    if (static_cast<int>(c.actors.size()) == actors) return c;
  }
  throw Error("could not place the requested number of actors");
}

}  // namespace

SceneConfig highway_scene(std::uint64_t seed, int actors) { return random_scene(seed, actors, false); }

SceneConfig urban_scene(std::uint64_t seed, int actors) { return random_scene(seed, actors, true); }

std::vector<NamedScene> seven_scene_preset(std::uint64_t seed) {
  std::vector<NamedScene> out;
  for (int i = 0; i < 5; ++i)
    out.push_back({"highway_" + std::to_string(i), highway_scene(seed * 101 + i, 3 + i % 4)});
  for (int i = 0; i < 2; ++i)
    out.push_back({"urban_" + std::to_string(i), urban_scene(seed * 101 + 50 + i, 3 + i)});
  return out;
}

}  // namespace fmcw::sim
