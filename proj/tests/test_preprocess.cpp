#include <doctest.h>

#include "fmcw/preprocess.hpp"
#include "fmcw/scene_sim.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace fmcw;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Frame frame_of(std::vector<Point> pts) {
  Frame f;
  f.points = std::move(pts);
  assign_point_ids(f, 0);
  return f;
}

}  // namespace

TEST_CASE("filter_outliers examples") {
  PreprocessParams params;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-59, 59);
  std::vector<Point> pts;
  for (int i = 0; i < 100; ++i) pts.emplace_back(u(rng), u(rng), u(rng), u(rng));
  const auto clean = filter_outliers(frame_of(pts), params);
  CHECK(clean.kept.size() == 100);
  for (auto r : clean.removed) CHECK(r == 0);

  pts[37].v = 500;
  const auto one = filter_outliers(frame_of(pts), params);
  CHECK(one.kept.size() == 99);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(one.removed[i] == (i == 37));

  pts[3].v = std::nan("");
  pts[4].position = Vec3(400, 0, 0);
  const auto more = filter_outliers(frame_of(pts), params);
  CHECK(more.kept.size() == 97);
}

TEST_CASE("filter_outliers against simulator ground truth") {
  sim::SceneConfig c = sim::default_scene(4);
  c.duration_s = 0.3;
  c.outlier_rate = 0.1;
  c.outlier_v_max = 120.0;  // half the injected outliers exceed the 60 m/s bound
  const auto gt = sim::generate_sequence(c);
  PreprocessParams params;
  std::size_t removed = 0;
  for (std::size_t k = 0; k < gt.frames.size(); ++k) {
    const auto& f = gt.frames[k];
    const auto r = filter_outliers(f, params);
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (std::abs(f.points[i].v) > 60.0) CHECK(r.removed[i] == 1);
      if (gt.labels.frames[k][i] != 0) CHECK(r.removed[i] == 0);
      removed += r.removed[i];
    }
  }
  CHECK(removed > 50);
}

TEST_CASE("fit_ground_plane examples") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-30, 30), h(0.5, 3.0);
  std::vector<Point> pts;
  for (int i = 0; i < 1000; ++i) pts.emplace_back(u(rng), u(rng), 0.0, 0.0);
  for (int i = 0; i < 50; ++i) pts.emplace_back(u(rng), u(rng), h(rng), 0.0);
  const auto fit = fit_ground_plane(pts, 200, 0.15, 9);
  CHECK(std::acos(std::min(1.0, fit.plane.normal.dot(Vec3::UnitZ()))) < 0.5 * kDeg);
  CHECK(std::abs(fit.plane.offset) < 0.02);
  for (std::size_t i = 0; i < 1000; ++i) CHECK(fit.inliers[i] == 1);

  std::vector<Point> flat(pts.begin(), pts.begin() + 1000);
  const auto exact = fit_ground_plane(flat, 200, 0.15, 1);
  for (auto m : exact.inliers) CHECK(m == 1);

  const std::vector<Point> two{Point(0, 0, 0, 0), Point(1, 0, 0, 0)};
  CHECK_THROWS_WITH_AS(fit_ground_plane(two, 200, 0.15, 1), "no ground", Error);

  std::vector<Point> sparse(flat.begin(), flat.begin() + 30);
  CHECK_THROWS_WITH_AS(fit_ground_plane(sparse, 200, 0.15, 1), "no ground", Error);
}

namespace {

sim::SceneConfig ego_only(double speed, std::uint64_t seed) {
  sim::SceneConfig c;
  c.duration_s = 0.1;
  c.seed = seed;
  if (speed != 0.0) c.ego = {{10.0, speed, 0.0}};
  return c;
}

}  // namespace

TEST_CASE("estimate_ego_velocity bounds") {
  PreprocessParams params;
  {
    const auto gt = sim::generate_sequence(ego_only(0.0, 1).noiseless());
    const auto& f = gt.frames[0];
    const auto ground = fit_ground_plane(f.points, 200, 0.15, 1);
    const auto e = estimate_ego_velocity(f, ground.inliers, params);
    CHECK(e.v_g == 0.0);
  }
  {
    const auto gt = sim::generate_sequence(ego_only(20.0, 1).noiseless());
    const auto& f = gt.frames[0];
    const auto ground = fit_ground_plane(f.points, 200, 0.15, 1);
    const auto e = estimate_ego_velocity(f, ground.inliers, params);
    CHECK(e.v_g >= -20.0);
    CHECK(e.v_g <= 20.0 * -std::cos(10.0 * kDeg));
    CHECK(e.v_car == -e.v_g);
    CHECK(e.forward_speed == doctest::Approx(20.0).epsilon(1e-12));
  }
  Frame sky = frame_of({Point(-5, 0, -1.8, 0), Point(-6, 0, -1.8, 0), Point(-7, 1, -1.8, 0)});
  CHECK_THROWS_WITH_AS(estimate_ego_velocity(sky, Mask{1, 1, 1}, params), "no front ground", Error);
}

TEST_CASE("estimate_ego_velocity Monte Carlo") {
  PreprocessParams params;
  int good = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    sim::SceneConfig c = ego_only(20.0, seed);
    c.pos_noise_sigma = 0.0;
    c.outlier_rate = 0.0;
    c.v_noise_sigma = 0.05;
    const auto gt = sim::generate_sequence(c);
    const auto& f = gt.frames[0];
    const auto ground = fit_ground_plane(f.points, 200, 0.15, seed);
    std::size_t count = 0;
    for (auto m : ground.inliers) count += m;
    REQUIRE(count >= 1000);
    const auto e = estimate_ego_velocity(f, ground.inliers, params);
    // Ideal mean over the same wedge points, from the noiseless Doppler model.
    double ideal = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      const Vec3& p = f.points[i].position;
      if (!ground.inliers[i] || p.x() <= 0 || std::abs(std::atan2(p.y(), p.x())) > 10.0 * kDeg) continue;
      ideal += sim::radial_velocity(f.pose.to_world(p), Vec3::Zero(), f.pose.translation(), gt.ego_velocity[0]);
      ++n;
    }
    ideal /= static_cast<double>(n);
    good += std::abs(e.v_g - ideal) < 0.01;
  }
  CHECK(good >= 99);
}

TEST_CASE("split_dynamic band membership") {
  PreprocessParams params;
  params.band_mode = BandMode::paper_faithful;
  const EgoEstimate ego = EgoEstimate::from_ground_velocity(-5.0);
  const Frame f = frame_of({Point(20, 0, 0, -5.1), Point(20, 0, 0, -3.0)});
  const Mask m = split_dynamic(f, ego, params);
  CHECK(m[0] == 0);
  CHECK(m[1] == 1);

  params.band_mode = BandMode::angle_corrected;
  const Mask same = split_dynamic(f, ego, params);
  CHECK(same == m);
}

TEST_CASE("split_dynamic angle_corrected versus paper_faithful") {
  const double b = 18.0 * kDeg;
  const Frame f = frame_of({Point(40 * std::cos(b), 40 * std::sin(b), 0, -30.0 * std::cos(b))});
  const EgoEstimate ego = EgoEstimate::from_ground_velocity(-30.0);
  PreprocessParams params;
  params.band_mode = BandMode::angle_corrected;
  CHECK(split_dynamic(f, ego, params)[0] == 0);
  params.band_mode = BandMode::paper_faithful;
  CHECK(split_dynamic(f, ego, params)[0] == 1);
  CHECK(std::abs(-30.0 * std::cos(b) + 30.0) == doctest::Approx(1.4683).epsilon(1e-3));
}

TEST_CASE("zero noise: static points static, moving actors dynamic") {
  const sim::SceneConfig c = sim::default_scene(3).noiseless();
  const auto gt = sim::generate_sequence(c);
  PreprocessParams params;
  std::size_t moving = 0;
  for (std::size_t k = 0; k < gt.frames.size(); ++k) {
    const auto& f = gt.frames[k];
    const auto pf = preprocess_frame(f, params, k);
    REQUIRE(pf.kept.size() == f.size());
    CHECK(pf.ego.forward_speed == doctest::Approx(gt.ego_velocity[k].norm()).epsilon(1e-9));
    for (std::size_t i = 0; i < f.size(); ++i) {
      const std::uint32_t label = gt.labels.frames[k][i];
      const Vec3 world = f.pose.to_world(f.points[i].position);
      Vec3 vel = Vec3::Zero();
      if (label != 0) vel = sim::actor_state(c.actors[label - 1], f.timestamp).second;
      const double object = sim::radial_velocity(world, vel, f.pose.translation(), Vec3::Zero());
      CHECK(std::abs(pf.object_v[i] - object) < 1e-9);
      if (label == 0) {
        CHECK(pf.dynamic[i] == 0);
      } else if (std::abs(object) > params.v_m + 1e-6) {
        CHECK(pf.dynamic[i] == 1);
        ++moving;
      }
    }
  }
  CHECK(moving > 1000);
}

TEST_CASE("preprocess params validation") {
  PreprocessParams p;
  p.v_m = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = PreprocessParams{};
  p.front_view_bearing_deg = 120;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}
