#include <doctest.h>

#include "fmcw/core.hpp"

#include <numbers>
#include <random>

using namespace fmcw;

namespace {

Pose random_pose(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  const Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  return Pose(q.normalized().toRotationMatrix(), Vec3(g(rng), g(rng), g(rng)) * 20.0);
}

}  // namespace

TEST_CASE("transform_point examples") {
  const Point p(1, 2, 3, -4);
  const Point same = transform_point(p, Pose::identity(), Pose::identity());
  CHECK(same.position == p.position);
  CHECK(same.v == -4.0);

  const Pose shifted(Mat3::Identity(), Vec3(10, 0, 0));
  const Point moved = transform_point(Point(0, 0, 0, 0), shifted, Pose::identity());
  CHECK(moved.position == Vec3(10, 0, 0));

  const Pose yaw = Pose::from_yaw(std::numbers::pi / 2, Vec3::Zero());
  const Point rotated = transform_point(Point(1, 0, 0, 0), yaw, Pose::identity());
  CHECK((rotated.position - Vec3(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("transform_point round trip") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int i = 0; i < 500; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng);
    const Point p(u(rng), u(rng), u(rng), u(rng));
    const Point back = transform_point(transform_point(p, a, b), b, a);
    CHECK((back.position - p.position).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(back.v == p.v);
  }
}

TEST_CASE("pose rejects non-orthonormal rotation") {
  Mat3 r = Mat3::Identity();
  r(0, 0) = 1.0 + 1e-6;
  CHECK_THROWS_AS(Pose(r, Vec3::Zero()), Error);
  Mat3 reflect = Mat3::Identity();
  reflect(2, 2) = -1.0;
  CHECK_THROWS_AS(Pose(reflect, Vec3::Zero()), Error);
}

TEST_CASE("build_window preserves points and ids") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-30, 30);
  std::vector<Frame> frames(6);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    frames[k].timestamp = 0.1 * static_cast<double>(k);
    frames[k].pose = random_pose(rng);
    for (int i = 0; i < 10 + static_cast<int>(k); ++i) frames[k].points.emplace_back(u(rng), u(rng), u(rng), u(rng));
    assign_point_ids(frames[k], static_cast<std::uint32_t>(k));
  }

  const Window w = build_window(frames, 4);
  std::size_t expected = 0;
  for (std::size_t k = 2; k < 6; ++k) expected += frames[k].size();
  CHECK(w.size() == expected);
  CHECK(w.slots() == 4);
  std::size_t i = 0;
  for (std::size_t k = 2; k < 6; ++k)
    for (std::size_t j = 0; j < frames[k].size(); ++j, ++i) {
      CHECK(w.point_ids[i] == frames[k].point_ids[j]);
      CHECK(w.frame_index[i] == static_cast<int>(k - 2));
      const Point ref = transform_point(frames[k].points[j], frames[k].pose, frames[5].pose);
      CHECK((w.points[i].position - ref.position).norm() < 1e-9);
    }

  const Window single = build_window(frames, 1);
  REQUIRE(single.size() == frames[5].size());
  for (std::size_t j = 0; j < frames[5].size(); ++j)
    CHECK((single.points[j].position - frames[5].points[j].position).norm() < 1e-12);

  const std::vector<Pose> too_few(frames.size() - 1);
  CHECK_THROWS_AS(build_window(frames, too_few, 4), DataError);
}

TEST_CASE("build_window clips at the sequence start") {
  std::vector<Frame> frames(1);
  frames[0].points.emplace_back(1, 1, 1, 0);
  const Window w = build_window(frames, 4);
  CHECK(w.slots() == 1);
  CHECK(w.size() == 1);
}

TEST_CASE("pure ego translation aligns a static pole") {
  // Ego moves 2 m per frame along x; a pole at world x = 10 + 2*3 seen at
  // sensor-frame x = 10 in the newest frame.
  std::vector<Frame> frames(4);
  const Vec3 pole_world(16, 0, 0);
  for (std::size_t k = 0; k < 4; ++k) {
    frames[k].timestamp = 0.1 * static_cast<double>(k);
    frames[k].pose = Pose(Mat3::Identity(), Vec3(2.0 * static_cast<double>(k), 0, 0));
    frames[k].points.emplace_back(frames[k].pose.from_world(pole_world), 0.0);
  }
  const Window w = build_window(frames, 4);
  for (const auto& p : w.points) CHECK((p.position - Vec3(10, 0, 0)).norm() < 1e-12);
}
