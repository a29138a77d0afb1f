#include <doctest.h>

#include "fmcw/dataset_io.hpp"
#include "temp_dir.hpp"

#include <cstring>
#include <fstream>
#include <random>

using namespace fmcw;
namespace fs = std::filesystem;

namespace {

Pose random_pose(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  const Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  return Pose(q.normalized().toRotationMatrix(), Vec3(g(rng), g(rng), g(rng)) * 100.0);
}

bool same_bits(float a, double b) {
  const float fb = static_cast<float>(b);
  return std::memcmp(&a, &fb, sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("scan round trip is bit-identical") {
  TempDir dir;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-300.f, 300.f);
  std::vector<Point> pts;
  for (int i = 0; i < 1000; ++i) pts.emplace_back(u(rng), u(rng), u(rng), u(rng));
  io::write_scan(dir.path / "a.bin", pts);
  CHECK(fs::file_size(dir.path / "a.bin") == 16000);
  const auto back = io::read_scan(dir.path / "a.bin");
  REQUIRE(back.size() == pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(same_bits(static_cast<float>(pts[i].x()), back[i].x()));
    CHECK(same_bits(static_cast<float>(pts[i].v), back[i].v));
    CHECK(back[i].position == pts[i].position);
  }
}

TEST_CASE("scan edge cases") {
  TempDir dir;
  std::ofstream(dir.path / "empty.bin").close();
  CHECK(io::read_scan(dir.path / "empty.bin").empty());
  {
    std::ofstream out(dir.path / "bad.bin", std::ios::binary);
    out << std::string(17, 'x');
  }
  CHECK_THROWS_WITH_AS(io::read_scan(dir.path / "bad.bin"), doctest::Contains("corrupt scan"), DataError);
  CHECK_THROWS_AS(io::read_scan(dir.path / "missing.bin"), DataError);
}

TEST_CASE("poses") {
  TempDir dir;
  {
    std::ofstream out(dir.path / "id.txt");
    out << "1 0 0 0 0 1 0 0 0 0 1 0\n";
  }
  const auto id = io::read_poses(dir.path / "id.txt");
  REQUIRE(id.size() == 1);
  CHECK(id[0].rotation() == Mat3::Identity());
  CHECK(id[0].translation() == Vec3::Zero());

  std::mt19937_64 rng(3);
  std::vector<Pose> poses;
  for (int i = 0; i < 200; ++i) poses.push_back(random_pose(rng));
  io::write_poses(dir.path / "p.txt", poses);
  const auto back = io::read_poses(dir.path / "p.txt");
  REQUIRE(back.size() == poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    CHECK((back[i].rotation() - poses[i].rotation()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back[i].translation() - poses[i].translation()).cwiseAbs().maxCoeff() < 1e-12);
  }

  {
    std::ofstream out(dir.path / "short.txt");
    out << "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n";
  }
  CHECK_THROWS_WITH_AS(io::read_poses(dir.path / "short.txt"), doctest::Contains("line 2"), DataError);
  {
    std::ofstream out(dir.path / "skew.txt");
    out << "1 0.1 0 0 0 1 0 0 0 0 1 0\n";
  }
  CHECK_THROWS_AS(io::read_poses(dir.path / "skew.txt"), DataError);
}

TEST_CASE("labels") {
  TempDir dir;
  const std::vector<std::uint32_t> labels{0, 1, 2, 0xffffffffu, 7};
  io::write_labels(dir.path / "l.label", labels);
  CHECK(io::read_labels(dir.path / "l.label") == labels);
  const std::vector<std::uint32_t> zeros(100, 0);
  io::write_labels(dir.path / "z.label", zeros);
  CHECK(io::read_labels(dir.path / "z.label") == zeros);
}

TEST_CASE("sequence round trip and label mismatch") {
  TempDir dir;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(-50.f, 50.f);
  std::vector<Frame> frames(3);
  InstanceLabeling labels;
  for (std::size_t k = 0; k < 3; ++k) {
    frames[k].timestamp = 0.1 * static_cast<double>(k);
    frames[k].pose = random_pose(rng);
    for (int i = 0; i < 20; ++i) frames[k].points.emplace_back(u(rng), u(rng), u(rng), u(rng));
    labels.frames.emplace_back(20, static_cast<std::uint32_t>(k));
  }
  const fs::path seq = dir.path / "seq0";
  io::write_sequence(seq, frames, &labels, {{"name", "seq0"}});
  const auto back = io::read_sequence(seq);
  CHECK(back.name == "seq0");
  REQUIRE(back.frames.size() == 3);
  REQUIRE(back.labels.has_value());
  CHECK(*back.labels == labels);
  CHECK(back.meta["format_version"] == io::kFormatVersion);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(back.frames[k].timestamp == frames[k].timestamp);
    CHECK(back.frames[k].point_ids[5] == make_point_id(static_cast<std::uint32_t>(k), 5));
  }
  CHECK(io::find_sequences(dir.path) == std::vector<fs::path>{seq});
  CHECK(io::find_sequences(seq) == std::vector<fs::path>{seq});

  io::write_labels(seq / "labels" / "000001.label", std::vector<std::uint32_t>(19, 0));
  try {
    io::read_sequence(seq);
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("000001.label") != std::string::npos);
    CHECK(msg.find("000001.bin") != std::string::npos);
  }
}

TEST_CASE("timestamps must increase") {
  TempDir dir;
  std::vector<Frame> frames(2);
  frames[0].timestamp = frames[1].timestamp = 1.0;
  io::write_sequence(dir.path / "s", frames, nullptr, nlohmann::json::object());
  CHECK_THROWS_AS(io::read_sequence(dir.path / "s"), DataError);
}

TEST_CASE("atomic_write leaves no temp file") {
  TempDir dir;
  io::atomic_write(dir.path / "x" / "f.txt", std::string("hello"));
  CHECK(fs::exists(dir.path / "x" / "f.txt"));
  CHECK_FALSE(fs::exists(dir.path / "x" / "f.txt.tmp"));
  CHECK(io::frame_stem(42) == "000042");
}
