#include <doctest.h>

#include "fmcw/embed_track.hpp"
#include "fmcw/metrics.hpp"

#include <cmath>
#include <map>
#include <random>
#include <set>

using namespace fmcw;

TEST_CASE("neighborhoods agree with a brute-force scan") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-6.0, 6.0), uv(-10.0, 10.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 50 + trial * 10;
    Eigen::MatrixXd p(n, 3);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      p.row(i) << u(rng), u(rng), 0.3 * u(rng);
      v[static_cast<std::size_t>(i)] = uv(rng);
    }
    const double rn = 1.5, rf = 4.0;
    const auto h = neighborhoods(p, v, rn, rf);
    for (int i = 0; i < n; ++i) {
      Eigen::RowVector3d sn = p.row(i), sf = p.row(i);
      double sv = v[static_cast<std::size_t>(i)];
      int cn = 0, cf = 0;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        const double d = (p.row(j) - p.row(i)).norm();
        if (d <= rf) ++cf, sf += p.row(j), sv += v[static_cast<std::size_t>(j)];
        if (d <= rn) ++cn, sn += p.row(j);
      }
      CHECK(h.count_near(i) == cn);
      CHECK(h.count_far(i) == cf);
      CHECK((h.mean_near.row(i) - sn / (cn + 1.0)).norm() < 1e-12);
      CHECK((h.mean_far.row(i) - sf / (cf + 1.0)).norm() < 1e-12);
      CHECK(h.mean_v_far(i) == doctest::Approx(sv / (cf + 1.0)).epsilon(1e-12));
    }
  }
}

TEST_CASE("window features on a three-point line") {
  Eigen::MatrixXd p(3, 3);
  p << 0, 0, 0, 1, 0, 0, 3, 0, 0;
  const std::vector<double> v{1.0, 3.0, 5.0};
  FeatureSpec spec;  // r_near 1.5, r_far 4
  const auto f = window_features(p, v, spec);
  REQUIRE(f.cols() == 12);
  // Point 0: near {0, 1}, far {0, 1, 2}.
  CHECK(f(0, 0) == 0.0);
  CHECK(f(0, 3) == doctest::Approx(0.5 / 1.5));
  CHECK(f(0, 6) == doctest::Approx((4.0 / 3.0) / 4.0));
  CHECK(f(0, 9) == doctest::Approx(std::log1p(2.0) / 5.0));
  CHECK(f(0, 10) == doctest::Approx(0.1));
  CHECK(f(0, 11) == doctest::Approx(0.3));
  // Point 2: alone within r_near, sees both within r_far.
  CHECK(f(2, 0) == doctest::Approx(3.0 / 20.0));
  CHECK(f(2, 3) == 0.0);
  CHECK(f(2, 6) == doctest::Approx((4.0 / 3.0 - 3.0) / 4.0));
  CHECK(f(2, 10) == doctest::Approx(0.5));
  // Without velocity the first ten columns are unchanged.
  spec.use_velocity = false;
  const auto g = window_features(p, v, spec);
  REQUIRE(g.cols() == 10);
  CHECK((g - f.leftCols(10)).norm() == 0.0);

  CHECK_THROWS_AS(neighborhoods(p, v, 2.0, 1.0), ConfigError);
  CHECK_THROWS_AS(neighborhoods(p, std::vector<double>{1.0}, 1.0, 2.0), Error);
}

namespace {

const sim::SceneGroundTruth& clean_scene() {
  static const auto gt = [] {
    auto c = sim::default_scene(1).noiseless();
    c.duration_s = 1.5;
    return sim::generate_sequence(c);
  }();
  return gt;
}

}  // namespace

TEST_CASE("feature windows clip at the sequence start") {
  const auto& gt = clean_scene();
  const auto seq = extract_dynamic(gt.frames, PreprocessParams{}, 0);
  REQUIRE(seq.size() == gt.frames.size());
  const FeatureSpec spec;
  const auto w0 = make_feature_window(seq, 0, 4, spec);
  CHECK(w0.first_frame == 0);
  CHECK(w0.window.slots() == 1);
  const auto w5 = make_feature_window(seq, 5, 4, spec);
  CHECK(w5.first_frame == 2);
  CHECK(w5.window.slots() == 4);
  CHECK(w5.features.rows() == static_cast<Eigen::Index>(w5.window.size()));
  CHECK(w5.features.cols() == spec.dim());
  for (auto id : w5.window.point_ids) {
    CHECK(point_id_frame(id) >= 2);
    CHECK(point_id_frame(id) <= 5);
  }
  CHECK_THROWS_AS(make_feature_window(seq, seq.size(), 4, spec), Error);
  CHECK_THROWS_AS(make_feature_window(seq, 0, 0, spec), ConfigError);
}

TEST_CASE("zero-noise dynamic points are exactly the moving ground truth") {
  const auto& gt = clean_scene();
  const auto seq = extract_dynamic(gt.frames, PreprocessParams{}, 0);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    CHECK(seq.raw_size[t] == gt.frames[t].size());
    std::size_t moving = 0;
    for (auto l : gt.labels.frames[t]) moving += l != 0;
    CHECK(seq.frames[t].size() == moving);
    for (auto id : seq.frames[t].point_ids) CHECK(gt.labels.frames[t][point_id_index(id)] != 0);
  }
}

TEST_CASE("training batches carry the ground truth of their window") {
  const auto& gt = clean_scene();
  BatchSampling s;
  s.tau = 4;
  s.points_per_slot = 1'000'000;  // no subsampling
  s.first = 3;
  s.stride = 5;
  const auto batches = make_training_batches(gt.frames, gt.labels, PreprocessParams{}, FeatureSpec{}, s);
  REQUIRE(!batches.empty());
  std::size_t t = s.first;
  for (const auto& b : batches) {
    // Per-id point counts equal the ground-truth moving points of frames t-3..t.
    std::map<std::uint32_t, std::size_t> expect, got;
    for (std::size_t f = t - 3; f <= t; ++f)
      for (auto l : gt.labels.frames[f])
        if (l != 0) ++expect[l];
    for (auto l : b.instance) ++got[l];
    CHECK(got == expect);
    CHECK(b.features.rows() == static_cast<Eigen::Index>(b.size()));
    t += s.stride;
  }

  // Subsampling caps the window at tau * points_per_slot and is seeded.
  s.points_per_slot = 100;
  const auto a1 = make_training_batches(gt.frames, gt.labels, PreprocessParams{}, FeatureSpec{}, s);
  const auto a2 = make_training_batches(gt.frames, gt.labels, PreprocessParams{}, FeatureSpec{}, s);
  REQUIRE(a1.size() == a2.size());
  for (std::size_t i = 0; i < a1.size(); ++i) {
    CHECK(a1[i].size() <= 400);
    CHECK(a1[i].instance == a2[i].instance);
    CHECK(a1[i].features == a2[i].features);
  }

  InstanceLabeling short_labels = gt.labels;
  short_labels.frames.pop_back();
  CHECK_THROWS_AS(make_training_batches(gt.frames, short_labels, PreprocessParams{}, FeatureSpec{}, s), DataError);
}

TEST_CASE("embed tracking with an untrained head runs and is deterministic") {
  const auto& gt = clean_scene();
  FeatureSpec spec;
  HeadArch arch;
  arch.input_dim = spec.dim();
  const auto head = init_toy_head(arch, spec, 9);
  const EmbedTrackParams params;
  const auto r1 = embed_track(gt.frames, PreprocessParams{}, params, head);
  const auto r2 = embed_track(gt.frames, PreprocessParams{}, params, head);
  CHECK(r1.labels == r2.labels);
  REQUIRE(r1.labels.frame_count() == gt.frames.size());
  for (std::size_t f = 0; f < gt.frames.size(); ++f) {
    REQUIRE(r1.labels.frames[f].size() == gt.frames[f].size());
    // Only dynamic points can carry an id.
    for (std::size_t i = 0; i < gt.frames[f].size(); ++i)
      if (gt.labels.frames[f][i] == 0) CHECK(r1.labels.frames[f][i] == 0);
  }
  const auto rep = evaluate(gt.labels, r1.labels);
  CHECK(std::isfinite(rep.as));
  CHECK(std::isfinite(rep.motsa));
  CHECK(std::isfinite(rep.smotsa));

  EmbedTrackParams bad;
  bad.tau = 0;
  CHECK_THROWS_AS(embed_track(gt.frames, PreprocessParams{}, bad, head), ConfigError);
  FeatureSpec other;
  other.use_velocity = false;
  auto mismatched = head;
  mismatched.features = other;
  CHECK_THROWS_AS(embed_track(gt.frames, PreprocessParams{}, params, mismatched), ConfigError);
}

TEST_CASE("a head that maps everything to one embedding yields one instance per window") {
  const auto& gt = clean_scene();
  FeatureSpec spec;
  HeadArch arch;
  arch.input_dim = spec.dim();
  auto head = init_toy_head(arch, spec, 1);
  // Constant output: embedding 0, variance e^-4 per axis, objectness 0.5.
  head.theta.setZero();
  const auto bias = head.theta.size() - arch.output_dim();
  head.theta.segment(bias + arch.embed_dim, arch.embed_dim).setConstant(-4.0);
  EmbedTrackParams params;
  const auto r = embed_track(gt.frames, PreprocessParams{}, params, head);
  CHECK(r.fragmented_windows == 0);
  for (const auto& f : r.labels.frames) {
    std::set<std::uint32_t> ids(f.begin(), f.end());
    ids.erase(0);
    CHECK(ids.size() <= 1);
  }
}
