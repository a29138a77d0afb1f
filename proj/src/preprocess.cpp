#include "fmcw/preprocess.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace fmcw {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double ray_cosine(const Vec3& p) {
  const double n = p.norm();
  return n > 0.0 ? p.x() / n : 1.0;
}

}  // namespace

void PreprocessParams::validate() const {
  if (!(v_m > 0.0)) throw ConfigError("preprocess.v_m must be > 0");
  if (!(ransac_inlier_dist > 0.0)) throw ConfigError("preprocess.ransac_inlier_dist must be > 0");
  if (ransac_iters < 1) throw ConfigError("preprocess.ransac_iters must be >= 1");
  if (!(v_abs_max > 0.0) || !(range_max > 0.0)) throw ConfigError("preprocess limits must be > 0");
  if (!(front_view_bearing_deg > 0.0 && front_view_bearing_deg <= 90.0))
    throw ConfigError("preprocess.front_view_bearing_deg must lie in (0, 90]");
}

EgoEstimate EgoEstimate::from_ground_velocity(double v_g) {
  EgoEstimate e;
  e.v_g = v_g;
  e.v_car = -v_g;
  e.forward_speed = -v_g;
  return e;
}

double EgoEstimate::expected_static_v(const Vec3& p, BandMode mode) const {
  if (mode == BandMode::paper_faithful) return v_g;
  return -forward_speed * ray_cosine(p);
}

FilterResult filter_outliers(const Frame& frame, const PreprocessParams& params) {
  Mask keep(frame.size(), 0);
  FilterResult out;
  out.removed.assign(frame.size(), 0);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const Point& p = frame.points[i];
    const bool bad = !p.finite() || std::abs(p.v) > params.v_abs_max || p.position.norm() > params.range_max;
    out.removed[i] = bad;
    keep[i] = !bad;
  }
  out.kept = frame.subset(keep);
  return out;
}

GroundFit fit_ground_plane(std::span<const Point> points, int iters, double inlier_dist, std::uint64_t seed,
                           std::size_t min_inliers) {
  const std::size_t n = points.size();
  if (n < 3) throw Error("no ground");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  // MSAC scoring: truncated squared residuals favor the tightest consensus
  // over a tilted plane that grazes nearby objects.
  const double t2 = inlier_dist * inlier_dist;
  Plane best;
  std::size_t best_count = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int it = 0; it < iters; ++it) {
    const std::size_t a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || b == c || a == c) continue;
    const Vec3& pa = points[a].position;
    Vec3 normal = (points[b].position - pa).cross(points[c].position - pa);
    const double len = normal.norm();
    if (len < 1e-9) continue;
    normal /= len;
    const double offset = -normal.dot(pa);
    std::size_t count = 0;
    double cost = 0.0;
    for (const auto& p : points) {
      const double d = normal.dot(p.position) + offset;
      if (d * d <= t2) {
        ++count;
        cost += d * d;
      } else {
        cost += t2;
      }
    }
    if (cost < best_cost) {
      best_cost = cost;
      best_count = count;
      best = {normal, offset};
    }
  }
  if (best_count < std::max<std::size_t>(min_inliers, 3)) throw Error("no ground");

  // Local optimization: least-squares refits on a band a third as wide pull
  // the model off slopes that graze low object faces.
  Plane plane = best;
  const double band = inlier_dist / 3.0;
  for (int round = 0; round < 4; ++round) {
    Vec3 centroid = Vec3::Zero();
    std::size_t m = 0;
    for (const auto& p : points)
      if (plane.distance(p.position) <= band) {
        centroid += p.position;
        ++m;
      }
    if (m < 3) break;
    centroid /= static_cast<double>(m);
    Mat3 cov = Mat3::Zero();
    for (const auto& p : points)
      if (plane.distance(p.position) <= band) {
        const Vec3 d = p.position - centroid;
        cov += d * d.transpose();
      }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    Vec3 normal = eig.eigenvectors().col(0).normalized();
    if (normal.z() < 0.0) normal = -normal;
    plane = {normal, -normal.dot(centroid)};
  }

  GroundFit fit;
  fit.plane = plane;
  fit.inliers.resize(n);
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fit.inliers[i] = plane.distance(points[i].position) <= inlier_dist;
    count += fit.inliers[i];
  }
  if (count < std::max<std::size_t>(min_inliers, 3)) throw Error("no ground");
  return fit;
}

EgoEstimate estimate_ego_velocity(const Frame& frame, std::span<const std::uint8_t> ground_mask,
                                  const PreprocessParams& params) {
  const double wedge = params.front_view_bearing_deg * kDeg;
  double sum_v = 0.0, sum_speed = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < frame.size(); ++i) {
    if (!ground_mask[i]) continue;
    const Vec3& p = frame.points[i].position;
    if (p.x() <= 0.0 || std::abs(std::atan2(p.y(), p.x())) > wedge) continue;
    sum_v += frame.points[i].v;
    sum_speed += -frame.points[i].v / ray_cosine(p);
    ++n;
  }
  if (n == 0) throw Error("no front ground");
  EgoEstimate e;
  e.v_g = sum_v / static_cast<double>(n);
  e.v_car = -e.v_g;
  e.forward_speed = sum_speed / static_cast<double>(n);
  e.ground_mask.assign(ground_mask.begin(), ground_mask.end());
  return e;
}

Mask split_dynamic(const Frame& frame, const EgoEstimate& ego, const PreprocessParams& params) {
  Mask dynamic(frame.size(), 0);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    if (!ego.ground_mask.empty() && ego.ground_mask[i]) continue;
    const Point& p = frame.points[i];
    dynamic[i] = std::abs(p.v - ego.expected_static_v(p.position, params.band_mode)) > params.v_m;
  }
  return dynamic;
}

PreprocessedFrame preprocess_frame(const Frame& frame, const PreprocessParams& params, std::uint64_t seed) {
  PreprocessedFrame out;
  auto filtered = filter_outliers(frame, params);
  out.kept = std::move(filtered.kept);
  for (std::size_t i = 0; i < frame.size(); ++i)
    if (!filtered.removed[i]) out.kept_index.push_back(static_cast<std::uint32_t>(i));

  const auto ground = fit_ground_plane(out.kept.points, params.ransac_iters, params.ransac_inlier_dist, seed,
                                       params.min_ground_inliers);
  out.ego = estimate_ego_velocity(out.kept, ground.inliers, params);
  out.ego.ground_plane = ground.plane;
  out.dynamic = split_dynamic(out.kept, out.ego, params);
  out.object_v.resize(out.kept.size());
  for (std::size_t i = 0; i < out.kept.size(); ++i) {
    const Point& p = out.kept.points[i];
    out.object_v[i] = p.v - out.ego.expected_static_v(p.position, params.band_mode);
  }
  return out;
}

Frame PreprocessedFrame::dynamic_frame() const { return kept.subset(dynamic); }

std::vector<double> PreprocessedFrame::dynamic_object_v() const {
  std::vector<double> v;
  for (std::size_t i = 0; i < kept.size(); ++i)
    if (dynamic[i]) v.push_back(object_v[i]);
  return v;
}

std::vector<std::uint32_t> PreprocessedFrame::dynamic_raw_index() const {
  std::vector<std::uint32_t> idx;
  for (std::size_t i = 0; i < kept.size(); ++i)
    if (dynamic[i]) idx.push_back(kept_index[i]);
  return idx;
}

}  // namespace fmcw
