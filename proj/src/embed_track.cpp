#include "fmcw/embed_track.hpp"

#include "fmcw/heuristic_track.hpp"
#include "fmcw/scene_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>

namespace fmcw {

void EmbedTrackParams::validate() const {
  if (tau < 1) throw ConfigError("window size tau must be >= 1");
  if (min_neighbors < 0) throw ConfigError("min_neighbors must be >= 0");
  infer.validate();
}

DynamicSequence extract_dynamic(std::span<const Frame> frames, const PreprocessParams& pre, std::uint64_t seed) {
  pre.validate();
  DynamicSequence seq;
  seq.frames.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto pf = preprocess_frame(frames[t], pre, seed + t);
    Frame dyn = pf.dynamic_frame();
    const auto raw = pf.dynamic_raw_index();
    dyn.point_ids.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) dyn.point_ids[i] = make_point_id(static_cast<std::uint32_t>(t), raw[i]);
    seq.frames.push_back(std::move(dyn));
    seq.object_v.push_back(pf.dynamic_object_v());
    seq.raw_size.push_back(frames[t].size());
  }
  return seq;
}

namespace {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};
struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    return static_cast<std::size_t>((k.x * 73856093) ^ (k.y * 19349663) ^ (k.z * 83492791));
  }
};

}  // namespace

Neighborhoods neighborhoods(const Eigen::MatrixXd& positions, std::span<const double> v, double r_near, double r_far) {
  const auto n = positions.rows();
  if (static_cast<std::size_t>(n) != v.size()) throw Error("neighborhoods: length mismatch");
  if (!(r_near > 0.0) || !(r_far >= r_near)) throw ConfigError("feature radii must satisfy 0 < r_near <= r_far");
  Neighborhoods h;
  h.mean_near = Eigen::MatrixXd::Zero(n, 3);
  h.mean_far = Eigen::MatrixXd::Zero(n, 3);
  h.count_near = Eigen::VectorXi::Zero(n);
  h.count_far = Eigen::VectorXi::Zero(n);
  h.mean_v_far = Eigen::VectorXd::Zero(n);

  std::unordered_map<CellKey, std::vector<Eigen::Index>, CellHash> grid;
  auto key = [&](Eigen::Index i) {
    return CellKey{static_cast<std::int64_t>(std::floor(positions(i, 0) / r_far)),
                   static_cast<std::int64_t>(std::floor(positions(i, 1) / r_far)),
                   static_cast<std::int64_t>(std::floor(positions(i, 2) / r_far))};
  };
  for (Eigen::Index i = 0; i < n; ++i) grid[key(i)].push_back(i);

  const double near2 = r_near * r_near, far2 = r_far * r_far;
  for (Eigen::Index i = 0; i < n; ++i) {
    const CellKey c = key(i);
    const Eigen::RowVector3d p = positions.row(i);
    Eigen::RowVector3d sum_near = p, sum_far = p;
    double sum_v = v[static_cast<std::size_t>(i)];
    int cn = 0, cf = 0;
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto it = grid.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == grid.end()) continue;
          for (Eigen::Index j : it->second) {
            if (j == i) continue;
            const double d2 = (positions.row(j) - p).squaredNorm();
            if (d2 > far2) continue;
            ++cf;
            sum_far += positions.row(j);
            sum_v += v[static_cast<std::size_t>(j)];
            if (d2 <= near2) {
              ++cn;
              sum_near += positions.row(j);
            }
          }
        }
    // Means include the point itself.
    h.mean_near.row(i) = sum_near / (cn + 1.0);
    h.mean_far.row(i) = sum_far / (cf + 1.0);
    h.mean_v_far(i) = sum_v / (cf + 1.0);
    h.count_near(i) = cn;
    h.count_far(i) = cf;
  }
  return h;
}

Eigen::MatrixXd window_features(const Eigen::MatrixXd& positions, std::span<const double> v, const FeatureSpec& spec,
                                const Neighborhoods* precomputed) {
  Neighborhoods local;
  if (!precomputed) local = neighborhoods(positions, v, spec.r_near, spec.r_far);
  const Neighborhoods& h = precomputed ? *precomputed : local;
  const auto n = positions.rows();
  Eigen::MatrixXd f(n, spec.dim());
  f.leftCols(3) = positions / 20.0;
  f.middleCols(3, 3) = (h.mean_near - positions) / spec.r_near;
  f.middleCols(6, 3) = (h.mean_far - positions) / spec.r_far;
  for (Eigen::Index i = 0; i < n; ++i) f(i, 9) = std::log1p(static_cast<double>(h.count_far(i))) / 5.0;
  if (spec.use_velocity) {
    for (Eigen::Index i = 0; i < n; ++i) {
      f(i, 10) = v[static_cast<std::size_t>(i)] / 10.0;
      f(i, 11) = h.mean_v_far(i) / 10.0;
    }
  }
  return f;
}

FeatureWindow make_feature_window(const DynamicSequence& seq, std::size_t t, int tau, const FeatureSpec& spec) {
  if (t >= seq.size()) throw Error("window end beyond the sequence");
  if (tau < 1) throw ConfigError("window size tau must be >= 1");
  FeatureWindow fw;
  fw.first_frame = t + 1 >= static_cast<std::size_t>(tau) ? t + 1 - static_cast<std::size_t>(tau) : 0;
  const std::span<const Frame> frames(seq.frames.data() + fw.first_frame, t + 1 - fw.first_frame);
  fw.window = build_window(frames, tau);
  for (std::size_t k = fw.first_frame; k <= t; ++k)
    fw.object_v.insert(fw.object_v.end(), seq.object_v[k].begin(), seq.object_v[k].end());
  compensate_window_points(fw.window, fw.object_v);
  const auto n = static_cast<Eigen::Index>(fw.window.size());
  fw.positions.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) fw.positions.row(i) = fw.window.points[static_cast<std::size_t>(i)].position;
  fw.hood = neighborhoods(fw.positions, fw.object_v, spec.r_near, spec.r_far);
  fw.features = window_features(fw.positions, fw.object_v, spec, &fw.hood);
  return fw;
}

EmbedTrackResult embed_track(std::span<const Frame> frames, const PreprocessParams& pre,
                             const EmbedTrackParams& params, const ToyHeadParams& head, std::uint64_t seed) {
  params.validate();
  if (head.features.dim() != head.arch.input_dim) throw ConfigError("head feature spec does not match its input size");
  const auto seq = extract_dynamic(frames, pre, seed);
  EmbedTrackResult result;
  IdSource ids;
  WindowLabels prev;

  for (std::size_t t = 0; t < seq.size(); ++t) {
    std::vector<std::uint32_t> labels(seq.raw_size[t], 0);
    WindowLabels cur;
    if (seq.frames[t].size() > 0) {
      const auto fw = make_feature_window(seq, t, params.tau, head.features);
      cur.point_ids = fw.window.point_ids;
      cur.ids.assign(fw.window.size(), 0);

      // Isolated points stay background and do not enter the peeling.
      std::vector<std::size_t> dense;
      for (std::size_t i = 0; i < fw.window.size(); ++i)
        if (fw.hood.count_near(static_cast<Eigen::Index>(i)) >= params.min_neighbors) dense.push_back(i);

      Eigen::MatrixXd x(static_cast<Eigen::Index>(dense.size()), fw.features.cols());
      std::vector<PointId> dense_ids(dense.size());
      for (std::size_t r = 0; r < dense.size(); ++r) {
        x.row(static_cast<Eigen::Index>(r)) = fw.features.row(static_cast<Eigen::Index>(dense[r]));
        dense_ids[r] = fw.window.point_ids[dense[r]];
      }
      VolumeAssignment assignment;
      assignment.instance.assign(dense.size(), -1);
      bool fragmented = false;
      if (!dense.empty()) {
        try {
          assignment = drop_small_instances(cluster_volume(run_head(head, x), params.infer),
                                            params.infer.min_instance_points);
        } catch (const Error& e) {
          if (std::string(e.what()) != "fragmented clustering") throw;
          fragmented = true;
          ++result.fragmented_windows;
          assignment.instance.assign(dense.size(), -1);
          assignment.count = 0;
        }
      }
      if (!fragmented) {
        const auto window_ids =
            associate_volumes(prev, dense_ids, assignment, params.infer.overlap_threshold, ids);
        for (std::size_t r = 0; r < dense.size(); ++r) {
          const int k = assignment.instance[r];
          if (k >= 0) cur.ids[dense[r]] = window_ids[static_cast<std::size_t>(k)];
        }
      }
      result.window_instances.push_back(assignment.count);
      for (std::size_t i = 0; i < fw.window.size(); ++i)
        if (point_id_frame(fw.window.point_ids[i]) == t) labels[point_id_index(fw.window.point_ids[i])] = cur.ids[i];
    } else {
      result.window_instances.push_back(0);
    }
    result.labels.frames.push_back(std::move(labels));
    prev = std::move(cur);
  }
  return result;
}

std::vector<TrainBatch> make_training_batches(std::span<const Frame> frames, const InstanceLabeling& gt,
                                              const PreprocessParams& pre, const FeatureSpec& spec,
                                              const BatchSampling& sampling, std::uint64_t preprocess_seed) {
  if (gt.frame_count() != frames.size()) throw DataError("labels do not cover every frame");
  if (sampling.stride < 1) throw ConfigError("batch stride must be >= 1");
  if (sampling.points_per_slot < 1) throw ConfigError("batch points_per_slot must be >= 1");
  const std::size_t max_points = sampling.points_per_slot * static_cast<std::size_t>(sampling.tau);
  const auto seq = extract_dynamic(frames, pre, preprocess_seed);
  std::mt19937_64 rng(sampling.seed);
  std::vector<TrainBatch> batches;
  for (std::size_t t = sampling.first; t < seq.size(); t += sampling.stride) {
    if (seq.frames[t].size() == 0) continue;
    const auto fw = make_feature_window(seq, t, sampling.tau, spec);
    const std::size_t n = fw.window.size();
    std::vector<std::size_t> pick(n);
    std::iota(pick.begin(), pick.end(), 0);
    if (n > max_points) {
      std::shuffle(pick.begin(), pick.end(), rng);
      pick.resize(max_points);
      std::sort(pick.begin(), pick.end());
    }
    const auto m = static_cast<Eigen::Index>(pick.size());
    Eigen::MatrixXd x(m, fw.features.cols()), pos(m, 3);
    std::vector<std::uint32_t> inst(pick.size());
    std::vector<int> slot(pick.size());
    for (std::size_t r = 0; r < pick.size(); ++r) {
      const std::size_t i = pick[r];
      x.row(static_cast<Eigen::Index>(r)) = fw.features.row(static_cast<Eigen::Index>(i));
      pos.row(static_cast<Eigen::Index>(r)) = fw.positions.row(static_cast<Eigen::Index>(i));
      const PointId id = fw.window.point_ids[i];
      const auto& frame_labels = gt.frames[point_id_frame(id)];
      if (point_id_index(id) >= frame_labels.size()) throw DataError("label file shorter than its scan");
      inst[r] = frame_labels[point_id_index(id)];
      slot[r] = fw.window.frame_index[i];
    }
    auto b = make_batch(std::move(x), std::move(pos), std::move(inst), std::move(slot));
    if (b.clusters.size() >= 2) batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<sim::SceneConfig> synthetic_training_scenes(const SyntheticTrainingSpec& spec) {
  std::vector<sim::SceneConfig> out;
  for (std::size_t s = 0; s < spec.windows; ++s) {
    const std::uint64_t seed = spec.seed + s;
    out.push_back(s % 4 != 3 ? sim::highway_scene(seed, 3 + static_cast<int>(s % 6))
                             : sim::urban_scene(seed, 3 + static_cast<int>(s % 3)));
  }
  return out;
}

std::vector<TrainBatch> synthetic_training_batches(const SyntheticTrainingSpec& spec, const FeatureSpec& features,
                                                   const PreprocessParams& pre) {
  const auto scenes = synthetic_training_scenes(spec);
  return synthetic_training_batches(scenes, spec, features, pre);
}

std::vector<TrainBatch> synthetic_training_batches(std::span<const sim::SceneConfig> scenes,
                                                   const SyntheticTrainingSpec& spec, const FeatureSpec& features,
                                                   const PreprocessParams& pre) {
  if (spec.tau < 1) throw ConfigError("window size tau must be >= 1");
  std::vector<TrainBatch> batches;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    auto config = scenes[s];
    // Just long enough for the sampled window; its end frame varies per scene.
    const std::size_t end = static_cast<std::size_t>(spec.tau) - 1 + s % 5;
    config.duration_s = static_cast<double>(end + 1) / config.rate_hz;
    const auto scene = sim::generate_sequence(config);
    BatchSampling sampling;
    sampling.tau = spec.tau;
    sampling.points_per_slot = spec.points_per_slot;
    sampling.first = std::min(end, scene.frames.size() - 1);
    sampling.stride = scene.frames.size();
    sampling.seed = config.seed;
    auto b = make_training_batches(scene.frames, scene.labels, pre, features, sampling, config.seed);
    for (auto& batch : b) batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace fmcw
