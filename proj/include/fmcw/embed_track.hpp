#pragma once

#include "fmcw/contrastive.hpp"
#include "fmcw/core.hpp"
#include "fmcw/embed_cluster.hpp"
#include "fmcw/preprocess.hpp"
#include "fmcw/scene_sim.hpp"
#include "fmcw/toy_head.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace fmcw {

struct EmbedTrackParams {
  int tau = 4;
  ClusterInferParams infer;
  // Window points with fewer neighbors than this inside r_near are treated
  // as background before peeling.
  int min_neighbors = 3;

  void validate() const;
};

// Dynamic points of every frame after preprocessing. Point ids follow the
// (frame, raw index) convention so labels can be written back.
struct DynamicSequence {
  std::vector<Frame> frames;
  std::vector<std::vector<double>> object_v;
  std::vector<std::size_t> raw_size;

  std::size_t size() const { return frames.size(); }
};

DynamicSequence extract_dynamic(std::span<const Frame> frames, const PreprocessParams& pre, std::uint64_t seed);

// Neighborhood statistics within r_near / r_far for each point.
struct Neighborhoods {
  Eigen::MatrixXd mean_near, mean_far;  // N x 3
  Eigen::VectorXi count_near, count_far;  // excluding the point itself
  Eigen::VectorXd mean_v_far;
};
Neighborhoods neighborhoods(const Eigen::MatrixXd& positions, std::span<const double> v, double r_near, double r_far);

/// Per-point head input: scaled position, offsets to the near and far
/// neighborhood means, far neighbor count and, with use_velocity, the point
/// and neighborhood object velocity.
Eigen::MatrixXd window_features(const Eigen::MatrixXd& positions, std::span<const double> v, const FeatureSpec& spec,
                                const Neighborhoods* precomputed = nullptr);

// One compensated 4D volume ready for the head.
struct FeatureWindow {
  Window window;                 // positions already compensated
  std::vector<double> object_v;
  Eigen::MatrixXd positions;     // N x 3
  Eigen::MatrixXd features;      // N x F
  Neighborhoods hood;
  std::size_t first_frame = 0;   // sequence index of slot 0
};

/// Window of frames max(0, t+1-tau)..t, aligned into frame t and shifted
/// along each point's ray by object_v * dt.
FeatureWindow make_feature_window(const DynamicSequence& seq, std::size_t t, int tau, const FeatureSpec& spec);

struct EmbedTrackResult {
  InstanceLabeling labels;
  std::size_t fragmented_windows = 0;  // windows whose peeling hit max_instances
  std::vector<int> window_instances;   // instances kept per window
};

/// Sliding-window embedding tracker with stride 1. Every window is clustered
/// by peeling; ids pass from one window to the next by point overlap on the
/// shared frames. Frame t takes its labels from the window ending at t. A
/// window whose peeling fragments is left unlabeled and counted.
EmbedTrackResult embed_track(std::span<const Frame> frames, const PreprocessParams& pre,
                             const EmbedTrackParams& params, const ToyHeadParams& head, std::uint64_t seed = 0);

struct BatchSampling {
  int tau = 4;
  std::size_t points_per_slot = 256;  // random subset of at most tau * this per window
  std::size_t stride = 1;             // take every stride-th window
  std::size_t first = 0;              // first window end frame
  std::uint64_t seed = 1;
};

/// Training batches from a labeled sequence: one per sampled window, ground
/// truth looked up through the raw point index. Windows with fewer than two
/// clusters are skipped.
std::vector<TrainBatch> make_training_batches(std::span<const Frame> frames, const InstanceLabeling& gt,
                                              const PreprocessParams& pre, const FeatureSpec& spec,
                                              const BatchSampling& sampling, std::uint64_t preprocess_seed = 0);

// Generated training data: one window from each of `windows` short random
// scenes (three highway scenes for every urban one).
struct SyntheticTrainingSpec {
  std::size_t windows = 20;
  int tau = 4;
  std::size_t points_per_slot = 256;
  std::uint64_t seed = 500;  // scene s uses seed + s
};

/// The scene configs behind synthetic_training_batches; building them is the
/// slow part, so callers training several variants can reuse them.
std::vector<sim::SceneConfig> synthetic_training_scenes(const SyntheticTrainingSpec& spec);

std::vector<TrainBatch> synthetic_training_batches(const SyntheticTrainingSpec& spec, const FeatureSpec& features,
                                                   const PreprocessParams& pre);
std::vector<TrainBatch> synthetic_training_batches(std::span<const sim::SceneConfig> scenes,
                                                   const SyntheticTrainingSpec& spec, const FeatureSpec& features,
                                                   const PreprocessParams& pre);

}  // namespace fmcw
