#pragma once

#include "fmcw/contrastive.hpp"
#include "fmcw/embed_track.hpp"
#include "fmcw/heuristic_track.hpp"
#include "fmcw/preprocess.hpp"
#include "fmcw/scene_sim.hpp"
#include "fmcw/toy_head.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fmcw {

// [simulate]: a scene preset plus sensor overrides.
struct SimulateConfig {
  std::string preset = "default";  // default | highway | urban | seven
  std::uint64_t seed = 1;
  int actors = 4;                  // highway / urban presets
  double duration_s = 4.0;
  double rate_hz = 10.0;
  double h_fov_deg = 37.5;
  double v_fov_deg = 16.7;
  double max_range_m = 300.0;
  double v_noise_sigma = 0.05;
  double pos_noise_sigma = 0.02;
  double outlier_rate = 0.002;
  bool noiseless = false;

  void validate() const;
  /// Named scenes for this config: one, or seven for the "seven" preset.
  std::vector<sim::NamedScene> scenes() const;
};

// [train]: head architecture, features, losses, optimizer and training data.
struct TrainSection {
  int epochs = 200;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;          // head initialization and batch order
  std::vector<int> hidden{32, 32};
  int embed_dim = 8;
  bool use_velocity = true;
  double r_near = 1.5;
  double r_far = 4.0;
  double temperature = 0.1;
  bool normalize_features = true;
  double lambda_ins = 0.01;
  double lambda_var = 0.01;
  double reg_weight = 1e-4;
  bool mean_reduce = false;
  int tau = 4;                     // window size of the training windows
  std::size_t windows = 20;        // synthetic training windows when no dataset is given
  std::size_t points_per_slot = 256;
  std::size_t stride = 4;          // window stride over a training dataset
  std::uint64_t data_seed = 500;

  void validate() const;
  HeadArch arch() const;
  FeatureSpec features() const;
  TrainConfig train_config() const;
};

// [eval]: held-out data for ablation runs without a dataset.
struct EvalSection {
  std::size_t scenes = 4;
  std::uint64_t seed = 700;

  void validate() const;
  /// Held-out synthetic scenes: highway scenes with growing actor counts
  /// plus one urban scene.
  std::vector<sim::NamedScene> heldout_scenes() const;
};

struct RunConfig {
  SimulateConfig simulate;
  PreprocessParams preprocess;
  TrackerParams tracker;
  EmbedTrackParams infer;
  TrainSection train;
  EvalSection eval;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Starts from defaults and applies every key present. Unknown sections or
/// keys and wrongly typed values throw ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
/// Reads a config file. A run.json written by the CLI is accepted too; its
/// "config" member is used.
RunConfig load_config(const std::filesystem::path& path);

}  // namespace fmcw
