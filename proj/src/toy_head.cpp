#include "fmcw/toy_head.hpp"

#include "fmcw/dataset_io.hpp"

#include <fstream>
#include <numbers>
#include <random>

namespace fmcw {

namespace {
constexpr const char* kCheckpointFormat = "fmcw-toy-head";
constexpr int kCheckpointVersion = 1;
// Shared embedding offset at init: every point starts in one direction.
constexpr double kEmbedBias = 2.0;
}  // namespace

std::size_t HeadArch::param_count() const {
  std::size_t n = 0;
  int in = input_dim;
  for (int h : hidden) {
    n += static_cast<std::size_t>(in) * static_cast<std::size_t>(h) + static_cast<std::size_t>(h);
    in = h;
  }
  const auto out = static_cast<std::size_t>(output_dim());
  return n + static_cast<std::size_t>(in) * out + out;
}

ToyHeadParams init_toy_head(const HeadArch& arch, const FeatureSpec& features, std::uint64_t seed) {
  if (arch.input_dim < 1 || arch.embed_dim < 1) throw ConfigError("head dimensions must be >= 1");
  for (int h : arch.hidden)
    if (h < 1) throw ConfigError("hidden layer sizes must be >= 1");
  ToyHeadParams p;
  p.arch = arch;
  p.features = features;
  p.theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(arch.param_count()));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);

  Eigen::Index offset = 0;
  int in = arch.input_dim;
  std::vector<int> sizes = arch.hidden;
  sizes.push_back(arch.output_dim());
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    const int out = sizes[l];
    const bool last = l + 1 == sizes.size();
    const double scale = (last ? 0.1 : 1.0) / std::sqrt(static_cast<double>(in));
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(in) * out; ++k) p.theta(offset + k) = scale * g(rng);
    offset += static_cast<Eigen::Index>(in) * out;
    if (last) {
      for (int d = 0; d < arch.embed_dim; ++d) {
        p.theta(offset + d) = kEmbedBias / std::sqrt(static_cast<double>(arch.embed_dim));
        p.theta(offset + arch.embed_dim + d) = -std::log(2.0 * std::numbers::pi);
      }
    }
    offset += out;
    in = out;
  }
  return p;
}

HeadOutputs run_head(const ToyHeadParams& head, const Eigen::MatrixXd& features) {
  const auto f = head_forward<double>(head.arch, head.theta, features);
  HeadOutputs h;
  h.embedding = f.embedding;
  h.variance = f.variance;
  h.objectness = f.objectness;
  return h;
}

nlohmann::json head_to_json(const ToyHeadParams& head) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["architecture"] = {{"input_dim", head.arch.input_dim},
                       {"hidden", head.arch.hidden},
                       {"embed_dim", head.arch.embed_dim},
                       {"activation", "tanh"}};
  j["features"] = {{"use_velocity", head.features.use_velocity},
                   {"r_near", head.features.r_near},
                   {"r_far", head.features.r_far}};
  j["params"] = std::vector<double>(head.theta.data(), head.theta.data() + head.theta.size());
  return j;
}

ToyHeadParams head_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != kCheckpointFormat) throw DataError("not a toy head checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw DataError("unsupported checkpoint version " + j.at("version").dump());
    ToyHeadParams p;
    const auto& a = j.at("architecture");
    p.arch.input_dim = a.at("input_dim").get<int>();
    p.arch.hidden = a.at("hidden").get<std::vector<int>>();
    p.arch.embed_dim = a.at("embed_dim").get<int>();
    const auto& f = j.at("features");
    p.features.use_velocity = f.at("use_velocity").get<bool>();
    p.features.r_near = f.at("r_near").get<double>();
    p.features.r_far = f.at("r_far").get<double>();
    if (p.features.dim() != p.arch.input_dim) throw DataError("checkpoint feature spec does not match input_dim");
    const auto params = j.at("params").get<std::vector<double>>();
    if (params.size() != p.arch.param_count())
      throw DataError("checkpoint holds " + std::to_string(params.size()) + " parameters, architecture needs " +
                      std::to_string(p.arch.param_count()));
    p.theta = Eigen::Map<const Eigen::VectorXd>(params.data(), static_cast<Eigen::Index>(params.size()));
    if (!p.theta.allFinite()) throw DataError("checkpoint parameters are not finite");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ToyHeadParams& head, const nlohmann::json& extra) {
  nlohmann::json j = head_to_json(head);
  if (extra.is_object())
    for (const auto& [k, v] : extra.items()) j[k] = v;
  io::atomic_write(path, j.dump() + "\n");
}

ToyHeadParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return head_from_json(j);
}

}  // namespace fmcw
