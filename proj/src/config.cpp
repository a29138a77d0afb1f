#include "fmcw/config.hpp"

#include <fstream>
#include <set>

namespace fmcw {

using nlohmann::json;

void SimulateConfig::validate() const {
  if (preset != "default" && preset != "highway" && preset != "urban" && preset != "seven")
    throw ConfigError("simulate.preset must be one of default, highway, urban, seven");
  if (actors < 1) throw ConfigError("simulate.actors must be >= 1");
  if (!(h_fov_deg > 0.0 && h_fov_deg < 180.0)) throw ConfigError("simulate.h_fov_deg must lie in (0, 180)");
  if (!(v_fov_deg > 0.0 && v_fov_deg < 180.0)) throw ConfigError("simulate.v_fov_deg must lie in (0, 180)");
  if (!(rate_hz > 0.0)) throw ConfigError("simulate.rate_hz must be > 0");
  if (!(duration_s > 0.0)) throw ConfigError("simulate.duration_s must be > 0");
}

std::vector<sim::NamedScene> SimulateConfig::scenes() const {
  validate();
  std::vector<sim::NamedScene> out;
  if (preset == "seven")
    out = sim::seven_scene_preset(seed);
  else if (preset == "highway")
    out.push_back({"highway", sim::highway_scene(seed, actors)});
  else if (preset == "urban")
    out.push_back({"urban", sim::urban_scene(seed, actors)});
  else
    out.push_back({"default", sim::default_scene(seed)});
  for (auto& s : out) {
    auto& c = s.config;
    c.duration_s = duration_s;
    c.rate_hz = rate_hz;
    c.h_fov_deg = h_fov_deg;
    c.v_fov_deg = v_fov_deg;
    c.max_range_m = max_range_m;
    c.v_noise_sigma = v_noise_sigma;
    c.pos_noise_sigma = pos_noise_sigma;
    c.outlier_rate = outlier_rate;
    if (noiseless) c = c.noiseless();
    c.validate();
  }
  return out;
}

void TrainSection::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (!(learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
  if (embed_dim < 1) throw ConfigError("train.embed_dim must be >= 1");
  for (int h : hidden)
    if (h < 1) throw ConfigError("train.hidden sizes must be >= 1");
  if (!(r_near > 0.0) || !(r_far >= r_near)) throw ConfigError("train radii must satisfy 0 < r_near <= r_far");
  if (tau < 1) throw ConfigError("train.tau must be >= 1");
  if (windows < 1) throw ConfigError("train.windows must be >= 1");
  if (points_per_slot < 1) throw ConfigError("train.points_per_slot must be >= 1");
  if (stride < 1) throw ConfigError("train.stride must be >= 1");
  if (!(reg_weight >= 0.0)) throw ConfigError("train.reg_weight must be >= 0");
  SupConParams{temperature, normalize_features}.validate();
  LossWeights{lambda_ins, lambda_var}.validate();
}

HeadArch TrainSection::arch() const {
  HeadArch a;
  a.input_dim = features().dim();
  a.hidden = hidden;
  a.embed_dim = embed_dim;
  return a;
}

FeatureSpec TrainSection::features() const {
  FeatureSpec f;
  f.use_velocity = use_velocity;
  f.r_near = r_near;
  f.r_far = r_far;
  return f;
}

TrainConfig TrainSection::train_config() const {
  TrainConfig t;
  t.epochs = epochs;
  t.learning_rate = learning_rate;
  t.seed = seed;
  t.loss.supcon = {temperature, normalize_features};
  t.loss.weights = {lambda_ins, lambda_var};
  t.loss.reg_weight = reg_weight;
  t.loss.mean_reduce = mean_reduce;
  return t;
}

void EvalSection::validate() const {
  if (scenes < 1) throw ConfigError("eval.scenes must be >= 1");
}

std::vector<sim::NamedScene> EvalSection::heldout_scenes() const {
  validate();
  std::vector<sim::NamedScene> out;
  for (std::size_t s = 0; s < scenes; ++s) {
    const std::uint64_t sd = seed + s;
    if (s % 4 == 3)
      out.push_back({"urban_" + std::to_string(s), sim::urban_scene(sd, 4)});
    else
      out.push_back({"highway_" + std::to_string(s), sim::highway_scene(sd, 3 + 2 * static_cast<int>(s % 4))});
  }
  return out;
}

void RunConfig::validate() const {
  simulate.validate();
  preprocess.validate();
  tracker.validate();
  infer.validate();
  train.validate();
  eval.validate();
}

namespace {

const char* band_name(BandMode m) { return m == BandMode::paper_faithful ? "paper_faithful" : "angle_corrected"; }

// Reads keys of one section, type-checked, and rejects the keys it never saw.
class SectionReader {
 public:
  SectionReader(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section [" + name_ + "] must be an object");
  }

  void get(const char* key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      out = v->get<int>();
    }
  }
  void get(const char* key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) fail(key, "a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void get(const char* key, std::uint64_t& out, bool) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) fail(key, "a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) fail(key, "a boolean");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }
  void get(const char* key, std::vector<int>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) fail(key, "an array of integers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_integer()) fail(key, "an array of integers");
        out.push_back(e.get<int>());
      }
    }
  }
  void get(const char* key, BandMode& out) {
    std::string s;
    if (!find(key)) return;
    get(key, s);
    if (s == "paper_faithful")
      out = BandMode::paper_faithful;
    else if (s == "angle_corrected")
      out = BandMode::angle_corrected;
    else
      throw ConfigError(name_ + "." + key + " must be paper_faithful or angle_corrected");
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key " + name_ + "." + k);
  }

 private:
  const json* find(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }
  [[noreturn]] void fail(const char* key, const char* what) const {
    throw ConfigError(name_ + "." + key + " must be " + what);
  }

  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const RunConfig& c) {
  json j;
  const auto& s = c.simulate;
  j["simulate"] = {{"preset", s.preset},
                   {"seed", s.seed},
                   {"actors", s.actors},
                   {"duration_s", s.duration_s},
                   {"rate_hz", s.rate_hz},
                   {"h_fov_deg", s.h_fov_deg},
                   {"v_fov_deg", s.v_fov_deg},
                   {"max_range_m", s.max_range_m},
                   {"v_noise_sigma", s.v_noise_sigma},
                   {"pos_noise_sigma", s.pos_noise_sigma},
                   {"outlier_rate", s.outlier_rate},
                   {"noiseless", s.noiseless}};
  const auto& p = c.preprocess;
  j["preprocess"] = {{"v_abs_max", p.v_abs_max},
                     {"range_max", p.range_max},
                     {"ransac_iters", p.ransac_iters},
                     {"ransac_inlier_dist", p.ransac_inlier_dist},
                     {"front_view_bearing_deg", p.front_view_bearing_deg},
                     {"v_m", p.v_m},
                     {"band_mode", band_name(p.band_mode)},
                     {"min_ground_inliers", p.min_ground_inliers}};
  const auto& t = c.tracker;
  j["tracker"] = {{"eps", t.eps}, {"min_pts", t.min_pts}, {"d_n", t.d_n}, {"tau", t.tau}};
  const auto& i = c.infer;
  j["infer"] = {{"tau", i.tau},
                {"p_threshold", i.infer.p_threshold},
                {"overlap_threshold", i.infer.overlap_threshold},
                {"max_instances", i.infer.max_instances},
                {"min_instance_points", i.infer.min_instance_points},
                {"min_neighbors", i.min_neighbors}};
  const auto& r = c.train;
  j["train"] = {{"epochs", r.epochs},
                {"learning_rate", r.learning_rate},
                {"seed", r.seed},
                {"hidden", r.hidden},
                {"embed_dim", r.embed_dim},
                {"use_velocity", r.use_velocity},
                {"r_near", r.r_near},
                {"r_far", r.r_far},
                {"temperature", r.temperature},
                {"normalize_features", r.normalize_features},
                {"lambda_ins", r.lambda_ins},
                {"lambda_var", r.lambda_var},
                {"reg_weight", r.reg_weight},
                {"mean_reduce", r.mean_reduce},
                {"tau", r.tau},
                {"windows", r.windows},
                {"points_per_slot", r.points_per_slot},
                {"stride", r.stride},
                {"data_seed", r.data_seed}};
  j["eval"] = {{"scenes", c.eval.scenes}, {"seed", c.eval.seed}};
  return j;
}

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  for (const auto& [name, body] : j.items()) {
    if (name == "simulate") {
      SectionReader r(body, name);
      auto& s = c.simulate;
      r.get("preset", s.preset);
      r.get("seed", s.seed, true);
      r.get("actors", s.actors);
      r.get("duration_s", s.duration_s);
      r.get("rate_hz", s.rate_hz);
      r.get("h_fov_deg", s.h_fov_deg);
      r.get("v_fov_deg", s.v_fov_deg);
      r.get("max_range_m", s.max_range_m);
      r.get("v_noise_sigma", s.v_noise_sigma);
      r.get("pos_noise_sigma", s.pos_noise_sigma);
      r.get("outlier_rate", s.outlier_rate);
      r.get("noiseless", s.noiseless);
      r.finish();
    } else if (name == "preprocess") {
      SectionReader r(body, name);
      auto& p = c.preprocess;
      r.get("v_abs_max", p.v_abs_max);
      r.get("range_max", p.range_max);
      r.get("ransac_iters", p.ransac_iters);
      r.get("ransac_inlier_dist", p.ransac_inlier_dist);
      r.get("front_view_bearing_deg", p.front_view_bearing_deg);
      r.get("v_m", p.v_m);
      r.get("band_mode", p.band_mode);
      r.get("min_ground_inliers", p.min_ground_inliers);
      r.finish();
    } else if (name == "tracker") {
      SectionReader r(body, name);
      r.get("eps", c.tracker.eps);
      r.get("min_pts", c.tracker.min_pts);
      r.get("d_n", c.tracker.d_n);
      r.get("tau", c.tracker.tau);
      r.finish();
    } else if (name == "infer") {
      SectionReader r(body, name);
      r.get("tau", c.infer.tau);
      r.get("p_threshold", c.infer.infer.p_threshold);
      r.get("overlap_threshold", c.infer.infer.overlap_threshold);
      r.get("max_instances", c.infer.infer.max_instances);
      r.get("min_instance_points", c.infer.infer.min_instance_points);
      r.get("min_neighbors", c.infer.min_neighbors);
      r.finish();
    } else if (name == "train") {
      SectionReader r(body, name);
      auto& t = c.train;
      r.get("epochs", t.epochs);
      r.get("learning_rate", t.learning_rate);
      r.get("seed", t.seed, true);
      r.get("hidden", t.hidden);
      r.get("embed_dim", t.embed_dim);
      r.get("use_velocity", t.use_velocity);
      r.get("r_near", t.r_near);
      r.get("r_far", t.r_far);
      r.get("temperature", t.temperature);
      r.get("normalize_features", t.normalize_features);
      r.get("lambda_ins", t.lambda_ins);
      r.get("lambda_var", t.lambda_var);
      r.get("reg_weight", t.reg_weight);
      r.get("mean_reduce", t.mean_reduce);
      r.get("tau", t.tau);
      r.get("windows", t.windows);
      r.get("points_per_slot", t.points_per_slot);
      r.get("stride", t.stride);
      r.get("data_seed", t.data_seed, true);
      r.finish();
    } else if (name == "eval") {
      SectionReader r(body, name);
      r.get("scenes", c.eval.scenes);
      r.get("seed", c.eval.seed, true);
      r.finish();
    } else {
      throw ConfigError("unknown config section [" + name + "]");
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (j.is_object() && j.contains("command") && j.contains("config")) return config_from_json(j.at("config"));
  return config_from_json(j);
}

}  // namespace fmcw
