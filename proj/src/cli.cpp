#include "fmcw/cli.hpp"

#include "fmcw/annotate_service.hpp"
#include "fmcw/config.hpp"
#include "fmcw/dataset_io.hpp"
#include "fmcw/embed_track.hpp"
#include "fmcw/heuristic_track.hpp"
#include "fmcw/metrics.hpp"
#include "fmcw/report.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>

namespace fmcw::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Runs fn(0..n-1) on up to `jobs` threads. The exception of the lowest
// failing index is rethrown, so failures do not depend on scheduling.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), n);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Config flags only record what to change; the changes are applied on top of
// the loaded config file, so a flag always wins over the file.
struct Overrides {
  std::vector<std::function<void(RunConfig&)>> fns;

  template <typename T, typename Set>
  CLI::Option* add(CLI::App* app, const std::string& name, Set set, const std::string& desc) {
    return app->add_option_function<T>(
        name, [this, set](const T& v) { fns.push_back([set, v](RunConfig& c) { set(c, v); }); }, desc);
  }
  template <typename Set>
  CLI::Option* flag(CLI::App* app, const std::string& name, Set set, const std::string& desc) {
    return app->add_flag_function(
        name, [this, set](std::int64_t) { fns.push_back([set](RunConfig& c) { set(c); }); }, desc);
  }
};

struct Common {
  std::string config_path;
  bool json_out = false;
  int jobs = 1;
  Overrides overrides;

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const auto& f : overrides.fns) f(c);
    c.validate();
    return c;
  }
};

void add_common(CLI::App* app, Common& c, bool with_jobs) {
  app->add_option("--config", c.config_path, "JSON config file (a run.json is accepted)");
  app->add_flag("--json", c.json_out, "Print results as JSON");
  if (with_jobs)
    app->add_option("--jobs", c.jobs, "Worker threads for per-sequence work")->check(CLI::PositiveNumber);
}

void add_preprocess_flags(CLI::App* app, Overrides& o) {
  o.add<double>(app, "--v-m", [](RunConfig& c, double v) { c.preprocess.v_m = v; }, "Static band half-width, m/s");
  o.add<std::string>(
      app, "--band-mode",
      [](RunConfig& c, const std::string& v) {
        if (v == "paper_faithful")
          c.preprocess.band_mode = BandMode::paper_faithful;
        else if (v == "angle_corrected")
          c.preprocess.band_mode = BandMode::angle_corrected;
        else
          throw ConfigError("band mode must be paper_faithful or angle_corrected");
      },
      "paper_faithful | angle_corrected");
}

void add_train_flags(CLI::App* app, Overrides& o) {
  o.add<int>(app, "--epochs", [](RunConfig& c, int v) { c.train.epochs = v; }, "Training epochs");
  o.add<double>(app, "--lr", [](RunConfig& c, double v) { c.train.learning_rate = v; }, "Learning rate");
  o.add<std::uint64_t>(app, "--seed", [](RunConfig& c, std::uint64_t v) { c.train.seed = v; },
                       "Head initialization and batch order seed");
  o.add<std::size_t>(app, "--windows", [](RunConfig& c, std::size_t v) { c.train.windows = v; },
                     "Generated training windows");
  o.add<std::uint64_t>(app, "--data-seed", [](RunConfig& c, std::uint64_t v) { c.train.data_seed = v; },
                       "Seed of the generated training scenes");
}

std::string format_seconds(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", s);
  return buf;
}

void write_json(const fs::path& path, const json& j) { io::atomic_write(path, j.dump(2) + "\n"); }

// Resolved config, seeds and the command line; `replay` re-runs it.
void write_run_json(const fs::path& dir, const std::vector<std::string>& args, const RunConfig& cfg,
                    const json& seeds) {
  fs::create_directories(dir);
  json j = {{"format_version", io::kFormatVersion},
            {"command", args.empty() ? "" : args.front()},
            {"args", args},
            {"config", to_json(cfg)},
            {"seeds", seeds}};
  write_json(dir / "run.json", j);
}

void require_labels(const io::Sequence& seq) {
  if (!seq.labels) throw DataError("sequence " + seq.name + " has no ground-truth labels");
}

// --- simulate -------------------------------------------------------------

struct SimulateArgs {
  Common common;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const RunConfig cfg = a.common.resolve();
  const auto scenes = cfg.simulate.scenes();
  std::vector<json> summary(scenes.size());
  parallel_for(scenes.size(), a.common.jobs, [&](std::size_t i) {
    const auto& scene = scenes[i];
    const auto gt = sim::generate_sequence(scene.config);
    const json meta = {{"scene", scene.name},
                       {"seed", scene.config.seed},
                       {"rate_hz", scene.config.rate_hz},
                       {"h_fov_deg", scene.config.h_fov_deg},
                       {"v_fov_deg", scene.config.v_fov_deg},
                       {"max_range_m", scene.config.max_range_m},
                       {"v_noise_sigma", scene.config.v_noise_sigma},
                       {"pos_noise_sigma", scene.config.pos_noise_sigma},
                       {"outlier_rate", scene.config.outlier_rate},
                       {"actors", scene.config.actors.size()}};
    io::write_sequence(fs::path(a.out) / scene.name, gt.frames, &gt.labels, meta);
    summary[i] = {{"name", scene.name},
                  {"frames", gt.frames.size()},
                  {"points", gt.labels.point_count()},
                  {"actors", scene.config.actors.size()}};
  });
  write_run_json(a.out, args, cfg, {{"simulate", cfg.simulate.seed}});
  if (a.common.json_out) {
    out << json{{"out", a.out}, {"sequences", summary}}.dump(2) << "\n";
  } else {
    for (const auto& s : summary)
      out << s["name"].get<std::string>() << ": " << s["frames"] << " frames, " << s["points"] << " points, "
          << s["actors"] << " actors\n";
    out << "wrote " << summary.size() << " sequence(s) to " << a.out << "\n";
  }
  return kExitOk;
}

// --- track-heuristic / track-embed ----------------------------------------

struct TrackArgs {
  Common common;
  std::string data, out, checkpoint;
  std::uint64_t seed = 0;  // RANSAC seed, frame t uses seed + t
};

int cmd_track(bool embed, const TrackArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const RunConfig cfg = a.common.resolve();
  std::optional<ToyHeadParams> head;
  if (embed) head = load_checkpoint(a.checkpoint);
  const auto dirs = io::find_sequences(a.data);
  std::vector<json> rows(dirs.size());
  parallel_for(dirs.size(), a.common.jobs, [&](std::size_t i) {
    const auto seq = io::read_sequence(dirs[i]);
    const auto start = std::chrono::steady_clock::now();
    InstanceLabeling labels;
    json row = {{"name", seq.name}, {"frames", seq.frames.size()}};
    if (embed) {
      auto r = embed_track(seq.frames, cfg.preprocess, cfg.infer, *head, a.seed);
      labels = std::move(r.labels);
      row["fragmented_windows"] = r.fragmented_windows;
    } else {
      labels = heuristic_track(seq.frames, cfg.preprocess, cfg.tracker, a.seed).labels;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    io::write_label_dir(fs::path(a.out) / seq.name, labels);
    std::size_t points = 0;
    for (const auto& f : seq.frames) points += f.size();
    row["points"] = points;
    row["seconds"] = secs;
    rows[i] = std::move(row);
  });
  json seeds = {{"preprocess", a.seed}};
  write_run_json(a.out, args, cfg, seeds);
  // Wall-clock timing lives outside run.json so replays stay byte-identical.
  write_json(fs::path(a.out) / "timing.json", rows);
  if (a.common.json_out) {
    out << json{{"out", a.out}, {"sequences", rows}}.dump(2) << "\n";
  } else {
    for (const auto& r : rows) {
      out << r["name"].get<std::string>() << ": " << r["frames"] << " frames, "
          << format_seconds(r["seconds"].get<double>()) << " s";
      if (r.contains("fragmented_windows")) out << ", " << r["fragmented_windows"] << " fragmented windows";
      out << "\n";
    }
    out << "labels written to " << a.out << "\n";
  }
  return kExitOk;
}

// --- train ------------------------------------------------------------------

// Training windows from a labeled dataset, or generated ones when `data` is
// empty. `scenes` caches the generated scene configs across variants.
std::vector<TrainBatch> training_batches(const RunConfig& cfg, const std::string& data, const FeatureSpec& features,
                                         int tau, std::optional<std::vector<sim::SceneConfig>>* scenes) {
  if (data.empty()) {
    SyntheticTrainingSpec spec;
    spec.windows = cfg.train.windows;
    spec.tau = tau;
    spec.points_per_slot = cfg.train.points_per_slot;
    spec.seed = cfg.train.data_seed;
    if (scenes) {
      if (!*scenes) *scenes = synthetic_training_scenes(spec);
      return synthetic_training_batches(**scenes, spec, features, cfg.preprocess);
    }
    return synthetic_training_batches(spec, features, cfg.preprocess);
  }
  std::vector<TrainBatch> batches;
  for (const auto& dir : io::find_sequences(data)) {
    const auto seq = io::read_sequence(dir);
    require_labels(seq);
    BatchSampling s;
    s.tau = tau;
    s.points_per_slot = cfg.train.points_per_slot;
    s.stride = cfg.train.stride;
    s.first = static_cast<std::size_t>(tau - 1);
    s.seed = cfg.train.data_seed;
    for (auto& b : make_training_batches(seq.frames, *seq.labels, cfg.preprocess, features, s)) batches.push_back(std::move(b));
  }
  if (batches.empty()) throw DataError("no training windows with two or more instances in " + data);
  return batches;
}

struct TrainOutcome {
  ToyHeadParams head;
  json summary;
};

TrainOutcome train_variant(const RunConfig& cfg, const std::vector<TrainBatch>& batches, const FeatureSpec& features,
                           int tau) {
  TrainSection t = cfg.train;
  t.use_velocity = features.use_velocity;
  const auto init = init_toy_head(t.arch(), features, t.seed);
  const auto res = train_toy_head(init, batches, t.train_config());
  const double sc0 = res.epoch_sc.front(), sc1 = res.epoch_sc.back();
  json summary = {{"windows", batches.size()},
                  {"tau", tau},
                  {"input", features.use_velocity ? "xyz+v" : "xyz"},
                  {"epochs", t.epochs},
                  {"learning_rate", t.learning_rate},
                  {"initial_sc", sc0},
                  {"final_sc", sc1},
                  {"initial_loss", res.epoch_loss.front()},
                  {"final_loss", res.epoch_loss.back()},
                  {"epoch_loss", res.epoch_loss},
                  {"epoch_sc", res.epoch_sc}};
  return {res.head, summary};
}

struct TrainArgs {
  Common common;
  std::string out, data;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const RunConfig cfg = a.common.resolve();
  const FeatureSpec features = cfg.train.features();
  const auto batches = training_batches(cfg, a.data, features, cfg.train.tau, nullptr);
  const auto res = train_variant(cfg, batches, features, cfg.train.tau);
  fs::create_directories(a.out);
  save_checkpoint(fs::path(a.out) / "head.json", res.head, res.summary);
  write_run_json(a.out, args, cfg, {{"init", cfg.train.seed}, {"data", cfg.train.data_seed}});
  if (a.common.json_out) {
    json j = res.summary;
    j.erase("epoch_loss");
    j.erase("epoch_sc");
    j["checkpoint"] = (fs::path(a.out) / "head.json").string();
    out << j.dump(2) << "\n";
  } else {
    out << "trained on " << batches.size() << " windows (tau " << cfg.train.tau << ", "
        << res.summary["input"].get<std::string>() << ")\n"
        << "L_SC " << format_seconds(res.summary["initial_sc"]) << " -> " << format_seconds(res.summary["final_sc"])
        << "\ncheckpoint: " << (fs::path(a.out) / "head.json").string() << "\n";
  }
  return kExitOk;
}

// --- eval -------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string gt, pred, out;
  bool per_frame = false;
};

fs::path prediction_dir(const fs::path& pred_root, const std::string& name) {
  if (fs::is_directory(pred_root / name)) return pred_root / name;
  if (fs::exists(pred_root / (io::frame_stem(0) + ".label"))) return pred_root;
  throw DataError("no predictions for sequence " + name + " under " + pred_root.string());
}

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const RunConfig cfg = a.common.resolve();
  const auto dirs = io::find_sequences(a.gt);
  std::vector<EvalReport> reports(dirs.size());
  std::vector<std::size_t> tubes(dirs.size());
  std::vector<std::string> names(dirs.size());
  parallel_for(dirs.size(), a.common.jobs, [&](std::size_t i) {
    const auto seq = io::read_sequence(dirs[i]);
    require_labels(seq);
    const auto pred = io::read_label_dir(prediction_dir(a.pred, seq.name), seq.frames);
    reports[i] = evaluate(*seq.labels, pred);
    tubes[i] = tube_count(*seq.labels);
    names[i] = seq.name;
  });
  std::vector<TableRow> rows;
  json seqs = json::array();
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    rows.push_back({names[i], reports[i]});
    json r = to_json(reports[i], a.per_frame);
    r["name"] = names[i];
    seqs.push_back(std::move(r));
  }
  const EvalReport all = merge_reports(reports, tubes);
  if (dirs.size() > 1) rows.push_back({"all", all});
  const json result = {{"sequences", seqs}, {"all", to_json(all)}, {"table", table_json(rows)}};
  const fs::path dir = a.out.empty() ? fs::path(a.pred) : fs::path(a.out);
  fs::create_directories(dir);
  write_json(dir / "eval.json", result);
  write_run_json(dir, args, cfg, json::object());
  if (a.common.json_out)
    out << result.dump(2) << "\n";
  else
    out << format_table(rows, "sequence");
  return kExitOk;
}

// --- ablate -----------------------------------------------------------------

struct AblateArgs {
  Common common;
  std::string axis, out, data, train_data, checkpoints;
  bool train = false;
};

struct Variant {
  std::string name;   // checkpoint file stem
  std::string label;  // table row
  int tau;
  FeatureSpec features;
};

int cmd_ablate(const AblateArgs& a, const std::vector<std::string>& args, std::ostream& out) {
  const RunConfig cfg = a.common.resolve();
  if (!a.train && a.checkpoints.empty()) throw ConfigError("ablate needs --train or --checkpoints");
  std::vector<Variant> variants;
  if (a.axis == "window_size") {
    for (int tau : {4, 6, 8, 10})
      variants.push_back({"tau" + std::to_string(tau), std::to_string(tau) + " scans", tau, cfg.train.features()});
  } else {
    for (bool v : {false, true}) {
      FeatureSpec f = cfg.train.features();
      f.use_velocity = v;
      variants.push_back({v ? "xyz+v" : "xyz", v ? "xyz+v" : "xyz", cfg.infer.tau, f});
    }
  }

  std::vector<ToyHeadParams> heads;
  json training = json::object();
  if (a.train) {
    std::optional<std::vector<sim::SceneConfig>> scenes;
    fs::create_directories(fs::path(a.out) / "checkpoints");
    for (const auto& v : variants) {
      RunConfig c = cfg;
      c.train.tau = v.tau;
      const auto batches = training_batches(c, a.train_data, v.features, v.tau, &scenes);
      auto res = train_variant(c, batches, v.features, v.tau);
      save_checkpoint(fs::path(a.out) / "checkpoints" / (v.name + ".json"), res.head, res.summary);
      training[v.label] = {{"initial_sc", res.summary["initial_sc"]}, {"final_sc", res.summary["final_sc"]}};
      heads.push_back(std::move(res.head));
    }
  } else {
    for (const auto& v : variants) {
      auto head = load_checkpoint(fs::path(a.checkpoints) / (v.name + ".json"));
      if (head.features.use_velocity != v.features.use_velocity)
        throw DataError("checkpoint " + v.name + ".json has the wrong input format");
      heads.push_back(std::move(head));
    }
  }

  // Evaluation data with ground truth: a dataset, or the held-out scenes.
  std::vector<std::pair<std::string, std::vector<Frame>>> eval_frames;
  std::vector<InstanceLabeling> eval_gt;
  if (!a.data.empty()) {
    for (const auto& dir : io::find_sequences(a.data)) {
      auto seq = io::read_sequence(dir);
      require_labels(seq);
      eval_frames.emplace_back(seq.name, std::move(seq.frames));
      eval_gt.push_back(std::move(*seq.labels));
    }
  } else {
    const auto scenes = cfg.eval.heldout_scenes();
    eval_frames.resize(scenes.size());
    eval_gt.resize(scenes.size());
    parallel_for(scenes.size(), a.common.jobs, [&](std::size_t i) {
      auto gt = sim::generate_sequence(scenes[i].config);
      eval_frames[i] = {scenes[i].name, std::move(gt.frames)};
      eval_gt[i] = std::move(gt.labels);
    });
  }

  const std::size_t ns = eval_frames.size();
  std::vector<EvalReport> reports(variants.size() * ns);
  std::vector<std::size_t> fragmented(variants.size() * ns);
  parallel_for(reports.size(), a.common.jobs, [&](std::size_t k) {
    const std::size_t vi = k / ns, si = k % ns;
    EmbedTrackParams p = cfg.infer;
    p.tau = variants[vi].tau;
    const auto r = embed_track(eval_frames[si].second, cfg.preprocess, p, heads[vi]);
    reports[k] = evaluate(eval_gt[si], r.labels);
    fragmented[k] = r.fragmented_windows;
  });
  std::vector<std::size_t> tubes;
  for (const auto& g : eval_gt) tubes.push_back(tube_count(g));

  std::vector<TableRow> rows;
  json frag = json::object();
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    std::span<const EvalReport> part(reports.data() + vi * ns, ns);
    rows.push_back({variants[vi].label, merge_reports(part, tubes)});
    std::size_t f = 0;
    for (std::size_t si = 0; si < ns; ++si) f += fragmented[vi * ns + si];
    frag[variants[vi].label] = f;
  }
  double lo = 1.0, hi = 0.0;
  for (const auto& r : rows) lo = std::min(lo, r.report.as), hi = std::max(hi, r.report.as);
  const double spread = 100.0 * (hi - lo);

  const std::string header = a.axis == "window_size" ? "window" : "input";
  const std::string table = format_table(rows, header);
  json result = {{"axis", a.axis},
                 {"rows", table_json(rows)},
                 {"as_spread_points", spread},
                 {"eval_sequences", ns},
                 {"fragmented_windows", frag}};
  if (a.train) result["training"] = training;
  io::atomic_write(fs::path(a.out) / "ablation.txt", table);
  write_json(fs::path(a.out) / "ablation.json", result);
  write_run_json(a.out, args, cfg,
                 {{"init", cfg.train.seed}, {"data", cfg.train.data_seed}, {"eval", cfg.eval.seed}});
  if (a.common.json_out) {
    out << result.dump(2) << "\n";
  } else {
    out << table;
    char buf[64];
    std::snprintf(buf, sizeof buf, "max AS spread: %.2f points\n", spread);
    out << buf;
  }
  return kExitOk;
}

// --- serve ------------------------------------------------------------------

struct ServeArgs {
  std::string data, host = "127.0.0.1", static_dir, annotations;
  int port = 8080;
  std::size_t max_points = 200000;
};

std::atomic<service::HttpFrontend*> g_frontend{nullptr};

int cmd_serve(const ServeArgs& a, std::ostream& out) {
  if (!fs::is_directory(a.data)) throw DataError("data directory " + a.data + " does not exist");
  service::ServiceOptions opt;
  opt.data_dir = a.data;
  if (!a.annotations.empty()) opt.annotation_dir = a.annotations;
  opt.max_points = a.max_points;
  service::AnnotateService svc(opt);
  service::HttpFrontend http(svc, a.static_dir);
  const int port = http.bind(a.host, a.port);
  out << "serving " << a.data << " on http://" << a.host << ":" << port << "/api/v1\n" << std::flush;
  g_frontend = &http;
  auto previous = std::signal(SIGINT, [](int) {
    if (auto* f = g_frontend.load()) f->stop();
  });
  http.listen();
  std::signal(SIGINT, previous);
  g_frontend = nullptr;
  svc.wait_for_jobs();
  return kExitOk;
}

// --- replay -----------------------------------------------------------------

// The recorded command line with --config pointing at the run.json itself and,
// optionally, a different --out.
std::vector<std::string> replay_args(const fs::path& run_json, const std::string& out_dir) {
  std::ifstream in(run_json);
  if (!in) throw DataError("cannot open " + run_json.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(run_json.string() + ": " + e.what());
  }
  if (!j.contains("args") || !j["args"].is_array() || j["args"].empty())
    throw DataError(run_json.string() + " has no recorded command line");
  const auto recorded = j["args"].get<std::vector<std::string>>();
  std::vector<std::string> args{recorded.front()};
  for (std::size_t i = 1; i < recorded.size(); ++i) {
    const std::string& s = recorded[i];
    if (s == "--config" || s == "--out") {
      if (s == "--out") args.insert(args.end(), {"--out", out_dir.empty() ? recorded.at(i + 1) : out_dir});
      ++i;
    } else if (s.rfind("--config=", 0) == 0) {
    } else if (s.rfind("--out=", 0) == 0) {
      args.push_back(out_dir.empty() ? s : "--out=" + out_dir);
    } else {
      args.push_back(s);
    }
  }
  args.insert(args.begin() + 1, {"--config", run_json.string()});
  return args;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"FMCW LiDAR Doppler moving-object tracking toolkit", "fmcwtrack"};
  app.require_subcommand(1);

  SimulateArgs sim_a;
  auto* sim_cmd = app.add_subcommand("simulate", "Generate a labeled synthetic dataset");
  add_common(sim_cmd, sim_a.common, true);
  sim_cmd->add_option("--out", sim_a.out, "Output dataset directory")->required();
  {
    auto& o = sim_a.common.overrides;
    o.add<std::string>(sim_cmd, "--preset", [](RunConfig& c, const std::string& v) { c.simulate.preset = v; },
                       "default | highway | urban | seven");
    o.add<std::uint64_t>(sim_cmd, "--seed", [](RunConfig& c, std::uint64_t v) { c.simulate.seed = v; }, "Scene seed");
    o.add<int>(sim_cmd, "--actors", [](RunConfig& c, int v) { c.simulate.actors = v; }, "Actors (highway, urban)");
    o.add<double>(sim_cmd, "--duration", [](RunConfig& c, double v) { c.simulate.duration_s = v; }, "Seconds");
    o.add<double>(sim_cmd, "--rate", [](RunConfig& c, double v) { c.simulate.rate_hz = v; }, "Frame rate, Hz");
    o.add<double>(sim_cmd, "--h-fov", [](RunConfig& c, double v) { c.simulate.h_fov_deg = v; }, "Degrees");
    o.add<double>(sim_cmd, "--v-fov", [](RunConfig& c, double v) { c.simulate.v_fov_deg = v; }, "Degrees");
    o.add<double>(sim_cmd, "--v-noise", [](RunConfig& c, double v) { c.simulate.v_noise_sigma = v; },
                  "Doppler noise sigma, m/s");
    o.add<double>(sim_cmd, "--pos-noise", [](RunConfig& c, double v) { c.simulate.pos_noise_sigma = v; },
                  "Position noise sigma, m");
    o.add<double>(sim_cmd, "--outlier-rate", [](RunConfig& c, double v) { c.simulate.outlier_rate = v; },
                  "Outlier fraction");
    o.flag(sim_cmd, "--noiseless", [](RunConfig& c) { c.simulate.noiseless = true; }, "Zero noise, no outliers");
  }

  TrackArgs heur_a, emb_a;
  auto* heur_cmd = app.add_subcommand("track-heuristic", "DBSCAN + compensation + nearest-neighbor tracker");
  auto* emb_cmd = app.add_subcommand("track-embed", "Embedding peel-and-associate tracker");
  for (auto [cmd, a] : {std::pair{heur_cmd, &heur_a}, std::pair{emb_cmd, &emb_a}}) {
    add_common(cmd, a->common, true);
    cmd->add_option("--data", a->data, "Dataset directory")->required();
    cmd->add_option("--out", a->out, "Prediction output directory")->required();
    cmd->add_option("--seed", a->seed, "Ground-fit seed (frame t uses seed + t)");
    add_preprocess_flags(cmd, a->common.overrides);
  }
  {
    auto& o = heur_a.common.overrides;
    o.add<double>(heur_cmd, "--eps", [](RunConfig& c, double v) { c.tracker.eps = v; }, "DBSCAN radius, m");
    o.add<int>(heur_cmd, "--min-pts", [](RunConfig& c, int v) { c.tracker.min_pts = v; }, "DBSCAN min points");
    o.add<double>(heur_cmd, "--d-n", [](RunConfig& c, double v) { c.tracker.d_n = v; }, "Association distance, m");
    o.add<int>(heur_cmd, "--tau", [](RunConfig& c, int v) { c.tracker.tau = v; }, "Window size, frames");
  }
  {
    auto& o = emb_a.common.overrides;
    emb_cmd->add_option("--checkpoint", emb_a.checkpoint, "Trained head (train --out DIR writes DIR/head.json)")
        ->required();
    o.add<int>(emb_cmd, "--tau", [](RunConfig& c, int v) { c.infer.tau = v; }, "Window size, frames");
    o.add<double>(emb_cmd, "--p-threshold", [](RunConfig& c, double v) { c.infer.infer.p_threshold = v; },
                  "Peeling threshold");
    o.add<double>(emb_cmd, "--overlap", [](RunConfig& c, double v) { c.infer.infer.overlap_threshold = v; },
                  "Cross-window overlap threshold");
  }

  TrainArgs train_a;
  auto* train_cmd = app.add_subcommand("train", "Train the embedding head");
  add_common(train_cmd, train_a.common, false);
  train_cmd->add_option("--out", train_a.out, "Output directory for head.json")->required();
  train_cmd->add_option("--data", train_a.data, "Labeled dataset (default: generated windows)");
  add_train_flags(train_cmd, train_a.common.overrides);
  train_a.common.overrides.add<int>(train_cmd, "--window-size", [](RunConfig& c, int v) { c.train.tau = v; },
                                    "Training window size, frames");
  train_a.common.overrides.add<std::string>(
      train_cmd, "--input",
      [](RunConfig& c, const std::string& v) {
        if (v != "xyz" && v != "xyz+v") throw ConfigError("input must be xyz or xyz+v");
        c.train.use_velocity = v == "xyz+v";
      },
      "xyz | xyz+v");

  EvalArgs eval_a;
  auto* eval_cmd = app.add_subcommand("eval", "Score predictions against ground truth");
  add_common(eval_cmd, eval_a.common, true);
  eval_cmd->add_option("--gt", eval_a.gt, "Dataset with ground-truth labels")->required();
  eval_cmd->add_option("--pred", eval_a.pred, "Prediction directory")->required();
  eval_cmd->add_option("--out", eval_a.out, "Where eval.json and run.json go (default: --pred)");
  eval_cmd->add_flag("--per-frame", eval_a.per_frame, "Include per-frame counts in the JSON");

  AblateArgs abl_a;
  auto* abl_cmd = app.add_subcommand("ablate", "Window-size or input-format ablation table");
  add_common(abl_cmd, abl_a.common, true);
  abl_cmd->add_option("--axis", abl_a.axis, "window_size | input_velocity")
      ->required()
      ->check(CLI::IsMember({"window_size", "input_velocity"}));
  abl_cmd->add_option("--out", abl_a.out, "Output directory")->required();
  abl_cmd->add_option("--data", abl_a.data, "Evaluation dataset (default: generated held-out scenes)");
  abl_cmd->add_flag("--train", abl_a.train, "Train every variant first");
  abl_cmd->add_option("--train-data", abl_a.train_data, "Labeled training dataset (default: generated windows)");
  abl_cmd->add_option("--checkpoints", abl_a.checkpoints, "Directory with tau4.json.. or xyz.json / xyz+v.json");
  add_train_flags(abl_cmd, abl_a.common.overrides);

  ServeArgs serve_a;
  auto* serve_cmd = app.add_subcommand("serve", "Run the annotation HTTP service");
  serve_cmd->add_option("--data", serve_a.data, "Dataset directory")->required();
  serve_cmd->add_option("--host", serve_a.host, "Bind address");
  serve_cmd->add_option("--port", serve_a.port, "Port (0 picks a free one)");
  serve_cmd->add_option("--static", serve_a.static_dir, "UI bundle directory");
  serve_cmd->add_option("--annotations", serve_a.annotations, "Saved labels (default: DATA/annotations)");
  serve_cmd->add_option("--max-points", serve_a.max_points, "Window decimation limit");

  std::string replay_file, replay_out;
  auto* replay_cmd = app.add_subcommand("replay", "Re-run the command recorded in a run.json");
  replay_cmd->add_option("run_json", replay_file, "run.json written by an earlier run")->required();
  replay_cmd->add_option("--out", replay_out, "Write outputs here instead of the recorded --out");

  std::vector<std::string> argv_store{"fmcwtrack"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) {
        app.exit(e, out, err);
        return kExitOk;
      }
      err << "error: " << e.what() << "\n";
      return kExitConfig;
    }
    if (sim_cmd->parsed()) return cmd_simulate(sim_a, args, out);
    if (heur_cmd->parsed()) return cmd_track(false, heur_a, args, out);
    if (emb_cmd->parsed()) return cmd_track(true, emb_a, args, out);
    if (train_cmd->parsed()) return cmd_train(train_a, args, out);
    if (eval_cmd->parsed()) return cmd_eval(eval_a, args, out);
    if (abl_cmd->parsed()) return cmd_ablate(abl_a, args, out);
    if (serve_cmd->parsed()) return cmd_serve(serve_a, out);
    if (replay_cmd->parsed()) return run(replay_args(replay_file, replay_out), out, err);
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace fmcw::cli
