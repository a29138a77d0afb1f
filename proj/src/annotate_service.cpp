#include "fmcw/annotate_service.hpp"

#include "fmcw/config.hpp"
#include "fmcw/dataset_io.hpp"
#include "fmcw/heuristic_track.hpp"
#include "fmcw/metrics.hpp"
#include "fmcw/report.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <deque>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

namespace fmcw::service {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

struct HttpError : std::runtime_error {
  int status;
  HttpError(int s, const std::string& m) : std::runtime_error(m), status(s) {}
};

Response reply(int status, const json& body) { return {status, body.dump(), "application/json"}; }
Response error_reply(int status, const std::string& msg) { return reply(status, {{"error", msg}}); }

std::string random_token() {
  static std::mutex m;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(m);
  std::ostringstream s;
  s << std::hex << rng() << rng();
  return s.str();
}

// One applied change set; undo writes `before` back.
struct Diff {
  std::vector<std::tuple<PointId, std::uint32_t, std::uint32_t>> changes;  // id, before, after
};

struct Proposal {
  InstanceLabeling labels;
  PreprocessParams pre;
  TrackerParams trk;
};

struct Session {
  std::mutex m;
  std::string id;
  fs::path dir;
  std::shared_ptr<const io::Sequence> seq;  // immutable once loaded
  std::vector<Mask> dynamic;                // lazily filled, guarded by m
  std::vector<bool> dynamic_ready;
  InstanceLabeling working;
  bool dirty = false;
  PreprocessParams pre;
  TrackerParams trk;
  std::string lock_token;
  Clock::time_point lock_expiry{};
  std::deque<Diff> undo;
  std::map<std::string, Proposal> proposals;
  std::deque<std::string> proposal_order;
  std::size_t next_proposal = 1;
  std::map<std::string, Response> replies;  // idempotency cache: route + token
  std::deque<std::string> reply_order;
};

struct Job {
  std::string status = "running";  // running | done | failed
  Response result;
};

std::uint32_t max_id(const InstanceLabeling& l) { return l.max_id(); }

std::map<std::uint32_t, std::size_t> id_counts(const InstanceLabeling& l) {
  std::map<std::uint32_t, std::size_t> c;
  for (const auto& f : l.frames)
    for (auto id : f)
      if (id != 0) ++c[id];
  return c;
}

json cluster_summary(const InstanceLabeling& l) {
  struct S {
    std::size_t points = 0, first = 0, last = 0;
  };
  std::map<std::uint32_t, S> s;
  for (std::size_t f = 0; f < l.frames.size(); ++f)
    for (auto id : l.frames[f]) {
      if (id == 0) continue;
      auto [it, fresh] = s.try_emplace(id);
      if (fresh) it->second.first = f;
      ++it->second.points;
      it->second.last = f;
    }
  json out = json::array();
  for (const auto& [id, v] : s)
    out.push_back({{"id", id}, {"points", v.points}, {"first_frame", v.first}, {"last_frame", v.last}});
  return out;
}

Diff make_diff(const InstanceLabeling& from, const InstanceLabeling& to) {
  Diff d;
  for (std::size_t f = 0; f < from.frames.size(); ++f)
    for (std::size_t i = 0; i < from.frames[f].size(); ++i)
      if (from.frames[f][i] != to.frames[f][i])
        d.changes.emplace_back(make_point_id(static_cast<std::uint32_t>(f), static_cast<std::uint32_t>(i)),
                               from.frames[f][i], to.frames[f][i]);
  return d;
}

json diff_json(const Diff& d) {
  json a = json::array();
  for (const auto& [pid, before, after] : d.changes) a.push_back({{"point_id", pid}, {"before", before}, {"after", after}});
  return a;
}

double hue(double v, double lo, double hi) {
  const double c = std::clamp(v, lo, hi);
  return hi > lo ? 240.0 * (c - lo) / (hi - lo) : 0.0;
}

// Reads an integer query parameter; 400 when malformed.
std::optional<long long> query_int(const Request& r, const std::string& key) {
  const auto it = r.query.find(key);
  if (it == r.query.end()) return std::nullopt;
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw HttpError(400, "query parameter " + key + " must be an integer");
  }
}

}  // namespace

struct AnnotateService::Impl {
  ServiceOptions opt;
  std::mutex scenes_m;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  std::mutex jobs_m;
  std::map<std::string, Job> jobs;
  std::vector<std::thread> workers;
  std::size_t next_job = 1;

  Clock::time_point now() const { return opt.clock ? opt.clock() : Clock::now(); }

  std::vector<fs::path> scene_dirs() const {
    if (!fs::is_directory(opt.data_dir)) return {};
    return io::find_sequences(opt.data_dir);
  }

  std::shared_ptr<Session> session(const std::string& id) {
    std::lock_guard lock(scenes_m);
    if (auto it = sessions.find(id); it != sessions.end()) return it->second;
    for (const auto& d : scene_dirs())
      if (d.filename().string() == id || (d == opt.data_dir && d.filename().string() == id)) {
        auto s = std::make_shared<Session>();
        s->id = id;
        s->dir = d;
        sessions[id] = s;
        return s;
      }
    throw HttpError(404, "unknown scene " + id);
  }

  fs::path annotation_path(const std::string& id) const { return opt.annotation_dir / id; }

  // Loads the sequence and the working labels on first use. Caller holds s.m.
  void ensure_loaded(Session& s) {
    if (s.seq) return;
    auto seq = std::make_shared<io::Sequence>(io::read_sequence(s.dir));
    const fs::path saved = annotation_path(s.id);
    if (fs::is_directory(saved)) {
      s.working = io::read_label_dir(saved, seq->frames);
    } else {
      s.working.frames.clear();
      for (const auto& f : seq->frames) s.working.frames.emplace_back(f.size(), 0u);
    }
    s.dynamic.assign(seq->frames.size(), {});
    s.dynamic_ready.assign(seq->frames.size(), false);
    s.seq = std::move(seq);
  }

  // Caller holds s.m.
  void require_lock(const Session& s, const std::string& token) const {
    if (token.empty() || token != s.lock_token || now() >= s.lock_expiry)
      throw HttpError(409, "write lock for scene " + s.id + " is not held by this token");
  }

  static std::string token_of(const Request& r, const json& body) {
    if (auto it = r.headers.find("x-lock-token"); it != r.headers.end()) return it->second;
    if (body.is_object() && body.contains("token") && body["token"].is_string()) return body["token"];
    return {};
  }

  static json parse_body(const Request& r) {
    if (r.body.empty()) return json::object();
    try {
      json j = json::parse(r.body);
      if (!j.is_object()) throw HttpError(400, "request body must be a JSON object");
      return j;
    } catch (const json::exception& e) {
      throw HttpError(400, std::string("malformed JSON body: ") + e.what());
    }
  }

  static std::optional<std::string> edit_token(const Request& r, const json& body) {
    if (body.contains("edit_token")) {
      if (!body["edit_token"].is_string()) throw HttpError(422, "edit_token must be a string");
      return body["edit_token"].get<std::string>();
    }
    if (auto it = r.headers.find("idempotency-key"); it != r.headers.end()) return it->second;
    return std::nullopt;
  }

  // Runs a mutating handler once per (route, edit token); retries get the
  // first reply back. Caller holds s.m.
  template <typename F>
  Response idempotent(Session& s, const std::string& route, const std::optional<std::string>& token, F&& f) {
    if (!token) return f();
    const std::string key = route + "\n" + *token;
    if (auto it = s.replies.find(key); it != s.replies.end()) return it->second;
    Response r = f();
    if (r.status < 500) {
      s.replies[key] = r;
      s.reply_order.push_back(key);
      if (s.reply_order.size() > 1000) {
        s.replies.erase(s.reply_order.front());
        s.reply_order.pop_front();
      }
    }
    return r;
  }

  void push_undo(Session& s, Diff d) {
    s.undo.push_back(std::move(d));
    while (s.undo.size() > opt.undo_depth) s.undo.pop_front();
    s.dirty = true;
  }

  // --- routes --------------------------------------------------------------

  Response list_scenes() {
    json out = json::array();
    for (const auto& d : scene_dirs()) {
      const std::string id = d.filename().string();
      std::size_t frames = 0;
      for (const auto& e : fs::directory_iterator(d / "scans"))
        if (e.path().extension() == ".bin") ++frames;
      const bool gt = fs::is_directory(d / "labels");
      const bool saved = fs::is_directory(annotation_path(id));
      json entry = {{"id", id},
                    {"frames", frames},
                    {"status", gt || saved ? "labeled" : "unlabeled"},
                    {"has_ground_truth", gt},
                    {"has_annotations", saved}};
      std::shared_ptr<Session> s;
      {
        std::lock_guard lock(scenes_m);
        if (auto it = sessions.find(id); it != sessions.end()) s = it->second;
      }
      if (s) {
        std::lock_guard lock(s->m);
        entry["dirty"] = s->dirty;
        entry["locked"] = !s->lock_token.empty() && now() < s->lock_expiry;
      } else {
        entry["dirty"] = false;
        entry["locked"] = false;
      }
      out.push_back(std::move(entry));
    }
    return reply(200, out);
  }

  Response window(Session& s, const Request& r) {
    std::shared_ptr<const io::Sequence> seq;
    {
      std::lock_guard lock(s.m);
      ensure_loaded(s);
      seq = s.seq;
    }
    const long long n = static_cast<long long>(seq->frames.size());
    const long long t = query_int(r, "t").value_or(n - 1);
    const long long tau = query_int(r, "tau").value_or(4);
    const long long cap = query_int(r, "max_points").value_or(static_cast<long long>(opt.max_points));
    if (t < 0 || t >= n) throw HttpError(400, "t must lie in [0, " + std::to_string(n - 1) + "]");
    if (tau < 1) throw HttpError(400, "tau must be >= 1");
    if (cap < 1) throw HttpError(400, "max_points must be >= 1");
    const std::size_t limit = std::min<std::size_t>(static_cast<std::size_t>(cap), opt.max_points);
    const std::size_t first = static_cast<std::size_t>(std::max<long long>(0, t + 1 - tau));
    const std::size_t last = static_cast<std::size_t>(t);

    // Dynamic masks and a labels snapshot for the frames in the window.
    std::vector<Mask> dyn(last + 1 - first);
    std::vector<std::vector<std::uint32_t>> labels(last + 1 - first);
    for (std::size_t f = first; f <= last; ++f) {
      bool ready;
      {
        std::lock_guard lock(s.m);
        ready = s.dynamic_ready[f];
        if (ready) dyn[f - first] = s.dynamic[f];
      }
      if (!ready) {
        Mask m(seq->frames[f].size(), 0);
        try {
          const auto pf = preprocess_frame(seq->frames[f], s.pre, f);
          for (std::size_t i = 0; i < pf.dynamic.size(); ++i)
            if (pf.dynamic[i]) m[pf.kept_index[i]] = 1;
        } catch (const Error&) {
          // No ground fit in this frame: nothing is marked dynamic.
        }
        std::lock_guard lock(s.m);
        s.dynamic[f] = m;
        s.dynamic_ready[f] = true;
        dyn[f - first] = std::move(m);
      }
    }
    {
      std::lock_guard lock(s.m);
      for (std::size_t f = first; f <= last; ++f) labels[f - first] = s.working.frames[f];
    }

    const std::span<const Frame> frames(seq->frames.data() + first, last + 1 - first);
    const Window w = build_window(frames, static_cast<int>(frames.size()));
    const std::size_t total = w.size();
    const std::size_t stride = total <= limit ? 1 : (total + limit - 1) / limit;
    json x = json::array(), y = json::array(), z = json::array(), v = json::array(), h = json::array(),
         lab = json::array(), dm = json::array(), fi = json::array(), pid = json::array();
    for (std::size_t i = 0; i < total; i += stride) {
      const auto& p = w.points[i];
      const std::size_t f = point_id_frame(w.point_ids[i]);
      const std::size_t k = w.source_index[i];
      x.push_back(p.x());
      y.push_back(p.y());
      z.push_back(p.z());
      v.push_back(p.v);
      h.push_back(hue(p.v, opt.hue_v_min, opt.hue_v_max));
      lab.push_back(labels[f - first][k]);
      dm.push_back(static_cast<int>(dyn[f - first][k]));
      fi.push_back(f);
      pid.push_back(w.point_ids[i]);
    }
    json frames_json = json::array();
    for (std::size_t f = first; f <= last; ++f) frames_json.push_back(f);
    return reply(200, {{"scene", s.id},
                       {"t", t},
                       {"tau", tau},
                       {"frames", frames_json},
                       {"total_points", total},
                       {"stride", stride},
                       {"count", x.size()},
                       {"hue_range", {opt.hue_v_min, opt.hue_v_max}},
                       {"x", x},
                       {"y", y},
                       {"z", z},
                       {"v", v},
                       {"hue", h},
                       {"label", lab},
                       {"dynamic", dm},
                       {"frame_index", fi},
                       {"point_id", pid}});
  }

  Response lock(Session& s, const Request& r, bool release) {
    const json body = parse_body(r);
    const std::string token = token_of(r, body);
    std::lock_guard lk(s.m);
    const bool held = !s.lock_token.empty() && now() < s.lock_expiry;
    if (release) {
      if (!held || token != s.lock_token) throw HttpError(409, "write lock is not held by this token");
      s.lock_token.clear();
      return reply(200, {{"released", true}});
    }
    if (held && token != s.lock_token) throw HttpError(409, "scene " + s.id + " is locked by another client");
    if (!held || token != s.lock_token) s.lock_token = random_token();
    s.lock_expiry = now() + opt.lease;
    return reply(200, {{"token", s.lock_token}, {"lease_s", opt.lease.count()}});
  }

  // Resolved re-cluster parameters: the session's current ones with the
  // request's overrides. Bad keys or values are 422.
  static std::pair<PreprocessParams, TrackerParams> recluster_params(const Session& s, const json& body) {
    RunConfig base;
    base.preprocess = s.pre;
    base.tracker = s.trk;
    const json resolved = to_json(base);
    json cfg = {{"preprocess", resolved["preprocess"]}, {"tracker", resolved["tracker"]}};
    if (body.contains("params")) {
      if (!body["params"].is_object()) throw HttpError(422, "params must be an object");
      for (const auto& [k, v] : body["params"].items()) {
        if (cfg["tracker"].contains(k))
          cfg["tracker"][k] = v;
        else if (cfg["preprocess"].contains(k))
          cfg["preprocess"][k] = v;
        else
          throw HttpError(422, "unknown parameter " + k);
      }
    }
    try {
      const RunConfig c = config_from_json(cfg);
      return {c.preprocess, c.tracker};
    } catch (const ConfigError& e) {
      throw HttpError(422, e.what());
    }
  }

  // The heavy part of a re-cluster; touches only immutable data.
  static json compute_proposal(const io::Sequence& seq, const InstanceLabeling& current, const PreprocessParams& pre,
                               const TrackerParams& trk, bool verify, std::uint64_t seed, InstanceLabeling& out) {
    const auto res = heuristic_track(seq.frames, pre, trk, seed);
    out = res.labels;
    const auto counts = id_counts(out);
    json j = {{"instances", counts.size()}, {"clusters", cluster_summary(out)}};
    std::size_t changed = 0;
    for (std::size_t f = 0; f < out.frames.size(); ++f)
      for (std::size_t i = 0; i < out.frames[f].size(); ++i) changed += out.frames[f][i] != current.frames[f][i];
    j["changed_points"] = changed;
    json metrics = json::object();
    if (!id_counts(current).empty()) metrics["vs_current"] = to_json(evaluate(current, out));
    if (seq.labels) {
      j["gt_instances"] = id_counts(*seq.labels).size();
      if (!id_counts(*seq.labels).empty()) metrics["vs_ground_truth"] = to_json(evaluate(*seq.labels, out));
    }
    j["metrics"] = metrics;
    if (verify) {
      json d = json::array();
      for (const auto& x : verify_association(seq.frames, res, trk))
        d.push_back({{"frame", x.frame},
                     {"prev_id", x.prev_id},
                     {"id", x.id},
                     {"associated", x.associated},
                     {"reclustered", x.reclustered}});
      j["verify"] = {{"disagreements", d}, {"count", d.size()}};
    }
    return j;
  }

  std::string store_proposal(Session& s, Proposal p) {
    const std::string id = "p" + std::to_string(s.next_proposal++);
    s.proposals[id] = std::move(p);
    s.proposal_order.push_back(id);
    while (s.proposal_order.size() > 8) {
      s.proposals.erase(s.proposal_order.front());
      s.proposal_order.pop_front();
    }
    return id;
  }

  Response recluster(const std::shared_ptr<Session>& sp, const Request& r) {
    Session& s = *sp;
    const json body = parse_body(r);
    std::unique_lock lk(s.m);
    require_lock(s, token_of(r, body));
    return idempotent(s, "recluster", edit_token(r, body), [&]() -> Response {
      ensure_loaded(s);
      const auto [pre, trk] = recluster_params(s, body);
      const bool verify = body.value("verify", false);
      const bool async = body.value("async", false);
      const std::uint64_t seed = body.value("seed", std::uint64_t{0});
      auto seq = s.seq;
      InstanceLabeling current = s.working;
      if (!async) {
        lk.unlock();
        Proposal p{{}, pre, trk};
        json j = compute_proposal(*seq, current, pre, trk, verify, seed, p.labels);
        lk.lock();
        j["proposal_id"] = store_proposal(s, std::move(p));
        return reply(200, j);
      }
      std::string job_id;
      {
        std::lock_guard jl(jobs_m);
        job_id = "j" + std::to_string(next_job++);
        jobs[job_id] = Job{};
        workers.emplace_back([this, sp, seq, current, pre, trk, verify, seed, job_id] {
          Job done;
          try {
            Proposal p{{}, pre, trk};
            json j = compute_proposal(*seq, current, pre, trk, verify, seed, p.labels);
            {
              std::lock_guard l2(sp->m);
              j["proposal_id"] = store_proposal(*sp, std::move(p));
            }
            done.status = "done";
            done.result = reply(200, j);
          } catch (const std::exception& e) {
            done.status = "failed";
            done.result = error_reply(500, e.what());
          }
          std::lock_guard jl2(jobs_m);
          jobs[job_id] = std::move(done);
        });
      }
      return reply(202, {{"job_id", job_id}, {"status", "running"}});
    });
  }

  Response job(const std::string& id) {
    std::lock_guard lk(jobs_m);
    const auto it = jobs.find(id);
    if (it == jobs.end()) throw HttpError(404, "unknown job " + id);
    json j = {{"job_id", id}, {"status", it->second.status}};
    if (it->second.status != "running") {
      j["http_status"] = it->second.result.status;
      j["result"] = json::parse(it->second.result.body);
    }
    return reply(200, j);
  }

  Response accept(Session& s, const Request& r) {
    const json body = parse_body(r);
    std::lock_guard lk(s.m);
    require_lock(s, token_of(r, body));
    return idempotent(s, "accept", edit_token(r, body), [&] {
      if (!body.contains("proposal_id") || !body["proposal_id"].is_string())
        throw HttpError(422, "proposal_id is required");
      const auto it = s.proposals.find(body["proposal_id"].get<std::string>());
      if (it == s.proposals.end()) throw HttpError(404, "unknown proposal " + body["proposal_id"].get<std::string>());
      Diff d = make_diff(s.working, it->second.labels);
      const std::size_t changed = d.changes.size();
      s.working = it->second.labels;
      s.pre = it->second.pre;
      s.trk = it->second.trk;
      push_undo(s, std::move(d));
      return reply(200, {{"changed_points", changed}, {"instances", id_counts(s.working).size()}});
    });
  }

  // Point ids from the body, checked against the loaded frames.
  static std::vector<PointId> point_set(const Session& s, const json& body) {
    if (!body.contains("point_ids") || !body["point_ids"].is_array()) throw HttpError(422, "point_ids must be an array");
    std::set<PointId> ids;
    for (const auto& v : body["point_ids"]) {
      if (!v.is_number_unsigned()) throw HttpError(422, "point ids must be non-negative integers");
      const PointId p = v.get<PointId>();
      const auto f = point_id_frame(p);
      if (f >= s.working.frames.size() || point_id_index(p) >= s.working.frames[f].size())
        throw HttpError(422, "unknown point id " + std::to_string(p));
      ids.insert(p);
    }
    return {ids.begin(), ids.end()};
  }

  static std::uint32_t id_field(const json& body, const std::string& key) {
    if (!body.contains(key) || !body[key].is_number_unsigned() || body[key].get<std::uint64_t>() > 0xffffffffull)
      throw HttpError(422, key + " must be an instance id");
    return body[key].get<std::uint32_t>();
  }

  static std::uint32_t& label_at(Session& s, PointId p) {
    return s.working.frames[point_id_frame(p)][point_id_index(p)];
  }

  Response edit(Session& s, const Request& r) {
    const json body = parse_body(r);
    std::lock_guard lk(s.m);
    require_lock(s, token_of(r, body));
    return idempotent(s, "edits", edit_token(r, body), [&] {
      ensure_loaded(s);
      const std::string kind = body.value("kind", "");
      const auto counts = id_counts(s.working);
      auto must_exist = [&](std::uint32_t id) {
        if (id == 0 || !counts.contains(id)) throw HttpError(422, "unknown instance id " + std::to_string(id));
      };
      Diff d;
      auto set = [&](PointId p, std::uint32_t to) {
        auto& l = label_at(s, p);
        if (l != to) d.changes.emplace_back(p, l, to);
      };
      json extra = json::object();
      if (kind == "merge") {
        const auto a = id_field(body, "id_a"), b = id_field(body, "id_b");
        must_exist(a);
        must_exist(b);
        if (a == b) throw HttpError(422, "merge needs two different ids");
        for (std::size_t f = 0; f < s.working.frames.size(); ++f)
          for (std::size_t i = 0; i < s.working.frames[f].size(); ++i)
            if (s.working.frames[f][i] == b)
              set(make_point_id(static_cast<std::uint32_t>(f), static_cast<std::uint32_t>(i)), a);
      } else if (kind == "split") {
        const auto id = id_field(body, "id");
        must_exist(id);
        const auto pts = point_set(s, body);
        if (pts.empty()) throw HttpError(422, "split point set is empty");
        for (auto p : pts)
          if (label_at(s, p) != id) throw HttpError(422, "point " + std::to_string(p) + " is not in instance " + std::to_string(id));
        if (pts.size() >= counts.at(id)) throw HttpError(422, "split point set must be a strict subset of the instance");
        std::uint32_t to = max_id(s.working) + 1;
        if (body.contains("new_id")) {
          to = id_field(body, "new_id");
          if (to == 0 || counts.contains(to)) throw HttpError(422, "new_id must be a positive unused id");
        }
        for (auto p : pts) set(p, to);
        extra["new_id"] = to;
      } else if (kind == "reassign") {
        const auto to = id_field(body, "id");
        const auto pts = point_set(s, body);
        if (pts.empty()) throw HttpError(422, "reassign point set is empty");
        for (auto p : pts) set(p, to);
      } else if (kind == "delete") {
        const auto id = id_field(body, "id");
        must_exist(id);
        for (std::size_t f = 0; f < s.working.frames.size(); ++f)
          for (std::size_t i = 0; i < s.working.frames[f].size(); ++i)
            if (s.working.frames[f][i] == id)
              set(make_point_id(static_cast<std::uint32_t>(f), static_cast<std::uint32_t>(i)), 0);
      } else {
        throw HttpError(422, "edit kind must be merge, split, reassign or delete");
      }
      for (const auto& [p, before, after] : d.changes) label_at(s, p) = after;
      json out = {{"kind", kind}, {"changed_points", d.changes.size()}, {"diff", diff_json(d)}};
      out.update(extra);
      out["instances"] = id_counts(s.working).size();
      push_undo(s, std::move(d));
      return reply(200, out);
    });
  }

  Response undo(Session& s, const Request& r) {
    const json body = parse_body(r);
    std::lock_guard lk(s.m);
    require_lock(s, token_of(r, body));
    return idempotent(s, "undo", edit_token(r, body), [&] {
      if (s.undo.empty()) throw HttpError(409, "nothing to undo");
      Diff d = std::move(s.undo.back());
      s.undo.pop_back();
      for (auto it = d.changes.rbegin(); it != d.changes.rend(); ++it) label_at(s, std::get<0>(*it)) = std::get<1>(*it);
      s.dirty = true;
      return reply(200, {{"changed_points", d.changes.size()}, {"remaining", s.undo.size()}});
    });
  }

  // Writes every frame into a fresh directory, then swaps it in. A failure
  // before the swap leaves the previous labels untouched.
  Response save(Session& s, const Request& r) {
    const json body = parse_body(r);
    std::lock_guard lk(s.m);
    require_lock(s, token_of(r, body));
    return idempotent(s, "save", edit_token(r, body), [&] {
      ensure_loaded(s);
      const fs::path target = annotation_path(s.id);
      const fs::path tmp = opt.annotation_dir / ("." + s.id + ".tmp-" + random_token());
      const fs::path old = opt.annotation_dir / ("." + s.id + ".old-" + random_token());
      bool moved_old = false;
      try {
        fs::create_directories(opt.annotation_dir);
        io::write_label_dir(tmp, s.working);
        if (fs::exists(target)) {
          fs::rename(target, old);
          moved_old = true;
        }
        fs::rename(tmp, target);
      } catch (const std::exception& e) {
        std::error_code ec;
        fs::remove_all(tmp, ec);
        if (moved_old) fs::rename(old, target, ec);
        return error_reply(500, std::string("save failed: ") + e.what());
      }
      std::error_code ec;
      if (moved_old) fs::remove_all(old, ec);
      s.dirty = false;
      return reply(200, {{"saved_frames", s.working.frames.size()}, {"path", target.string()}});
    });
  }

  Response metrics(Session& s) {
    std::lock_guard lk(s.m);
    ensure_loaded(s);
    if (!s.seq->labels) throw HttpError(404, "no ground truth");
    if (id_counts(*s.seq->labels).empty()) throw HttpError(422, "ground truth has no instances");
    return reply(200, to_json(evaluate(*s.seq->labels, s.working)));
  }

  Response labels(Session& s, const Request& r) {
    std::lock_guard lk(s.m);
    ensure_loaded(s);
    const long long t = query_int(r, "t").value_or(0);
    if (t < 0 || t >= static_cast<long long>(s.working.frames.size())) throw HttpError(400, "t out of range");
    return reply(200, {{"t", t}, {"labels", s.working.frames[static_cast<std::size_t>(t)]}, {"dirty", s.dirty}});
  }

  Response route(const Request& r) {
    std::string path = r.path;
    if (path.rfind("/api/v1/", 0) == 0)
      path = path.substr(7);
    else if (path.rfind("/api/", 0) == 0)
      path = path.substr(4);
    else
      throw HttpError(404, "not found");
    std::vector<std::string> seg;
    std::stringstream ss(path);
    for (std::string part; std::getline(ss, part, '/');)
      if (!part.empty()) seg.push_back(part);
    const std::string& m = r.method;
    if (seg.size() == 1 && seg[0] == "health" && m == "GET") return reply(200, {{"ok", true}, {"api_version", 1}});
    if (seg.size() == 1 && seg[0] == "scenes" && m == "GET") return list_scenes();
    if (seg.size() == 2 && seg[0] == "jobs" && m == "GET") return job(seg[1]);
    if (seg.size() == 3 && seg[0] == "scenes") {
      auto s = session(seg[1]);
      const std::string& op = seg[2];
      if (op == "window" && m == "GET") return window(*s, r);
      if (op == "labels" && m == "GET") return labels(*s, r);
      if (op == "metrics" && m == "GET") return metrics(*s);
      if (op == "lock" && m == "POST") return lock(*s, r, false);
      if (op == "lock" && m == "DELETE") return lock(*s, r, true);
      if (op == "recluster" && m == "POST") return recluster(s, r);
      if (op == "accept" && m == "POST") return accept(*s, r);
      if (op == "edits" && m == "POST") return edit(*s, r);
      if (op == "undo" && m == "POST") return undo(*s, r);
      if (op == "save" && m == "POST") return save(*s, r);
    }
    throw HttpError(404, "not found");
  }
};

AnnotateService::AnnotateService(ServiceOptions options) : impl_(std::make_unique<Impl>()) {
  if (options.annotation_dir.empty()) options.annotation_dir = options.data_dir / "annotations";
  if (options.max_points < 1) throw ConfigError("max_points must be >= 1");
  impl_->opt = std::move(options);
}

AnnotateService::~AnnotateService() { wait_for_jobs(); }

void AnnotateService::wait_for_jobs() {
  for (;;) {
    std::vector<std::thread> batch;
    {
      std::lock_guard lk(impl_->jobs_m);
      batch.swap(impl_->workers);
    }
    if (batch.empty()) return;
    for (auto& t : batch) t.join();
  }
}

Response AnnotateService::handle(const Request& request) {
  try {
    return impl_->route(request);
  } catch (const HttpError& e) {
    return error_reply(e.status, e.what());
  } catch (const DataError& e) {
    return error_reply(422, e.what());
  } catch (const std::exception& e) {
    return error_reply(500, e.what());
  }
}

struct HttpFrontend::Impl {
  AnnotateService& svc;
  httplib::Server server;
  std::thread thread;
  explicit Impl(AnnotateService& s) : svc(s) {}
};

HttpFrontend::HttpFrontend(AnnotateService& service, std::filesystem::path static_dir)
    : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  if (!static_dir.empty() && !srv.set_mount_point("/", static_dir.string()))
    throw DataError("static directory " + static_dir.string() + " does not exist");
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    Request r;
    r.method = req.method;
    r.path = req.path;
    r.body = req.body;
    for (const auto& [k, v] : req.params) r.query[k] = v;
    for (const auto& [k, v] : req.headers) {
      std::string key = k;
      std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
      r.headers[key] = v;
    }
    const Response out = impl_->svc.handle(r);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  srv.Get("/api/.*", handler);
  srv.Post("/api/.*", handler);
  srv.Delete("/api/.*", handler);
}

HttpFrontend::~HttpFrontend() {
  stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int HttpFrontend::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpFrontend::listen() { impl_->server.listen_after_bind(); }

void HttpFrontend::start() {
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpFrontend::stop() { impl_->server.stop(); }

}  // namespace fmcw::service
