#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>

namespace fmcw::service {

struct ServiceOptions {
  std::filesystem::path data_dir;        // dataset root: one sequence or a directory of sequences
  std::filesystem::path annotation_dir;  // saved working labels; default <data_dir>/annotations
  std::size_t max_points = 200000;       // window responses are decimated to at most this
  std::chrono::seconds lease{300};       // write lock lease
  std::size_t undo_depth = 100;
  double hue_v_min = -30.0;              // Doppler range mapped onto hue 0..240 degrees
  double hue_v_max = 30.0;
  std::function<std::chrono::steady_clock::time_point()> clock;  // default steady_clock::now
};

struct Request {
  std::string method;  // GET, POST, DELETE
  std::string path;    // e.g. /api/v1/scenes/highway_0/window
  std::map<std::string, std::string> query;
  std::map<std::string, std::string> headers;  // lower-case names
  std::string body;
};

struct Response {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

/// Annotation backend: scene listing, aligned windows, write locks,
/// re-cluster proposals, label edits with undo, saving and metrics. Routes
/// live under /api and /api/v1. Transport independent; HttpFrontend binds it
/// to a socket.
class AnnotateService {
 public:
  explicit AnnotateService(ServiceOptions options);
  ~AnnotateService();
  AnnotateService(const AnnotateService&) = delete;
  AnnotateService& operator=(const AnnotateService&) = delete;

  Response handle(const Request& request);
  /// Blocks until every background re-cluster job has finished.
  void wait_for_jobs();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

class HttpFrontend {
 public:
  /// Serves `service` and, when `static_dir` is set, the files below it.
  explicit HttpFrontend(AnnotateService& service, std::filesystem::path static_dir = {});
  ~HttpFrontend();

  /// Binds the socket; port 0 picks a free one. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves on the bound socket until stop().
  void listen();
  /// listen() on a background thread.
  void start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace fmcw::service
