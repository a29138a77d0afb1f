#include "fmcw/dataset_io.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fmcw::io {
namespace {

static_assert(sizeof(float) == 4);

template <typename T>
void put_le(std::vector<char>& out, T value) {
  static_assert(sizeof(T) == 4);
  std::uint32_t bits;
  std::memcpy(&bits, &value, 4);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

template <typename T>
T get_le(const char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  T value;
  std::memcpy(&value, &bits, 4);
  return value;
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    lines.push_back(line);
  }
  return lines;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void atomic_write(const fs::path& path, std::span<const char> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw Error("write failed for " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw Error("cannot move " + tmp.string() + " into place: " + ec.message());
  }
}

void atomic_write(const fs::path& path, const std::string& text) {
  atomic_write(path, std::span<const char>(text.data(), text.size()));
}

std::string frame_stem(std::size_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

void write_scan(const fs::path& path, std::span<const Point> points) {
  std::vector<char> bytes;
  bytes.reserve(points.size() * 16);
  for (const auto& p : points) {
    put_le(bytes, static_cast<float>(p.x()));
    put_le(bytes, static_cast<float>(p.y()));
    put_le(bytes, static_cast<float>(p.z()));
    put_le(bytes, static_cast<float>(p.v));
  }
  atomic_write(path, bytes);
}

std::vector<Point> read_scan(const fs::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() % 16 != 0) throw DataError("corrupt scan: " + path.string());
  std::vector<Point> points(bytes.size() / 16);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const char* p = bytes.data() + 16 * i;
    points[i] = Point(get_le<float>(p), get_le<float>(p + 4), get_le<float>(p + 8), get_le<float>(p + 12));
  }
  return points;
}

void write_poses(const fs::path& path, std::span<const Pose> poses) {
  std::string text;
  for (const auto& pose : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) text += format_double(pose.rotation()(r, c)) + ' ';
      text += format_double(pose.translation()[r]);
      text += r < 2 ? ' ' : '\n';
    }
  }
  atomic_write(path, text);
}

std::vector<Pose> read_poses(const fs::path& path) {
  std::vector<Pose> poses;
  const auto lines = read_lines(path);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::istringstream is(lines[ln]);
    std::vector<double> v;
    std::string tok;
    while (is >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw DataError(path.string() + " line " + std::to_string(ln + 1) + ": bad number '" + tok + "'");
      }
    }
    if (v.size() != 12)
      throw DataError(path.string() + " line " + std::to_string(ln + 1) + ": expected 12 values, got " +
                      std::to_string(v.size()));
    Mat3 r;
    Vec3 t;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) r(i, j) = v[static_cast<std::size_t>(4 * i + j)];
      t[i] = v[static_cast<std::size_t>(4 * i + 3)];
    }
    if (Pose::orthonormality_error(r) > 1e-6)
      throw DataError(path.string() + " line " + std::to_string(ln + 1) + ": rotation is not orthonormal");
    if (Pose::orthonormality_error(r) > 1e-9) {
      Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
      r = svd.matrixU() * svd.matrixV().transpose();
    }
    poses.emplace_back(r, t);
  }
  return poses;
}

void write_times(const fs::path& path, std::span<const double> times) {
  std::string text;
  for (double t : times) text += format_double(t) + '\n';
  atomic_write(path, text);
}

std::vector<double> read_times(const fs::path& path) {
  std::vector<double> times;
  const auto lines = read_lines(path);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    try {
      times.push_back(std::stod(lines[ln]));
    } catch (const std::exception&) {
      throw DataError(path.string() + " line " + std::to_string(ln + 1) + ": bad timestamp");
    }
  }
  return times;
}

void write_labels(const fs::path& path, std::span<const std::uint32_t> labels) {
  std::vector<char> bytes;
  bytes.reserve(labels.size() * 4);
  for (auto l : labels) put_le(bytes, l);
  atomic_write(path, bytes);
}

std::vector<std::uint32_t> read_labels(const fs::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() % 4 != 0) throw DataError("corrupt label file: " + path.string());
  std::vector<std::uint32_t> labels(bytes.size() / 4);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = get_le<std::uint32_t>(bytes.data() + 4 * i);
  return labels;
}

void write_label_dir(const fs::path& dir, const InstanceLabeling& labels) {
  fs::create_directories(dir);
  for (std::size_t f = 0; f < labels.frames.size(); ++f)
    write_labels(dir / (frame_stem(f) + ".label"), labels.frames[f]);
}

InstanceLabeling read_label_dir(const fs::path& dir, std::span<const Frame> frames, const fs::path& scan_dir) {
  InstanceLabeling out;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const fs::path p = dir / (frame_stem(f) + ".label");
    if (!fs::exists(p)) throw DataError("missing label file " + p.string());
    auto l = read_labels(p);
    if (l.size() != frames[f].size()) {
      const fs::path scan = scan_dir.empty() ? fs::path("scan " + frame_stem(f)) : scan_dir / (frame_stem(f) + ".bin");
      throw DataError("label file " + p.string() + " has " + std::to_string(l.size()) + " entries but " +
                      scan.string() + " has " + std::to_string(frames[f].size()) + " points");
    }
    out.frames.push_back(std::move(l));
  }
  return out;
}

void write_sequence(const fs::path& dir, std::span<const Frame> frames, const InstanceLabeling* labels,
                    const nlohmann::json& meta) {
  fs::create_directories(dir / "scans");
  std::vector<Pose> poses;
  std::vector<double> times;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    write_scan(dir / "scans" / (frame_stem(f) + ".bin"), frames[f].points);
    poses.push_back(frames[f].pose);
    times.push_back(frames[f].timestamp);
  }
  write_poses(dir / "poses.txt", poses);
  write_times(dir / "times.txt", times);
  if (labels) write_label_dir(dir / "labels", *labels);
  nlohmann::json m = meta;
  m["format_version"] = kFormatVersion;
  m["frames"] = frames.size();
  atomic_write(dir / "meta.json", m.dump(2) + "\n");
}

Sequence read_sequence(const fs::path& dir) {
  Sequence seq;
  seq.name = dir.filename().string();
  if (seq.name.empty()) seq.name = dir.parent_path().filename().string();
  if (!fs::is_directory(dir / "scans")) throw DataError("not a sequence directory: " + dir.string());
  const auto poses = read_poses(dir / "poses.txt");
  const auto times = read_times(dir / "times.txt");
  std::vector<fs::path> scans;
  for (const auto& e : fs::directory_iterator(dir / "scans"))
    if (e.path().extension() == ".bin") scans.push_back(e.path());
  std::sort(scans.begin(), scans.end());
  if (scans.size() != poses.size() || scans.size() != times.size())
    throw DataError(dir.string() + ": " + std::to_string(scans.size()) + " scans, " + std::to_string(poses.size()) +
                    " poses, " + std::to_string(times.size()) + " timestamps");
  for (std::size_t f = 0; f < scans.size(); ++f) {
    if (scans[f].filename() != frame_stem(f) + ".bin")
      throw DataError("scan files must be numbered consecutively from 000000: " + scans[f].string());
    if (f > 0 && !(times[f] > times[f - 1])) throw DataError(dir.string() + ": timestamps must strictly increase");
    Frame frame;
    frame.timestamp = times[f];
    frame.pose = poses[f];
    frame.points = read_scan(scans[f]);
    assign_point_ids(frame, static_cast<std::uint32_t>(f));
    seq.frames.push_back(std::move(frame));
  }
  if (fs::is_directory(dir / "labels")) seq.labels = read_label_dir(dir / "labels", seq.frames, dir / "scans");
  if (fs::exists(dir / "meta.json")) {
    std::ifstream in(dir / "meta.json");
    try {
      seq.meta = nlohmann::json::parse(in);
    } catch (const std::exception& e) {
      throw DataError(dir.string() + "/meta.json: " + e.what());
    }
  }
  return seq;
}

std::vector<fs::path> find_sequences(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("no such dataset directory: " + root.string());
  if (fs::is_directory(root / "scans")) return {root};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::is_directory(e.path() / "scans")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace fmcw::io
