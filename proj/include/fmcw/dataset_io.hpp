#pragma once

#include "fmcw/core.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fmcw::io {

namespace fs = std::filesystem;

inline constexpr int kFormatVersion = 1;

// Scans: little-endian float32 records [x, y, z, v], no header.
void write_scan(const fs::path& path, std::span<const Point> points);
std::vector<Point> read_scan(const fs::path& path);

// Poses: one line per frame, 12 numbers, row-major [R | t].
void write_poses(const fs::path& path, std::span<const Pose> poses);
std::vector<Pose> read_poses(const fs::path& path);

void write_times(const fs::path& path, std::span<const double> times);
std::vector<double> read_times(const fs::path& path);

// Labels: little-endian uint32 per point, scan order.
void write_labels(const fs::path& path, std::span<const std::uint32_t> labels);
std::vector<std::uint32_t> read_labels(const fs::path& path);

/// Writes bytes to a sibling temp file and renames it over `path`.
void atomic_write(const fs::path& path, std::span<const char> bytes);
void atomic_write(const fs::path& path, const std::string& text);

std::string frame_stem(std::size_t index);  // "000042"

struct Sequence {
  std::string name;
  std::vector<Frame> frames;
  std::optional<InstanceLabeling> labels;  // ground truth, when present
  nlohmann::json meta = nlohmann::json::object();
};

/// Writes the full layout: scans/, poses.txt, times.txt, labels/ (when given)
/// and meta.json.
void write_sequence(const fs::path& dir, std::span<const Frame> frames, const InstanceLabeling* labels,
                    const nlohmann::json& meta);
/// Reads a sequence directory; labels are loaded from `labels/` when present.
Sequence read_sequence(const fs::path& dir);

/// Writes `<dir>/NNNNNN.label` for every frame.
void write_label_dir(const fs::path& dir, const InstanceLabeling& labels);
/// Reads `<dir>/NNNNNN.label`, checking each against the scan sizes.
InstanceLabeling read_label_dir(const fs::path& dir, std::span<const Frame> frames,
                                const fs::path& scan_dir = {});

/// `root` itself when it is a sequence directory, otherwise its sequence
/// subdirectories in name order.
std::vector<fs::path> find_sequences(const fs::path& root);

}  // namespace fmcw::io
