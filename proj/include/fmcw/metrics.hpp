#pragma once

#include "fmcw/core.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace fmcw {

struct TruePositive {
  std::uint32_t gt = 0;
  std::uint32_t pred = 0;
  double iou = 0.0;
};

struct FrameMatch {
  std::vector<TruePositive> tp;  // sorted by gt id
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t ids = 0;
  std::size_t gt_instances = 0;
};

// Last predicted id matched to each GT instance; drives ID-switch counting.
using TrackHistory = std::unordered_map<std::uint32_t, std::uint32_t>;

/// Matches predicted to GT instances inside one frame (IoU > 0.5). Updates
/// `history` and counts an ID switch whenever a GT instance is matched to a
/// predicted id different from the one it was last matched to.
FrameMatch match_frame(std::span<const std::uint32_t> gt, std::span<const std::uint32_t> pred,
                       TrackHistory& history);

struct MotsTotals {
  std::size_t tp = 0, fp = 0, fn = 0, ids = 0, gt_instances = 0;
  double iou_sum = 0.0;

  void add(const FrameMatch& m);
};

double motsa(const MotsTotals& t);
/// Mean IoU over true positives; 1.0 when there are none.
double motsp(const MotsTotals& t);
double smotsa(const MotsTotals& t);

/// Spacetime association score averaged over GT tubes.
double association_score(const InstanceLabeling& gt, const InstanceLabeling& pred);

struct EvalReport {
  double as = 0.0, motsa = 0.0, motsp = 0.0, smotsa = 0.0;
  MotsTotals totals;
  bool motsp_defined = true;  // false when there were no true positives
  std::vector<FrameMatch> per_frame;
};

/// Throws DataError on shape mismatch and Error("empty ground truth") when
/// the ground truth holds no moving instance.
EvalReport evaluate(const InstanceLabeling& gt, const InstanceLabeling& pred);

/// Merges per-sequence reports: MOTS counts are summed, AS is averaged over
/// all GT tubes of all sequences.
EvalReport merge_reports(std::span<const EvalReport> reports, std::span<const std::size_t> tube_counts);
std::size_t tube_count(const InstanceLabeling& gt);

}  // namespace fmcw
