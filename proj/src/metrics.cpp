#include "fmcw/metrics.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <utility>

namespace fmcw {

FrameMatch match_frame(std::span<const std::uint32_t> gt, std::span<const std::uint32_t> pred,
                       TrackHistory& history) {
  if (gt.size() != pred.size()) throw DataError("label array length mismatch");
  std::map<std::uint32_t, std::size_t> gt_size, pred_size;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> inter;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] != 0) ++gt_size[gt[i]];
    if (pred[i] != 0) ++pred_size[pred[i]];
    if (gt[i] != 0 && pred[i] != 0) ++inter[{gt[i], pred[i]}];
  }

  FrameMatch m;
  m.gt_instances = gt_size.size();
  std::set<std::uint32_t> matched_pred;
  for (const auto& [key, count] : inter) {
    const auto [g, p] = key;
    const double uni = static_cast<double>(gt_size[g] + pred_size[p] - count);
    const double iou = static_cast<double>(count) / uni;
    if (iou > 0.5) {
      m.tp.push_back({g, p, iou});
      matched_pred.insert(p);
    }
  }
  m.fn = m.gt_instances - m.tp.size();
  m.fp = pred_size.size() - matched_pred.size();
  for (const auto& tp : m.tp) {
    auto it = history.find(tp.gt);
    if (it != history.end() && it->second != tp.pred) ++m.ids;
    history[tp.gt] = tp.pred;
  }
  return m;
}

void MotsTotals::add(const FrameMatch& m) {
  tp += m.tp.size();
  fp += m.fp;
  fn += m.fn;
  ids += m.ids;
  gt_instances += m.gt_instances;
  for (const auto& t : m.tp) iou_sum += t.iou;
}

double motsa(const MotsTotals& t) {
  if (t.gt_instances == 0) throw Error("empty ground truth");
  return (static_cast<double>(t.tp) - static_cast<double>(t.fp) - static_cast<double>(t.ids)) /
         static_cast<double>(t.gt_instances);
}

double motsp(const MotsTotals& t) {
  if (t.gt_instances == 0) throw Error("empty ground truth");
  return t.tp == 0 ? 1.0 : t.iou_sum / static_cast<double>(t.tp);
}

double smotsa(const MotsTotals& t) {
  if (t.gt_instances == 0) throw Error("empty ground truth");
  return (t.iou_sum - static_cast<double>(t.fp) - static_cast<double>(t.ids)) / static_cast<double>(t.gt_instances);
}

namespace {

void check_shapes(const InstanceLabeling& gt, const InstanceLabeling& pred) {
  if (gt.frames.size() != pred.frames.size()) throw DataError("label sequences differ in frame count");
  for (std::size_t f = 0; f < gt.frames.size(); ++f)
    if (gt.frames[f].size() != pred.frames[f].size())
      throw DataError("label array length mismatch in frame " + std::to_string(f));
}

}  // namespace

std::size_t tube_count(const InstanceLabeling& gt) {
  std::set<std::uint32_t> ids;
  for (const auto& f : gt.frames)
    for (auto id : f)
      if (id != 0) ids.insert(id);
  return ids.size();
}

double association_score(const InstanceLabeling& gt, const InstanceLabeling& pred) {
  check_shapes(gt, pred);
  std::map<std::uint32_t, std::size_t> gt_size, pred_size;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> inter;
  for (std::size_t f = 0; f < gt.frames.size(); ++f) {
    const auto& g = gt.frames[f];
    const auto& p = pred.frames[f];
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g[i] != 0) ++gt_size[g[i]];
      if (p[i] != 0) ++pred_size[p[i]];
      if (g[i] != 0 && p[i] != 0) ++inter[{g[i], p[i]}];
    }
  }
  if (gt_size.empty()) throw Error("empty ground truth");

  std::map<std::uint32_t, double> per_tube;
  for (const auto& [key, count] : inter) {
    const auto [g, p] = key;
    const double c = static_cast<double>(count);
    const double iou = c / static_cast<double>(gt_size[g] + pred_size[p] - count);
    per_tube[g] += c * iou;
  }
  double sum = 0.0;
  for (const auto& [g, size] : gt_size) sum += per_tube[g] / static_cast<double>(size);
  return sum / static_cast<double>(gt_size.size());
}

EvalReport evaluate(const InstanceLabeling& gt, const InstanceLabeling& pred) {
  check_shapes(gt, pred);
  EvalReport r;
  TrackHistory history;
  for (std::size_t f = 0; f < gt.frames.size(); ++f) {
    r.per_frame.push_back(match_frame(gt.frames[f], pred.frames[f], history));
    r.totals.add(r.per_frame.back());
  }
  r.motsa = motsa(r.totals);
  r.motsp = motsp(r.totals);
  r.smotsa = smotsa(r.totals);
  r.motsp_defined = r.totals.tp > 0;
  r.as = association_score(gt, pred);
  return r;
}

EvalReport merge_reports(std::span<const EvalReport> reports, std::span<const std::size_t> tube_counts) {
  EvalReport out;
  double as_weighted = 0.0;
  std::size_t tubes = 0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    out.totals.tp += r.totals.tp;
    out.totals.fp += r.totals.fp;
    out.totals.fn += r.totals.fn;
    out.totals.ids += r.totals.ids;
    out.totals.gt_instances += r.totals.gt_instances;
    out.totals.iou_sum += r.totals.iou_sum;
    as_weighted += r.as * static_cast<double>(tube_counts[i]);
    tubes += tube_counts[i];
  }
  if (tubes == 0) throw Error("empty ground truth");
  out.as = as_weighted / static_cast<double>(tubes);
  out.motsa = motsa(out.totals);
  out.motsp = motsp(out.totals);
  out.smotsa = smotsa(out.totals);
  out.motsp_defined = out.totals.tp > 0;
  return out;
}

}  // namespace fmcw
