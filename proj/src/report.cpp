#include "fmcw/report.hpp"

#include <algorithm>
#include <cstdio>

namespace fmcw {

using nlohmann::json;

json to_json(const EvalReport& r, bool per_frame) {
  json j = {{"AS", r.as},
            {"MOTSA", r.motsa},
            {"MOTSP", r.motsp_defined ? json(r.motsp) : json(nullptr)},
            {"SMOTSA", r.smotsa},
            {"TP", r.totals.tp},
            {"FP", r.totals.fp},
            {"FN", r.totals.fn},
            {"IDS", r.totals.ids},
            {"gt_instances", r.totals.gt_instances},
            {"motsa_denominator", "per-frame ground-truth instance count"}};
  if (per_frame) {
    json frames = json::array();
    for (const auto& m : r.per_frame)
      frames.push_back({{"tp", m.tp.size()}, {"fp", m.fp}, {"fn", m.fn}, {"ids", m.ids}, {"gt", m.gt_instances}});
    j["per_frame"] = std::move(frames);
  }
  return j;
}

namespace {

std::string cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

std::string format_table(std::span<const TableRow> rows, const std::string& first_header) {
  std::size_t w = first_header.size();
  for (const auto& r : rows) w = std::max(w, r.label.size());
  auto pad = [](std::string s, std::size_t n, bool left) {
    if (s.size() < n) s = left ? s + std::string(n - s.size(), ' ') : std::string(n - s.size(), ' ') + s;
    return s;
  };
  std::string out = pad(first_header, w, true);
  for (const char* h : {"AS", "MOTSA", "MOTSP", "SMOTSA"}) out += "  " + pad(h, 7, false);
  out += "\n";
  for (const auto& r : rows) {
    out += pad(r.label, w, true);
    const auto& e = r.report;
    for (const std::string& c : {cell(e.as), cell(e.motsa), e.motsp_defined ? cell(e.motsp) : std::string("-"),
                                 cell(e.smotsa)})
      out += "  " + pad(c, 7, false);
    out += "\n";
  }
  return out;
}

json table_json(std::span<const TableRow> rows) {
  json j = json::array();
  for (const auto& r : rows)
    j.push_back({{"label", r.label},
                 {"AS", 100.0 * r.report.as},
                 {"MOTSA", 100.0 * r.report.motsa},
                 {"MOTSP", r.report.motsp_defined ? json(100.0 * r.report.motsp) : json(nullptr)},
                 {"SMOTSA", 100.0 * r.report.smotsa}});
  return j;
}

}  // namespace fmcw
