#pragma once

#include "fmcw/metrics.hpp"

#include <nlohmann/json.hpp>

#include <span>
#include <string>

namespace fmcw {

nlohmann::json to_json(const EvalReport& r, bool per_frame = false);

struct TableRow {
  std::string label;
  EvalReport report;
};

/// Aligned text table with AS / MOTSA / MOTSP / SMOTSA scaled by 100, two
/// decimals. MOTSP prints "-" when undefined.
std::string format_table(std::span<const TableRow> rows, const std::string& first_header);

/// The same rows as JSON: [{label, AS, MOTSA, MOTSP, SMOTSA}], values x100.
nlohmann::json table_json(std::span<const TableRow> rows);

}  // namespace fmcw
