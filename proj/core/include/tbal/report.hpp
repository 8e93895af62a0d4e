#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "tbal/tbal.hpp"

namespace tbal {

struct ReportOptions {
  /// Wall-clock fields make output non-reproducible, so they are opt-in.
  bool include_timing = false;
};

/// One JSON object, no trailing newline. Infinite thresholds are written as
/// the string "inf"; absent errors as null.
std::string round_record_json(const RoundRecord& record, const ReportOptions& options = {});

/// Every round, one object per line.
void write_rounds_jsonl(std::ostream& out, const TbalReport& report,
                        const ReportOptions& options = {});

/// Final report document (without the per-point output listing).
std::string report_json(const TbalReport& report, const ReportOptions& options = {});

/// CSV: point_id,label,source,round
void write_output_labels(std::ostream& out, const TbalReport& report);

}  // namespace tbal
