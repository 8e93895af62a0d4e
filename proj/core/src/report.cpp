#include "tbal/report.hpp"

#include <cmath>
#include <ostream>

#include "json.hpp"

namespace tbal {
namespace {

using nlohmann::ordered_json;

ordered_json threshold_json(double t) {
  if (std::isinf(t)) return "inf";
  return t;
}

ordered_json optional_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

ordered_json round_json(const RoundRecord& r, const ReportOptions& options) {
  ordered_json j;
  j["round"] = r.round;
  j["n_train"] = r.n_train;
  j["n_val"] = r.n_val;
  j["n_cal"] = r.n_cal;
  j["n_th"] = r.n_th;
  auto thresholds = ordered_json::array();
  for (double t : r.thresholds.values) thresholds.push_back(threshold_json(t));
  j["thresholds"] = std::move(thresholds);
  auto classes = ordered_json::array();
  for (const auto& c : r.class_thresholds) {
    classes.push_back({{"label", c.label},
                       {"group_size", c.group_size},
                       {"threshold", threshold_json(c.threshold)},
                       {"selected", c.selected},
                       {"error", optional_json(c.error)},
                       {"std", c.std_error}});
  }
  j["class_thresholds"] = std::move(classes);
  if (r.colander_t_prime) j["colander_t_prime"] = *r.colander_t_prime;
  j["n_auto"] = r.n_auto;
  j["n_auto_wrong"] = r.n_auto_wrong;
  j["auto_error"] = optional_json(r.auto_error);
  j["auto_coverage"] = r.auto_coverage;
  j["n_queried"] = r.n_queried;
  j["pool_remaining"] = r.pool_remaining;
  j["n_val_next"] = r.n_val_next;
  j["warnings"] = r.warnings;
  if (options.include_timing) j["wall_seconds"] = r.wall_seconds;
  return j;
}

}  // namespace

std::string round_record_json(const RoundRecord& record, const ReportOptions& options) {
  return round_json(record, options).dump();
}

void write_rounds_jsonl(std::ostream& out, const TbalReport& report,
                        const ReportOptions& options) {
  for (const auto& r : report.rounds) out << round_record_json(r, options) << '\n';
}

std::string report_json(const TbalReport& report, const ReportOptions& options) {
  ordered_json j;
  j["initial_pool"] = report.initial_pool;
  j["human_seed"] = report.human_seed;
  j["human_active"] = report.human_active;
  j["auto_labeled"] = report.auto_labeled;
  j["n_train_final"] = report.n_train_final;
  j["output_size"] = report.output.size();
  j["final_error"] = optional_json(report.final_error);
  j["final_coverage"] = report.final_coverage;
  j["num_rounds"] = report.rounds.size();
  j["warnings"] = report.warnings;
  auto rounds = ordered_json::array();
  for (const auto& r : report.rounds) rounds.push_back(round_json(r, options));
  j["rounds"] = std::move(rounds);
  return j.dump(2);
}

void write_output_labels(std::ostream& out, const TbalReport& report) {
  out << "point_id,label,source,round\n";
  const auto& entries = report.output.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    out << report.output_ids[i] << ',' << e.label << ',' << to_string(e.source) << ','
        << e.round << '\n';
  }
}

}  // namespace tbal
