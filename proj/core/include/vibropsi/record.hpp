#pragma once

// Versioned JSON session records and the shared config document format.
//
// Record layout (field names snake_case; separations in mm, times in ms):
//   schema_version, session_id, tsid, phase, abort_reason, config,
//   first_orientation, alignment, trials[], voided_trials[], practice_trials[],
//   selection_trace[], postmean{params_expectation, curve_samples},
//   bias_report, timestamps
// Stored at <data_dir>/<tsid>/<session_id>.json.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vibropsi/protocol.hpp"

namespace vibropsi {

using Json = nlohmann::ordered_json;

inline constexpr int kRecordSchemaVersion = 1;

struct RecordTimestamps {
  std::optional<std::string> created_utc;
  std::optional<std::string> finished_utc;
  double device_start_ms = 0.0;
  double device_end_ms = 0.0;

  bool operator==(const RecordTimestamps&) const = default;
};

struct SessionRecord {
  int schema_version = kRecordSchemaVersion;
  std::string session_id;
  std::string tsid;
  Phase phase = Phase::kBetweenTrials;
  std::string abort_reason;
  SessionConfig config;
  Orientation first_orientation = Orientation::kHorizontal;
  AlignmentReport alignment;
  std::vector<TrialRecord> trials;
  std::vector<VoidedTrial> voided;
  std::vector<TrialRecord> practice;
  std::vector<SelectionTrace> selection_trace;
  std::optional<Postmean> postmean;
  std::optional<BiasReport> bias_report;
  RecordTimestamps timestamps;
};

/// Identifiers used in paths: 1-64 chars of [A-Za-z0-9_.-], not starting
/// with '.'.
bool is_safe_identifier(std::string_view id);

Json to_json(const GridConfig& g);
Json to_json(const ApparatusConfig& a);
Json to_json(const SessionConfig& c);
Json to_json(const ObserverModel& m);
Json to_json(const TrialRecord& t);
Json to_json(const BiasReport& b);
Json to_json(const AlignmentReport& r);
Json to_json(const CurveSamples& c);
Json to_json(const Postmean& p);
Json to_json(const SessionRecord& r);

/// Parsers throw Error(kInvalidArgument) on missing/mistyped fields and, when
/// `strict`, on unknown fields. Absent optional fields take their defaults.
GridConfig grid_config_from_json(const Json& j, bool strict = true);
ApparatusConfig apparatus_config_from_json(const Json& j, bool strict = true);
SessionConfig session_config_from_json(const Json& j, bool strict = true);
ObserverModel observer_from_json(const Json& j, bool strict = true);
CurveSamples curve_from_json(const Json& j);
SessionRecord record_from_json(const Json& j);

/// Pretty-printed (2-space) document with a trailing newline.
std::string serialize_record(const SessionRecord& r);
SessionRecord parse_record(std::string_view text);

std::filesystem::path record_path(const std::filesystem::path& data_dir, const std::string& tsid,
                                  const std::string& session_id);

/// Writes via a temporary file and rename; returns the final path.
std::filesystem::path write_record(const SessionRecord& r, const std::filesystem::path& data_dir);
SessionRecord read_record(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace vibropsi
