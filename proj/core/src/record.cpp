#include "vibropsi/record.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <system_error>

#include "vibropsi/error.hpp"

namespace vibropsi {

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); }

/// Field access over one JSON object that remembers which keys were read, so
/// unknown keys can be rejected afterwards.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string context, bool strict)
      : j_(j), context_(std::move(context)), strict_(strict) {
    if (!j_.is_object()) bad(context_ + " must be a JSON object");
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const Json& at(const char* key) {
    if (!has(key)) bad(context_ + "." + key + " is required");
    return j_.at(key);
  }

  double number(const char* key) {
    const Json& v = at(key);
    if (!v.is_number()) bad(context_ + "." + key + " must be a number");
    return v.get<double>();
  }
  double number(const char* key, double fallback) { return has(key) ? number(key) : fallback; }

  long long integer(const char* key) {
    const Json& v = at(key);
    if (!v.is_number_integer()) bad(context_ + "." + key + " must be an integer");
    return v.get<long long>();
  }
  long long integer(const char* key, long long fallback) {
    return has(key) ? integer(key) : fallback;
  }

  std::uint64_t uint(const char* key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::uint64_t>(v.get<long long>());
    bad(context_ + "." + key + " must be a non-negative integer");
  }

  bool boolean(const char* key, bool fallback) {
    if (!has(key)) return fallback;
    const Json& v = j_.at(key);
    if (!v.is_boolean()) bad(context_ + "." + key + " must be a boolean");
    return v.get<bool>();
  }

  std::string string(const char* key) {
    const Json& v = at(key);
    if (!v.is_string()) bad(context_ + "." + key + " must be a string");
    return v.get<std::string>();
  }
  std::string string(const char* key, const std::string& fallback) {
    return has(key) ? string(key) : fallback;
  }
  std::optional<std::string> opt_string(const char* key) {
    if (!has(key)) return std::nullopt;
    return string(key);
  }
  std::optional<double> opt_number(const char* key) {
    if (!has(key)) return std::nullopt;
    return number(key);
  }

  std::vector<double> numbers(const char* key) {
    const Json& v = at(key);
    if (!v.is_array()) bad(context_ + "." + key + " must be an array");
    std::vector<double> out;
    out.reserve(v.size());
    for (const Json& e : v) {
      if (!e.is_number()) bad(context_ + "." + key + " must contain numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  const Json& array(const char* key) {
    const Json& v = at(key);
    if (!v.is_array()) bad(context_ + "." + key + " must be an array");
    return v;
  }

  void finish() const {
    if (!strict_) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) bad("unknown field " + context_ + "." + it.key());
    }
  }

  const std::string& context() const { return context_; }

 private:
  const Json& j_;
  std::string context_;
  bool strict_;
  std::set<std::string> seen_;
};

Json opt(const std::optional<std::string>& s) { return s ? Json(*s) : Json(nullptr); }
Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json to_json_trial(const TrialRecord& t) {
  Json j;
  j["index"] = t.index;
  j["block"] = t.block;
  j["orientation"] = to_string(t.orientation);
  j["separation_mm"] = t.separation;
  j["achieved_separation_mm"] = t.achieved_separation;
  j["contact_force_n"] = t.contact_force;
  j["target"] = to_string(t.target);
  j["response"] = to_string(t.response);
  j["correct"] = t.correct;
  j["response_time_ms"] = t.response_time_ms;
  j["intensity_duties"] = t.intensity_duties;
  j["stimulus_onset_ms"] = t.stimulus_onset_ms;
  j["client_timestamp"] = opt(t.client_timestamp);
  return j;
}

TrialRecord trial_from_json(const Json& j) {
  ObjectReader r(j, "trial", false);
  TrialRecord t;
  t.index = static_cast<int>(r.integer("index"));
  t.block = static_cast<int>(r.integer("block"));
  t.orientation = orientation_from_string(r.string("orientation"));
  t.separation = r.number("separation_mm");
  t.achieved_separation = r.number("achieved_separation_mm", t.separation);
  t.contact_force = r.number("contact_force_n", 0.0);
  t.target = choice_from_string(r.string("target"));
  t.response = choice_from_string(r.string("response"));
  t.correct = r.boolean("correct", t.response == t.target);
  t.response_time_ms = r.number("response_time_ms");
  if (r.has("intensity_duties")) t.intensity_duties = r.numbers("intensity_duties");
  t.stimulus_onset_ms = r.number("stimulus_onset_ms", 0.0);
  t.client_timestamp = r.opt_string("client_timestamp");
  return t;
}

}  // namespace

bool is_safe_identifier(std::string_view id) {
  if (id.empty() || id.size() > 64 || id.front() == '.') return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '-' || c == '.';
    if (!ok) return false;
  }
  return true;
}

Json to_json(const GridConfig& g) {
  Json j;
  j["a_min"] = g.a_min;
  j["a_max"] = g.a_max;
  j["a_count"] = g.a_count;
  j["b_min"] = g.b_min;
  j["b_max"] = g.b_max;
  j["b_count"] = g.b_count;
  j["b_spacing"] = g.b_spacing == SlopeSpacing::kLog ? "log" : "linear";
  j["gamma_min"] = g.gamma_min;
  j["gamma_max"] = g.gamma_max;
  j["gamma_count"] = g.gamma_count;
  j["delta"] = g.delta;
  return j;
}

GridConfig grid_config_from_json(const Json& j, bool strict) {
  ObjectReader r(j, "grid", strict);
  GridConfig g;
  g.a_min = r.number("a_min", g.a_min);
  g.a_max = r.number("a_max", g.a_max);
  g.a_count = static_cast<int>(r.integer("a_count", g.a_count));
  g.b_min = r.number("b_min", g.b_min);
  g.b_max = r.number("b_max", g.b_max);
  g.b_count = static_cast<int>(r.integer("b_count", g.b_count));
  const std::string spacing = r.string("b_spacing", "linear");
  if (spacing == "linear") {
    g.b_spacing = SlopeSpacing::kLinear;
  } else if (spacing == "log") {
    g.b_spacing = SlopeSpacing::kLog;
  } else {
    bad("grid.b_spacing must be 'linear' or 'log'");
  }
  g.gamma_min = r.number("gamma_min", g.gamma_min);
  g.gamma_max = r.number("gamma_max", g.gamma_max);
  g.gamma_count = static_cast<int>(r.integer("gamma_count", g.gamma_count));
  g.delta = r.number("delta", g.delta);
  r.finish();
  return g;
}

Json to_json(const ApparatusConfig& a) {
  Json j;
  j["separation_min_mm"] = a.separation_min;
  j["separation_max_mm"] = a.separation_max;
  j["separation_tolerance_mm"] = a.separation_tolerance;
  j["contact_force_n"] = a.contact_force;
  j["force_tolerance"] = a.force_tolerance;
  j["burst_duration_ms"] = a.burst_duration_ms;
  j["nominal_frequency_hz"] = a.nominal_frequency_hz;
  j["tip_diameter_mm"] = a.tip_diameter;
  return j;
}

ApparatusConfig apparatus_config_from_json(const Json& j, bool strict) {
  ObjectReader r(j, "apparatus", strict);
  ApparatusConfig a;
  a.separation_min = r.number("separation_min_mm", a.separation_min);
  a.separation_max = r.number("separation_max_mm", a.separation_max);
  a.separation_tolerance = r.number("separation_tolerance_mm", a.separation_tolerance);
  a.contact_force = r.number("contact_force_n", a.contact_force);
  a.force_tolerance = r.number("force_tolerance", a.force_tolerance);
  a.burst_duration_ms = r.number("burst_duration_ms", a.burst_duration_ms);
  a.nominal_frequency_hz = r.number("nominal_frequency_hz", a.nominal_frequency_hz);
  a.tip_diameter = r.number("tip_diameter_mm", a.tip_diameter);
  r.finish();
  return a;
}

Json to_json(const SessionConfig& c) {
  Json j;
  j["task"] = to_string(c.task);
  j["trials_per_block"] = c.trials_per_block;
  j["tsid"] = c.tsid;
  j["seed"] = c.seed;
  j["grid"] = to_json(c.grid);
  j["candidates_mm"] = c.candidates.separations;
  j["apparatus"] = to_json(c.apparatus);
  j["first_orientation"] = to_string(c.first_orientation);
  j["mean_duty"] = c.mean_duty;
  j["duty_sd"] = c.duty_sd;
  j["inter_stimulus_ms"] = c.inter_stimulus_ms;
  j["response_timeout_ms"] = opt(c.response_timeout_ms);
  j["reveal_feedback"] = c.reveal_feedback;
  j["alpha"] = c.alpha;
  return j;
}

SessionConfig session_config_from_json(const Json& j, bool strict) {
  ObjectReader r(j, "session", strict);
  SessionConfig c;
  c.task = task_from_string(r.string("task", "VT2PD"));
  c.trials_per_block = static_cast<int>(r.integer("trials_per_block", c.trials_per_block));
  c.tsid = r.string("tsid");
  c.seed = r.uint("seed", c.seed);
  if (r.has("grid")) c.grid = grid_config_from_json(r.at("grid"), strict);
  if (r.has("candidates_mm")) c.candidates.separations = r.numbers("candidates_mm");
  if (r.has("apparatus")) c.apparatus = apparatus_config_from_json(r.at("apparatus"), strict);
  c.first_orientation = first_orientation_from_string(r.string("first_orientation", "RANDOM"));
  c.mean_duty = r.number("mean_duty", c.mean_duty);
  c.duty_sd = r.number("duty_sd", c.duty_sd);
  c.inter_stimulus_ms = r.number("inter_stimulus_ms", c.inter_stimulus_ms);
  c.response_timeout_ms = r.opt_number("response_timeout_ms");
  c.reveal_feedback = r.boolean("reveal_feedback", c.reveal_feedback);
  c.alpha = r.number("alpha", c.alpha);
  r.finish();
  return c;
}

Json to_json(const ObserverModel& m) {
  Json j;
  j["kind"] = to_string(m.kind);
  switch (m.kind) {
    case ObserverKind::kIdeal:
      j["truth"] = {{"a", m.truth.a}, {"b", m.truth.b}, {"gamma", m.truth.gamma},
                    {"delta", m.truth.delta}};
      break;
    case ObserverKind::kFlat: j["flat_rate"] = m.flat_rate; break;
    case ObserverKind::kSideBiased:
      j["bias_side"] = m.bias_side;
      j["bias_strength"] = m.bias_strength;
      break;
    case ObserverKind::kCustom: j["custom_curve"] = to_json(m.custom_curve); break;
  }
  Json rt;
  rt["median_ms"] = m.rt.median_ms;
  rt["sigma"] = m.rt.sigma;
  rt["preferred_median_ms"] = opt(m.rt.preferred_median_ms);
  j["rt"] = rt;
  return j;
}

ObserverModel observer_from_json(const Json& j, bool strict) {
  ObjectReader r(j, "observer", strict);
  ObserverModel m;
  m.kind = observer_kind_from_string(r.string("kind"));
  if (r.has("truth")) {
    ObjectReader t(r.at("truth"), "observer.truth", strict);
    m.truth.a = t.number("a");
    m.truth.b = t.number("b");
    m.truth.gamma = t.number("gamma");
    m.truth.delta = t.number("delta", 0.02);
    t.finish();
  }
  m.flat_rate = r.number("flat_rate", m.flat_rate);
  m.bias_side = static_cast<int>(r.integer("bias_side", m.bias_side));
  m.bias_strength = r.number("bias_strength", m.bias_strength);
  if (r.has("custom_curve")) m.custom_curve = curve_from_json(r.at("custom_curve"));
  if (r.has("rt")) {
    ObjectReader t(r.at("rt"), "observer.rt", strict);
    m.rt.median_ms = t.number("median_ms", m.rt.median_ms);
    m.rt.sigma = t.number("sigma", m.rt.sigma);
    m.rt.preferred_median_ms = t.opt_number("preferred_median_ms");
    t.finish();
  }
  r.finish();
  m.validate();
  return m;
}

Json to_json(const TrialRecord& t) { return to_json_trial(t); }

Json to_json(const BiasReport& b) {
  Json j;
  j["alpha"] = b.alpha;
  j["side_counts"] = b.side_counts;
  j["binomial_p"] = b.binomial_p;
  if (b.rt_test) {
    const double t = b.rt_test->t;
    j["rt_test"] = {{"t", std::isfinite(t) ? Json(t) : Json(t > 0 ? "inf" : "-inf")},
                    {"df", b.rt_test->df},
                    {"p", b.rt_test->p},
                    {"degenerate", b.rt_test->degenerate}};
  } else {
    j["rt_test"] = nullptr;
  }
  j["rt_test_p"] = b.rt_test_p;
  Json rows = Json::array();
  for (const auto& row : b.per_separation) {
    rows.push_back({{"separation_mm", row.separation},
                    {"trials", row.trials},
                    {"responses", row.responses},
                    {"targets", row.targets},
                    {"correct", row.correct}});
  }
  j["per_separation"] = rows;
  Json flags = Json::array();
  for (BiasFlag f : b.flags) flags.push_back(to_string(f));
  j["flags"] = flags;
  j["excluded"] = b.excluded;
  return j;
}

namespace {

std::array<int, 2> int_pair(const Json& v, const std::string& what) {
  if (!v.is_array() || v.size() != 2) bad(what + " must be a two-element array");
  return {v[0].get<int>(), v[1].get<int>()};
}

double finite_or_inf(const Json& v) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    bad("unexpected numeric string '" + s + "'");
  }
  return v.get<double>();
}

BiasReport bias_from_json(const Json& j) {
  ObjectReader r(j, "bias_report", false);
  BiasReport b;
  b.alpha = r.number("alpha", b.alpha);
  b.side_counts = int_pair(r.at("side_counts"), "bias_report.side_counts");
  b.binomial_p = r.number("binomial_p");
  if (r.has("rt_test")) {
    const Json& t = r.at("rt_test");
    stats::TTestResult res;
    res.t = finite_or_inf(t.at("t"));
    res.df = t.at("df").get<double>();
    res.p = t.at("p").get<double>();
    res.degenerate = t.at("degenerate").get<bool>();
    b.rt_test = res;
  }
  b.rt_test_p = r.number("rt_test_p", 1.0);
  if (r.has("per_separation")) {
    for (const Json& row : r.array("per_separation")) {
      SeparationSideRow s;
      s.separation = row.at("separation_mm").get<double>();
      s.trials = row.at("trials").get<int>();
      s.responses = int_pair(row.at("responses"), "responses");
      s.targets = int_pair(row.at("targets"), "targets");
      s.correct = int_pair(row.at("correct"), "correct");
      b.per_separation.push_back(s);
    }
  }
  if (r.has("flags")) {
    for (const Json& f : r.array("flags")) b.flags.push_back(bias_flag_from_string(f.get<std::string>()));
  }
  b.excluded = r.boolean("excluded", !b.flags.empty());
  return b;
}

}  // namespace

Json to_json(const AlignmentReport& rep) {
  Json steps = Json::array();
  for (const auto& s : rep.steps) {
    steps.push_back({{"target_mm", s.target},
                     {"achieved_separation_mm", s.achieved_separation},
                     {"force_n", s.force},
                     {"within_tolerance", s.within_tolerance}});
  }
  return {{"passed", rep.passed}, {"steps", steps}};
}

namespace {

AlignmentReport alignment_from_json(const Json& j) {
  AlignmentReport rep;
  rep.passed = j.at("passed").get<bool>();
  for (const Json& s : j.at("steps")) {
    rep.steps.push_back({s.at("target_mm").get<double>(), s.at("achieved_separation_mm").get<double>(),
                         s.at("force_n").get<double>(), s.at("within_tolerance").get<bool>()});
  }
  return rep;
}

}  // namespace

Json to_json(const CurveSamples& c) {
  Json j;
  j["separation_mm"] = c.x;
  j["recognition_rate"] = c.y;
  j["se"] = c.se ? Json(*c.se) : Json(nullptr);
  return j;
}

CurveSamples curve_from_json(const Json& j) {
  ObjectReader r(j, "curve", false);
  CurveSamples c;
  c.x = r.numbers("separation_mm");
  c.y = r.numbers("recognition_rate");
  if (r.has("se")) c.se = r.numbers("se");
  c.validate();
  return c;
}

Json to_json(const Postmean& p) {
  Json j;
  j["params_expectation"] = {{"a", p.expected_a}, {"b", p.expected_b}, {"gamma", p.expected_gamma}};
  j["curve_samples"] = to_json(p.curve);
  return j;
}

Json to_json(const SessionRecord& r) {
  Json j;
  j["schema_version"] = r.schema_version;
  j["session_id"] = r.session_id;
  j["tsid"] = r.tsid;
  j["phase"] = to_string(r.phase);
  j["abort_reason"] = r.abort_reason.empty() ? Json(nullptr) : Json(r.abort_reason);
  j["config"] = to_json(r.config);
  j["first_orientation"] = to_string(r.first_orientation);
  j["alignment"] = to_json(r.alignment);
  Json trials = Json::array();
  for (const auto& t : r.trials) trials.push_back(to_json_trial(t));
  j["trials"] = trials;
  Json voided = Json::array();
  for (const auto& v : r.voided) {
    voided.push_back({{"attempt", v.attempt},
                      {"block", v.block},
                      {"separation_mm", v.separation},
                      {"reason", v.reason}});
  }
  j["voided_trials"] = voided;
  Json practice = Json::array();
  for (const auto& t : r.practice) practice.push_back(to_json_trial(t));
  j["practice_trials"] = practice;
  Json trace = Json::array();
  for (const auto& s : r.selection_trace) {
    trace.push_back({{"separation_mm", s.separation},
                     {"entropy_before", s.entropy_before},
                     {"expected_entropy", s.expected_entropy},
                     {"entropy_after", s.entropy_after}});
  }
  j["selection_trace"] = trace;
  j["postmean"] = r.postmean ? to_json(*r.postmean) : Json(nullptr);
  j["bias_report"] = r.bias_report ? to_json(*r.bias_report) : Json(nullptr);
  j["timestamps"] = {{"created_utc", opt(r.timestamps.created_utc)},
                     {"finished_utc", opt(r.timestamps.finished_utc)},
                     {"device_start_ms", r.timestamps.device_start_ms},
                     {"device_end_ms", r.timestamps.device_end_ms}};
  return j;
}

SessionRecord record_from_json(const Json& j) {
  ObjectReader r(j, "record", false);
  SessionRecord rec;
  rec.schema_version = static_cast<int>(r.integer("schema_version"));
  if (rec.schema_version > kRecordSchemaVersion) {
    bad("record schema_version " + std::to_string(rec.schema_version) + " is newer than supported");
  }
  rec.session_id = r.string("session_id");
  rec.tsid = r.string("tsid");
  rec.phase = phase_from_string(r.string("phase"));
  rec.abort_reason = r.string("abort_reason", "");
  rec.config = session_config_from_json(r.at("config"), false);
  rec.first_orientation = orientation_from_string(r.string("first_orientation", "HORIZONTAL"));
  if (r.has("alignment")) rec.alignment = alignment_from_json(r.at("alignment"));
  for (const Json& t : r.array("trials")) rec.trials.push_back(trial_from_json(t));
  if (r.has("voided_trials")) {
    for (const Json& v : r.array("voided_trials")) {
      rec.voided.push_back({v.at("attempt").get<int>(), v.at("block").get<int>(),
                            v.at("separation_mm").get<double>(), v.at("reason").get<std::string>()});
    }
  }
  if (r.has("practice_trials")) {
    for (const Json& t : r.array("practice_trials")) rec.practice.push_back(trial_from_json(t));
  }
  if (r.has("selection_trace")) {
    for (const Json& s : r.array("selection_trace")) {
      rec.selection_trace.push_back({s.at("separation_mm").get<double>(),
                                     s.at("entropy_before").get<double>(),
                                     s.at("expected_entropy").get<double>(),
                                     s.at("entropy_after").get<double>()});
    }
  }
  if (r.has("postmean")) {
    const Json& pm = r.at("postmean");
    Postmean p;
    const Json& e = pm.at("params_expectation");
    p.expected_a = e.at("a").get<double>();
    p.expected_b = e.at("b").get<double>();
    p.expected_gamma = e.at("gamma").get<double>();
    p.curve = curve_from_json(pm.at("curve_samples"));
    rec.postmean = std::move(p);
  }
  if (r.has("bias_report")) rec.bias_report = bias_from_json(r.at("bias_report"));
  if (r.has("timestamps")) {
    ObjectReader t(r.at("timestamps"), "timestamps", false);
    rec.timestamps.created_utc = t.opt_string("created_utc");
    rec.timestamps.finished_utc = t.opt_string("finished_utc");
    rec.timestamps.device_start_ms = t.number("device_start_ms", 0.0);
    rec.timestamps.device_end_ms = t.number("device_end_ms", 0.0);
  }
  return rec;
}

std::string serialize_record(const SessionRecord& r) { return to_json(r).dump(2) + "\n"; }

SessionRecord parse_record(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text.begin(), text.end());
  } catch (const Json::exception& e) {
    bad(std::string("malformed session record: ") + e.what());
  }
  try {
    return record_from_json(j);
  } catch (const Json::exception& e) {
    bad(std::string("malformed session record: ") + e.what());
  }
}

std::filesystem::path record_path(const std::filesystem::path& data_dir, const std::string& tsid,
                                  const std::string& session_id) {
  if (!is_safe_identifier(tsid) || !is_safe_identifier(session_id)) {
    bad("tsid and session id must be safe identifiers");
  }
  return data_dir / tsid / (session_id + ".json");
}

std::filesystem::path write_record(const SessionRecord& r, const std::filesystem::path& data_dir) {
  const auto path = record_path(data_dir, r.tsid, r.session_id);
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + path.parent_path().string() + ": " + ec.message());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot open " + tmp.string() + " for writing");
    out << serialize_record(r);
    out.flush();
    if (!out) throw Error(ErrorCode::kIo, "failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot move record into place: " + ec.message());
  return path;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SessionRecord read_record(const std::filesystem::path& path) {
  return parse_record(read_text_file(path));
}

}  // namespace vibropsi
