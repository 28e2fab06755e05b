#include "vibropsi/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iostream>
#include <random>

#include "vibropsi/error.hpp"

namespace vibropsi {

namespace {

bool is_terminal(Phase p) {
  return p == Phase::kComplete || p == Phase::kExcluded || p == Phase::kAborted;
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kNonMonotoneCurve:
    case ErrorCode::kMismatchedGrids:
    case ErrorCode::kInsufficientData:
    case ErrorCode::kOutOfRange: return 400;
    case ErrorCode::kUnknownSession: return 404;
    case ErrorCode::kWrongPhase:
    case ErrorCode::kConcurrentCommand: return 409;
    case ErrorCode::kAlignmentFailed: return 422;
    case ErrorCode::kApparatusUnreachable:
    case ErrorCode::kContactTimeout:
    case ErrorCode::kNotInContact:
    case ErrorCode::kSeparationFault:
    case ErrorCode::kProtocol: return 502;
    default: return 500;
  }
}

ApiResponse json_response(int status, const Json& body) { return {status, body.dump(), "application/json"}; }

ApiResponse error_response(ErrorCode code, const std::string& message, Json details = nullptr) {
  Json err;
  err["code"] = to_string(code);
  err["message"] = message;
  if (!details.is_null()) err["details"] = std::move(details);
  Json body;
  body["schema_version"] = kApiSchemaVersion;
  body["error"] = std::move(err);
  return json_response(status_for(code), body);
}

ApiResponse error_response(const Error& e) { return error_response(e.code(), e.what()); }

Json parse_body(const std::string& body, bool allow_empty) {
  if (body.empty() || body.find_first_not_of(" \t\r\n") == std::string::npos) {
    if (allow_empty) return Json::object();
    throw Error(ErrorCode::kInvalidArgument, "request body is required");
  }
  Json j;
  try {
    j = Json::parse(body);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "request body must be a JSON object");
  return j;
}

void reject_unknown(const Json& j, std::initializer_list<const char*> keys) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; })) {
      throw Error(ErrorCode::kInvalidArgument, "unknown field '" + it.key() + "'");
    }
  }
}

Json trial_history(const std::vector<TrialRecord>& trials) {
  Json out = Json::array();
  for (const auto& t : trials) {
    out.push_back({{"index", t.index},
                   {"block", t.block},
                   {"orientation", to_string(t.orientation)},
                   {"separation_mm", t.separation},
                   {"response", to_string(t.response)},
                   {"correct", t.correct},
                   {"response_time_ms", t.response_time_ms}});
  }
  return out;
}

Json bias_document(const BiasReport& b) {
  Json j = to_json(b);
  j.erase("per_separation");
  Json rows = Json::array();
  for (const auto& row : b.per_separation) {
    rows.push_back({{"separation_mm", row.separation},
                    {"trials", row.trials},
                    {"responses", row.responses},
                    {"accuracy_by_target",
                     {row.targets[0] ? Json(static_cast<double>(row.correct[0]) / row.targets[0]) : Json(nullptr),
                      row.targets[1] ? Json(static_cast<double>(row.correct[1]) / row.targets[1]) : Json(nullptr)}}});
  }
  j["per_separation"] = rows;
  return j;
}

}  // namespace

std::string utc_now_iso() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

struct SessionService::Entry {
  mutable std::mutex mu;
  mutable std::condition_variable cv;
  std::string id;
  std::string tsid;
  std::string created_at;
  Phase phase = Phase::kAligning;
  int trial_count = 0;
  int total_trials = 0;
  std::string abort_reason;
  std::unique_ptr<Session> session;      // null once terminal or when recovered from disk
  std::optional<SessionRecord> stored;   // terminal record
  std::optional<Json> frozen_live;       // live document at the terminal transition
  std::filesystem::path path;
  double presented_at_ms = 0.0;
  std::uint64_t seq = 0;
  std::optional<SessionEvent> last_event;
};

SessionService::SessionService(ServiceSettings settings, WallClock wall, MonotonicClock clock)
    : settings_(std::move(settings)), wall_(std::move(wall)), clock_(std::move(clock)) {
  if (!clock_) {
    const auto epoch = std::chrono::steady_clock::now();
    clock_ = [epoch] {
      return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - epoch).count();
    };
  }
  recover();
}

SessionService::~SessionService() = default;

void SessionService::recover() {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::exists(settings_.data_dir, ec)) return;
  for (auto it = fs::recursive_directory_iterator(settings_.data_dir, ec);
       !ec && it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (!it->is_regular_file() || it->path().extension() != ".json") continue;
    SessionRecord r;
    try {
      r = read_record(it->path());
    } catch (const std::exception& e) {
      std::cerr << "skipping unreadable record " << it->path() << ": " << e.what() << '\n';
      continue;
    }
    if (!is_terminal(r.phase)) {
      r.phase = Phase::kAborted;
      r.abort_reason = "service restarted while the session was in flight";
      if (wall_) r.timestamps.finished_utc = wall_();
      write_record(r, settings_.data_dir);
      ++recovered_aborted_;
    }
    auto e = std::make_shared<Entry>();
    e->id = r.session_id;
    e->tsid = r.tsid;
    e->created_at = r.timestamps.created_utc.value_or("");
    e->phase = r.phase;
    e->trial_count = static_cast<int>(r.trials.size());
    e->total_trials = r.config.total_trials();
    e->abort_reason = r.abort_reason;
    e->path = it->path();
    e->stored = std::move(r);
    entries_[e->id] = std::move(e);
  }
}

std::shared_ptr<SessionService::Entry> SessionService::find(const std::string& id) const {
  std::shared_lock lock(map_mutex_);
  auto it = entries_.find(id);
  if (it == entries_.end()) throw Error(ErrorCode::kUnknownSession, "unknown session '" + id + "'");
  return it->second;
}

std::string SessionService::new_session_id(const std::string& tsid) {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  std::unique_lock lock(map_mutex_);
  for (;;) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
    std::string id = tsid.substr(0, 40) + "-" + std::string(buf, 12);
    if (!entries_.count(id)) return id;
  }
}

void SessionService::persist(Entry& e, const SessionRecord& r) {
  e.path = write_record(r, settings_.data_dir);
  e.phase = r.phase;
  e.trial_count = static_cast<int>(r.trials.size());
  e.abort_reason = r.abort_reason;
  if (is_terminal(r.phase)) {
    e.stored = r;
    e.frozen_live = live_document(e);
    e.session.reset();
  }
}

void SessionService::publish(Entry& e, const std::string& type) {
  SessionEvent ev;
  ev.seq = ++e.seq;
  ev.type = type;
  ev.live = live_document(e);
  e.last_event = std::move(ev);
  e.cv.notify_all();
}

void SessionService::present_next(Entry& e) {
  try {
    e.session->present_stimulus();
    e.presented_at_ms = clock_();
    persist(e, e.session->snapshot());
  } catch (const Error& err) {
    persist(e, e.session->abort(std::string("apparatus fault: ") + err.what()));
  }
}

Json SessionService::summary(const Entry& e) const {
  Json j;
  j["session_id"] = e.id;
  j["tsid"] = e.tsid;
  j["created_at"] = e.created_at;
  j["phase"] = to_string(e.phase);
  j["trial_counter"] = e.trial_count;
  j["total_trials"] = e.total_trials;
  if (e.session) {
    j["task"] = to_string(e.session->config().task);
    j["orientation"] = to_string(e.session->orientation());
  } else if (e.stored) {
    j["task"] = to_string(e.stored->config.task);
    j["orientation"] = nullptr;
  }
  j["abort_reason"] = e.abort_reason.empty() ? Json(nullptr) : Json(e.abort_reason);
  return j;
}

Json SessionService::pending_document(const Entry& e) const {
  if (!e.session || !e.session->pending()) return nullptr;
  const PendingTrial& p = *e.session->pending();
  const auto options = choices_for(e.session->config().task);
  // The target is deliberately absent.
  return {{"index", p.index},
          {"block", p.block},
          {"orientation", to_string(p.orientation)},
          {"separation_mm", p.separation},
          {"choices", {to_string(options[0]), to_string(options[1])}}};
}

Json SessionService::live_document(const Entry& e) const {
  if (!e.session && e.frozen_live) return *e.frozen_live;
  Json j;
  j["schema_version"] = kApiSchemaVersion;
  j["session"] = summary(e);
  if (e.session) {
    const Session& s = *e.session;
    j["history"] = trial_history(s.history());
    j["voided_count"] = s.voided().size();
    j["pending"] = pending_document(e);
    j["posterior_trial_count"] = s.posterior().trial_count();
    j["entropy"] = entropy(s.posterior());
    Json trace = Json::array();
    for (const auto& t : s.selection_trace()) trace.push_back(t.entropy_after);
    j["entropy_trace"] = trace;
    j["next_separation_mm"] =
        is_terminal(s.phase()) || s.trials_complete() ? Json(nullptr) : Json(s.next_separation());
    const auto xs = default_curve_grid();
    j["postmean"] = to_json(postmean_curve(s.posterior(), xs));
    const Marginals m = marginals(s.posterior());
    const ParameterGrid& grid = s.posterior().model().grid();
    j["marginals"] = {{"a_values", grid.a_values()}, {"a", m.a},
                      {"b_values", grid.b_values()}, {"b", m.b},
                      {"gamma_values", grid.gamma_values()}, {"gamma", m.gamma}};
    if (s.bias_report()) {
      j["bias"] = bias_document(*s.bias_report());
    } else if (!s.history().empty()) {
      j["bias"] = bias_document(run_bias_guard(s.history(), s.config().alpha));
    } else {
      j["bias"] = nullptr;
    }
  } else if (e.stored) {
    const SessionRecord& r = *e.stored;
    j["history"] = trial_history(r.trials);
    j["voided_count"] = r.voided.size();
    j["pending"] = nullptr;
    j["posterior_trial_count"] = r.trials.size();
    j["entropy"] = r.selection_trace.empty() ? Json(nullptr) : Json(r.selection_trace.back().entropy_after);
    Json trace = Json::array();
    for (const auto& t : r.selection_trace) trace.push_back(t.entropy_after);
    j["entropy_trace"] = trace;
    j["next_separation_mm"] = nullptr;
    j["postmean"] = r.postmean ? to_json(*r.postmean) : Json(nullptr);
    j["marginals"] = nullptr;
    j["bias"] = r.bias_report ? bias_document(*r.bias_report) : Json(nullptr);
  }
  return j;
}

ApiResponse SessionService::create_session(const std::string& body) {
  try {
    const Json j = parse_body(body, false);
    reject_unknown(j, {"session", "apparatus"});
    if (!j.contains("session")) throw Error(ErrorCode::kInvalidArgument, "field 'session' is required");
    SessionConfig config = session_config_from_json(j.at("session"), true);
    config.validate();
    const BackendConfig backend =
        j.contains("apparatus") ? backend_from_json(j.at("apparatus"), true) : settings_.backend;

    std::shared_ptr<const BapeModel> model;
    if (config.grid == GridConfig{} && config.candidates == default_candidates()) {
      std::unique_lock lock(map_mutex_);
      if (!default_model_) default_model_ = BapeModel::create(GridConfig{}, default_candidates());
      model = default_model_;
    }

    auto e = std::make_shared<Entry>();
    e->id = new_session_id(config.tsid);
    e->tsid = config.tsid;
    e->total_trials = config.total_trials();
    auto rig = make_apparatus(backend, config.apparatus, derive_seed(config.seed, kDeviceStream),
                              config.task);
    try {
      e->session = Session::start(config, std::move(rig), model, e->id, wall_);
    } catch (const AlignmentError& ae) {
      return error_response(ErrorCode::kAlignmentFailed, ae.what(), to_json(ae.report()));
    }
    e->created_at = e->session->created_utc().value_or("");
    std::lock_guard entry_lock(e->mu);
    present_next(*e);
    {
      std::unique_lock lock(map_mutex_);
      entries_[e->id] = e;
    }
    publish(*e, "session_created");
    Json out;
    out["schema_version"] = kApiSchemaVersion;
    out["session"] = summary(*e);
    out["pending"] = pending_document(*e);
    return json_response(201, out);
  } catch (const Error& err) {
    return error_response(err);
  }
}

ApiResponse SessionService::list_sessions(const ListFilter& f) const {
  std::vector<Json> rows;
  {
    std::shared_lock lock(map_mutex_);
    for (const auto& [id, e] : entries_) {
      std::lock_guard entry_lock(e->mu);
      if (f.tsid && e->tsid != *f.tsid) continue;
      if (f.phase && e->phase != *f.phase) continue;
      if (f.created_after && e->created_at < *f.created_after) continue;
      if (f.created_before && !(e->created_at < *f.created_before)) continue;
      rows.push_back(summary(*e));
    }
  }
  std::sort(rows.begin(), rows.end(), [](const Json& a, const Json& b) {
    const auto ka = std::make_pair(a["created_at"].get<std::string>(), a["session_id"].get<std::string>());
    const auto kb = std::make_pair(b["created_at"].get<std::string>(), b["session_id"].get<std::string>());
    return ka < kb;
  });
  Json out;
  out["schema_version"] = kApiSchemaVersion;
  out["total"] = rows.size();
  out["offset"] = f.offset;
  out["limit"] = f.limit;
  Json page = Json::array();
  for (std::size_t i = f.offset; i < rows.size() && i < f.offset + f.limit; ++i) page.push_back(rows[i]);
  out["sessions"] = page;
  return json_response(200, out);
}

ApiResponse SessionService::get_session(const std::string& id) const {
  try {
    auto e = find(id);
    std::lock_guard lock(e->mu);
    Json out;
    out["schema_version"] = kApiSchemaVersion;
    out["session"] = summary(*e);
    out["pending"] = pending_document(*e);
    return json_response(200, out);
  } catch (const Error& err) {
    return error_response(err);
  }
}

ApiResponse SessionService::submit_response(const std::string& id, const std::string& body) {
  try {
    auto e = find(id);
    const Json j = parse_body(body, false);
    reject_unknown(j, {"response", "client_timestamp"});
    if (!j.contains("response") || !j.at("response").is_string()) {
      throw Error(ErrorCode::kInvalidArgument, "field 'response' must be a choice name");
    }
    const Choice choice = choice_from_string(j.at("response").get<std::string>());
    std::optional<std::string> client_ts;
    if (j.contains("client_timestamp") && !j.at("client_timestamp").is_null()) {
      if (!j.at("client_timestamp").is_string()) {
        throw Error(ErrorCode::kInvalidArgument, "client_timestamp must be a string");
      }
      client_ts = j.at("client_timestamp").get<std::string>();
    }

    std::lock_guard lock(e->mu);
    if (!e->session || e->phase != Phase::kAwaitingResponse) {
      throw Error(ErrorCode::kWrongPhase,
                  "session is " + std::string(to_string(e->phase)) + ", not AWAITING_RESPONSE");
    }
    Session& s = *e->session;
    const double rt = std::max(0.0, clock_() - e->presented_at_ms);
    const TrialRecord t = s.submit_response(choice, rt, client_ts);
    const bool reveal = s.config().reveal_feedback;

    std::optional<Orientation> next_orientation;
    if (s.trials_complete()) {
      persist(*e, s.finalize());
    } else if (s.phase() == Phase::kReorienting) {
      next_orientation = toggled(s.orientation());
      persist(*e, s.snapshot());
    } else {
      present_next(*e);
    }
    publish(*e, is_terminal(e->phase) ? "session_finished" : "trial_completed");

    Json trial = {{"index", t.index},
                  {"block", t.block},
                  {"orientation", to_string(t.orientation)},
                  {"separation_mm", t.separation},
                  {"response", to_string(t.response)},
                  {"response_time_ms", t.response_time_ms},
                  {"client_timestamp", t.client_timestamp ? Json(*t.client_timestamp) : Json(nullptr)}};
    if (reveal) trial["correct"] = t.correct;
    Json out;
    out["schema_version"] = kApiSchemaVersion;
    out["trial"] = trial;
    out["session"] = summary(*e);
    out["pending"] = pending_document(*e);
    out["next_orientation"] = next_orientation ? Json(to_string(*next_orientation)) : Json(nullptr);
    return json_response(200, out);
  } catch (const Error& err) {
    return error_response(err);
  }
}

ApiResponse SessionService::live_state(const std::string& id) const {
  try {
    auto e = find(id);
    std::lock_guard lock(e->mu);
    return json_response(200, live_document(*e));
  } catch (const Error& err) {
    return error_response(err);
  }
}

ApiResponse SessionService::advance(const std::string& id) {
  try {
    auto e = find(id);
    std::lock_guard lock(e->mu);
    if (!e->session || e->phase != Phase::kReorienting) {
      throw Error(ErrorCode::kWrongPhase,
                  "session is " + std::string(to_string(e->phase)) + ", not REORIENTING");
    }
    e->session->advance_block();
    present_next(*e);
    publish(*e, "phase_changed");
    Json out;
    out["schema_version"] = kApiSchemaVersion;
    out["session"] = summary(*e);
    out["pending"] = pending_document(*e);
    return json_response(200, out);
  } catch (const Error& err) {
    return error_response(err);
  }
}

ApiResponse SessionService::abort(const std::string& id, const std::string& body) {
  try {
    auto e = find(id);
    const Json j = parse_body(body, true);
    reject_unknown(j, {"reason"});
    std::string reason = "aborted by operator";
    if (j.contains("reason")) {
      if (!j.at("reason").is_string()) throw Error(ErrorCode::kInvalidArgument, "reason must be a string");
      reason = j.at("reason").get<std::string>();
    }
    std::lock_guard lock(e->mu);
    if (!e->session || is_terminal(e->phase)) {
      throw Error(ErrorCode::kWrongPhase, "session is already " + std::string(to_string(e->phase)));
    }
    persist(*e, e->session->abort(reason));
    publish(*e, "session_finished");
    Json out;
    out["schema_version"] = kApiSchemaVersion;
    out["session"] = summary(*e);
    return json_response(200, out);
  } catch (const Error& err) {
    return error_response(err);
  }
}

ApiResponse SessionService::record(const std::string& id) const {
  try {
    auto e = find(id);
    std::lock_guard lock(e->mu);
    return {200, read_text_file(e->path), "application/json"};
  } catch (const Error& err) {
    return error_response(err);
  }
}

ApiResponse SessionService::health() const {
  std::size_t total = 0;
  std::size_t active = 0;
  {
    std::shared_lock lock(map_mutex_);
    for (const auto& [id, e] : entries_) {
      std::lock_guard entry_lock(e->mu);
      ++total;
      if (!is_terminal(e->phase)) ++active;
    }
  }
  Json out;
  out["schema_version"] = kApiSchemaVersion;
  out["status"] = "ok";
  out["sessions"] = total;
  out["active_sessions"] = active;
  out["recovered_aborted"] = recovered_aborted_;
  out["data_dir"] = settings_.data_dir;
  out["apparatus"] = to_spec(settings_.backend);
  return json_response(200, out);
}

std::optional<SessionEvent> SessionService::wait_event(const std::string& id, std::uint64_t after_seq,
                                                       int timeout_ms) const {
  auto e = find(id);
  std::unique_lock lock(e->mu);
  e->cv.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                 [&] { return e->last_event && e->last_event->seq > after_seq; });
  if (e->last_event && e->last_event->seq > after_seq) return e->last_event;
  return std::nullopt;
}

void SessionService::abort_all(const std::string& reason) {
  std::vector<std::shared_ptr<Entry>> all;
  {
    std::shared_lock lock(map_mutex_);
    for (const auto& [id, e] : entries_) all.push_back(e);
  }
  for (auto& e : all) {
    std::lock_guard lock(e->mu);
    if (e->session && !is_terminal(e->phase)) {
      persist(*e, e->session->abort(reason));
      publish(*e, "session_finished");
    }
  }
}

}  // namespace vibropsi
