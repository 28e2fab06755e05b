#pragma once

// Session lifecycle over JSON documents, independent of the HTTP transport.
//
// Every response body carries "schema_version". Errors are
//   {"schema_version": 1, "error": {"code": "...", "message": "...", ...}}
// Request bodies with unknown fields are rejected.

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "vibropsi/config.hpp"
#include "vibropsi/protocol.hpp"
#include "vibropsi/record.hpp"

namespace vibropsi {

inline constexpr int kApiSchemaVersion = 1;

struct ApiResponse {
  int status = 200;
  /// JSON text, or the raw record file for record downloads.
  std::string body;
  std::string content_type = "application/json";
};

struct ListFilter {
  std::optional<std::string> tsid;
  std::optional<Phase> phase;
  std::optional<std::string> created_after;   // inclusive, ISO-8601 UTC
  std::optional<std::string> created_before;  // exclusive
  std::size_t offset = 0;
  std::size_t limit = 50;
};

/// One event per completed transition, carrying the live document.
struct SessionEvent {
  std::uint64_t seq = 0;
  std::string type;  // "trial_completed", "phase_changed"
  Json live;
};

std::string utc_now_iso();

class SessionService {
 public:
  using WallClock = std::function<std::string()>;
  /// Monotonic milliseconds; response times are measured on this clock from
  /// stimulus completion to response receipt.
  using MonotonicClock = std::function<double()>;

  /// Scans `settings.data_dir`: finished records become listable and
  /// in-flight ones are rewritten as ABORTED.
  explicit SessionService(ServiceSettings settings, WallClock wall = utc_now_iso,
                          MonotonicClock clock = {});
  ~SessionService();

  SessionService(const SessionService&) = delete;
  SessionService& operator=(const SessionService&) = delete;

  ApiResponse create_session(const std::string& body);
  ApiResponse list_sessions(const ListFilter& filter) const;
  ApiResponse get_session(const std::string& id) const;
  ApiResponse submit_response(const std::string& id, const std::string& body);
  ApiResponse live_state(const std::string& id) const;
  ApiResponse advance(const std::string& id);
  ApiResponse abort(const std::string& id, const std::string& body);
  ApiResponse record(const std::string& id) const;
  ApiResponse health() const;

  /// Blocks up to `timeout_ms` for an event newer than `after_seq`.
  std::optional<SessionEvent> wait_event(const std::string& id, std::uint64_t after_seq,
                                         int timeout_ms) const;

  /// Aborts every in-flight session (used on shutdown).
  void abort_all(const std::string& reason);

  const ServiceSettings& settings() const noexcept { return settings_; }
  std::size_t recovered_aborted() const noexcept { return recovered_aborted_; }

 private:
  struct Entry;

  std::shared_ptr<Entry> find(const std::string& id) const;
  void recover();
  void persist(Entry& e, const SessionRecord& r);
  void publish(Entry& e, const std::string& type);
  Json summary(const Entry& e) const;
  Json live_document(const Entry& e) const;
  Json pending_document(const Entry& e) const;
  void present_next(Entry& e);
  std::string new_session_id(const std::string& tsid);

  ServiceSettings settings_;
  WallClock wall_;
  MonotonicClock clock_;
  std::shared_ptr<const BapeModel> default_model_;
  mutable std::shared_mutex map_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> entries_;
  std::uint64_t id_counter_ = 0;
  std::size_t recovered_aborted_ = 0;
};

}  // namespace vibropsi
