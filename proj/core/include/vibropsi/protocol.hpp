#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vibropsi/apparatus.hpp"
#include "vibropsi/bape.hpp"
#include "vibropsi/observer.hpp"
#include "vibropsi/stats.hpp"
#include "vibropsi/task.hpp"

namespace vibropsi {

enum class Phase {
  kAligning,
  kAwaitingResponse,
  kBetweenTrials,
  kReorienting,
  kComplete,
  kExcluded,
  kAborted,
};

std::string_view to_string(Phase p);
Phase phase_from_string(std::string_view s);

enum class FirstOrientation { kHorizontal, kVertical, kRandom };

std::string_view to_string(FirstOrientation f);
FirstOrientation first_orientation_from_string(std::string_view s);

struct SessionConfig {
  TaskKind task = TaskKind::kVt2pd;
  int trials_per_block = 50;
  std::string tsid;  // anonymous participant identifier
  std::uint64_t seed = 0;
  GridConfig grid;
  CandidateSet candidates = default_candidates();
  ApparatusConfig apparatus;
  FirstOrientation first_orientation = FirstOrientation::kRandom;
  double mean_duty = 80.0;  // percent
  double duty_sd = 3.0;     // percent
  double inter_stimulus_ms = 500.0;
  /// Unattended runs only; participant-paced when absent.
  std::optional<double> response_timeout_ms;
  bool reveal_feedback = false;
  double alpha = 0.05;

  void validate() const;
  int total_trials() const { return trials_per_block * block_count(task); }

  bool operator==(const SessionConfig&) const = default;
};

/// Normal(mean, sd) clamped to [0, 100].
double jittered_duty(double mean_duty, std::mt19937_64& rng, double sd = 3.0);

/// SplitMix64 step, used to derive independent per-purpose seeds from the
/// session seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

inline constexpr std::uint64_t kObserverStream = 1;
inline constexpr std::uint64_t kDeviceStream = 2;
inline constexpr std::uint64_t kPracticeStream = 3;

/// The stimulus currently on the skin, target included. Only the session and
/// simulated responders see the target.
struct PendingTrial {
  int index = 0;
  int block = 0;
  Orientation orientation = Orientation::kHorizontal;
  double separation = 0.0;
  double achieved_separation = 0.0;
  double contact_force = 0.0;
  Choice target = Choice::kFirstA;
  std::vector<double> duties;
  double stimulus_onset_ms = 0.0;
  double stimulus_complete_ms = 0.0;
};

class Responder {
 public:
  virtual ~Responder() = default;
  /// nullopt means the responder timed out.
  virtual std::optional<Response> respond(const Stimulus& stimulus) = 0;
};

/// Simulated participant with its own RNG stream.
class ObserverResponder final : public Responder {
 public:
  ObserverResponder(ObserverModel model, std::uint64_t seed);
  std::optional<Response> respond(const Stimulus& stimulus) override;

 private:
  ObserverModel model_;
  std::mt19937_64 rng_;
};

/// Replays a fixed answer list; runs dry as timeouts.
class ScriptedResponder final : public Responder {
 public:
  explicit ScriptedResponder(std::vector<std::optional<Response>> script)
      : script_(std::move(script)) {}
  std::optional<Response> respond(const Stimulus& stimulus) override;
  const std::vector<Stimulus>& seen() const noexcept { return seen_; }

 private:
  std::vector<std::optional<Response>> script_;
  std::size_t next_ = 0;
  std::vector<Stimulus> seen_;
};

/// Selection bookkeeping per answered trial.
struct SelectionTrace {
  double separation = 0.0;
  double entropy_before = 0.0;    // nats, posterior before the answer
  double expected_entropy = 0.0;  // nats, lookahead value at selection time
  double entropy_after = 0.0;     // nats, posterior after the answer

  bool operator==(const SelectionTrace&) const = default;
};

struct SessionRecord;

/// One participant run: a serialized state machine over the trial loop.
/// Draw order on the session RNG: one orientation coin at start, then per
/// trial the target and one jitter per fired motor in motor order.
class Session {
 public:
  using WallClock = std::function<std::string()>;

  /// Validates the config, runs the alignment check (AlignmentError on
  /// failure), resolves the first orientation and selects the first
  /// separation. `model` may be shared between sessions with identical grid
  /// and candidate configuration; it is built when null.
  static std::unique_ptr<Session> start(SessionConfig config, std::unique_ptr<Apparatus> rig,
                                        std::shared_ptr<const BapeModel> model = nullptr,
                                        std::string session_id = {}, WallClock wall_clock = {});

  const SessionConfig& config() const noexcept { return config_; }
  const std::string& session_id() const noexcept { return session_id_; }
  Phase phase() const noexcept { return phase_; }
  const Posterior& posterior() const noexcept { return posterior_; }
  const std::vector<TrialRecord>& history() const noexcept { return history_; }
  const std::vector<VoidedTrial>& voided() const noexcept { return voided_; }
  const std::vector<TrialRecord>& practice() const noexcept { return practice_; }
  const std::vector<SelectionTrace>& selection_trace() const noexcept { return trace_; }
  const AlignmentReport& alignment() const noexcept { return alignment_; }
  const std::optional<BiasReport>& bias_report() const noexcept { return bias_report_; }
  Orientation first_orientation() const noexcept { return first_orientation_; }
  Orientation orientation() const noexcept { return orientation_; }
  int current_block() const noexcept;
  /// Separation the next trial will use.
  double next_separation() const noexcept { return next_.separation; }
  const Selection& next_selection() const noexcept { return next_; }
  const std::optional<PendingTrial>& pending() const noexcept { return pending_; }
  bool trials_complete() const noexcept {
    return static_cast<int>(history_.size()) >= config_.total_trials();
  }
  const Apparatus& apparatus() const noexcept { return *rig_; }
  Apparatus& apparatus() noexcept { return *rig_; }
  const std::optional<std::string>& created_utc() const noexcept { return created_utc_; }

  /// BETWEEN_TRIALS -> AWAITING_RESPONSE: positions the rig, lowers it and
  /// delivers the bursts.
  const PendingTrial& present_stimulus();

  /// AWAITING_RESPONSE -> BETWEEN_TRIALS or REORIENTING: raises the rig,
  /// records the answer, updates the posterior and selects the next
  /// separation.
  const TrialRecord& submit_response(Choice response, double response_time_ms,
                                     std::optional<std::string> client_timestamp = {});

  /// AWAITING_RESPONSE -> BETWEEN_TRIALS without evidence.
  void void_pending(std::string reason);

  /// present_stimulus + responder + submit_response (or void on timeout).
  /// Returns the appended record, or nullopt when the trial was voided.
  std::optional<TrialRecord> run_trial(Responder& responder);

  /// Practice query at a fixed separation on its own RNG stream; never
  /// touches the posterior or the scored history.
  TrialRecord practice_trial(double separation, Responder& responder);

  /// REORIENTING -> BETWEEN_TRIALS with the orientation toggled.
  void advance_block();

  /// Runs the bias guard, computes the postmean and moves to COMPLETE or
  /// EXCLUDED. Requires every planned trial.
  SessionRecord finalize();

  /// Any non-terminal phase -> ABORTED; returns the partial record.
  SessionRecord abort(std::string reason);

  /// Snapshot of the current state in record form (used for in-flight
  /// persistence and live views).
  SessionRecord snapshot() const;

 private:
  Session(SessionConfig config, std::unique_ptr<Apparatus> rig,
          std::shared_ptr<const BapeModel> model, std::string session_id, WallClock wall_clock);

  void require_phase(Phase expected, std::string_view op) const;
  PendingTrial deliver(double separation, Orientation orientation, std::mt19937_64& rng, int index,
                       int block);

  SessionConfig config_;
  std::unique_ptr<Apparatus> rig_;
  std::string session_id_;
  WallClock wall_clock_;
  std::optional<std::string> created_utc_;
  std::optional<std::string> finished_utc_;
  std::string abort_reason_;
  std::mt19937_64 rng_;
  std::mt19937_64 practice_rng_;
  Phase phase_ = Phase::kAligning;
  Posterior posterior_;
  Selection next_;
  AlignmentReport alignment_;
  Orientation first_orientation_ = Orientation::kHorizontal;
  Orientation orientation_ = Orientation::kHorizontal;
  double device_start_ms_ = 0.0;
  std::optional<PendingTrial> pending_;
  std::vector<TrialRecord> history_;
  std::vector<VoidedTrial> voided_;
  std::vector<TrialRecord> practice_;
  std::vector<SelectionTrace> trace_;
  std::optional<BiasReport> bias_report_;
};

/// Applies the history to a fresh uniform posterior in order.
Posterior refit(std::shared_ptr<const BapeModel> model, std::span<const TrialRecord> history);

}  // namespace vibropsi
