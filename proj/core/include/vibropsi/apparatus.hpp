#pragma once

#include <atomic>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vibropsi/bape.hpp"
#include "vibropsi/error.hpp"

namespace vibropsi {

enum class Orientation { kHorizontal, kVertical };

std::string_view to_string(Orientation o);
Orientation orientation_from_string(std::string_view s);
Orientation toggled(Orientation o);

/// Mechanical and stimulus constants of the caliper/lifter rig.
struct ApparatusConfig {
  double separation_min = 2.5;        // mm
  double separation_max = 60.0;       // mm
  double separation_tolerance = 0.2;  // mm, achieved must be strictly within
  double contact_force = 0.5;         // N
  double force_tolerance = 0.04;      // relative
  double burst_duration_ms = 200.0;
  double nominal_frequency_hz = 131.0;
  double tip_diameter = 1.5;  // mm

  void validate() const;
  bool operator==(const ApparatusConfig&) const = default;
};

/// Motor slots on the rig. For the two-tip layout kA/kB are S_a/S_b; for the
/// three-tip orientation layout kA is the apex S_c, kB is S_h and kC is S_v.
enum class Motor : std::uint8_t { kA = 0, kB = 1, kC = 2 };

enum class TipArrangement { kPair, kTriangle };

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Tip centres in the skin plane, indexed by Motor.
struct TipLayout {
  TipArrangement arrangement = TipArrangement::kPair;
  std::vector<Point2> positions;
  double separation = 0.0;
  Orientation orientation = Orientation::kHorizontal;
};

/// Pair: (+-s/2, 0), rotated onto the y axis when vertical.
/// Triangle: S_c at the origin, S_h at (s, 0), S_v at (0, s). The isosceles
/// right triangle puts the two outer tips s*sqrt(2) apart.
TipLayout tip_layout(TipArrangement arrangement, double separation, Orientation orientation);

/// Device interface the session drives. Commands must be issued one at a
/// time; implementations report overlapping calls as kConcurrentCommand.
class Apparatus {
 public:
  virtual ~Apparatus() = default;

  virtual const ApparatusConfig& config() const noexcept = 0;
  /// Returns the achieved separation; throws kOutOfRange outside the rig range.
  virtual double set_separation(double target_mm) = 0;
  /// Returns the achieved contact force in newtons.
  virtual double lower_to_contact() = 0;
  virtual void raise() = 0;
  /// Fires `motors` together for one burst; `duties` (percent) align with
  /// `motors`. Throws kNotInContact while raised.
  virtual void burst(std::span<const Motor> motors, std::span<const double> duties) = 0;
  virtual void reorient(Orientation orientation) = 0;
  virtual void wait(double ms) = 0;
  /// Milliseconds on the device clock (logical for the simulator).
  virtual double now_ms() const = 0;
};

/// Throws kConcurrentCommand when a second command enters while one is active.
class CommandGuard {
 public:
  explicit CommandGuard(std::atomic<bool>& busy) : busy_(busy) {
    if (busy_.exchange(true)) {
      throw Error(ErrorCode::kConcurrentCommand, "apparatus command issued while another is active");
    }
  }
  ~CommandGuard() { busy_.store(false); }
  CommandGuard(const CommandGuard&) = delete;
  CommandGuard& operator=(const CommandGuard&) = delete;

 private:
  std::atomic<bool>& busy_;
};

enum class FaultProfile { kNone, kNoContact, kForceDrift, kSeparationStick };

std::string_view to_string(FaultProfile f);
FaultProfile fault_profile_from_string(std::string_view s);

struct SimulatorOptions {
  std::uint64_t seed = 0;
  FaultProfile fault = FaultProfile::kNone;
  /// Relative force excess at the smallest separation under kForceDrift.
  double force_drift = 0.06;
  /// Sleep for real durations instead of advancing a logical clock.
  bool real_time = false;
};

enum class TranscriptKind { kSetSeparation, kLower, kBurst, kRaise, kReorient, kWait };

std::string_view to_string(TranscriptKind k);

struct TranscriptEvent {
  TranscriptKind kind = TranscriptKind::kWait;
  double start_ms = 0.0;
  double duration_ms = 0.0;
  double value = 0.0;  // achieved separation, force, or wait length
  std::vector<Motor> motors;
  std::vector<double> duties;
  Orientation orientation = Orientation::kHorizontal;
};

/// Rig simulator. Achieved separations and forces are drawn uniformly inside
/// the configured tolerances from a seeded device RNG; fault profiles break
/// specific guarantees on purpose.
class SimulatedApparatus final : public Apparatus {
 public:
  explicit SimulatedApparatus(ApparatusConfig config = {}, SimulatorOptions options = {});

  const ApparatusConfig& config() const noexcept override { return config_; }
  double set_separation(double target_mm) override;
  double lower_to_contact() override;
  void raise() override;
  void burst(std::span<const Motor> motors, std::span<const double> duties) override;
  void reorient(Orientation orientation) override;
  void wait(double ms) override;
  double now_ms() const override { return clock_ms_; }

  bool in_contact() const noexcept { return in_contact_; }
  double current_force() const noexcept { return in_contact_ ? last_force_ : 0.0; }
  Orientation orientation() const noexcept { return orientation_; }
  const std::vector<TranscriptEvent>& transcript() const noexcept { return transcript_; }
  void clear_transcript() { transcript_.clear(); }

  // Logical durations of the mechanical moves.
  static constexpr double kMoveMs = 300.0;
  static constexpr double kLowerMs = 400.0;
  static constexpr double kRaiseMs = 400.0;

 private:
  void advance(double ms);

  ApparatusConfig config_;
  SimulatorOptions options_;
  std::mt19937_64 rng_;
  std::atomic<bool> busy_{false};
  double clock_ms_ = 0.0;
  double separation_ = 0.0;
  bool separation_set_ = false;
  bool in_contact_ = false;
  double last_force_ = 0.0;
  Orientation orientation_ = Orientation::kHorizontal;
  std::vector<TranscriptEvent> transcript_;
};

struct AlignmentStep {
  double target = 0.0;
  double achieved_separation = 0.0;
  double force = 0.0;  // N; 0 when contact failed
  bool within_tolerance = false;
};

struct AlignmentReport {
  std::vector<AlignmentStep> steps;
  bool passed = false;
};

class AlignmentError : public Error {
 public:
  explicit AlignmentError(AlignmentReport report);
  const AlignmentReport& report() const noexcept { return report_; }

 private:
  AlignmentReport report_;
};

/// Five targets evenly spaced from the largest to the smallest candidate,
/// each snapped to the nearest candidate (ties go to the smaller one).
std::vector<double> alignment_separations(const CandidateSet& candidates);

/// Visits the alignment separations, lowers at each and checks the force.
/// Returns the report on success, throws AlignmentError otherwise.
AlignmentReport run_alignment_check(Apparatus& rig, const CandidateSet& candidates);

}  // namespace vibropsi
