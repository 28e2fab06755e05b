#include "vibropsi/apparatus.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <thread>

namespace vibropsi {

std::string_view to_string(Orientation o) {
  return o == Orientation::kHorizontal ? "HORIZONTAL" : "VERTICAL";
}

Orientation orientation_from_string(std::string_view s) {
  if (s == "HORIZONTAL") return Orientation::kHorizontal;
  if (s == "VERTICAL") return Orientation::kVertical;
  throw Error(ErrorCode::kInvalidArgument, "unknown orientation '" + std::string(s) + "'");
}

Orientation toggled(Orientation o) {
  return o == Orientation::kHorizontal ? Orientation::kVertical : Orientation::kHorizontal;
}

void ApparatusConfig::validate() const {
  if (!(separation_min > 0.0 && separation_min < separation_max)) {
    throw Error(ErrorCode::kInvalidArgument, "apparatus separation range must satisfy 0 < min < max");
  }
  if (!(separation_tolerance > 0.0 && force_tolerance > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "apparatus tolerances must be positive");
  }
  if (!(contact_force > 0.0 && burst_duration_ms > 0.0 && nominal_frequency_hz > 0.0 &&
        tip_diameter > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "apparatus constants must be positive");
  }
}

TipLayout tip_layout(TipArrangement arrangement, double separation, Orientation orientation) {
  TipLayout layout;
  layout.arrangement = arrangement;
  layout.separation = separation;
  layout.orientation = orientation;
  if (arrangement == TipArrangement::kPair) {
    const double h = separation / 2.0;
    if (orientation == Orientation::kHorizontal) {
      layout.positions = {{-h, 0.0}, {h, 0.0}};
    } else {
      layout.positions = {{0.0, -h}, {0.0, h}};
    }
  } else {
    layout.positions = {{0.0, 0.0}, {separation, 0.0}, {0.0, separation}};
  }
  return layout;
}

std::string_view to_string(FaultProfile f) {
  switch (f) {
    case FaultProfile::kNone: return "none";
    case FaultProfile::kNoContact: return "no-contact";
    case FaultProfile::kForceDrift: return "force-drift";
    case FaultProfile::kSeparationStick: return "separation-stick";
  }
  return "none";
}

FaultProfile fault_profile_from_string(std::string_view s) {
  if (s == "none" || s.empty()) return FaultProfile::kNone;
  if (s == "no-contact") return FaultProfile::kNoContact;
  if (s == "force-drift") return FaultProfile::kForceDrift;
  if (s == "separation-stick") return FaultProfile::kSeparationStick;
  throw Error(ErrorCode::kInvalidArgument, "unknown fault profile '" + std::string(s) + "'");
}

std::string_view to_string(TranscriptKind k) {
  switch (k) {
    case TranscriptKind::kSetSeparation: return "SEP";
    case TranscriptKind::kLower: return "LOWER";
    case TranscriptKind::kBurst: return "BURST";
    case TranscriptKind::kRaise: return "RAISE";
    case TranscriptKind::kReorient: return "REORIENT";
    case TranscriptKind::kWait: return "WAIT";
  }
  return "WAIT";
}

SimulatedApparatus::SimulatedApparatus(ApparatusConfig config, SimulatorOptions options)
    : config_(config), options_(options), rng_(options.seed) {
  config_.validate();
}

void SimulatedApparatus::advance(double ms) {
  if (options_.real_time && ms > 0.0) {
    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
  }
  clock_ms_ += ms;
}

double SimulatedApparatus::set_separation(double target_mm) {
  CommandGuard guard(busy_);
  if (!(target_mm >= config_.separation_min && target_mm <= config_.separation_max)) {
    std::ostringstream msg;
    msg << "separation " << target_mm << " mm outside [" << config_.separation_min << ", "
        << config_.separation_max << "]";
    throw Error(ErrorCode::kOutOfRange, msg.str());
  }
  // Strictly inside the tolerance band.
  std::uniform_real_distribution<double> offset(-1.0, 1.0);
  const double achieved = target_mm + offset(rng_) * config_.separation_tolerance * 0.999;
  // A stuck caliper keeps its first position.
  if (options_.fault != FaultProfile::kSeparationStick || !separation_set_) separation_ = achieved;
  separation_set_ = true;
  const double start = clock_ms_;
  advance(kMoveMs);
  transcript_.push_back({TranscriptKind::kSetSeparation, start, kMoveMs, separation_, {}, {},
                         orientation_});
  return separation_;
}

double SimulatedApparatus::lower_to_contact() {
  CommandGuard guard(busy_);
  const double start = clock_ms_;
  advance(kLowerMs);
  if (options_.fault == FaultProfile::kNoContact) {
    throw Error(ErrorCode::kContactTimeout, "lifter did not reach contact");
  }
  std::uniform_real_distribution<double> offset(-1.0, 1.0);
  double factor = 1.0 + offset(rng_) * config_.force_tolerance * 0.5;
  if (options_.fault == FaultProfile::kForceDrift) {
    const double span = config_.separation_max - config_.separation_min;
    const double closeness = 1.0 - (separation_ - config_.separation_min) / span;
    factor += options_.force_drift * std::clamp(closeness, 0.0, 1.0);
  }
  last_force_ = config_.contact_force * factor;
  in_contact_ = true;
  transcript_.push_back({TranscriptKind::kLower, start, kLowerMs, last_force_, {}, {},
                         orientation_});
  return last_force_;
}

void SimulatedApparatus::raise() {
  CommandGuard guard(busy_);
  const double start = clock_ms_;
  advance(kRaiseMs);
  in_contact_ = false;
  transcript_.push_back({TranscriptKind::kRaise, start, kRaiseMs, 0.0, {}, {}, orientation_});
}

void SimulatedApparatus::burst(std::span<const Motor> motors, std::span<const double> duties) {
  CommandGuard guard(busy_);
  if (!in_contact_) throw Error(ErrorCode::kNotInContact, "burst requested while the rig is raised");
  if (motors.empty() || motors.size() != duties.size()) {
    throw Error(ErrorCode::kInvalidArgument, "burst needs one duty per motor");
  }
  for (double d : duties) {
    if (!(d >= 0.0 && d <= 100.0)) throw Error(ErrorCode::kInvalidArgument, "duty must lie in [0, 100]");
  }
  const double start = clock_ms_;
  advance(config_.burst_duration_ms);
  transcript_.push_back({TranscriptKind::kBurst, start, config_.burst_duration_ms, 0.0,
                         {motors.begin(), motors.end()}, {duties.begin(), duties.end()},
                         orientation_});
}

void SimulatedApparatus::reorient(Orientation orientation) {
  CommandGuard guard(busy_);
  orientation_ = orientation;
  transcript_.push_back({TranscriptKind::kReorient, clock_ms_, 0.0, 0.0, {}, {}, orientation});
}

void SimulatedApparatus::wait(double ms) {
  CommandGuard guard(busy_);
  const double start = clock_ms_;
  advance(ms);
  transcript_.push_back({TranscriptKind::kWait, start, ms, ms, {}, {}, orientation_});
}

namespace {

std::string describe(const AlignmentReport& report) {
  std::ostringstream msg;
  msg << "alignment check failed:";
  for (const auto& s : report.steps) {
    msg << " [" << s.target << " mm: " << s.force << " N" << (s.within_tolerance ? "" : " !") << "]";
  }
  return msg.str();
}

}  // namespace

AlignmentError::AlignmentError(AlignmentReport report)
    : Error(ErrorCode::kAlignmentFailed, describe(report)), report_(std::move(report)) {}

std::vector<double> alignment_separations(const CandidateSet& candidates) {
  const auto& s = candidates.separations;
  if (s.empty()) throw Error(ErrorCode::kInvalidArgument, "candidate set is empty");
  constexpr int kSteps = 5;
  std::vector<double> out;
  out.reserve(kSteps);
  const double hi = s.back();
  const double lo = s.front();
  for (int i = 0; i < kSteps; ++i) {
    const double target = hi - (hi - lo) * i / (kSteps - 1);
    std::size_t best = 0;
    for (std::size_t k = 1; k < s.size(); ++k) {
      // Candidates ascend, so strict '<' keeps the smaller one on a tie.
      if (std::fabs(s[k] - target) < std::fabs(s[best] - target)) best = k;
    }
    out.push_back(s[best]);
  }
  return out;
}

AlignmentReport run_alignment_check(Apparatus& rig, const CandidateSet& candidates) {
  const ApparatusConfig& cfg = rig.config();
  AlignmentReport report;
  report.passed = true;
  for (double target : alignment_separations(candidates)) {
    AlignmentStep step;
    step.target = target;
    step.achieved_separation = rig.set_separation(target);
    try {
      step.force = rig.lower_to_contact();
      step.within_tolerance =
          std::fabs(step.force - cfg.contact_force) <= cfg.force_tolerance * cfg.contact_force;
      rig.raise();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kContactTimeout) throw;
      step.force = 0.0;
      step.within_tolerance = false;
    }
    report.passed = report.passed && step.within_tolerance;
    report.steps.push_back(step);
  }
  if (!report.passed) throw AlignmentError(std::move(report));
  return report;
}

}  // namespace vibropsi
