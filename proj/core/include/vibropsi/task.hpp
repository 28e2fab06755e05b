#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vibropsi/apparatus.hpp"

namespace vibropsi {

enum class TaskKind { kVt2pd, kVt2pod, kVt2pdBidirectional };

std::string_view to_string(TaskKind t);
TaskKind task_from_string(std::string_view s);

/// Two-point tasks ask which side vibrated first (S_a or S_b); the orientation
/// task asks whether the pair that fired was horizontal or vertical.
enum class Choice { kFirstA, kFirstB, kHorizontal, kVertical };

std::string_view to_string(Choice c);
Choice choice_from_string(std::string_view s);

/// The two answers a task admits, in option-index order.
std::array<Choice, 2> choices_for(TaskKind task);

/// 0 for the first option of its task (FIRST_A / HORIZONTAL), 1 otherwise.
int option_index(Choice c);

/// The option with the other index for the same task.
Choice other_choice(Choice c);

inline TipArrangement arrangement_for(TaskKind task) {
  return task == TaskKind::kVt2pod ? TipArrangement::kTriangle : TipArrangement::kPair;
}

inline int block_count(TaskKind task) { return task == TaskKind::kVt2pdBidirectional ? 2 : 1; }

/// One answered 2IFC query. Separations in mm, times in ms.
struct TrialRecord {
  int index = 0;  // 0-based across the whole session
  int block = 0;  // 0-based
  Orientation orientation = Orientation::kHorizontal;
  double separation = 0.0;           // commanded candidate value
  double achieved_separation = 0.0;  // reported by the rig
  double contact_force = 0.0;        // N
  Choice target = Choice::kFirstA;
  Choice response = Choice::kFirstA;
  bool correct = false;
  double response_time_ms = 0.0;
  /// Jittered duty (percent) per motor in motor order: A then B, or the apex
  /// then the fired outer tip.
  std::vector<double> intensity_duties;
  double stimulus_onset_ms = 0.0;  // device clock
  std::optional<std::string> client_timestamp;

  bool operator==(const TrialRecord&) const = default;
};

/// A query that was presented but never answered (timeout); kept for the
/// record stream, never applied to the posterior.
struct VoidedTrial {
  int attempt = 0;  // count of completed trials when it was voided
  int block = 0;
  double separation = 0.0;
  std::string reason;

  bool operator==(const VoidedTrial&) const = default;
};

}  // namespace vibropsi
