#include "vibropsi/task.hpp"

#include <string>

namespace vibropsi {

std::string_view to_string(TaskKind t) {
  switch (t) {
    case TaskKind::kVt2pd: return "VT2PD";
    case TaskKind::kVt2pod: return "VT2POD";
    case TaskKind::kVt2pdBidirectional: return "VT2PD_BIDIRECTIONAL";
  }
  return "VT2PD";
}

TaskKind task_from_string(std::string_view s) {
  if (s == "VT2PD") return TaskKind::kVt2pd;
  if (s == "VT2POD") return TaskKind::kVt2pod;
  if (s == "VT2PD_BIDIRECTIONAL") return TaskKind::kVt2pdBidirectional;
  throw Error(ErrorCode::kInvalidArgument, "unknown task '" + std::string(s) + "'");
}

std::string_view to_string(Choice c) {
  switch (c) {
    case Choice::kFirstA: return "FIRST_A";
    case Choice::kFirstB: return "FIRST_B";
    case Choice::kHorizontal: return "HORIZONTAL";
    case Choice::kVertical: return "VERTICAL";
  }
  return "FIRST_A";
}

Choice choice_from_string(std::string_view s) {
  if (s == "FIRST_A") return Choice::kFirstA;
  if (s == "FIRST_B") return Choice::kFirstB;
  if (s == "HORIZONTAL") return Choice::kHorizontal;
  if (s == "VERTICAL") return Choice::kVertical;
  throw Error(ErrorCode::kInvalidArgument, "unknown choice '" + std::string(s) + "'");
}

std::array<Choice, 2> choices_for(TaskKind task) {
  if (task == TaskKind::kVt2pod) return {Choice::kHorizontal, Choice::kVertical};
  return {Choice::kFirstA, Choice::kFirstB};
}

int option_index(Choice c) { return (c == Choice::kFirstA || c == Choice::kHorizontal) ? 0 : 1; }

Choice other_choice(Choice c) {
  switch (c) {
    case Choice::kFirstA: return Choice::kFirstB;
    case Choice::kFirstB: return Choice::kFirstA;
    case Choice::kHorizontal: return Choice::kVertical;
    case Choice::kVertical: return Choice::kHorizontal;
  }
  return c;
}

}  // namespace vibropsi
