#pragma once

#include <cstdint>
#include <memory>

#include "vibropsi/config.hpp"
#include "vibropsi/protocol.hpp"
#include "vibropsi/record.hpp"

namespace vibropsi {

/// Runs one unattended session to completion against a simulated (or
/// bridged) rig. Streams derive from config.seed; no wall clock is used, so
/// the record is a pure function of the inputs.
SessionRecord simulate_session(const SessionConfig& config, const ObserverModel& observer,
                               std::shared_ptr<const BapeModel> model = nullptr,
                               const BackendConfig& backend = {});

/// Fraction of scored trials with index >= `from_index` placed at the
/// smallest or largest candidate.
double extreme_fraction(const SessionRecord& record, int from_index = 20);

}  // namespace vibropsi
