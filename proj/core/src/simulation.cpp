#include "vibropsi/simulation.hpp"

#include "vibropsi/error.hpp"

namespace vibropsi {

SessionRecord simulate_session(const SessionConfig& config, const ObserverModel& observer,
                               std::shared_ptr<const BapeModel> model,
                               const BackendConfig& backend) {
  observer.validate();
  auto rig = make_apparatus(backend, config.apparatus, derive_seed(config.seed, kDeviceStream),
                            config.task);
  auto session = Session::start(config, std::move(rig), std::move(model));
  ObserverResponder responder(observer, derive_seed(config.seed, kObserverStream));
  const int max_attempts = 10 * config.total_trials();
  int attempts = 0;
  while (!session->trials_complete()) {
    if (++attempts > max_attempts) {
      return session->abort("too many voided trials");
    }
    if (session->phase() == Phase::kReorienting) session->advance_block();
    session->run_trial(responder);
  }
  return session->finalize();
}

double extreme_fraction(const SessionRecord& record, int from_index) {
  const auto& c = record.config.candidates.separations;
  if (c.empty()) return 0.0;
  int total = 0;
  int extreme = 0;
  for (const auto& t : record.trials) {
    if (t.index < from_index) continue;
    ++total;
    if (t.separation == c.front() || t.separation == c.back()) ++extreme;
  }
  return total == 0 ? 0.0 : static_cast<double>(extreme) / total;
}

}  // namespace vibropsi
