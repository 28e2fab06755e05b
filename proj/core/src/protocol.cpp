#include "vibropsi/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vibropsi/error.hpp"
#include "vibropsi/record.hpp"

namespace vibropsi {

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::kAligning: return "ALIGNING";
    case Phase::kAwaitingResponse: return "AWAITING_RESPONSE";
    case Phase::kBetweenTrials: return "BETWEEN_TRIALS";
    case Phase::kReorienting: return "REORIENTING";
    case Phase::kComplete: return "COMPLETE";
    case Phase::kExcluded: return "EXCLUDED";
    case Phase::kAborted: return "ABORTED";
  }
  return "ABORTED";
}

Phase phase_from_string(std::string_view s) {
  for (Phase p : {Phase::kAligning, Phase::kAwaitingResponse, Phase::kBetweenTrials,
                  Phase::kReorienting, Phase::kComplete, Phase::kExcluded, Phase::kAborted}) {
    if (s == to_string(p)) return p;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown phase '" + std::string(s) + "'");
}

std::string_view to_string(FirstOrientation f) {
  switch (f) {
    case FirstOrientation::kHorizontal: return "HORIZONTAL";
    case FirstOrientation::kVertical: return "VERTICAL";
    case FirstOrientation::kRandom: return "RANDOM";
  }
  return "RANDOM";
}

FirstOrientation first_orientation_from_string(std::string_view s) {
  if (s == "HORIZONTAL") return FirstOrientation::kHorizontal;
  if (s == "VERTICAL") return FirstOrientation::kVertical;
  if (s == "RANDOM") return FirstOrientation::kRandom;
  throw Error(ErrorCode::kInvalidArgument, "unknown first orientation '" + std::string(s) + "'");
}

void SessionConfig::validate() const {
  if (trials_per_block < 1) throw Error(ErrorCode::kInvalidArgument, "trials_per_block must be >= 1");
  if (!is_safe_identifier(tsid)) {
    throw Error(ErrorCode::kInvalidArgument,
                "tsid must be 1-64 characters of [A-Za-z0-9_.-] and not start with '.'");
  }
  apparatus.validate();
  candidates.validate(apparatus.separation_min, apparatus.separation_max);
  build_grid(grid);  // validates bounds
  if (!(mean_duty >= 0.0 && mean_duty <= 100.0)) {
    throw Error(ErrorCode::kInvalidArgument, "mean_duty must lie in [0, 100]");
  }
  if (!(duty_sd >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "duty_sd must be >= 0");
  if (!(inter_stimulus_ms >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "inter_stimulus_ms must be >= 0");
  }
  if (response_timeout_ms && !(*response_timeout_ms > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "response_timeout_ms must be positive");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::kInvalidArgument, "alpha must lie in (0, 1)");
}

double jittered_duty(double mean_duty, std::mt19937_64& rng, double sd) {
  if (!(sd > 0.0)) return std::clamp(mean_duty, 0.0, 100.0);
  std::normal_distribution<double> jitter(mean_duty, sd);
  return std::clamp(jitter(rng), 0.0, 100.0);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

ObserverResponder::ObserverResponder(ObserverModel model, std::uint64_t seed)
    : model_(std::move(model)), rng_(seed) {
  model_.validate();
}

std::optional<Response> ObserverResponder::respond(const Stimulus& stimulus) {
  return vibropsi::respond(model_, stimulus, rng_);
}

std::optional<Response> ScriptedResponder::respond(const Stimulus& stimulus) {
  seen_.push_back(stimulus);
  if (next_ >= script_.size()) return std::nullopt;
  return script_[next_++];
}

Session::Session(SessionConfig config, std::unique_ptr<Apparatus> rig,
                 std::shared_ptr<const BapeModel> model, std::string session_id,
                 WallClock wall_clock)
    : config_(std::move(config)),
      rig_(std::move(rig)),
      session_id_(std::move(session_id)),
      wall_clock_(std::move(wall_clock)),
      rng_(config_.seed),
      practice_rng_(derive_seed(config_.seed, kPracticeStream)),
      posterior_(Posterior::uniform(std::move(model))) {}

std::unique_ptr<Session> Session::start(SessionConfig config, std::unique_ptr<Apparatus> rig,
                                        std::shared_ptr<const BapeModel> model,
                                        std::string session_id, WallClock wall_clock) {
  config.validate();
  if (!rig) throw Error(ErrorCode::kApparatusUnreachable, "no apparatus attached");
  if (!(rig->config() == config.apparatus)) {
    throw Error(ErrorCode::kInvalidArgument, "apparatus configuration differs from the session's");
  }
  if (!model) {
    model = BapeModel::create(config.grid, config.candidates);
  } else if (!(model->grid().config() == config.grid) ||
             !(model->candidates() == config.candidates)) {
    throw Error(ErrorCode::kInvalidArgument, "shared BAPE model does not match the session config");
  }
  if (session_id.empty()) session_id = config.tsid + "-" + std::to_string(config.seed);
  if (!is_safe_identifier(session_id)) {
    throw Error(ErrorCode::kInvalidArgument, "session id is not a safe identifier");
  }

  std::unique_ptr<Session> s(new Session(std::move(config), std::move(rig), std::move(model),
                                         std::move(session_id), std::move(wall_clock)));
  if (s->wall_clock_) s->created_utc_ = s->wall_clock_();
  s->device_start_ms_ = s->rig_->now_ms();
  s->alignment_ = run_alignment_check(*s->rig_, s->config_.candidates);

  std::bernoulli_distribution coin(0.5);
  const bool heads = coin(s->rng_);
  switch (s->config_.first_orientation) {
    case FirstOrientation::kHorizontal: s->first_orientation_ = Orientation::kHorizontal; break;
    case FirstOrientation::kVertical: s->first_orientation_ = Orientation::kVertical; break;
    case FirstOrientation::kRandom:
      s->first_orientation_ = heads ? Orientation::kHorizontal : Orientation::kVertical;
      break;
  }
  if (s->config_.task == TaskKind::kVt2pod) s->first_orientation_ = Orientation::kHorizontal;
  s->orientation_ = s->first_orientation_;
  s->rig_->reorient(s->orientation_);
  s->next_ = select_next(s->posterior_);
  s->phase_ = Phase::kBetweenTrials;
  return s;
}

int Session::current_block() const noexcept {
  const int done = static_cast<int>(history_.size());
  const int block = done / config_.trials_per_block;
  return std::min(block, block_count(config_.task) - 1);
}

void Session::require_phase(Phase expected, std::string_view op) const {
  if (phase_ != expected) {
    throw Error(ErrorCode::kWrongPhase, std::string(op) + " requires phase " +
                                            std::string(to_string(expected)) + ", session is " +
                                            std::string(to_string(phase_)));
  }
}

PendingTrial Session::deliver(double separation, Orientation orientation, std::mt19937_64& rng,
                              int index, int block) {
  PendingTrial p;
  p.index = index;
  p.block = block;
  p.orientation = orientation;
  p.separation = separation;

  const auto options = choices_for(config_.task);
  std::bernoulli_distribution pick_second(0.5);
  p.target = options[pick_second(rng) ? 1 : 0];
  // Motor order: A then B (pair) or apex then the fired outer tip (triangle).
  p.duties.push_back(jittered_duty(config_.mean_duty, rng, config_.duty_sd));
  p.duties.push_back(jittered_duty(config_.mean_duty, rng, config_.duty_sd));

  p.achieved_separation = rig_->set_separation(separation);
  if (!(std::fabs(p.achieved_separation - separation) < config_.apparatus.separation_tolerance)) {
    throw Error(ErrorCode::kSeparationFault,
                "rig reported " + std::to_string(p.achieved_separation) + " mm for a " +
                    std::to_string(separation) + " mm target");
  }
  p.contact_force = rig_->lower_to_contact();
  p.stimulus_onset_ms = rig_->now_ms();
  if (config_.task == TaskKind::kVt2pod) {
    const Motor outer = p.target == Choice::kHorizontal ? Motor::kB : Motor::kC;
    const Motor motors[] = {Motor::kA, outer};
    rig_->burst(motors, p.duties);
  } else {
    const bool a_first = p.target == Choice::kFirstA;
    const Motor first = a_first ? Motor::kA : Motor::kB;
    const Motor second = a_first ? Motor::kB : Motor::kA;
    const double first_duty[] = {p.duties[a_first ? 0 : 1]};
    const double second_duty[] = {p.duties[a_first ? 1 : 0]};
    rig_->burst(std::span<const Motor>(&first, 1), first_duty);
    rig_->wait(config_.inter_stimulus_ms);
    rig_->burst(std::span<const Motor>(&second, 1), second_duty);
  }
  p.stimulus_complete_ms = rig_->now_ms();
  return p;
}

const PendingTrial& Session::present_stimulus() {
  require_phase(Phase::kBetweenTrials, "present_stimulus");
  if (trials_complete()) {
    throw Error(ErrorCode::kWrongPhase, "all planned trials are recorded; finalize the session");
  }
  const int index = static_cast<int>(history_.size());
  try {
    pending_ = deliver(next_.separation, orientation_, rng_, index, current_block());
  } catch (const Error&) {
    // Leave the rig raised; the session stays between trials.
    try {
      rig_->raise();
    } catch (const Error&) {
    }
    throw;
  }
  phase_ = Phase::kAwaitingResponse;
  return *pending_;
}

const TrialRecord& Session::submit_response(Choice response, double response_time_ms,
                                            std::optional<std::string> client_timestamp) {
  require_phase(Phase::kAwaitingResponse, "submit_response");
  const auto options = choices_for(config_.task);
  if (response != options[0] && response != options[1]) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string(to_string(response)) + " is not an answer for " +
                    std::string(to_string(config_.task)));
  }
  if (!(response_time_ms >= 0.0) || !std::isfinite(response_time_ms)) {
    throw Error(ErrorCode::kInvalidArgument, "response time must be a finite non-negative value");
  }
  rig_->raise();
  const PendingTrial p = std::move(*pending_);
  pending_.reset();

  TrialRecord t;
  t.index = p.index;
  t.block = p.block;
  t.orientation = p.orientation;
  t.separation = p.separation;
  t.achieved_separation = p.achieved_separation;
  t.contact_force = p.contact_force;
  t.target = p.target;
  t.response = response;
  t.correct = response == p.target;
  t.response_time_ms = response_time_ms;
  t.intensity_duties = p.duties;
  t.stimulus_onset_ms = p.stimulus_onset_ms;
  t.client_timestamp = std::move(client_timestamp);

  SelectionTrace trace;
  trace.separation = p.separation;
  trace.entropy_before = entropy(posterior_);
  trace.expected_entropy = next_.expected_entropy;
  posterior_ = update(posterior_, p.separation, t.correct ? Outcome::kCorrect : Outcome::kIncorrect);
  trace.entropy_after = entropy(posterior_);
  history_.push_back(std::move(t));
  trace_.push_back(trace);

  const int done = static_cast<int>(history_.size());
  if (trials_complete()) {
    phase_ = Phase::kBetweenTrials;
  } else {
    next_ = select_next(posterior_);
    phase_ = done % config_.trials_per_block == 0 ? Phase::kReorienting : Phase::kBetweenTrials;
  }
  return history_.back();
}

void Session::void_pending(std::string reason) {
  require_phase(Phase::kAwaitingResponse, "void_pending");
  rig_->raise();
  voided_.push_back({static_cast<int>(history_.size()), pending_->block, pending_->separation,
                     std::move(reason)});
  pending_.reset();
  next_ = select_next(posterior_);
  phase_ = Phase::kBetweenTrials;
}

std::optional<TrialRecord> Session::run_trial(Responder& responder) {
  const PendingTrial& p = present_stimulus();
  const Stimulus stimulus{config_.task, p.separation, p.target, p.orientation};
  const std::optional<Response> r = responder.respond(stimulus);
  if (!r) {
    void_pending("RESPONDER_TIMEOUT");
    return std::nullopt;
  }
  if (config_.response_timeout_ms && r->response_time_ms > *config_.response_timeout_ms) {
    void_pending("RESPONDER_TIMEOUT");
    return std::nullopt;
  }
  return submit_response(r->choice, r->response_time_ms);
}

TrialRecord Session::practice_trial(double separation, Responder& responder) {
  require_phase(Phase::kBetweenTrials, "practice_trial");
  if (!history_.empty()) {
    throw Error(ErrorCode::kWrongPhase, "practice trials must precede the scored session");
  }
  PendingTrial p;
  try {
    p = deliver(separation, orientation_, practice_rng_, static_cast<int>(practice_.size()), 0);
  } catch (const Error&) {
    try {
      rig_->raise();
    } catch (const Error&) {
    }
    throw;
  }
  const Stimulus stimulus{config_.task, p.separation, p.target, p.orientation};
  const std::optional<Response> r = responder.respond(stimulus);
  rig_->raise();
  TrialRecord t;
  t.index = p.index;
  t.block = 0;
  t.orientation = p.orientation;
  t.separation = p.separation;
  t.achieved_separation = p.achieved_separation;
  t.contact_force = p.contact_force;
  t.target = p.target;
  t.response = r ? r->choice : other_choice(p.target);
  t.correct = r && r->choice == p.target;
  t.response_time_ms = r ? r->response_time_ms : 0.0;
  t.intensity_duties = p.duties;
  t.stimulus_onset_ms = p.stimulus_onset_ms;
  practice_.push_back(t);
  return t;
}

void Session::advance_block() {
  require_phase(Phase::kReorienting, "advance_block");
  orientation_ = toggled(orientation_);
  rig_->reorient(orientation_);
  phase_ = Phase::kBetweenTrials;
}

SessionRecord Session::snapshot() const {
  SessionRecord r;
  r.session_id = session_id_;
  r.tsid = config_.tsid;
  r.phase = phase_;
  r.abort_reason = abort_reason_;
  r.config = config_;
  r.first_orientation = first_orientation_;
  r.alignment = alignment_;
  r.trials = history_;
  r.voided = voided_;
  r.practice = practice_;
  r.selection_trace = trace_;
  r.bias_report = bias_report_;
  r.timestamps.created_utc = created_utc_;
  r.timestamps.finished_utc = finished_utc_;
  r.timestamps.device_start_ms = device_start_ms_;
  r.timestamps.device_end_ms = rig_->now_ms();
  return r;
}

SessionRecord Session::finalize() {
  if (history_.empty()) {
    throw Error(ErrorCode::kWrongPhase, "cannot finalize a session without trials");
  }
  require_phase(Phase::kBetweenTrials, "finalize");
  if (!trials_complete()) {
    throw Error(ErrorCode::kWrongPhase, "finalize requires all " +
                                            std::to_string(config_.total_trials()) +
                                            " planned trials");
  }
  bias_report_ = run_bias_guard(history_, config_.alpha);
  phase_ = bias_report_->excluded ? Phase::kExcluded : Phase::kComplete;
  if (wall_clock_) finished_utc_ = wall_clock_();
  SessionRecord r = snapshot();
  const auto xs = default_curve_grid();
  r.postmean = postmean_curve(posterior_, xs);
  return r;
}

SessionRecord Session::abort(std::string reason) {
  if (phase_ == Phase::kComplete || phase_ == Phase::kExcluded || phase_ == Phase::kAborted) {
    throw Error(ErrorCode::kWrongPhase, "session already ended");
  }
  if (pending_) {
    try {
      rig_->raise();
    } catch (const Error&) {
    }
    pending_.reset();
  }
  abort_reason_ = std::move(reason);
  phase_ = Phase::kAborted;
  if (wall_clock_) finished_utc_ = wall_clock_();
  if (!history_.empty()) bias_report_ = run_bias_guard(history_, config_.alpha);
  SessionRecord r = snapshot();
  const auto xs = default_curve_grid();
  r.postmean = postmean_curve(posterior_, xs);
  return r;
}

Posterior refit(std::shared_ptr<const BapeModel> model, std::span<const TrialRecord> history) {
  Posterior p = Posterior::uniform(std::move(model));
  for (const TrialRecord& t : history) {
    p = update(p, t.separation, t.correct ? Outcome::kCorrect : Outcome::kIncorrect);
  }
  return p;
}

}  // namespace vibropsi
