#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>

#include "oracles.hpp"
#include "vibropsi/error.hpp"
#include "vibropsi/protocol.hpp"
#include "vibropsi/record.hpp"

using namespace vibropsi;

namespace {

GridConfig small_grid() {
  GridConfig g;
  g.b_count = 6;
  g.gamma_count = 5;
  g.gamma_max = 0.9;
  return g;
}

SessionConfig base_config(std::uint64_t seed, TaskKind task = TaskKind::kVt2pd, int trials = 10) {
  SessionConfig c;
  c.task = task;
  c.trials_per_block = trials;
  c.tsid = "P01";
  c.seed = seed;
  c.grid = small_grid();
  return c;
}

std::unique_ptr<Session> start(const SessionConfig& c, SimulatorOptions opts = {}) {
  return Session::start(c, std::make_unique<SimulatedApparatus>(c.apparatus, opts));
}

const SimulatedApparatus& sim(const Session& s) {
  return dynamic_cast<const SimulatedApparatus&>(s.apparatus());
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

/// Answers FIRST_A / HORIZONTAL always, 700 ms.
std::vector<std::optional<Response>> constant_script(int n, Choice c = Choice::kFirstA) {
  return std::vector<std::optional<Response>>(static_cast<std::size_t>(n), Response{c, 700.0});
}

}  // namespace

TEST_SUITE("protocol") {

TEST_CASE("fresh session on the default grid") {
  SessionConfig c = base_config(7);
  c.grid = {};
  auto s = start(c);
  CHECK(s->phase() == Phase::kBetweenTrials);
  CHECK(entropy(s->posterior()) == doctest::Approx(std::log(90000.0)).epsilon(1e-12));
  CHECK(s->posterior().trial_count() == 0);
  const auto model = BapeModel::create(GridConfig{}, default_candidates());
  const Selection ref = select_next(Posterior::uniform(model));
  CHECK(s->next_selection().index == ref.index);
  CHECK(s->next_separation() == ref.separation);
  CHECK(s->alignment().passed);
  CHECK(s->session_id() == "P01-7");
}

TEST_CASE("config validation") {
  SessionConfig c = base_config(1);
  c.trials_per_block = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = base_config(1);
  c.tsid = "";
  CHECK_THROWS_AS(c.validate(), Error);
  c.tsid = "../etc";
  CHECK_THROWS_AS(c.validate(), Error);
  c = base_config(1);
  c.candidates = CandidateSet{{1.0, 5.0}};
  CHECK_THROWS_AS(c.validate(), Error);
  c = base_config(1);
  c.mean_duty = 120;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(base_config(1, TaskKind::kVt2pdBidirectional, 50).total_trials() == 100);
  CHECK(base_config(1, TaskKind::kVt2pod, 50).total_trials() == 50);
}

TEST_CASE("rig and model must match the config") {
  SessionConfig c = base_config(1);
  ApparatusConfig other;
  other.contact_force = 0.6;
  CHECK_THROWS_AS(Session::start(c, std::make_unique<SimulatedApparatus>(other)), Error);
  CHECK(code_of([&] { Session::start(c, nullptr); }) == ErrorCode::kApparatusUnreachable);
  const auto wrong = BapeModel::create(GridConfig{}, default_candidates());
  CHECK_THROWS_AS(Session::start(c, std::make_unique<SimulatedApparatus>(), wrong), Error);
}

TEST_CASE("alignment failure prevents the start") {
  try {
    (void)start(base_config(1), {.fault = FaultProfile::kForceDrift});
    FAIL("expected ALIGNMENT_FAILED");
  } catch (const AlignmentError& e) {
    CHECK(e.report().steps.size() == 5);
  }
}

TEST_CASE("random first orientation follows the seeded coin") {
  std::map<Orientation, int> seen;
  for (std::uint64_t seed = 0; seed < 16; ++seed) {
    SessionConfig c = base_config(seed, TaskKind::kVt2pdBidirectional);
    auto s = start(c);
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    const Orientation expect = coin(rng) ? Orientation::kHorizontal : Orientation::kVertical;
    CHECK(s->first_orientation() == expect);
    CHECK(s->orientation() == expect);
    CHECK(sim(*s).orientation() == expect);
    ++seen[expect];
  }
  CHECK(seen.size() == 2);
  SessionConfig fixed = base_config(3, TaskKind::kVt2pdBidirectional);
  fixed.first_orientation = FirstOrientation::kVertical;
  CHECK(start(fixed)->first_orientation() == Orientation::kVertical);
}

TEST_CASE("session RNG draw order") {
  const SessionConfig c = base_config(99);
  auto s = start(c);
  ScriptedResponder r(constant_script(10));
  for (int i = 0; i < 10; ++i) REQUIRE(s->run_trial(r).has_value());

  std::mt19937_64 rng(99);
  std::bernoulli_distribution coin(0.5);
  (void)coin(rng);
  for (const TrialRecord& t : s->history()) {
    std::bernoulli_distribution second(0.5);
    const Choice target = second(rng) ? Choice::kFirstB : Choice::kFirstA;
    std::normal_distribution<double> ja(80.0, 3.0);
    const double da = std::clamp(ja(rng), 0.0, 100.0);
    std::normal_distribution<double> jb(80.0, 3.0);
    const double db = std::clamp(jb(rng), 0.0, 100.0);
    CHECK(t.target == target);
    CHECK(t.intensity_duties == std::vector<double>{da, db});
  }
}

TEST_CASE("trial records and posterior stay consistent") {
  auto s = start(base_config(5));
  ObserverResponder obs(ObserverModel::ideal({22.5, 3.0, 0.5, 0.02}), 77);
  const auto& cands = s->config().candidates.separations;
  while (!s->trials_complete()) {
    const double planned = s->next_separation();
    const auto t = s->run_trial(obs);
    REQUIRE(t.has_value());
    CHECK(t->separation == planned);
    CHECK(std::find(cands.begin(), cands.end(), t->separation) != cands.end());
    CHECK(t->correct == (t->response == t->target));
    CHECK(std::fabs(t->achieved_separation - t->separation) < 0.2);
    CHECK(t->contact_force >= 0.48);
    CHECK(t->contact_force <= 0.52);
    CHECK(s->posterior().trial_count() == static_cast<int>(s->history().size()));
    CHECK(s->selection_trace().size() == s->history().size());
  }
  const Posterior again = refit(s->posterior().model_ptr(), s->history());
  for (std::size_t i = 0; i < again.weights().size(); ++i) {
    CHECK(std::fabs(again.weights()[i] - s->posterior().weights()[i]) < 1e-12);
  }
}

TEST_CASE("two-point trial fires both sides once, in target order") {
  auto s = start(base_config(12, TaskKind::kVt2pd, 20));
  ScriptedResponder r(constant_script(20));
  for (int i = 0; i < 20; ++i) {
    auto& rig = const_cast<SimulatedApparatus&>(sim(*s));
    rig.clear_transcript();
    const auto t = s->run_trial(r);
    const auto& log = rig.transcript();
    REQUIRE(log.size() == 6);
    CHECK(log[0].kind == TranscriptKind::kSetSeparation);
    CHECK(log[1].kind == TranscriptKind::kLower);
    CHECK(log[2].kind == TranscriptKind::kBurst);
    CHECK(log[3].kind == TranscriptKind::kWait);
    CHECK(log[3].duration_ms == 500.0);
    CHECK(log[4].kind == TranscriptKind::kBurst);
    CHECK(log[5].kind == TranscriptKind::kRaise);
    REQUIRE(log[2].motors.size() == 1);
    REQUIRE(log[4].motors.size() == 1);
    const Motor first = t->target == Choice::kFirstA ? Motor::kA : Motor::kB;
    CHECK(log[2].motors[0] == first);
    CHECK(log[4].motors[0] != first);
    CHECK(log[4].start_ms >= log[2].start_ms + 200.0);
    const double duty_a = log[2].motors[0] == Motor::kA ? log[2].duties[0] : log[4].duties[0];
    CHECK(duty_a == t->intensity_duties[0]);
  }
}

TEST_CASE("orientation trial fires the apex with one outer tip") {
  auto s = start(base_config(4, TaskKind::kVt2pod, 20));
  ScriptedResponder r(constant_script(20, Choice::kHorizontal));
  for (int i = 0; i < 20; ++i) {
    auto& rig = const_cast<SimulatedApparatus&>(sim(*s));
    rig.clear_transcript();
    const auto t = s->run_trial(r);
    CHECK((t->target == Choice::kHorizontal || t->target == Choice::kVertical));
    std::vector<TranscriptEvent> bursts;
    for (const auto& e : rig.transcript()) {
      if (e.kind == TranscriptKind::kBurst) bursts.push_back(e);
    }
    REQUIRE(bursts.size() == 1);
    const Motor outer = t->target == Choice::kHorizontal ? Motor::kB : Motor::kC;
    CHECK(bursts[0].motors == std::vector<Motor>{Motor::kA, outer});
  }
}

TEST_CASE("answers outside the task are rejected") {
  auto s = start(base_config(4, TaskKind::kVt2pod));
  s->present_stimulus();
  CHECK(code_of([&] { s->submit_response(Choice::kFirstA, 500); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { s->submit_response(Choice::kVertical, -1); }) == ErrorCode::kInvalidArgument);
  CHECK(s->phase() == Phase::kAwaitingResponse);
  CHECK_NOTHROW(s->submit_response(Choice::kVertical, 500));
}

TEST_CASE("phase guards") {
  auto s = start(base_config(1, TaskKind::kVt2pd, 2));
  CHECK(code_of([&] { s->submit_response(Choice::kFirstA, 1); }) == ErrorCode::kWrongPhase);
  CHECK(code_of([&] { s->advance_block(); }) == ErrorCode::kWrongPhase);
  CHECK(code_of([&] { (void)s->finalize(); }) == ErrorCode::kWrongPhase);
  s->present_stimulus();
  CHECK(code_of([&] { s->present_stimulus(); }) == ErrorCode::kWrongPhase);
  s->submit_response(Choice::kFirstA, 1);
  CHECK(code_of([&] { (void)s->finalize(); }) == ErrorCode::kWrongPhase);
  s->present_stimulus();
  s->submit_response(Choice::kFirstB, 1);
  CHECK(code_of([&] { s->present_stimulus(); }) == ErrorCode::kWrongPhase);
  const SessionRecord r = s->finalize();
  CHECK((r.phase == Phase::kComplete || r.phase == Phase::kExcluded));
  CHECK(code_of([&] { (void)s->abort("late"); }) == ErrorCode::kWrongPhase);
}

TEST_CASE("bidirectional blocks") {
  SessionConfig c = base_config(8, TaskKind::kVt2pdBidirectional, 4);
  c.first_orientation = FirstOrientation::kHorizontal;
  auto s = start(c);
  ObserverResponder obs(ObserverModel::ideal({22.5, 3.0, 0.5, 0.02}), 3);
  for (int i = 0; i < 4; ++i) s->run_trial(obs);
  CHECK(s->phase() == Phase::kReorienting);
  CHECK(code_of([&] { s->present_stimulus(); }) == ErrorCode::kWrongPhase);
  const Posterior before = s->posterior();
  s->advance_block();
  CHECK(s->posterior() == before);
  CHECK(s->orientation() == Orientation::kVertical);
  CHECK(sim(*s).orientation() == Orientation::kVertical);
  for (int i = 0; i < 4; ++i) {
    const auto t = s->run_trial(obs);
    CHECK(t->block == 1);
    CHECK(t->orientation == Orientation::kVertical);
  }
  CHECK(s->history()[3].orientation == Orientation::kHorizontal);
  CHECK(s->history()[3].block == 0);
  CHECK(s->trials_complete());
  const Posterior all = refit(s->posterior().model_ptr(), s->history());
  for (std::size_t i = 0; i < all.weights().size(); ++i) {
    CHECK(std::fabs(all.weights()[i] - s->posterior().weights()[i]) < 1e-12);
  }
  const SessionRecord r = s->finalize();
  CHECK(r.trials.size() == 8);
  CHECK(r.postmean.has_value());
}

TEST_CASE("voided trials never reach the posterior") {
  auto s = start(base_config(2, TaskKind::kVt2pd, 3));
  std::vector<std::optional<Response>> script{Response{Choice::kFirstA, 500}, std::nullopt,
                                              Response{Choice::kFirstB, 500}, Response{Choice::kFirstA, 500}};
  ScriptedResponder r(script);
  CHECK(s->run_trial(r).has_value());
  const Posterior before = s->posterior();
  CHECK_FALSE(s->run_trial(r).has_value());
  CHECK(s->posterior() == before);
  CHECK(s->history().size() == 1);
  REQUIRE(s->voided().size() == 1);
  CHECK(s->voided()[0].attempt == 1);
  CHECK(s->voided()[0].reason == "RESPONDER_TIMEOUT");
  CHECK(s->phase() == Phase::kBetweenTrials);
  CHECK(s->run_trial(r).has_value());
  CHECK(s->run_trial(r).has_value());
  CHECK(s->trials_complete());
}

TEST_CASE("response deadline voids slow answers") {
  SessionConfig c = base_config(2, TaskKind::kVt2pd, 2);
  c.response_timeout_ms = 1000.0;
  auto s = start(c);
  ScriptedResponder r({Response{Choice::kFirstA, 1500}, Response{Choice::kFirstA, 900}});
  CHECK_FALSE(s->run_trial(r).has_value());
  CHECK(s->run_trial(r).has_value());
  CHECK(s->voided().size() == 1);
}

TEST_CASE("finalize runs the bias guard") {
  auto clean = start(base_config(3, TaskKind::kVt2pd, 50));
  ObserverResponder obs(ObserverModel::ideal({22.5, 3.0, 0.5, 0.02}), 11);
  while (!clean->trials_complete()) clean->run_trial(obs);
  const SessionRecord r = clean->finalize();
  REQUIRE(r.bias_report.has_value());
  CHECK(*r.bias_report == run_bias_guard(r.trials, 0.05));
  CHECK(r.phase == (r.bias_report->excluded ? Phase::kExcluded : Phase::kComplete));

  auto biased = start(base_config(3, TaskKind::kVt2pd, 50));
  ObserverResponder left(ObserverModel::side_biased(0, 1.0), 11);
  while (!biased->trials_complete()) biased->run_trial(left);
  const SessionRecord b = biased->finalize();
  CHECK(b.phase == Phase::kExcluded);
  CHECK(std::find(b.bias_report->flags.begin(), b.bias_report->flags.end(), BiasFlag::kSideBias) !=
        b.bias_report->flags.end());
}

TEST_CASE("zero-trial finalize fails") {
  auto s = start(base_config(3));
  CHECK(code_of([&] { (void)s->finalize(); }) == ErrorCode::kWrongPhase);
  CHECK(s->phase() == Phase::kBetweenTrials);
}

TEST_CASE("abort keeps the partial history") {
  auto s = start(base_config(3));
  ScriptedResponder r(constant_script(2));
  s->run_trial(r);
  s->present_stimulus();
  const SessionRecord rec = s->abort("operator stop");
  CHECK(rec.phase == Phase::kAborted);
  CHECK(rec.abort_reason == "operator stop");
  CHECK(rec.trials.size() == 1);
  CHECK_FALSE(sim(*s).in_contact());
  CHECK(code_of([&] { s->present_stimulus(); }) == ErrorCode::kWrongPhase);
}

TEST_CASE("practice trials use their own stream and leave the posterior alone") {
  auto plain = start(base_config(21));
  auto practiced = start(base_config(21));
  ScriptedResponder r1(constant_script(20)), r2(constant_script(20));
  for (double x : {45.0, 42.5, 40.0}) {
    const TrialRecord t = practiced->practice_trial(x, r2);
    CHECK(t.separation == x);
  }
  CHECK(practiced->practice().size() == 3);
  CHECK(practiced->posterior().weights() == plain->posterior().weights());
  CHECK(practiced->posterior().trial_count() == 0);
  CHECK(practiced->history().empty());
  for (int i = 0; i < 5; ++i) {
    const auto a = plain->run_trial(r1), b = practiced->run_trial(r2);
    CHECK(a->target == b->target);
    CHECK(a->intensity_duties == b->intensity_duties);
    CHECK(a->separation == b->separation);
  }
  CHECK(code_of([&] { (void)practiced->practice_trial(45.0, r2); }) == ErrorCode::kWrongPhase);
}

TEST_CASE("stuck caliper is reported as a separation fault") {
  auto s = start(base_config(3), {.fault = FaultProfile::kSeparationStick});
  if (std::fabs(s->next_separation() - 45.0) >= 0.2) {
    CHECK(code_of([&] { s->present_stimulus(); }) == ErrorCode::kSeparationFault);
    CHECK(s->phase() == Phase::kBetweenTrials);
    CHECK_FALSE(sim(*s).in_contact());
  }
}

TEST_CASE("jittered duty") {
  std::mt19937_64 rng(1);
  std::vector<double> v;
  for (int i = 0; i < 10000; ++i) v.push_back(jittered_duty(80.0, rng));
  CHECK(std::fabs(oracle::mean(v) - 80.0) < 0.1);
  CHECK(std::fabs(oracle::sample_sd(v) - 3.0) < 0.1);
  std::mt19937_64 a(5), b(5);
  for (int i = 0; i < 50; ++i) CHECK(jittered_duty(80.0, a) == jittered_duty(80.0, b));
  for (int i = 0; i < 10000; ++i) {
    const double d = jittered_duty(100.0, rng);
    CHECK(d <= 100.0);
    CHECK(d >= 0.0);
  }
  CHECK(jittered_duty(50.0, rng, 0.0) == 50.0);
}

TEST_CASE("target options are balanced") {
  SessionConfig c = base_config(1234, TaskKind::kVt2pd, 10000);
  c.grid.a_count = 2;
  c.grid.b_count = 2;
  c.grid.gamma_count = 2;
  c.grid.gamma_max = 0.5;
  auto s = start(c);
  ObserverResponder obs(ObserverModel::flat(0.6), 5);
  int first = 0;
  while (!s->trials_complete()) first += s->run_trial(obs)->target == Choice::kFirstA;
  const double f = first / 10000.0;
  CHECK(f >= 0.48);
  CHECK(f <= 0.52);
}

TEST_CASE("ideal responses converge to the observer's curve") {
  const WeibullParams truth{22.5, 3.0, 0.5, 0.02};
  std::map<double, std::pair<int, int>> tally;  // separation -> (correct, total)
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    auto s = start(base_config(seed, TaskKind::kVt2pd, 50));
    ObserverResponder obs(ObserverModel::ideal(truth), derive_seed(seed, kObserverStream));
    while (!s->trials_complete()) {
      const auto t = s->run_trial(obs);
      auto& cell = tally[t->separation];
      cell.first += t->correct;
      ++cell.second;
    }
  }
  for (const auto& [x, ct] : tally) {
    if (ct.second < 100) continue;
    const double p = oracle::weibull(22.5, 3.0, 0.5, 0.02, x);
    const double se = std::sqrt(p * (1 - p) / ct.second);
    CHECK(std::fabs(static_cast<double>(ct.first) / ct.second - p) < 4.5 * se + 1e-9);
  }
}

TEST_CASE("replay determinism") {
  const SessionConfig c = base_config(31, TaskKind::kVt2pdBidirectional, 6);
  std::vector<std::optional<Response>> script;
  for (int i = 0; i < 12; ++i) script.emplace_back(Response{i % 3 ? Choice::kFirstA : Choice::kFirstB, 600.0 + i});
  const auto run = [&] {
    auto s = Session::start(c, std::make_unique<SimulatedApparatus>(c.apparatus, SimulatorOptions{.seed = 4}), nullptr,
                            "", [] { return std::string("2026-01-01T00:00:00Z"); });
    ScriptedResponder r(script);
    while (!s->trials_complete()) {
      if (s->phase() == Phase::kReorienting) s->advance_block();
      s->run_trial(r);
    }
    return serialize_record(s->finalize());
  };
  const std::string a = run();
  CHECK(a == run());
  CHECK(a.find("2026-01-01T00:00:00Z") != std::string::npos);
}

TEST_CASE("phase and orientation names") {
  for (Phase p : {Phase::kAligning, Phase::kAwaitingResponse, Phase::kBetweenTrials, Phase::kReorienting,
                  Phase::kComplete, Phase::kExcluded, Phase::kAborted}) {
    CHECK(phase_from_string(to_string(p)) == p);
  }
  CHECK_THROWS_AS(phase_from_string("DONE"), Error);
  CHECK(first_orientation_from_string("RANDOM") == FirstOrientation::kRandom);
  CHECK(derive_seed(1, 1) != derive_seed(1, 2));
  CHECK(derive_seed(1, 1) == derive_seed(1, 1));
}

}  // TEST_SUITE
