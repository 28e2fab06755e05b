#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "vibropsi/error.hpp"
#include "vibropsi/http_server.hpp"
#include "vibropsi/service.hpp"

using namespace vibropsi;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "vibropsi-service-tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ServiceSettings settings_for(const fs::path& dir) {
  ServiceSettings s;
  s.data_dir = dir.string();
  return s;
}

/// Wall clock yielding strictly increasing timestamps one second apart.
SessionService::WallClock ticking_wall() {
  auto n = std::make_shared<int>(0);
  return [n] {
    const int k = (*n)++;
    char buf[64];
    std::snprintf(buf, sizeof buf, "2026-01-01T00:%02d:%02d.000Z", k / 60, k % 60);
    return std::string(buf);
  };
}

/// Monotonic clock advancing 700 ms per reading.
SessionService::MonotonicClock stepping_clock() {
  auto t = std::make_shared<double>(0.0);
  return [t] { return *t += 700.0; };
}

std::string create_body(const std::string& tsid, std::uint64_t seed, const std::string& task = "VT2PD",
                        int trials = 4, const std::string& extra = "") {
  return R"({"session": {"tsid": ")" + tsid + R"(", "task": ")" + task + R"(", "trials_per_block": )" +
         std::to_string(trials) + R"(, "seed": )" + std::to_string(seed) +
         R"(, "grid": {"b_count": 5, "gamma_count": 4, "gamma_max": 0.8})" + extra + "}}";
}

Json body_of(const ApiResponse& r) { return Json::parse(r.body); }

std::string first_choice(const Json& pending) { return pending.at("choices").at(0).get<std::string>(); }

}  // namespace

TEST_SUITE("service") {

TEST_CASE("create, respond and complete") {
  const fs::path dir = scratch_dir("complete");
  SessionService svc(settings_for(dir), ticking_wall(), stepping_clock());
  const ApiResponse created = svc.create_session(create_body("P01", 11));
  REQUIRE(created.status == 201);
  const Json c = body_of(created);
  CHECK(c["schema_version"] == 1);
  const std::string id = c["session"]["session_id"];
  CHECK(c["session"]["phase"] == "AWAITING_RESPONSE");
  CHECK(c["session"]["total_trials"] == 4);
  CHECK(c["pending"]["index"] == 0);

  Json last;
  for (int i = 0; i < 4; ++i) {
    const Json pending = body_of(svc.get_session(id))["pending"];
    const ApiResponse r =
        svc.submit_response(id, R"({"response": ")" + first_choice(pending) + R"(", "client_timestamp": "t"})");
    REQUIRE(r.status == 200);
    last = body_of(r);
    CHECK(last["trial"]["index"] == i);
    CHECK(last["trial"]["response_time_ms"] == doctest::Approx(700.0));
    CHECK(last["trial"]["client_timestamp"] == "t");
  }
  CHECK(last["session"]["phase"] == "COMPLETE");
  CHECK(last["pending"].is_null());

  const ApiResponse rec = svc.record(id);
  REQUIRE(rec.status == 200);
  const fs::path path = record_path(dir, "P01", id);
  CHECK(rec.body == read_text_file(path));
  const SessionRecord parsed = parse_record(rec.body);
  CHECK(serialize_record(parsed) == rec.body);
  CHECK(parsed.trials.size() == 4);
  CHECK(parsed.phase == Phase::kComplete);
  CHECK(parsed.postmean.has_value());

  const Json live = body_of(svc.live_state(id));
  CHECK(live["session"]["phase"] == "COMPLETE");
  CHECK(live["history"].size() == 4);
  CHECK(live["bias"].is_object());

  CHECK(svc.submit_response(id, R"({"response": "FIRST_A"})").status == 409);
  CHECK(body_of(svc.submit_response(id, R"({"response": "FIRST_A"})"))["error"]["code"] == "WRONG_PHASE");
  CHECK(svc.abort(id, "").status == 409);
}

TEST_CASE("target never appears before the answer") {
  const fs::path dir = scratch_dir("leak");
  SessionService svc(settings_for(dir), ticking_wall(), stepping_clock());
  const std::string id =
      body_of(svc.create_session(create_body("P02", 4, "VT2PD", 3, R"(, "reveal_feedback": false)")))["session"]
                                                                                                        ["session_id"];
  for (int i = 0; i < 3; ++i) {
    for (const ApiResponse& r : {svc.get_session(id), svc.live_state(id)}) {
      CHECK(r.body.find("\"target\"") == std::string::npos);
    }
    CHECK(svc.get_session(id).body.find("\"correct\"") == std::string::npos);
    const ApiResponse r = svc.submit_response(id, R"({"response": "FIRST_B"})");
    CHECK(r.body.find("\"target\"") == std::string::npos);
    CHECK_FALSE(body_of(r)["trial"].contains("correct"));
  }
}

TEST_CASE("feedback is revealed only when configured") {
  const fs::path dir = scratch_dir("reveal");
  SessionService svc(settings_for(dir), ticking_wall(), stepping_clock());
  const std::string id =
      body_of(svc.create_session(create_body("P03", 4, "VT2PD", 2, R"(, "reveal_feedback": true)")))["session"]
                                                                                                       ["session_id"];
  const Json r = body_of(svc.submit_response(id, R"({"response": "FIRST_B"})"));
  CHECK(r["trial"]["correct"].is_boolean());
}

TEST_CASE("bidirectional sessions pause for reorientation") {
  const fs::path dir = scratch_dir("bidir");
  SessionService svc(settings_for(dir), ticking_wall(), stepping_clock());
  const std::string id = body_of(svc.create_session(create_body("P04", 9, "VT2PD_BIDIRECTIONAL", 2)))["session"]
                                                                                                      ["session_id"];
  CHECK(svc.advance(id).status == 409);
  svc.submit_response(id, R"({"response": "FIRST_A"})");
  const Json r = body_of(svc.submit_response(id, R"({"response": "FIRST_A"})"));
  CHECK(r["session"]["phase"] == "REORIENTING");
  CHECK(r["pending"].is_null());
  CHECK(r["next_orientation"].is_string());
  CHECK(svc.submit_response(id, R"({"response": "FIRST_A"})").status == 409);
  const Json adv = body_of(svc.advance(id));
  CHECK(adv["session"]["phase"] == "AWAITING_RESPONSE");
  CHECK(adv["session"]["orientation"] == r["next_orientation"]);
  CHECK(adv["pending"]["block"] == 1);
}

TEST_CASE("request validation") {
  const fs::path dir = scratch_dir("validation");
  SessionService svc(settings_for(dir), ticking_wall(), stepping_clock());
  CHECK(svc.create_session("").status == 400);
  CHECK(svc.create_session("{oops").status == 400);
  CHECK(svc.create_session("[1]").status == 400);
  CHECK(svc.create_session(R"({"session": {"tsid": "P"}, "colour": 1})").status == 400);
  CHECK(svc.create_session(R"({"session": {"tsid": "P", "trials_per_block": 0}})").status == 400);
  CHECK(body_of(svc.create_session(R"({"session": {"tsid": "P", "trials_per_block": 0}})"))["error"]["code"] ==
        "INVALID_ARGUMENT");
  CHECK(svc.create_session(R"({"session": {"tsid": "../x"}})").status == 400);
  CHECK(svc.get_session("nope").status == 404);
  CHECK(body_of(svc.get_session("nope"))["error"]["code"] == "UNKNOWN_SESSION");
  CHECK(svc.record("nope").status == 404);

  const std::string id = body_of(svc.create_session(create_body("P05", 1)))["session"]["session_id"];
  CHECK(svc.submit_response(id, "").status == 400);
  CHECK(svc.submit_response(id, R"({"response": "SIDEWAYS"})").status == 400);
  CHECK(svc.submit_response(id, R"({"response": "HORIZONTAL"})").status == 400);
  CHECK(svc.submit_response(id, R"({"response": "FIRST_A", "extra": 1})").status == 400);
  CHECK(svc.submit_response(id, R"({"response": 1})").status == 400);
  CHECK(svc.submit_response(id, R"({"response": "FIRST_A", "client_timestamp": 5})").status == 400);
  CHECK(svc.abort(id, R"({"why": "x"})").status == 400);
  CHECK(body_of(svc.live_state(id))["history"].empty());
}

TEST_CASE("apparatus faults abort the session") {
  const fs::path dir = scratch_dir("fault");
  SessionService svc(settings_for(dir), ticking_wall(), stepping_clock());
  const std::string body = create_body("P06", 2);
  const std::string with_fault = body.substr(0, body.size() - 1) + R"(, "apparatus": "simulator:no-contact"})";
  const ApiResponse r = svc.create_session(with_fault);
  const Json j = body_of(r);
  if (r.status == 201) {
    CHECK(j["session"]["phase"] == "ABORTED");
    CHECK(j["session"]["abort_reason"].get<std::string>().find("apparatus fault") != std::string::npos);
    const SessionRecord rec = parse_record(svc.record(j["session"]["session_id"]).body);
    CHECK(rec.phase == Phase::kAborted);
  } else {
    CHECK((r.status == 502 || r.status == 422));
    CHECK(j.contains("error"));
  }
}

TEST_CASE("abort and listing") {
  const fs::path dir = scratch_dir("list");
  SessionService svc(settings_for(dir), ticking_wall(), stepping_clock());
  std::vector<std::string> ids;
  for (const char* tsid : {"A", "B", "A", "C"}) {
    ids.push_back(body_of(svc.create_session(create_body(tsid, ids.size() + 1)))["session"]["session_id"]);
  }
  const Json ab = body_of(svc.abort(ids[1], R"({"reason": "participant left"})"));
  CHECK(ab["session"]["phase"] == "ABORTED");
  CHECK(ab["session"]["abort_reason"] == "participant left");
  CHECK(parse_record(svc.record(ids[1]).body).abort_reason == "participant left");

  const auto list = [&](ListFilter f) { return body_of(svc.list_sessions(f)); };
  CHECK(list({})["total"] == 4);
  ListFilter by_tsid;
  by_tsid.tsid = "A";
  CHECK(list(by_tsid)["total"] == 2);
  ListFilter by_phase;
  by_phase.phase = Phase::kAborted;
  const Json aborted = list(by_phase);
  REQUIRE(aborted["sessions"].size() == 1);
  CHECK(aborted["sessions"][0]["session_id"] == ids[1]);
  ListFilter paged;
  paged.offset = 1;
  paged.limit = 2;
  const Json page = list(paged);
  CHECK(page["total"] == 4);
  REQUIRE(page["sessions"].size() == 2);
  CHECK(page["sessions"][0]["session_id"] == ids[1]);
  CHECK(page["sessions"][1]["session_id"] == ids[2]);
  ListFilter window;
  window.created_after = body_of(svc.get_session(ids[1]))["session"]["created_at"];
  window.created_before = body_of(svc.get_session(ids[3]))["session"]["created_at"];
  const Json w = list(window);
  REQUIRE(w["sessions"].size() == 2);
  CHECK(w["sessions"][0]["session_id"] == ids[1]);
  CHECK(w["sessions"][1]["session_id"] == ids[2]);

  const Json health = body_of(svc.health());
  CHECK(health["sessions"] == 4);
  CHECK(health["active_sessions"] == 3);
}

TEST_CASE("restart marks in-flight sessions aborted") {
  const fs::path dir = scratch_dir("restart");
  std::string running, done;
  std::string done_bytes;
  {
    SessionService svc(settings_for(dir), ticking_wall(), stepping_clock());
    running = body_of(svc.create_session(create_body("R", 1)))["session"]["session_id"];
    svc.submit_response(running, R"({"response": "FIRST_A"})");
    done = body_of(svc.create_session(create_body("R", 2, "VT2PD", 1)))["session"]["session_id"];
    svc.submit_response(done, R"({"response": "FIRST_A"})");
    done_bytes = svc.record(done).body;
  }
  SessionService svc(settings_for(dir), ticking_wall(), stepping_clock());
  CHECK(svc.recovered_aborted() == 1);
  const Json s = body_of(svc.get_session(running))["session"];
  CHECK(s["phase"] == "ABORTED");
  CHECK(s["trial_counter"] == 1);
  const SessionRecord r = parse_record(svc.record(running).body);
  CHECK(r.phase == Phase::kAborted);
  CHECK(r.trials.size() == 1);
  CHECK_FALSE(r.abort_reason.empty());
  CHECK(svc.record(done).body == done_bytes);
  CHECK(body_of(svc.get_session(done))["session"]["phase"] == "COMPLETE");
  CHECK(svc.submit_response(running, R"({"response": "FIRST_A"})").status == 409);
  CHECK(body_of(svc.live_state(running))["history"].size() == 1);

  SessionService again(settings_for(dir), ticking_wall(), stepping_clock());
  CHECK(again.recovered_aborted() == 0);
}

TEST_CASE("service records replay the in-process protocol") {
  const fs::path dir = scratch_dir("replay");
  SessionService svc(settings_for(dir), ticking_wall(), stepping_clock());
  const std::string id = body_of(svc.create_session(create_body("Q", 21, "VT2PD", 6)))["session"]["session_id"];
  for (int i = 0; i < 6; ++i) svc.submit_response(id, i % 3 ? R"({"response": "FIRST_A"})" : R"({"response": "FIRST_B"})");
  const SessionRecord served = parse_record(svc.record(id).body);

  auto direct = Session::start(served.config,
                               make_apparatus(BackendConfig{}, served.config.apparatus,
                                              derive_seed(served.config.seed, kDeviceStream), served.config.task));
  std::vector<std::optional<Response>> answers;
  for (const auto& t : served.trials) answers.push_back(Response{t.response, t.response_time_ms});
  ScriptedResponder scripted(answers);
  while (!direct->trials_complete()) direct->run_trial(scripted);
  const SessionRecord local = direct->finalize();
  REQUIRE(local.trials.size() == served.trials.size());
  for (std::size_t i = 0; i < local.trials.size(); ++i) {
    CHECK(local.trials[i].separation == served.trials[i].separation);
    CHECK(local.trials[i].target == served.trials[i].target);
    CHECK(local.trials[i].intensity_duties == served.trials[i].intensity_duties);
  }
  CHECK(local.postmean->curve.y == served.postmean->curve.y);
}

TEST_CASE("events") {
  const fs::path dir = scratch_dir("events");
  SessionService svc(settings_for(dir), ticking_wall(), stepping_clock());
  const std::string id = body_of(svc.create_session(create_body("E", 3, "VT2PD", 2)))["session"]["session_id"];
  const auto first = svc.wait_event(id, 0, 10);
  REQUIRE(first.has_value());
  CHECK(first->type == "session_created");
  CHECK_FALSE(svc.wait_event(id, first->seq, 10).has_value());

  std::optional<SessionEvent> got;
  std::thread waiter([&] { got = svc.wait_event(id, first->seq, 5000); });
  std::this_thread::sleep_for(std::chrono::milliseconds(20));
  svc.submit_response(id, R"({"response": "FIRST_A"})");
  waiter.join();
  REQUIRE(got.has_value());
  CHECK(got->type == "trial_completed");
  CHECK(got->seq > first->seq);
  CHECK(got->live["history"].size() == 1);
  CHECK_THROWS_AS(svc.wait_event("nope", 0, 1), Error);
}

TEST_CASE("abort_all finishes every active session") {
  const fs::path dir = scratch_dir("abort-all");
  SessionService svc(settings_for(dir), ticking_wall(), stepping_clock());
  const std::string a = body_of(svc.create_session(create_body("S", 1)))["session"]["session_id"];
  const std::string b = body_of(svc.create_session(create_body("S", 2)))["session"]["session_id"];
  svc.abort_all("shutdown");
  for (const auto& id : {a, b}) {
    CHECK(parse_record(svc.record(id).body).abort_reason == "shutdown");
  }
  CHECK(body_of(svc.health())["active_sessions"] == 0);
}

TEST_CASE("http front end") {
  const fs::path dir = scratch_dir("http");
  SessionService svc(settings_for(dir), ticking_wall(), stepping_clock());
  HttpServer server(svc, std::string("s3cret"));
  const std::uint16_t port = server.bind("127.0.0.1", 0);
  server.start();
  httplib::Client cli("127.0.0.1", port);
  const httplib::Headers auth = {{"Authorization", "Bearer s3cret"}};

  auto health = cli.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(Json::parse(health->body)["status"] == "ok");

  auto denied = cli.Post("/sessions", create_body("H", 5, "VT2PD", 2), "application/json");
  REQUIRE(denied);
  CHECK(denied->status == 401);
  auto wrong = cli.Post("/sessions", {{"Authorization", "Bearer nope"}}, create_body("H", 5, "VT2PD", 2),
                        "application/json");
  REQUIRE(wrong);
  CHECK(wrong->status == 401);

  auto created = cli.Post("/sessions", auth, create_body("H", 5, "VT2PD", 2), "application/json");
  REQUIRE(created);
  REQUIRE(created->status == 201);
  const std::string id = Json::parse(created->body)["session"]["session_id"];

  auto got = cli.Get("/sessions/" + id);
  REQUIRE(got);
  CHECK(got->status == 200);
  CHECK(got->body.find("\"target\"") == std::string::npos);
  CHECK(cli.Get("/sessions/unknown-id")->status == 404);
  CHECK(cli.Get("/sessions?tsid=H")->status == 200);
  CHECK(Json::parse(cli.Get("/sessions?tsid=H")->body)["total"] == 1);
  CHECK(cli.Get("/sessions?phase=NOPE")->status == 400);
  CHECK(cli.Get("/sessions?limit=-1")->status == 400);
  CHECK(cli.Get("/sessions?colour=red")->status == 400);

  CHECK(cli.Post("/sessions/" + id + "/response", R"({"response": "FIRST_A"})", "application/json")->status == 401);
  auto r1 = cli.Post("/sessions/" + id + "/response", auth, R"({"response": "FIRST_A"})", "application/json");
  REQUIRE(r1);
  CHECK(r1->status == 200);
  CHECK(cli.Post("/sessions/" + id + "/advance", auth, "", "application/json")->status == 409);

  // Stream until the session finishes; the terminal event closes it.
  std::string stream;
  std::thread listener([&] {
    httplib::Client sse("127.0.0.1", port);
    sse.set_read_timeout(10, 0);
    sse.Get("/sessions/" + id + "/events", {{"Last-Event-ID", "0"}}, [&](const char* data, std::size_t n) {
      stream.append(data, n);
      return true;
    });
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  auto r2 = cli.Post("/sessions/" + id + "/response", auth, R"({"response": "FIRST_B"})", "application/json");
  REQUIRE(r2);
  CHECK(Json::parse(r2->body)["session"]["phase"] == "COMPLETE");
  listener.join();
  CHECK(stream.find("event: session_finished") != std::string::npos);
  CHECK(stream.find("\"COMPLETE\"") != std::string::npos);
  CHECK(stream.find("id: ") != std::string::npos);

  auto live = cli.Get("/sessions/" + id + "/live");
  REQUIRE(live);
  CHECK(Json::parse(live->body)["history"].size() == 2);
  auto rec = cli.Get("/sessions/" + id + "/record");
  REQUIRE(rec);
  CHECK(rec->status == 200);
  CHECK(rec->body == read_text_file(record_path(dir, "H", id)));
  CHECK(cli.Post("/sessions/" + id + "/abort", auth, "{}", "application/json")->status == 409);
  server.stop();
}

}  // TEST_SUITE
