// vibropsi: simulate, run, analyze and serve adaptive two-point sessions.
//
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <glob.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "vibropsi/analysis.hpp"
#include "vibropsi/bridge.hpp"
#include "vibropsi/config.hpp"
#include "vibropsi/error.hpp"
#include "vibropsi/http_server.hpp"
#include "vibropsi/record.hpp"
#include "vibropsi/service.hpp"
#include "vibropsi/simulation.hpp"

namespace fs = std::filesystem;
using namespace vibropsi;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

void install_signal_handlers() {
  struct sigaction sa {};
  sa.sa_handler = on_signal;
  sigemptyset(&sa.sa_mask);
  sa.sa_flags = 0;  // no SA_RESTART: blocking reads return so the loop can abort
  sigaction(SIGINT, &sa, nullptr);
  sigaction(SIGTERM, &sa, nullptr);
}

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kNonMonotoneCurve:
    case ErrorCode::kMismatchedGrids:
    case ErrorCode::kInsufficientData:
    case ErrorCode::kOutOfRange: return kExitValidation;
    default: return kExitRuntime;
  }
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------- simulate

struct SimulateOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  int count = 1;
  std::string out = "sim_out";
  int jobs = 1;
};

int cmd_simulate(const SimulateOptions& o) {
  const ConfigDocument doc = load_config_file(o.config);
  if (!doc.session) throw ValidationError("config has no 'session' section");
  if (!doc.observer) throw ValidationError("config has no 'observer' section");
  if (o.count < 1) throw ValidationError("--count must be at least 1");
  if (o.jobs < 1) throw ValidationError("--jobs must be at least 1");
  SessionConfig base = *doc.session;
  if (base.tsid.empty()) base.tsid = "sim";
  if (o.seed) base.seed = *o.seed;
  base.validate();

  const auto model = BapeModel::create(base.grid, base.candidates);
  std::vector<std::optional<SessionRecord>> results(static_cast<std::size_t>(o.count));
  std::vector<std::string> errors(static_cast<std::size_t>(o.count));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < o.count; i = next++) {
      SessionConfig c = base;
      c.seed = base.seed + static_cast<std::uint64_t>(i);
      try {
        results[static_cast<std::size_t>(i)] = simulate_session(c, *doc.observer, model, doc.apparatus);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(i)] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 1; j < o.jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  fs::create_directories(o.out);
  std::ofstream csv(fs::path(o.out) / "summary.csv");
  csv << "run,seed,session_id,phase,expected_a,expected_b,expected_gamma,entropy_start,entropy_end,"
         "extreme_fraction,record\n";
  std::printf("%4s %8s %-9s %8s %8s %8s %9s %9s %8s\n", "run", "seed", "phase", "E[a]", "E[b]",
              "E[g]", "H_start", "H_end", "extreme");
  std::vector<double> ea, eh, ex;
  int failures = 0;
  for (int i = 0; i < o.count; ++i) {
    const auto& r = results[static_cast<std::size_t>(i)];
    const std::uint64_t seed = base.seed + static_cast<std::uint64_t>(i);
    if (!r) {
      ++failures;
      std::fprintf(stderr, "run %d (seed %llu) failed: %s\n", i, static_cast<unsigned long long>(seed),
                   errors[static_cast<std::size_t>(i)].c_str());
      continue;
    }
    const fs::path path = write_record(*r, o.out);
    const double h0 = r->selection_trace.empty() ? 0.0 : r->selection_trace.front().entropy_before;
    const double h1 = r->selection_trace.empty() ? 0.0 : r->selection_trace.back().entropy_after;
    const double frac = extreme_fraction(*r);
    const double a = r->postmean ? r->postmean->expected_a : std::nan("");
    const double b = r->postmean ? r->postmean->expected_b : std::nan("");
    const double g = r->postmean ? r->postmean->expected_gamma : std::nan("");
    std::printf("%4d %8llu %-9s %8.3f %8.3f %8.4f %9.4f %9.4f %8.3f\n", i,
                static_cast<unsigned long long>(seed), std::string(to_string(r->phase)).c_str(), a, b,
                g, h0, h1, frac);
    csv << i << ',' << seed << ',' << r->session_id << ',' << to_string(r->phase) << ',' << a << ','
        << b << ',' << g << ',' << h0 << ',' << h1 << ',' << frac << ',' << path.string() << '\n';
    ea.push_back(a);
    eh.push_back(h1);
    ex.push_back(frac);
  }
  if (!ea.empty()) {
    std::printf("\nruns: %zu  median E[a]: %.3f mm  median final entropy: %.4f nats  "
                "median extreme fraction (trials 21+): %.3f\n",
                ea.size(), median(ea), median(eh), median(ex));
    if (median(ex) > 0.5) {
      std::printf("note: queries concentrate at the extreme separations (%.1f and %.1f mm), "
                  "typical of an observer near chance\n",
                  base.candidates.separations.front(), base.candidates.separations.back());
    }
  }
  return failures ? kExitRuntime : kExitOk;
}

// --------------------------------------------------------------------- run

class TerminalResponder final : public Responder {
 public:
  TerminalResponder(std::istream& in, std::ostream& out) : in_(in), out_(out) {}

  std::optional<Response> respond(const Stimulus& s) override {
    const auto options = choices_for(s.task);
    out_ << "  stimulus at " << s.separation << " mm (" << to_string(s.orientation) << "). "
         << "Answer 1 = " << label(options[0], s.orientation) << ", 2 = "
         << label(options[1], s.orientation) << ": " << std::flush;
    const auto t0 = std::chrono::steady_clock::now();
    std::string line;
    while (true) {
      if (!std::getline(in_, line) || g_interrupted) return std::nullopt;
      if (line == "1" || line == "2") break;
      out_ << "  please type 1 or 2: " << std::flush;
    }
    const double rt =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return Response{options[line == "1" ? 0 : 1], rt};
  }

 private:
  static std::string label(Choice c, Orientation o) {
    switch (c) {
      case Choice::kFirstA: return o == Orientation::kHorizontal ? "left first" : "upper first";
      case Choice::kFirstB: return o == Orientation::kHorizontal ? "right first" : "lower first";
      case Choice::kHorizontal: return "horizontal";
      case Choice::kVertical: return "vertical";
    }
    return "?";
  }

  std::istream& in_;
  std::ostream& out_;
};

struct RunOptions {
  std::string config;
  std::string data_dir = "data/sessions";
  std::optional<std::uint64_t> seed;
  bool practice = true;
  bool allow_pipe = false;
};

int cmd_run(const RunOptions& o) {
  const ConfigDocument doc = load_config_file(o.config);
  if (!doc.session) throw ValidationError("config has no 'session' section");
  if (!o.allow_pipe && !isatty(STDIN_FILENO)) {
    std::fprintf(stderr, "error: no terminal attached (use --stdin to read answers from a pipe)\n");
    return kExitRuntime;
  }
  SessionConfig config = *doc.session;
  if (o.seed) config.seed = *o.seed;
  config.validate();
  install_signal_handlers();

  auto rig = make_apparatus(doc.apparatus, config.apparatus, derive_seed(config.seed, kDeviceStream),
                            config.task);
  auto session = Session::start(config, std::move(rig), nullptr, {}, utc_now_iso);
  TerminalResponder responder(std::cin, std::cout);

  auto finish_aborted = [&](const std::string& reason) {
    const SessionRecord r = session->abort(reason);
    const fs::path path = write_record(r, o.data_dir);
    std::printf("\nsession aborted; record written to %s\n", path.string().c_str());
    return kExitRuntime;
  };

  if (o.practice) {
    const auto& c = config.candidates.separations;
    const std::size_t top = std::min<std::size_t>(3, c.size());
    std::printf("Practice: 10 trials, not scored.\n");
    for (int i = 0; i < 10; ++i) {
      const double sep = c[c.size() - 1 - static_cast<std::size_t>(i) % top];
      session->practice_trial(sep, responder);
      if (g_interrupted || !std::cin) return finish_aborted("interrupted during practice");
    }
  }
  std::printf("Scored session: %d trials.\n", config.total_trials());
  while (!session->trials_complete()) {
    if (session->phase() == Phase::kReorienting) {
      std::printf("Block finished. Rotate the apparatus by 90 degrees, then press Enter. ");
      std::fflush(stdout);
      std::string line;
      if (!std::getline(std::cin, line) || g_interrupted) return finish_aborted("interrupted while reorienting");
      session->advance_block();
    }
    const auto r = session->run_trial(responder);
    if (g_interrupted || (!r && !std::cin)) return finish_aborted("interrupted by operator");
  }
  const SessionRecord r = session->finalize();
  const fs::path path = write_record(r, o.data_dir);
  std::printf("\nphase %s  E[a] = %.2f mm  E[b] = %.2f  E[g] = %.3f\nrecord: %s\n",
              std::string(to_string(r.phase)).c_str(), r.postmean->expected_a, r.postmean->expected_b,
              r.postmean->expected_gamma, path.string().c_str());
  return kExitOk;
}

// ----------------------------------------------------------------- analyze

struct AnalyzeOptions {
  std::vector<std::string> records;
  std::string reference;
  std::string reference_label;
  std::string out = "analysis";
};

std::vector<std::string> expand(const std::vector<std::string>& patterns) {
  std::vector<std::string> out;
  for (const auto& p : patterns) {
    glob_t g{};
    if (::glob(p.c_str(), 0, nullptr, &g) == 0) {
      for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    }
    globfree(&g);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

int cmd_analyze(const AnalyzeOptions& o) {
  const auto files = expand(o.records);
  std::vector<CurveSamples> curves;
  std::vector<double> candidates;
  int excluded = 0;
  int skipped = 0;
  for (const auto& f : files) {
    const SessionRecord r = read_record(f);
    if (r.phase == Phase::kExcluded) {
      ++excluded;
      std::fprintf(stderr, "warning: %s is EXCLUDED by the bias guard; not analyzed\n", f.c_str());
      continue;
    }
    if (r.phase != Phase::kComplete || !r.postmean) {
      ++skipped;
      std::fprintf(stderr, "warning: %s is %s; not analyzed\n", f.c_str(),
                   std::string(to_string(r.phase)).c_str());
      continue;
    }
    if (candidates.empty()) candidates = r.config.candidates.separations;
    curves.push_back(r.postmean->curve);
  }
  std::printf("records: %zu matched, %zu analyzed, %d excluded, %d skipped\n", files.size(),
              curves.size(), excluded, skipped);
  if (curves.size() < 2) {
    throw Error(ErrorCode::kInsufficientData, "analysis needs at least two COMPLETE records");
  }

  fs::create_directories(o.out);
  const CurveSamples mean = cohort_mean(curves);
  export_csv(mean, fs::path(o.out) / "mean_curve.csv");
  const ThresholdReport thresholds = extract_cohort_thresholds(curves);
  export_csv(thresholds, fs::path(o.out) / "thresholds.csv");

  std::printf("\nmean curve over %zu participants written to %s\n", curves.size(),
              (fs::path(o.out) / "mean_curve.csv").string().c_str());
  std::printf("%6s %14s %10s\n", "level", "separation_mm", "se");
  for (std::size_t i = 0; i < thresholds.levels.size(); ++i) {
    const auto& s = thresholds.separations[i];
    const auto& se = (*thresholds.se)[i];
    std::printf("%6.2f %14s %10s\n", thresholds.levels[i],
                s ? std::to_string(*s).c_str() : "NOT_REACHED",
                se ? std::to_string(*se).c_str() : "-");
  }

  Json summary;
  summary["participants"] = curves.size();
  summary["excluded"] = excluded;
  summary["skipped"] = skipped;
  if (!o.reference.empty()) {
    const ReferenceCurve ref = load_reference_csv(o.reference, o.reference_label);
    const ComparisonReport cmp = compare_to_reference(curves, ref, candidates);
    export_csv(cmp, fs::path(o.out) / "comparison.csv");
    std::printf("\ncomparison against '%s' (Bonferroni over %zu separations)\n", ref.label.c_str(),
                cmp.x_values.size());
    std::printf("%8s %10s %12s %12s %5s\n", "x_mm", "t", "p", "p_bonf", "sig");
    Json sig = Json::array();
    for (std::size_t i = 0; i < cmp.x_values.size(); ++i) {
      std::printf("%8.2f %10.3f %12.4g %12.4g %5s\n", cmp.x_values[i], cmp.t_values[i], cmp.p_values[i],
                  cmp.p_bonferroni[i], cmp.significant[i] ? "*" : "");
      if (cmp.significant[i]) sig.push_back(cmp.x_values[i]);
    }
    summary["significant_separations_mm"] = sig;
    summary["reference"] = ref.label;
  }
  std::ofstream(fs::path(o.out) / "summary.json") << summary.dump(2) << '\n';
  return kExitOk;
}

// ------------------------------------------------------------------- serve

struct ServeOptions {
  std::string config;
  std::string data_dir;
  std::string bind;
  std::string apparatus;
};

int cmd_serve(const ServeOptions& o) {
  ServiceSettings settings;
  if (!o.config.empty()) {
    const ConfigDocument doc = load_config_file(o.config);
    settings = doc.service;
  }
  apply_env_overrides(settings, process_env());
  if (!o.data_dir.empty()) settings.data_dir = o.data_dir;
  if (!o.bind.empty()) parse_bind(o.bind, settings.bind_host, settings.bind_port);
  if (!o.apparatus.empty()) settings.backend = parse_backend_spec(o.apparatus);

  install_signal_handlers();
  SessionService service(settings);
  if (service.recovered_aborted() > 0) {
    std::fprintf(stderr, "marked %zu in-flight session(s) from a previous run as ABORTED\n",
                 service.recovered_aborted());
  }
  HttpServer server(service, settings.token);
  const auto port = server.bind(settings.bind_host, settings.bind_port);
  std::printf("serving on http://%s:%u (data dir %s, apparatus %s)\n", settings.bind_host.c_str(),
              static_cast<unsigned>(port), settings.data_dir.c_str(), to_spec(settings.backend).c_str());
  std::fflush(stdout);
  server.start();
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  service.abort_all("service shut down");
  return kExitOk;
}

// -------------------------------------------------------------- bridge-sim

struct BridgeOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 7700;
  std::string fault = "none";
  std::uint64_t seed = 0;
};

int cmd_bridge_sim(const BridgeOptions& o) {
  SimulatorOptions sim;
  sim.seed = o.seed;
  sim.fault = fault_profile_from_string(o.fault);
  SimulatedApparatus rig(ApparatusConfig{}, sim);
  install_signal_handlers();
  TcpBridgeServer server(rig, o.host, o.port);
  std::printf("rig simulator listening on %s:%u\n", o.host.c_str(), static_cast<unsigned>(server.port()));
  std::fflush(stdout);
  while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive vibrotactile two-point discrimination: simulation, sessions and analysis"};
  app.require_subcommand(1);

  SimulateOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Run seeded sessions against simulated observers");
  simulate->add_option("--config", sim.config, "Config file with session and observer sections")->required();
  simulate->add_option("--seed", sim.seed, "Seed of the first run (run i uses seed + i)");
  simulate->add_option("--count", sim.count, "Number of sessions");
  simulate->add_option("--out", sim.out, "Output directory for records and summary.csv");
  simulate->add_option("--jobs", sim.jobs, "Worker threads");

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Interactive session at the terminal");
  run_cmd->add_option("--config", run.config, "Config file with a session section")->required();
  run_cmd->add_option("--data-dir", run.data_dir, "Record directory");
  run_cmd->add_option("--seed", run.seed, "Override the session seed");
  run_cmd->add_flag("!--no-practice", run.practice, "Skip the 10 practice trials");
  run_cmd->add_flag("--stdin", run.allow_pipe, "Accept answers from a non-terminal stdin");

  AnalyzeOptions ana;
  auto* analyze = app.add_subcommand("analyze", "Cohort mean, thresholds and reference comparison");
  analyze->add_option("records", ana.records, "Record files or glob patterns")->required();
  analyze->add_option("--reference", ana.reference, "Reference curve CSV (separation_mm,recognition_rate)");
  analyze->add_option("--reference-label", ana.reference_label, "Label for the reference curve");
  analyze->add_option("--out", ana.out, "Output directory for CSV exports");

  ServeOptions srv;
  auto* serve = app.add_subcommand("serve", "HTTP/JSON session service");
  serve->add_option("--config", srv.config, "Config file with a service section");
  serve->add_option("--data-dir", srv.data_dir, "Record directory");
  serve->add_option("--bind", srv.bind, "host:port");
  serve->add_option("--apparatus", srv.apparatus, "simulator | simulator:<fault> | bridge:<host>:<port>");

  BridgeOptions bridge;
  auto* bridge_cmd = app.add_subcommand("bridge-sim", "Serve a simulated rig over the line protocol");
  bridge_cmd->add_option("--host", bridge.host, "Bind address");
  bridge_cmd->add_option("--port", bridge.port, "TCP port (0 picks one)");
  bridge_cmd->add_option("--fault", bridge.fault, "none | no-contact | force-drift | separation-stick");
  bridge_cmd->add_option("--seed", bridge.seed, "Device RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*run_cmd) return cmd_run(run);
    if (*analyze) return cmd_analyze(ana);
    if (*serve) return cmd_serve(srv);
    if (*bridge_cmd) return cmd_bridge_sim(bridge);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const AlignmentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    for (const auto& s : e.report().steps) {
      std::fprintf(stderr, "  target %6.2f mm  achieved %6.2f mm  force %.3f N  %s\n", s.target,
                   s.achieved_separation, s.force, s.within_tolerance ? "ok" : "FAIL");
    }
    return kExitRuntime;
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(to_string(e.code())).c_str(), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
