#include "omnibot/cli.hpp"

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "omnibot/net/hub.hpp"
#include "omnibot/net/server.hpp"
#include "omnibot/scenario.hpp"
#include "omnibot/sim.hpp"

namespace omnibot::cli {

namespace {

using nlohmann::json;

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kInvalid = 2;

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

std::string meta_path(const std::string& trace_path) { return trace_path + ".meta.json"; }

std::vector<sim::ScheduledCommand> load_commands(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open {}", path));
  std::vector<sim::ScheduledCommand> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw std::invalid_argument(fmt::format("{}:{}: not JSON", path, n));
    try {
      out.push_back(sim::scheduled_command_from_json(j));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(fmt::format("{}:{}: {}", path, n, e.what()));
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.tick < b.tick; });
  return out;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(fmt::format("cannot write {}", path));
  f << content;
  if (!f) throw std::runtime_error(fmt::format("write failed: {}", path));
}

void write_outputs(const std::string& trace_path, const std::string& summary_path,
                   const std::string& scenario_text, const std::string& trace_csv,
                   const sim::RunSummary& summary,
                   const std::vector<sim::ScheduledCommand>& applied) {
  if (!trace_path.empty()) {
    write_file(trace_path, trace_csv);
    json cmds = json::array();
    for (const auto& c : applied) cmds.push_back(sim::to_json(c));
    const json meta{{"scenario", scenario_text}, {"commands", cmds}};
    write_file(meta_path(trace_path), meta.dump(2) + "\n");
  }
  if (!summary_path.empty()) write_file(summary_path, sim::to_json(summary).dump(2) + "\n");
}

void print_summary(std::ostream& out, const sim::RunSummary& s) {
  out << fmt::format(
      "reason={} ticks={} collisions={} min_clearance_m={:.4f} final=({:.4f}, {:.4f}, {:.4f})\n",
      s.reason, s.ticks, s.collisions, s.min_clearance_m, s.final_pose.x, s.final_pose.y,
      s.final_pose.theta);
}

int cmd_run(const std::string& scn, const std::string& trace, const std::string& summary,
            const std::string& commands, std::ostream& out) {
  const std::string text = read_text_file(scn);
  const Scenario scenario = load_scenario(text);
  const auto schedule = commands.empty() ? std::vector<sim::ScheduledCommand>{}
                                         : load_commands(commands);
  const auto result = sim::run(scenario, schedule);
  write_outputs(trace, summary, text, sim::trace_csv(result.trace), result.summary,
                result.applied_commands);
  print_summary(out, result.summary);
  return kOk;
}

int cmd_validate(const std::string& scn, std::ostream& out) {
  const Scenario s = load_scenario_file(scn);
  out << fmt::format("ok: {} obstacles, {} lines, controller {}, {} s\n",
                     s.scene.obstacles.size(), s.scene.floor_lines.size(),
                     to_string(s.controller), s.duration_s);
  return kOk;
}

int cmd_replay(const std::string& trace_path, bool check, std::ostream& out, std::ostream& err) {
  const std::string recorded = read_text_file(trace_path);
  const json meta = json::parse(read_text_file(meta_path(trace_path)), nullptr, false);
  if (meta.is_discarded() || !meta.contains("scenario") || !meta.contains("commands")) {
    throw std::runtime_error(fmt::format("malformed {}", meta_path(trace_path)));
  }
  const Scenario scenario = load_scenario(meta.at("scenario").get<std::string>());
  std::vector<sim::ScheduledCommand> schedule;
  for (const auto& c : meta.at("commands")) schedule.push_back(sim::scheduled_command_from_json(c));
  const auto result = sim::run(scenario, schedule);
  const std::string replayed = sim::trace_csv(result.trace);
  if (!check) {
    out << replayed;
    return kOk;
  }
  if (replayed == recorded) {
    out << fmt::format("identical: {} ticks\n", result.trace.size());
    return kOk;
  }
  std::istringstream a(recorded), b(replayed);
  std::string la, lb;
  for (int line = 1;; ++line) {
    const bool ga = static_cast<bool>(std::getline(a, la));
    const bool gb = static_cast<bool>(std::getline(b, lb));
    if (!ga && !gb) break;
    if (!ga || !gb || la != lb) {
      err << fmt::format("mismatch at line {}\n  recorded: {}\n  replayed: {}\n", line,
                         ga ? la : "<eof>", gb ? lb : "<eof>");
      break;
    }
  }
  return kFailure;
}

struct ServeArgs {
  std::string scenario;
  std::string bind;
  std::string ws_bind;
  double realtime_factor = 1.0;
  std::string trace;
  std::string summary;
  bool exit_when_finished = false;
  bool no_watchdog = false;
};

int cmd_serve(const ServeArgs& a, std::ostream& out) {
  const std::string text = read_text_file(a.scenario);
  const Scenario scenario = load_scenario(text);
  net::HubOptions hub_opts;
  if (!a.no_watchdog) {
    hub_opts.watchdog_ticks =
        static_cast<std::uint64_t>(std::llround(0.5 / scenario.dt_control_s));
  }
  net::ControlHub hub(scenario, hub_opts);
  net::ServerOptions opts;
  opts.bind = a.bind.empty() ? net::default_endpoint() : net::parse_endpoint(a.bind);
  if (!a.ws_bind.empty()) opts.ws_bind = net::parse_endpoint(a.ws_bind);
  opts.realtime_factor = a.realtime_factor;
  opts.exit_when_finished = a.exit_when_finished;

  net::Server server(hub, opts);
  server.start();
  out << fmt::format("listening on {}:{}", opts.bind.host, server.port());
  if (opts.ws_bind) out << fmt::format(", websocket {}:{}", opts.ws_bind->host, server.ws_port());
  out << std::endl;

  g_interrupted = false;
  auto prev_int = std::signal(SIGINT, on_signal);
  auto prev_term = std::signal(SIGTERM, on_signal);
  while (!g_interrupted && !server.wait_for(std::chrono::milliseconds(100))) {
  }
  std::signal(SIGINT, prev_int);
  std::signal(SIGTERM, prev_term);
  server.stop();

  const auto summary = hub.summary();
  write_outputs(a.trace, a.summary, text, hub.trace_csv(), summary, hub.applied_commands());
  print_summary(out, summary);
  return kOk;
}

}  // namespace

int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Three-wheel omnidirectional robot simulator", "omnibot"};
  app.require_subcommand(1);

  std::string scn, trace, summary, commands;
  auto* run = app.add_subcommand("run", "Run a scenario headless at full speed");
  run->add_option("scenario", scn, "Scenario file")->required();
  run->add_option("--trace", trace, "Write the per-tick trace CSV here");
  run->add_option("--summary", summary, "Write the run summary JSON here");
  run->add_option("--commands", commands, "JSON-lines command schedule");

  auto* validate = app.add_subcommand("validate", "Check a scenario file");
  validate->add_option("scenario", scn, "Scenario file")->required();

  bool check = false;
  auto* replay = app.add_subcommand("replay", "Re-run a recorded trace");
  replay->add_option("trace", trace, "Trace CSV written by run or serve")->required();
  replay->add_flag("--check", check, "Compare against the recording instead of printing");

  ServeArgs sa;
  auto* serve = app.add_subcommand("serve", "Serve the robot over the line protocol");
  serve->add_option("scenario", sa.scenario, "Scenario file")->required();
  serve->add_option("--bind", sa.bind, "host:port (default $OMNIBOT_BIND or 127.0.0.1:8081)");
  serve->add_option("--ws-bind", sa.ws_bind, "host:port for the WebSocket gateway");
  serve->add_option("--realtime-factor", sa.realtime_factor, "Sim speed; 0 = unthrottled")
      ->check(CLI::NonNegativeNumber);
  serve->add_option("--trace", sa.trace, "Write the trace CSV on exit");
  serve->add_option("--summary", sa.summary, "Write the summary JSON on exit");
  serve->add_flag("--exit-when-finished", sa.exit_when_finished, "Exit once the run ends");
  serve->add_flag("--no-watchdog", sa.no_watchdog, "Keep external commands without refresh");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kInvalid;
  }

  try {
    if (run->parsed()) return cmd_run(scn, trace, summary, commands, out);
    if (validate->parsed()) return cmd_validate(scn, out);
    if (replay->parsed()) return cmd_replay(trace, check, out, err);
    if (serve->parsed()) return cmd_serve(sa, out);
  } catch (const ScenarioError& e) {
    err << e.what() << "\n";
    return kInvalid;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kInvalid;
}

}  // namespace omnibot::cli
