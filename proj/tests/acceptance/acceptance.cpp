// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "../net_client.hpp"
#include "../support.hpp"
#include "omnibot/cli.hpp"
#include "omnibot/controllers.hpp"
#include "omnibot/drivetrain.hpp"
#include "omnibot/kinematics.hpp"
#include "omnibot/net/hub.hpp"
#include "omnibot/net/server.hpp"
#include "omnibot/sensors.hpp"
#include "omnibot/sim.hpp"

namespace {

using namespace omnibot;
using Clock = std::chrono::steady_clock;
using nlohmann::json;

struct Verdict {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Verdict kinematics_suite() {
  const auto t0 = Clock::now();
  const RobotParams p;
  const auto jac = kinematics::make_jacobian(p);
  std::mt19937_64 rng(1001);
  std::uniform_real_distribution<double> v(-p.max_speed_m_s, p.max_speed_m_s);
  std::uniform_real_distribution<double> w(-p.max_omega_rad_s, p.max_omega_rad_s);
  double worst_trip = 0.0;
  for (int n = 0; n < 1000; ++n) {
    const BodyTwist t{v(rng), v(rng), w(rng)};
    const BodyTwist b =
        kinematics::forward_kinematics(kinematics::inverse_kinematics(t, jac, p), jac, p);
    worst_trip = std::max({worst_trip, std::abs(b.vx - t.vx), std::abs(b.vy - t.vy),
                           std::abs(b.omega - t.omega)});
  }
  double worst_rot = 0.0;
  std::uniform_real_distribution<double> s(-0.5, 0.5);
  for (int n = 0; n < 100; ++n) {
    const double rim = s(rng);
    WheelSpeeds ws;
    ws.omega_wheel = {rim / p.wheel_radius_m, rim / p.wheel_radius_m, rim / p.wheel_radius_m};
    const BodyTwist b = kinematics::forward_kinematics(ws, jac, p);
    worst_rot = std::max({worst_rot, std::abs(b.vx), std::abs(b.vy),
                          std::abs(b.omega - rim / p.wheel_distance_m)});
  }
  const double elapsed = seconds_since(t0);
  return {worst_trip <= 1e-9 && worst_rot <= 1e-12 && elapsed < 1.0,
          fmt::format("round-trip {:.2e}, rotation {:.2e}, {:.3f} s", worst_trip, worst_rot,
                      elapsed)};
}

Verdict motor_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1002);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  double worst_speed = 0.0, worst_stall = 0.0;
  bool passive = true;
  for (int n = 0; n < 10; ++n) {
    drivetrain::MotorParams p;
    if (n > 0) {
      p.resistance_ohm = u(0.2, 2.0);
      p.inductance_h = u(1e-4, 2e-3);
      p.back_emf_v_s_rad = u(0.01, 0.1);
      p.torque_nm_a = p.back_emf_v_s_rad;
      p.rotor_inertia_kg_m2 = u(1e-6, 5e-5);
      p.viscous_friction_nm_s = u(1e-6, 1e-4);
    }
    const double volts = u(2.0, std::min(20.0, p.max_voltage_v));
    const double w_expected = p.torque_nm_a * volts /
                              (p.resistance_ohm * p.viscous_friction_nm_s +
                               p.back_emf_v_s_rad * p.torque_nm_a);
    drivetrain::MotorState s;
    for (int k = 0; k < 200000; ++k) {
      const auto next = drivetrain::motor_step(s, p, volts, 0.0, 1e-3);
      const bool settled = std::abs(next.omega_rad_s - s.omega_rad_s) < 1e-13 * w_expected;
      s = next;
      if (settled) break;
    }
    worst_speed = std::max(worst_speed, std::abs(s.omega_rad_s / w_expected - 1.0));

    drivetrain::MotorState locked;
    for (int k = 0; k < 20000; ++k) locked = drivetrain::motor_step_locked(locked, p, volts, 1e-3);
    worst_stall = std::max(worst_stall, std::abs(locked.current_a * p.resistance_ohm / volts - 1.0));

    drivetrain::MotorState free{u(-30, 30), u(-300, 300), 0.0};
    double e = drivetrain::motor_energy(free, p);
    for (int k = 0; k < 5000; ++k) {
      free = drivetrain::motor_step(free, p, 0.0, 0.0, 1e-3);
      const double e2 = drivetrain::motor_energy(free, p);
      if (e2 > e * (1 + 1e-15)) passive = false;
      e = e2;
    }
  }
  const double elapsed = seconds_since(t0);
  return {worst_speed <= 1e-3 && worst_stall <= 1e-3 && passive && elapsed < 5.0,
          fmt::format("speed {:.2e}, stall {:.2e}, passive {}, {:.3f} s", worst_speed,
                      worst_stall, passive ? "yes" : "no", elapsed)};
}

Verdict dynamics_consistency() {
  const RobotParams p;
  std::mt19937_64 rng(1003);
  std::uniform_real_distribution<double> v(-0.6, 0.6), w(-2.0, 2.0);
  double worst = 0.0;
  for (int n = 0; n < 20; ++n) {
    drivetrain::Drivetrain d({}, {});
    const BodyTwist sp{v(rng), v(rng), w(rng)};
    for (int k = 0; k < 200; ++k) d.drive_tick(sp, 0.01, 0.001);
    const BodyTwist fk = kinematics::forward_kinematics(d.wheel_speeds(), p);
    const BodyTwist bt = drivetrain::body_twist(d.body());
    const double scale = std::hypot(fk.vx, fk.vy, fk.omega * p.wheel_distance_m);
    const double err =
        std::hypot(bt.vx - fk.vx, bt.vy - fk.vy, (bt.omega - fk.omega) * p.wheel_distance_m);
    worst = std::max(worst, err / scale);
  }
  return {worst <= 0.02, fmt::format("worst relative deviation {:.2e} over 20 setpoints", worst)};
}

/// Direct 3x3 convolution with the horizontal Prewitt kernel.
std::vector<int> hand_prewitt(int w, int h, const std::vector<int>& px) {
  static constexpr int kKernel[3][3] = {{-1, 0, 1}, {-1, 0, 1}, {-1, 0, 1}};
  std::vector<int> out(px.size(), 0);
  for (int r = 1; r < h - 1; ++r) {
    for (int c = 1; c < w - 1; ++c) {
      int acc = 0;
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) acc += kKernel[i][j] * px[(r + i - 1) * w + (c + j - 1)];
      }
      out[r * w + c] = acc;
    }
  }
  return out;
}

Verdict prewitt_suite() {
  std::mt19937_64 rng(1004);
  std::uniform_int_distribution<int> dim(5, 16), pix(0, 255);
  int mismatched = 0;
  for (int n = 0; n < 50; ++n) {
    const int w = dim(rng), h = dim(rng);
    std::vector<int> px(static_cast<std::size_t>(w * h));
    for (int& x : px) x = pix(rng);
    sensors::CameraFrame f{w, h, {}};
    for (int x : px) f.pixels.push_back(static_cast<std::uint8_t>(x));
    if (sensors::prewitt_response(f) != hand_prewitt(w, h, px)) ++mismatched;
  }
  return {mismatched == 0, fmt::format("{} of 50 images differ", mismatched)};
}

/// The listing's loop body, one iteration.
controllers::VelocityCommand listing_iteration(double value0, double value1, double value8,
                                               bool bumper, double t_elapsed, bool& exited) {
  exited = false;
  if (bumper) {
    exited = true;
    return {0, 0, 0};
  }
  if (t_elapsed >= 60) {
    exited = true;
    return {0, 0, 0};
  }
  if ((0.7 <= value0) | (0.7 <= value1) | (0.7 <= value8)) return {0, 0, 100};
  return {500, 0, 0};
}

Verdict avoid_grid() {
  const double levels[] = {0.0, 0.69, 0.7, 0.71, 2.0};
  const double times[] = {0.0, 30.0, std::nextafter(60.0, 0.0), 60.0, 75.0};
  int cases = 0, mismatched = 0;
  for (double a : levels) {
    for (double b : levels) {
      for (double c : levels) {
        for (bool bump : {false, true}) {
          for (double t : times) {
            bool exited = false;
            const auto want = listing_iteration(a, b, c, bump, t, exited);
            const auto got = controllers::avoid_step(a, b, c, bump, t);
            const bool ok = got.command == want && got.state.terminated == exited &&
                            (!bump || got.state.reason == controllers::AvoidReason::bumper) &&
                            (bump || t < 60 || got.state.reason == controllers::AvoidReason::timeout);
            ++cases;
            if (!ok) ++mismatched;
          }
        }
      }
    }
  }
  return {mismatched == 0, fmt::format("{} of {} cases differ", mismatched, cases)};
}

Verdict avoid_demo() {
  const auto t0 = Clock::now();
  const auto r = sim::run(testing::shipped("avoid_demo.scn"));
  const double elapsed = seconds_since(t0);
  const auto& s = r.summary;
  return {s.reason == "timeout" && s.collisions == 0 && s.min_clearance_m > 0.0 && elapsed < 10.0,
          fmt::format("reason {}, {} ticks, collisions {}, min clearance {:.4f} m, {:.2f} s wall",
                      s.reason, s.ticks, s.collisions, s.min_clearance_m, elapsed)};
}

Verdict line_following() {
  const auto straight = testing::track_line(testing::shipped("line_demo.scn"));
  const Scenario curve_scn = testing::shipped("line_curve_demo.scn");
  const auto curve = testing::track_line(curve_scn);
  const double lost_s = static_cast<double>(curve.longest_lost_ticks) * curve_scn.dt_control_s;
  const bool ok = straight.lock_tick != 0 && straight.in_band_fraction() >= 0.95 &&
                  curve.lock_tick != 0 && lost_s <= 0.5;
  return {ok, fmt::format("straight in band {:.1f}% after lock at tick {}; curve longest loss {:.2f} s",
                          100.0 * straight.in_band_fraction(), straight.lock_tick, lost_s)};
}

Verdict determinism() {
  const Scenario tuning = testing::shipped("tuning_demo.scn");
  const auto cmds = testing::shipped_commands("tuning_demo.cmds.jsonl");
  const bool twice = sim::trace_csv(sim::run(tuning, cmds).trace) ==
                     sim::trace_csv(sim::run(tuning, cmds).trace);
  Scenario noisy = testing::shipped("avoid_demo.scn");
  noisy.sensors.ir_noise_v = 0.02;
  noisy.duration_s = 5.0;
  const bool noisy_twice =
      sim::trace_csv(sim::run(noisy).trace) == sim::trace_csv(sim::run(noisy).trace);

  const auto dir = std::filesystem::temp_directory_path() / fmt::format("omnibot_accept_{}", ::getpid());
  std::filesystem::create_directories(dir);
  const std::string trace = (dir / "tuning.csv").string();
  std::ostringstream out, err;
  const int run_code = cli::main({"run", testing::scenario_path("tuning_demo.scn").string(),
                                  "--commands",
                                  testing::scenario_path("tuning_demo.cmds.jsonl").string(),
                                  "--trace", trace},
                                 out, err);
  const int replay_code = cli::main({"replay", trace, "--check"}, out, err);
  std::filesystem::remove_all(dir);
  return {twice && noisy_twice && run_code == 0 && replay_code == 0,
          fmt::format("repeat {}, noisy repeat {}, replay --check exit {}", twice ? "identical" : "differs",
                      noisy_twice ? "identical" : "differs", replay_code)};
}

Verdict fuzz_over_tcp() {
  net::ControlHub hub(load_scenario_file(testing::data_path("golden.scn")));
  net::ServerOptions opts;
  opts.bind = {"127.0.0.1", 0};
  net::Server server(hub, opts);
  server.start();
  testing::LineClient client(server.port());
  const std::vector<std::string> seeds{
      R"({"op":"hello","seq":1})",
      R"({"op":"set_velocity","seq":2,"vx":100,"vy":-50,"omega":10})",
      R"({"op":"get_distances","seq":3})",
      R"({"op":"get_bumper","seq":4})",
      R"({"op":"get_frame","seq":5})",
      R"({"op":"set_pid","seq":6,"wheel":1,"kp":0.05,"ki":0.3,"kd":0})",
      R"({"op":"get_pid","seq":7})",
      R"({"op":"select_controller","seq":8,"controller":"line_follow"})",
      R"({"op":"subscribe_telemetry","seq":9,"rate_hz":5})",
      R"({"op":"reset","seq":10})",
  };
  std::mt19937_64 rng(1005);
  std::uniform_int_distribution<int> byte(1, 255), mode(0, 3), len(0, 80);
  std::uniform_int_distribution<std::size_t> pick(0, seeds.size() - 1);
  constexpr int kLines = 100000, kBatch = 500;
  int bad_replies = 0, answered = 0;
  for (int sent = 0; sent < kLines; sent += kBatch) {
    std::string batch;
    for (int k = 0; k < kBatch; ++k) {
      std::string line;
      if (mode(rng) == 0) {
        for (int n = len(rng); n > 0; --n) line.push_back(static_cast<char>(byte(rng)));
      } else {
        line = seeds[pick(rng)];
        for (int n = mode(rng); n > 0; --n) {
          line[std::uniform_int_distribution<std::size_t>(0, line.size() - 1)(rng)] =
              static_cast<char>(byte(rng));
        }
      }
      std::erase(line, '\n');
      batch += line + "\n";
    }
    client.send_raw(batch);
    for (int k = 0; k < kBatch; ++k) {
      const auto reply = client.read_reply();
      if (!reply) {
        server.stop();
        return {false, fmt::format("connection lost after {} replies", answered)};
      }
      const json j = json::parse(*reply, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("op") ||
          (j["op"] != "ack" && j["op"] != "error" && j["op"] != "frame")) {
        ++bad_replies;
      }
      ++answered;
    }
  }
  const auto hello = client.request(R"({"op":"hello","seq":"final"})");
  const json last = json::parse(hello, nullptr, false);
  const bool alive = last.is_object() && last.value("seq", "") == "final";
  server.stop();
  return {answered == kLines && bad_replies == 0 && alive, fmt::format("{} lines, {} replies, {} malformed, alive {}", kLines, answered, bad_replies,
                       alive ? "yes" : "no")};
}

Verdict protocol_suite() {
  const auto transcript =
      testing::run_transcript(testing::data_path("golden_transcript.txt"),
                              load_scenario_file(testing::data_path("golden.scn")));
  const std::vector<std::string> ops{"hello",   "set_velocity",        "get_distances",
                                     "get_bumper", "get_frame",        "set_pid",
                                     "get_pid", "subscribe_telemetry", "select_controller",
                                     "reset"};
  bool every_op = true;
  for (const auto& op : ops) every_op = every_op && transcript.request_ops.contains(op);

  const Verdict fuzz = fuzz_over_tcp();

  const Scenario avoid = testing::shipped("avoid_demo.scn");
  net::ControlHub hub(avoid);
  net::ServerOptions opts;
  opts.bind = {"127.0.0.1", 0};
  opts.realtime_factor = 0.0;
  opts.wait_for_clients = 1;
  opts.exit_when_finished = true;
  net::Server server(hub, opts);
  server.start();
  bool served_equal = false;
  {
    testing::LineClient idle(server.port());
    served_equal = server.wait_for(std::chrono::seconds(60)) &&
                   hub.trace_csv() == sim::trace_csv(sim::run(avoid).trace);
  }
  server.stop();

  return {transcript.ok() && every_op && fuzz.pass && served_equal,
          fmt::format("transcript {} ({} messages, all ops {}); fuzz: {}; served trace {}",
                      transcript.ok() ? "matches" : transcript.failures.front(),
                      transcript.exchanged, every_op ? "covered" : "missing", fuzz.detail,
                      served_equal ? "identical" : "differs")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"kinematics oracle suite", kinematics_suite},
      {"motor analytic checks", motor_suite},
      {"dynamics-kinematics consistency", dynamics_consistency},
      {"prewitt oracle", prewitt_suite},
      {"obstacle-avoidance transcription", avoid_grid},
      {"avoid_demo end-to-end safety", avoid_demo},
      {"line following", line_following},
      {"determinism", determinism},
      {"protocol", protocol_suite},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
  }
  std::cout << fmt::format("{} of {} criteria passed", criteria.size() - failed, criteria.size())
            << std::endl;
  return failed == 0 ? 0 : 1;
}
