#include "omnibot/sim.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace omnibot::sim {

namespace {

constexpr int kMaxProjectionPasses = 4;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool finite(const drivetrain::RigidBodyState& rb) {
  return std::isfinite(rb.pose.x) && std::isfinite(rb.pose.y) && std::isfinite(rb.pose.theta) &&
         std::isfinite(rb.vx) && std::isfinite(rb.vy) && std::isfinite(rb.omega);
}

std::string num(double v) { return fmt::format("{:.9g}", v); }

}  // namespace

nlohmann::json to_json(const ScheduledCommand& c) {
  nlohmann::json j;
  j["tick"] = c.tick;
  std::visit(overloaded{
                 [&j](const SetVelocity& v) {
                   j["op"] = "set_velocity";
                   j["vx"] = v.command.vx_mm_s;
                   j["vy"] = v.command.vy_mm_s;
                   j["omega"] = v.command.omega_deg_s;
                 },
                 [&j](const SetPid& p) {
                   j["op"] = "set_pid";
                   j["wheel"] = p.wheel;
                   j["kp"] = p.gains.kp;
                   j["ki"] = p.gains.ki;
                   j["kd"] = p.gains.kd;
                 },
                 [&j](const SelectController& s) {
                   j["op"] = "select_controller";
                   j["controller"] = std::string(to_string(s.controller));
                 },
                 [&j](const Reset&) { j["op"] = "reset"; },
             },
             c.command);
  return j;
}

ScheduledCommand scheduled_command_from_json(const nlohmann::json& j) {
  try {
    ScheduledCommand c;
    c.tick = j.at("tick").get<std::uint64_t>();
    const std::string op = j.at("op").get<std::string>();
    if (op == "set_velocity") {
      c.command = SetVelocity{{j.at("vx").get<double>(), j.at("vy").get<double>(),
                               j.at("omega").get<double>()}};
    } else if (op == "set_pid") {
      SetPid p{j.at("wheel").get<std::size_t>(),
               {j.at("kp").get<double>(), j.at("ki").get<double>(), j.at("kd").get<double>()}};
      if (p.wheel > 2) throw std::invalid_argument("set_pid wheel must be 0, 1 or 2");
      if (!drivetrain::valid(p.gains)) throw std::invalid_argument("set_pid gains must be >= 0");
      c.command = p;
    } else if (op == "select_controller") {
      c.command = SelectController{parse_controller(j.at("controller").get<std::string>())};
    } else if (op == "reset") {
      c.command = Reset{};
    } else {
      throw std::invalid_argument("unknown command op '" + op + "'");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed scheduled command: ") + e.what());
  }
}

nlohmann::json to_json(const RunSummary& s) {
  return {
      {"reason", s.reason},
      {"final_pose", {{"x", s.final_pose.x}, {"y", s.final_pose.y}, {"theta", s.final_pose.theta}}},
      {"min_clearance_m", s.min_clearance_m},
      {"collisions", s.collisions},
      {"ticks", s.ticks},
  };
}

double clearance(const Vec2& center, const RobotParams& params, const WorldScene& scene) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : surface_contacts(center, scene)) best = std::min(best, c.signed_distance);
  return best - params.body_radius_m;
}

bool resolve_collision(drivetrain::RigidBodyState& rb, const RobotParams& params,
                       const WorldScene& scene) {
  const double radius = params.body_radius_m;
  bool penetrated = false;
  for (int pass = 0; pass < kMaxProjectionPasses; ++pass) {
    bool moved = false;
    const std::size_t count = scene.obstacles.size() + 4;
    for (std::size_t k = 0; k < count; ++k) {
      // Recomputed per surface so each projection sees the previous ones.
      const SurfaceContact c = surface_contacts(rb.pose.position(), scene)[k];
      if (c.signed_distance >= radius) continue;
      const Vec2 push = (radius - c.signed_distance) * c.normal;
      rb.pose.x += push.x();
      rb.pose.y += push.y();
      const double vn = rb.vx * c.normal.x() + rb.vy * c.normal.y();
      if (vn < 0.0) {
        rb.vx -= vn * c.normal.x();
        rb.vy -= vn * c.normal.y();
      }
      penetrated = true;
      moved = true;
    }
    if (!moved) break;
  }
  return penetrated;
}

Engine::Engine(Scenario scenario, EngineOptions options)
    : scenario_(std::move(scenario)),
      options_(options),
      drive_(scenario_.drivetrain_config(), scenario_.scene.spawn),
      ring_(sensors::make_ir_ring(scenario_.robot, scenario_.sensors.ir_max_range_m)),
      rng_(scenario_.seed) {
  validate(scenario_);
  total_ticks_ = static_cast<std::uint64_t>(
      std::ceil(scenario_.duration_s / scenario_.dt_control_s - 1e-9));

  // Detection threshold from a line-free frame with the configured noise,
  // drawn from its own generator so it does not shift the run's noise.
  sensors::CameraFrame background;
  background.width_px = scenario_.sensors.camera_width_px;
  background.height_px = scenario_.sensors.camera_height_px();
  background.pixels.assign(static_cast<std::size_t>(background.width_px) * background.height_px,
                           sensors::kBackgroundIntensity);
  std::mt19937_64 calib_rng(scenario_.seed ^ 0x9e3779b97f4a7c15ULL);
  sensors::add_camera_noise(background, scenario_.sensors.camera_noise, calib_rng);
  line_cfg_.strength_threshold = sensors::calibrate_line_threshold(background);

  state_.controller = scenario_.controller;
  state_.min_clearance_m = clearance(drive_.body().pose.position(), scenario_.robot, scenario_.scene);
}

double Engine::time_s() const {
  return static_cast<double>(state_.physics_ticks) * scenario_.dt_physics_s;
}

void Engine::enqueue(Command command) {
  std::lock_guard lock(queue_mutex_);
  queue_.push_back(std::move(command));
}

void Engine::reset_robot() {
  drive_.reset(scenario_.scene.spawn);
  state_.external_command = {};
  state_.last_command = {};
  state_.avoid = {};
  state_.avoid_start_tick = state_.control_ticks;
  state_.last_velocity_tick = state_.control_ticks;
  state_.camera_stale = true;
  state_.in_contact = false;
}

void Engine::revive() {
  // A behavior that stopped itself may be restarted; duration and abort are final.
  if (state_.terminated && (state_.end_reason == "timeout" || state_.end_reason == "bumper")) {
    state_.terminated = false;
    state_.end_reason.clear();
  }
}

void Engine::apply(const Command& c) {
  std::visit(overloaded{
                 [this](const SetVelocity& v) {
                   state_.external_command = v.command;
                   state_.last_velocity_tick = state_.control_ticks;
                 },
                 [this](const SetPid& p) { drive_.set_pid_gains(p.wheel, p.gains); },
                 [this](const SelectController& s) {
                   state_.controller = s.controller;
                   state_.avoid = {};
                   state_.avoid_start_tick = state_.control_ticks;
                   state_.last_velocity_tick = state_.control_ticks;
                   revive();
                 },
                 [this](const Reset&) {
                   reset_robot();
                   revive();
                 },
             },
             c);
  applied_.push_back({state_.control_ticks, c});
}

void Engine::sense() {
  SensorFrame& f = state_.last_sensors;
  const Pose& pose = drive_.body().pose;
  f.ir = sensors::raycast_ir(pose, ring_, scenario_.scene);
  sensors::add_ir_noise(f.ir, scenario_.sensors.ir_noise_v, sensors::IrCurve{}, rng_);
  f.bumper = sensors::bumper(pose, scenario_.robot, scenario_.scene);
  const auto cadence = static_cast<std::uint64_t>(scenario_.sensors.camera_cadence_ticks);
  if (state_.camera_stale || state_.control_ticks % cadence == 0) {
    f.camera = sensors::render_camera(pose, scenario_.scene, scenario_.sensors.camera_width_px,
                                      scenario_.sensors.camera_height_px());
    sensors::add_camera_noise(f.camera, scenario_.sensors.camera_noise, rng_);
    f.line = sensors::detect_line_x(f.camera, line_cfg_);
    state_.camera_stale = false;
  }
  ++f.seq;
}

bool Engine::step() {
  std::vector<Command> pending;
  {
    std::lock_guard lock(queue_mutex_);
    pending.swap(queue_);
  }
  for (const auto& c : pending) apply(c);
  if (state_.terminated) return false;

  sense();
  const SensorFrame& f = state_.last_sensors;

  controllers::VelocityCommand cmd;
  std::string reason;
  switch (state_.controller) {
    case ControllerKind::avoid_obstacles: {
      const double elapsed = static_cast<double>(state_.control_ticks - state_.avoid_start_tick) *
                             scenario_.dt_control_s;
      const auto out = controllers::avoid_step(f.ir[0].voltage_v, f.ir[1].voltage_v,
                                               f.ir[8].voltage_v, f.bumper, elapsed);
      state_.avoid = out.state;
      if (out.state.terminated) {
        state_.terminated = true;
        state_.end_reason = std::string(controllers::to_string(out.state.reason));
        state_.last_command = {};
        return false;
      }
      cmd = out.command;
      reason = "running";
      break;
    }
    case ControllerKind::line_follow:
      cmd = controllers::line_follow_step(f.line, scenario_.line_follow);
      reason = f.line.found ? "tracking" : "lost";
      break;
    case ControllerKind::external:
      if (options_.watchdog_ticks &&
          state_.control_ticks - state_.last_velocity_tick >= *options_.watchdog_ticks &&
          !(state_.external_command == controllers::VelocityCommand{})) {
        apply(SetVelocity{});
      }
      cmd = state_.external_command;
      reason = "external";
      break;
  }

  if (state_.control_ticks >= total_ticks_) {
    state_.terminated = true;
    state_.end_reason = "duration";
    return false;
  }

  state_.last_command = cmd;
  state_.last_reason = reason;
  bool penetrated = false;
  const drivetrain::DriveTelemetry tel = drive_.drive_tick(
      controllers::to_body_twist(cmd), scenario_.dt_control_s, scenario_.dt_physics_s,
      [&](drivetrain::RigidBodyState& rb) {
        const bool hit = resolve_collision(rb, scenario_.robot, scenario_.scene);
        penetrated = penetrated || hit;
        return hit;
      });
  state_.physics_ticks += static_cast<std::uint64_t>(scenario_.substeps());
  ++state_.control_ticks;

  if (penetrated && !state_.in_contact) ++state_.collisions;
  state_.in_contact = penetrated;

  TraceRecord rec;
  rec.tick = state_.control_ticks;
  rec.time_s = time_s();
  rec.pose = drive_.body().pose;
  rec.twist = drivetrain::body_twist(drive_.body());
  rec.wheels = tel.wheels;
  for (std::size_t k = 0; k < sensors::kIrCount; ++k) rec.ir_v[k] = f.ir[k].voltage_v;
  rec.bumper = f.bumper;
  rec.command = cmd;
  rec.reason = reason;

  if (!finite(drive_.body())) {
    rec.reason = "abort";
    trace_.push_back(std::move(rec));
    state_.terminated = true;
    state_.end_reason = "abort";
    return false;
  }

  state_.min_clearance_m = std::min(
      state_.min_clearance_m, clearance(drive_.body().pose.position(), scenario_.robot, scenario_.scene));
  trace_.push_back(std::move(rec));
  return true;
}

SensorFrame Engine::peek_sensors() const {
  if (state_.last_sensors.seq > 0) return state_.last_sensors;
  SensorFrame f;
  const Pose& pose = drive_.body().pose;
  f.ir = sensors::raycast_ir(pose, ring_, scenario_.scene);
  f.bumper = sensors::bumper(pose, scenario_.robot, scenario_.scene);
  f.camera = sensors::render_camera(pose, scenario_.scene, scenario_.sensors.camera_width_px,
                                    scenario_.sensors.camera_height_px());
  f.line = sensors::detect_line_x(f.camera, line_cfg_);
  return f;
}

RunSummary Engine::summary() const {
  RunSummary s;
  s.reason = state_.terminated ? state_.end_reason : "running";
  s.final_pose = drive_.body().pose;
  s.min_clearance_m = state_.min_clearance_m;
  s.collisions = state_.collisions;
  s.ticks = state_.control_ticks;
  return s;
}

RunResult run(const Scenario& scenario, const std::vector<ScheduledCommand>& schedule) {
  Engine engine(scenario);
  std::size_t next = 0;
  while (true) {
    while (next < schedule.size() && schedule[next].tick <= engine.control_ticks()) {
      engine.enqueue(schedule[next].command);
      ++next;
    }
    if (!engine.step()) break;
  }
  RunResult out;
  out.trace = engine.trace();
  out.summary = engine.summary();
  out.applied_commands = engine.applied_commands();
  return out;
}

std::string format_trace_row(const TraceRecord& r) {
  std::string row = fmt::format("{},{},{},{},{},{},{},{}", r.tick, num(r.time_s), num(r.pose.x),
                                num(r.pose.y), num(r.pose.theta), num(r.twist.vx),
                                num(r.twist.vy), num(r.twist.omega));
  for (const auto& w : r.wheels) {
    row += fmt::format(",{},{},{},{}", num(w.setpoint_rad_s), num(w.speed_rad_s), num(w.current_a),
                       num(w.voltage_v));
  }
  for (double v : r.ir_v) row += "," + num(v);
  row += fmt::format(",{},{},{},{},{}", r.bumper ? 1 : 0, num(r.command.vx_mm_s),
                     num(r.command.vy_mm_s), num(r.command.omega_deg_s), r.reason);
  return row;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRecord>& trace) {
  out << kTraceHeader << '\n';
  for (const auto& r : trace) out << format_trace_row(r) << '\n';
}

std::string trace_csv(const std::vector<TraceRecord>& trace) {
  std::ostringstream ss;
  write_trace_csv(ss, trace);
  return ss.str();
}

}  // namespace omnibot::sim
