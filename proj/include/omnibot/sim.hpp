#pragma once

#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "omnibot/controllers.hpp"
#include "omnibot/drivetrain.hpp"
#include "omnibot/scenario.hpp"
#include "omnibot/sensors.hpp"

namespace omnibot::sim {

/// Everything the behaviors see on one control tick.
struct SensorFrame {
  sensors::IrReadings ir{};
  bool bumper = false;
  sensors::CameraFrame camera;  // refreshed at camera cadence, else carried
  sensors::LineDetection line;  // detection on `camera`
  std::uint64_t seq = 0;
};

struct TraceRecord {
  std::uint64_t tick = 0;  // completed control ticks, 1-based
  double time_s = 0.0;
  Pose pose;
  BodyTwist twist;  // body frame
  std::array<drivetrain::WheelTelemetry, 3> wheels{};
  std::array<double, sensors::kIrCount> ir_v{};
  bool bumper = false;
  controllers::VelocityCommand command;
  std::string reason;
};

struct SetVelocity {
  controllers::VelocityCommand command;
};
struct SetPid {
  std::size_t wheel = 0;
  drivetrain::PidGains gains;
};
struct SelectController {
  ControllerKind controller = ControllerKind::external;
};
struct Reset {};

using Command = std::variant<SetVelocity, SetPid, SelectController, Reset>;

/// A command applied at the start of the control tick that follows `tick`
/// completed ticks.
struct ScheduledCommand {
  std::uint64_t tick = 0;
  Command command;
};

nlohmann::json to_json(const ScheduledCommand& c);
/// Throws std::invalid_argument on malformed entries.
ScheduledCommand scheduled_command_from_json(const nlohmann::json& j);

struct RunSummary {
  std::string reason;
  Pose final_pose;
  double min_clearance_m = 0.0;
  std::uint64_t collisions = 0;
  std::uint64_t ticks = 0;
};

nlohmann::json to_json(const RunSummary& s);

/// Pushes the footprint out of every penetrated surface along its normal to
/// exact contact and removes the velocity component into that surface.
/// Returns true if anything was penetrated.
bool resolve_collision(drivetrain::RigidBodyState& rb, const RobotParams& params,
                       const WorldScene& scene);

/// Smallest signed gap between the footprint and any surface (negative when
/// penetrating).
double clearance(const Vec2& center, const RobotParams& params, const WorldScene& scene);

struct EngineOptions {
  /// Zero an external velocity command after this many control ticks
  /// without a new set_velocity. Off when empty.
  std::optional<std::uint64_t> watchdog_ticks;
};

/// Mutable simulation state owned by one Engine.
struct SimState {
  std::uint64_t physics_ticks = 0;
  std::uint64_t control_ticks = 0;
  ControllerKind controller = ControllerKind::external;
  controllers::AvoidState avoid;
  std::uint64_t avoid_start_tick = 0;
  controllers::VelocityCommand external_command;
  std::uint64_t last_velocity_tick = 0;
  controllers::VelocityCommand last_command;
  std::string last_reason = "external";
  SensorFrame last_sensors;
  bool camera_stale = true;
  bool terminated = false;
  std::string end_reason;
  bool in_contact = false;
  double min_clearance_m = 0.0;
  std::uint64_t collisions = 0;
};

/// Fixed-step world loop. Each control tick runs, in order: drain queued
/// commands, sense, decide, drive (sub-stepped physics), resolve
/// collisions, append a trace record. Time is counted in integer ticks and
/// nothing reads the wall clock.
class Engine {
 public:
  explicit Engine(Scenario scenario, EngineOptions options = {});

  /// Thread-safe; drained at the start of the next control tick, in order
  /// (so the latest set_velocity wins).
  void enqueue(Command command);

  /// Runs one control tick. Returns false, without recording, once the run
  /// has ended (duration reached or behavior terminated).
  bool step();

  bool finished() const { return state_.terminated; }
  double time_s() const;
  std::uint64_t control_ticks() const { return state_.control_ticks; }
  std::uint64_t total_ticks() const { return total_ticks_; }

  const Scenario& scenario() const { return scenario_; }
  const SimState& state() const { return state_; }
  const drivetrain::Drivetrain& drive() const { return drive_; }
  const std::vector<TraceRecord>& trace() const { return trace_; }
  const std::vector<ScheduledCommand>& applied_commands() const { return applied_; }
  double line_threshold() const { return line_cfg_.strength_threshold; }
  RunSummary summary() const;
  /// Latest sensed frame; before the first tick, a noise-free frame at the
  /// current pose.
  SensorFrame peek_sensors() const;

 private:
  void revive();
  void apply(const Command& c);
  void sense();
  void reset_robot();

  Scenario scenario_;
  EngineOptions options_;
  drivetrain::Drivetrain drive_;
  sensors::IrRing ring_;
  sensors::LineDetectorConfig line_cfg_;
  std::mt19937_64 rng_;
  std::uint64_t total_ticks_ = 0;
  SimState state_;
  std::vector<TraceRecord> trace_;
  std::vector<ScheduledCommand> applied_;

  std::mutex queue_mutex_;
  std::vector<Command> queue_;
};

struct RunResult {
  std::vector<TraceRecord> trace;
  RunSummary summary;
  std::vector<ScheduledCommand> applied_commands;
};

/// Headless run at full speed with an optional command schedule (sorted by
/// tick).
RunResult run(const Scenario& scenario, const std::vector<ScheduledCommand>& schedule = {});

inline constexpr std::string_view kTraceHeader =
    "tick,time_s,x,y,theta,vx,vy,omega,w0_set,w0,i0,u0,w1_set,w1,i1,u1,w2_set,w2,i2,u2,"
    "ir0,ir1,ir2,ir3,ir4,ir5,ir6,ir7,ir8,bumper,cmd_vx,cmd_vy,cmd_omega,reason";

std::string format_trace_row(const TraceRecord& r);
void write_trace_csv(std::ostream& out, const std::vector<TraceRecord>& trace);
std::string trace_csv(const std::vector<TraceRecord>& trace);

}  // namespace omnibot::sim
