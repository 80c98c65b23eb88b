#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "omnibot/controllers.hpp"
#include "omnibot/drivetrain.hpp"
#include "omnibot/world.hpp"

namespace omnibot {

enum class ControllerKind { external, line_follow, avoid_obstacles };

std::string_view to_string(ControllerKind k);
/// Throws std::invalid_argument for unknown names.
ControllerKind parse_controller(std::string_view name);

struct SensorSettings {
  double ir_max_range_m = 0.8;
  double ir_noise_v = 0.0;
  int camera_width_px = 640;
  int camera_cadence_ticks = 3;
  double camera_noise = 0.0;

  int camera_height_px() const { return camera_width_px * 3 / 4; }
};

struct Scenario {
  WorldScene scene;
  RobotParams robot;
  ControllerKind controller = ControllerKind::external;
  double duration_s = 0.0;
  double dt_physics_s = 0.001;
  double dt_control_s = 0.01;
  std::uint64_t seed = 0;

  drivetrain::MotorParams motor;
  std::array<drivetrain::PidGains, 3> gains{};
  double pid_integral_limit = 100.0;
  SensorSettings sensors;
  controllers::LineFollowConfig line_follow;

  /// Physics substeps per control tick.
  int substeps() const;
  drivetrain::DrivetrainConfig drivetrain_config() const;
};

class ScenarioError : public std::runtime_error {
 public:
  enum class Kind { parse, validation };

  ScenarioError(Kind kind, int line, std::string field, const std::string& message);

  Kind kind() const { return kind_; }
  int line() const { return line_; }  // 0 when not tied to a line
  const std::string& field() const { return field_; }

 private:
  Kind kind_;
  int line_;
  std::string field_;
};

/// Parses and validates a scenario document:
///
///   [scene]  bounds = x0 y0 x1 y1
///            spawn = x y theta_deg
///            circle = cx cy r                (repeatable)
///            segment = x1 y1 x2 y2 thickness (repeatable)
///            line = w x1 y1 x2 y2 ...        (repeatable)
///   [robot]  one key per RobotParams field (mount_angles_deg also accepted)
///   [run]    controller, duration_s, dt_physics_s, dt_control_s, seed
///   [motor], [pid], [sensors], [line_follow]  optional tuning sections
///
/// '#' starts a comment. Unknown sections or keys are errors.
Scenario load_scenario(std::string_view text);

/// Reads the file and calls load_scenario. Throws std::runtime_error if the
/// file cannot be read.
Scenario load_scenario_file(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);

/// Throws ScenarioError(validation) naming the violated invariant.
void validate(const Scenario& s);

}  // namespace omnibot
