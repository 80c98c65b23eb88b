#pragma once

#include <string_view>

#include "omnibot/sensors.hpp"
#include "omnibot/world.hpp"

namespace omnibot::controllers {

/// Velocity in the robot API's units: mm/s and deg/s.
struct VelocityCommand {
  double vx_mm_s = 0.0;
  double vy_mm_s = 0.0;
  double omega_deg_s = 0.0;

  friend bool operator==(const VelocityCommand&, const VelocityCommand&) = default;
};

/// The only place API units turn into SI.
BodyTwist to_body_twist(const VelocityCommand& c);

enum class AvoidReason { running, timeout, bumper };

std::string_view to_string(AvoidReason r);

struct AvoidState {
  double elapsed_s = 0.0;
  bool terminated = false;
  AvoidReason reason = AvoidReason::running;
};

struct AvoidOutput {
  VelocityCommand command;
  AvoidState state;
};

inline constexpr double kAvoidThresholdV = 0.7;
inline constexpr double kAvoidTimeLimitS = 60.0;
inline constexpr VelocityCommand kAvoidForward{500.0, 0.0, 0.0};
inline constexpr VelocityCommand kAvoidRotate{0.0, 0.0, 100.0};

/// One pass of the IR obstacle-avoidance loop on sensors IR0, IR1, IR8:
/// bumper -> stop; 60 s elapsed -> stop; any voltage >= 0.7 V -> rotate in
/// place at 100 deg/s; otherwise drive forward at 500 mm/s.
AvoidOutput avoid_step(double v0, double v1, double v8, bool bumper, double elapsed_s);

enum class LostLinePolicy { stop, rotate_search };

struct LineFollowConfig {
  int width_px = 640;
  double dead_band_px = 20.0;
  double forward_mm_s = 150.0;
  double turn_deg_s = 30.0;
  LostLinePolicy lost_line_policy = LostLinePolicy::stop;
};

/// Throws std::invalid_argument unless 0 < dead_band_px < width_px / 2.
void validate(const LineFollowConfig& cfg);

/// Drive straight while the line is within the dead band around the image
/// center (inclusive), otherwise keep driving and turn toward it: a line
/// left of center (small x) gives a CCW (positive) turn.
VelocityCommand line_follow_step(const sensors::LineDetection& d, const LineFollowConfig& cfg);

}  // namespace omnibot::controllers
