#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <limits>

#include "omnibot/kinematics.hpp"
#include "omnibot/world.hpp"

namespace omnibot::drivetrain {

/// Brushed DC motor constants, SI units.
struct MotorParams {
  double resistance_ohm = 0.46;
  double inductance_h = 0.33e-3;
  double back_emf_v_s_rad = 0.0302;
  double torque_nm_a = 0.0302;
  double rotor_inertia_kg_m2 = 5.8e-6;
  double viscous_friction_nm_s = 1e-5;
  double max_voltage_v = 24.0;
};

/// Throws std::invalid_argument on non-positive constants.
void validate(const MotorParams& params);

struct MotorState {
  double current_a = 0.0;
  double omega_rad_s = 0.0;  // motor shaft
  double applied_voltage_v = 0.0;
};

/// One step of
///   L di/dt = V - R i - k_e w
///   J dw/dt = k_t i - b w - load
/// implicit in i and w (explicit in V and load), so the step is passive for
/// any dt when k_e == k_t. Voltage is clamped to +-max_voltage first.
/// Throws std::invalid_argument on non-finite input.
MotorState motor_step(const MotorState& s, const MotorParams& p, double voltage_v,
                      double load_torque_nm, double dt_s);

/// Electrical step with the rotor held at w = 0.
MotorState motor_step_locked(const MotorState& s, const MotorParams& p, double voltage_v,
                             double dt_s);

/// 0.5 J w^2 + 0.5 L i^2
double motor_energy(const MotorState& s, const MotorParams& p);

struct PidGains {
  double kp = 0.05;
  double ki = 0.3;
  double kd = 0.0;
};

bool valid(const PidGains& g);

struct PidState {
  double integral = 0.0;
  double prev_error = 0.0;
  bool saturated = false;
};

struct PidOutput {
  double command = 0.0;
  PidState state;
};

/// Conditional anti-windup: the integral is frozen on a step whose unclamped
/// output would exceed a limit in the direction the error pushes it, and is
/// always kept within +-integral_limit.
PidOutput pid_step(const PidGains& g, const PidState& st, double setpoint, double measured,
                   double dt_s, double out_min, double out_max,
                   double integral_limit = std::numeric_limits<double>::infinity());

/// Planar rigid body. Velocities are in the world frame.
struct RigidBodyState {
  Pose pose;
  double vx = 0.0;
  double vy = 0.0;
  double omega = 0.0;
};

/// Body-frame twist of a rigid body state.
BodyTwist body_twist(const RigidBodyState& rb);

/// Wheel i pushes with force torque_i / r along its drive tangent; the net
/// force is rotated into the world frame and integrated with semi-implicit
/// Euler (velocity first, then pose with the new velocity).
RigidBodyState body_step(const RigidBodyState& rb, const std::array<double, 3>& wheel_torques_nm,
                         const RobotParams& params, double dt_s);

struct DrivetrainConfig {
  RobotParams robot;
  MotorParams motor;
  std::array<PidGains, 3> gains{};
  double integral_limit = 100.0;  // rad
};

/// Per-wheel values reported each control tick. Speeds are at the wheel
/// shaft (after the gearbox).
struct WheelTelemetry {
  double setpoint_rad_s = 0.0;
  double speed_rad_s = 0.0;
  double current_a = 0.0;
  double voltage_v = 0.0;
};

struct DriveTelemetry {
  BodyTwist setpoint;  // after clamping
  std::array<WheelTelemetry, 3> wheels{};
};

/// Three motors with speed loops driving a rigid body. Wheels do not slip:
/// each physics substep solves for the traction torques that make the
/// wheel contact speeds equal the body's contact speeds, and feeds those
/// torques to the body and (through the gearbox) back to the motors.
class Drivetrain {
 public:
  Drivetrain(DrivetrainConfig config, const Pose& start);

  /// Takes effect at the next drive_tick; that wheel's integral is reset.
  /// Throws std::out_of_range / std::invalid_argument.
  void set_pid_gains(std::size_t wheel, const PidGains& gains);
  /// Latest gains set for the wheel, including ones not yet applied.
  PidGains pid_gains(std::size_t wheel) const;

  /// Clamps the setpoint, runs the speed loops once and advances motors and
  /// body in dt_physics substeps until dt_control has elapsed. After every
  /// substep `contact` may correct the body; when it reports a change the
  /// wheels are brought back in line with the body.
  DriveTelemetry drive_tick(const BodyTwist& setpoint, double dt_control, double dt_physics,
                            const std::function<bool(RigidBodyState&)>& contact = {});

  /// Sets each motor speed to the one the body twist implies, as the wheels
  /// do not slip. Currents are kept.
  void sync_wheels_to_body();

  /// One physics substep with fixed motor voltages.
  void physics_substep(const std::array<double, 3>& voltages, double dt);

  BodyTwist clamp_setpoint(const BodyTwist& t) const;

  void reset(const Pose& start);

  const DrivetrainConfig& config() const { return config_; }
  const kinematics::KinematicJacobian& jacobian() const { return jac_; }
  const RigidBodyState& body() const { return body_; }
  RigidBodyState& body() { return body_; }
  const std::array<MotorState, 3>& motors() const { return motors_; }
  const std::array<PidState, 3>& pid_states() const { return pids_; }
  WheelSpeeds wheel_speeds() const;
  const DriveTelemetry& last_telemetry() const { return telemetry_; }

 private:
  DrivetrainConfig config_;
  kinematics::KinematicJacobian jac_;
  Eigen::Matrix3d body_mobility_;  // J M^-1 J^T
  RigidBodyState body_;
  std::array<MotorState, 3> motors_{};
  std::array<PidState, 3> pids_{};
  std::array<PidGains, 3> pending_gains_{};
  std::array<bool, 3> gains_dirty_{false, false, false};
  DriveTelemetry telemetry_{};
};

}  // namespace omnibot::drivetrain
