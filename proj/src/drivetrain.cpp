#include "omnibot/drivetrain.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace omnibot::drivetrain {

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::invalid_argument(std::string("non-finite ") + what);
}

}  // namespace

void validate(const MotorParams& p) {
  auto positive = [](double v, const char* name) {
    if (!(std::isfinite(v) && v > 0.0)) {
      throw std::invalid_argument(std::string(name) + " must be finite and > 0");
    }
  };
  positive(p.resistance_ohm, "resistance_ohm");
  positive(p.inductance_h, "inductance_h");
  positive(p.back_emf_v_s_rad, "back_emf_v_s_rad");
  positive(p.torque_nm_a, "torque_nm_a");
  positive(p.rotor_inertia_kg_m2, "rotor_inertia_kg_m2");
  positive(p.viscous_friction_nm_s, "viscous_friction_nm_s");
  positive(p.max_voltage_v, "max_voltage_v");
}

MotorState motor_step(const MotorState& s, const MotorParams& p, double voltage_v,
                      double load_torque_nm, double dt_s) {
  require_finite(s.current_a, "motor current");
  require_finite(s.omega_rad_s, "motor speed");
  require_finite(voltage_v, "motor voltage");
  require_finite(load_torque_nm, "load torque");
  require_finite(dt_s, "time step");

  const double v = std::clamp(voltage_v, -p.max_voltage_v, p.max_voltage_v);
  const double a = dt_s / p.inductance_h;
  const double c = dt_s / p.rotor_inertia_kg_m2;

  // [1 + aR    a ke ] [i']   [i + aV   ]
  // [-c kt   1 + cb ] [w'] = [w - c load]
  const double m00 = 1.0 + a * p.resistance_ohm;
  const double m01 = a * p.back_emf_v_s_rad;
  const double m10 = -c * p.torque_nm_a;
  const double m11 = 1.0 + c * p.viscous_friction_nm_s;
  const double r0 = s.current_a + a * v;
  const double r1 = s.omega_rad_s - c * load_torque_nm;
  const double det = m00 * m11 - m01 * m10;

  MotorState out;
  out.current_a = (r0 * m11 - m01 * r1) / det;
  out.omega_rad_s = (m00 * r1 - m10 * r0) / det;
  out.applied_voltage_v = v;
  return out;
}

MotorState motor_step_locked(const MotorState& s, const MotorParams& p, double voltage_v,
                             double dt_s) {
  require_finite(s.current_a, "motor current");
  require_finite(voltage_v, "motor voltage");
  require_finite(dt_s, "time step");
  const double v = std::clamp(voltage_v, -p.max_voltage_v, p.max_voltage_v);
  const double a = dt_s / p.inductance_h;
  MotorState out;
  out.current_a = (s.current_a + a * v) / (1.0 + a * p.resistance_ohm);
  out.omega_rad_s = 0.0;
  out.applied_voltage_v = v;
  return out;
}

double motor_energy(const MotorState& s, const MotorParams& p) {
  return 0.5 * p.rotor_inertia_kg_m2 * s.omega_rad_s * s.omega_rad_s +
         0.5 * p.inductance_h * s.current_a * s.current_a;
}

bool valid(const PidGains& g) {
  auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
  return ok(g.kp) && ok(g.ki) && ok(g.kd);
}

PidOutput pid_step(const PidGains& g, const PidState& st, double setpoint, double measured,
                   double dt_s, double out_min, double out_max, double integral_limit) {
  const double e = setpoint - measured;
  const double derivative = (e - st.prev_error) / dt_s;
  auto raw_output = [&](double integral) {
    return g.kp * e + g.ki * integral + g.kd * derivative;
  };

  double integral = std::clamp(st.integral + e * dt_s, -integral_limit, integral_limit);
  double raw = raw_output(integral);
  if ((raw > out_max && e > 0.0) || (raw < out_min && e < 0.0)) {
    integral = std::clamp(st.integral, -integral_limit, integral_limit);
    raw = raw_output(integral);
  }

  PidOutput out;
  out.command = std::clamp(raw, out_min, out_max);
  out.state.integral = integral;
  out.state.prev_error = e;
  out.state.saturated = raw > out_max || raw < out_min;
  return out;
}

BodyTwist body_twist(const RigidBodyState& rb) {
  const Vec2 v = rotate(Vec2{rb.vx, rb.vy}, -rb.pose.theta);
  return {v.x(), v.y(), rb.omega};
}

RigidBodyState body_step(const RigidBodyState& rb, const std::array<double, 3>& wheel_torques_nm,
                         const RobotParams& params, double dt_s) {
  Vec2 force_body{0.0, 0.0};
  double torque = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double f = wheel_torques_nm[i] / params.wheel_radius_m;
    const double a = params.mount_angles_rad[i];
    force_body += f * Vec2{-std::sin(a), std::cos(a)};
    torque += params.wheel_distance_m * f;
  }
  const Vec2 force_world = rotate(force_body, rb.pose.theta);

  RigidBodyState out = rb;
  out.vx += dt_s * force_world.x() / params.mass_kg;
  out.vy += dt_s * force_world.y() / params.mass_kg;
  out.omega += dt_s * torque / params.inertia_z_kg_m2;
  out.pose.x += dt_s * out.vx;
  out.pose.y += dt_s * out.vy;
  out.pose.theta = normalize_angle(rb.pose.theta + dt_s * out.omega);
  return out;
}

Drivetrain::Drivetrain(DrivetrainConfig config, const Pose& start)
    : config_(std::move(config)), jac_(kinematics::make_jacobian(config_.robot)) {
  validate(config_.robot);
  validate(config_.motor);
  for (const auto& g : config_.gains) {
    if (!valid(g)) throw std::invalid_argument("PID gains must be finite and >= 0");
  }
  const Eigen::Vector3d inv_mass{1.0 / config_.robot.mass_kg, 1.0 / config_.robot.mass_kg,
                                 1.0 / config_.robot.inertia_z_kg_m2};
  body_mobility_ = jac_.j * inv_mass.asDiagonal() * jac_.j.transpose();
  pending_gains_ = config_.gains;
  reset(start);
}

void Drivetrain::reset(const Pose& start) {
  body_ = RigidBodyState{};
  body_.pose = start;
  motors_ = {};
  pids_ = {};
  telemetry_ = {};
}

void Drivetrain::set_pid_gains(std::size_t wheel, const PidGains& gains) {
  if (wheel >= 3) throw std::out_of_range("wheel index must be 0..2");
  if (!valid(gains)) throw std::invalid_argument("PID gains must be finite and >= 0");
  pending_gains_[wheel] = gains;
  gains_dirty_[wheel] = true;
}

PidGains Drivetrain::pid_gains(std::size_t wheel) const {
  if (wheel >= 3) throw std::out_of_range("wheel index must be 0..2");
  return pending_gains_[wheel];
}

BodyTwist Drivetrain::clamp_setpoint(const BodyTwist& t) const {
  BodyTwist out = t;
  const double speed = std::hypot(t.vx, t.vy);
  const double vmax = config_.robot.max_speed_m_s;
  if (speed > vmax) {
    out.vx *= vmax / speed;
    out.vy *= vmax / speed;
  }
  out.omega = std::clamp(t.omega, -config_.robot.max_omega_rad_s, config_.robot.max_omega_rad_s);
  return out;
}

WheelSpeeds Drivetrain::wheel_speeds() const {
  WheelSpeeds w;
  for (int i = 0; i < 3; ++i) w.omega_wheel[i] = motors_[i].omega_rad_s / config_.robot.gear_ratio;
  return w;
}

void Drivetrain::sync_wheels_to_body() {
  const WheelSpeeds w = kinematics::inverse_kinematics(body_twist(body_), jac_, config_.robot);
  for (int i = 0; i < 3; ++i) motors_[i].omega_rad_s = w.omega_wheel[i] * config_.robot.gear_ratio;
}

DriveTelemetry Drivetrain::drive_tick(const BodyTwist& setpoint, double dt_control,
                                      double dt_physics,
                                      const std::function<bool(RigidBodyState&)>& contact) {
  for (int i = 0; i < 3; ++i) {
    if (gains_dirty_[i]) {
      config_.gains[i] = pending_gains_[i];
      pids_[i] = PidState{};
      gains_dirty_[i] = false;
    }
  }

  const double gear = config_.robot.gear_ratio;
  const double vmax = config_.motor.max_voltage_v;
  DriveTelemetry tel;
  tel.setpoint = clamp_setpoint(setpoint);
  const WheelSpeeds target = kinematics::inverse_kinematics(tel.setpoint, jac_, config_.robot);

  std::array<double, 3> voltages{};
  for (int i = 0; i < 3; ++i) {
    const PidOutput out = pid_step(config_.gains[i], pids_[i], target.omega_wheel[i] * gear,
                                   motors_[i].omega_rad_s, dt_control, -vmax, vmax,
                                   config_.integral_limit);
    pids_[i] = out.state;
    voltages[i] = out.command;
  }

  const auto substeps = static_cast<long>(std::llround(dt_control / dt_physics));
  for (long k = 0; k < substeps; ++k) {
    physics_substep(voltages, dt_physics);
    if (contact && contact(body_)) sync_wheels_to_body();
  }

  for (int i = 0; i < 3; ++i) {
    tel.wheels[i].setpoint_rad_s = target.omega_wheel[i];
    tel.wheels[i].speed_rad_s = motors_[i].omega_rad_s / gear;
    tel.wheels[i].current_a = motors_[i].current_a;
    tel.wheels[i].voltage_v = motors_[i].applied_voltage_v;
  }
  telemetry_ = tel;
  return tel;
}

void Drivetrain::physics_substep(const std::array<double, 3>& voltages, double dt) {
  const RobotParams& rp = config_.robot;
  const double r = rp.wheel_radius_m;
  const double gear = rp.gear_ratio;

  // Motor response to load torque is affine; probe it at 0 and 1 N m.
  std::array<MotorState, 3> free{};
  Eigen::Vector3d mismatch;
  Eigen::Matrix3d system = (dt / r) * body_mobility_;
  const Eigen::Vector3d body_contact = jac_.j * kinematics::as_vector(body_twist(body_));
  for (int i = 0; i < 3; ++i) {
    free[i] = motor_step(motors_[i], config_.motor, voltages[i], 0.0, dt);
    const MotorState probe = motor_step(motors_[i], config_.motor, voltages[i], 1.0, dt);
    const double slope = probe.omega_rad_s - free[i].omega_rad_s;
    system(i, i) -= r * slope / (gear * gear);
    mismatch[i] = r * free[i].omega_rad_s / gear - body_contact[i];
  }

  // Wheel-shaft traction torques that cancel the contact-speed mismatch.
  const Eigen::Vector3d torques = system.ldlt().solve(mismatch);
  std::array<double, 3> wheel_torques{};
  for (int i = 0; i < 3; ++i) {
    wheel_torques[i] = torques[i];
    motors_[i] = motor_step(motors_[i], config_.motor, voltages[i], torques[i] / gear, dt);
  }
  body_ = body_step(body_, wheel_torques, rp, dt);
}

}  // namespace omnibot::drivetrain
