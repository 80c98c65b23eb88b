#include "omnibot/kinematics.hpp"

#include <stdexcept>

namespace omnibot::kinematics {

namespace {
constexpr double kStraightLineOmega = 1e-9;
}

KinematicJacobian make_jacobian(const RobotParams& params) {
  KinematicJacobian out;
  for (int i = 0; i < 3; ++i) {
    const double a = params.mount_angles_rad[i];
    out.j.row(i) << -std::sin(a), std::cos(a), params.wheel_distance_m;
  }
  const Eigen::FullPivLU<Eigen::Matrix3d> lu(out.j);
  if (!lu.isInvertible() || std::abs(lu.determinant()) < 1e-12) {
    throw std::invalid_argument("kinematic Jacobian is singular for the given mount angles");
  }
  out.j_inv = lu.inverse();
  return out;
}

WheelSpeeds inverse_kinematics(const BodyTwist& twist, const KinematicJacobian& jac,
                               const RobotParams& params) {
  const Eigen::Vector3d contact = jac.j * as_vector(twist);
  WheelSpeeds w;
  for (int i = 0; i < 3; ++i) w.omega_wheel[i] = contact[i] / params.wheel_radius_m;
  return w;
}

WheelSpeeds inverse_kinematics(const BodyTwist& twist, const RobotParams& params) {
  return inverse_kinematics(twist, make_jacobian(params), params);
}

BodyTwist forward_kinematics(const WheelSpeeds& wheels, const KinematicJacobian& jac,
                             const RobotParams& params) {
  Eigen::Vector3d contact;
  for (int i = 0; i < 3; ++i) contact[i] = wheels.omega_wheel[i] * params.wheel_radius_m;
  return as_twist(jac.j_inv * contact);
}

BodyTwist forward_kinematics(const WheelSpeeds& wheels, const RobotParams& params) {
  return forward_kinematics(wheels, make_jacobian(params), params);
}

Pose integrate_pose(const Pose& pose, const BodyTwist& twist, double dt) {
  double dx_body = 0.0;
  double dy_body = 0.0;
  const double dtheta = twist.omega * dt;
  if (std::abs(twist.omega) < kStraightLineOmega) {
    dx_body = twist.vx * dt;
    dy_body = twist.vy * dt;
  } else {
    const double s = std::sin(dtheta) / twist.omega;
    const double c = (1.0 - std::cos(dtheta)) / twist.omega;
    dx_body = twist.vx * s - twist.vy * c;
    dy_body = twist.vx * c + twist.vy * s;
  }
  const Vec2 d = rotate(Vec2{dx_body, dy_body}, pose.theta);
  return {pose.x + d.x(), pose.y + d.y(), normalize_angle(pose.theta + dtheta)};
}

}  // namespace omnibot::kinematics
