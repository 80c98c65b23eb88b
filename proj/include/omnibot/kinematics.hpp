#pragma once

#include <Eigen/Dense>

#include "omnibot/world.hpp"

namespace omnibot::kinematics {

/// Maps body twist (vx, vy, omega) to wheel contact speeds in m/s.
/// Row i is (-sin a_i, cos a_i, d) for mount angle a_i and wheel distance d:
/// each wheel drives along the CCW tangent of its mount position.
struct KinematicJacobian {
  Eigen::Matrix3d j;
  Eigen::Matrix3d j_inv;
};

/// Throws std::invalid_argument when the mount angles give a singular matrix.
KinematicJacobian make_jacobian(const RobotParams& params);

WheelSpeeds inverse_kinematics(const BodyTwist& twist, const KinematicJacobian& jac,
                               const RobotParams& params);
WheelSpeeds inverse_kinematics(const BodyTwist& twist, const RobotParams& params);

BodyTwist forward_kinematics(const WheelSpeeds& wheels, const KinematicJacobian& jac,
                             const RobotParams& params);
BodyTwist forward_kinematics(const WheelSpeeds& wheels, const RobotParams& params);

/// Exact integration of a constant body twist over dt: straight line when
/// |omega| < 1e-9 rad/s, circular arc otherwise.
Pose integrate_pose(const Pose& pose, const BodyTwist& twist, double dt);

inline Eigen::Vector3d as_vector(const BodyTwist& t) { return {t.vx, t.vy, t.omega}; }
inline BodyTwist as_twist(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

}  // namespace omnibot::kinematics
