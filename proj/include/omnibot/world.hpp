#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace omnibot {

using Vec2 = Eigen::Vector2d;

/// Robot pose in the world frame (x right, y up, theta CCW).
/// theta is kept in (-pi, pi].
struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Vec2 position() const { return {x, y}; }
};

/// Velocity in the robot's own frame: vx forward, vy left, omega CCW.
struct BodyTwist {
  double vx = 0.0;
  double vy = 0.0;
  double omega = 0.0;
};

/// Angular speeds at the three wheel shafts (after the gearbox), rad/s.
/// Index i belongs to RobotParams::mount_angles_rad[i].
struct WheelSpeeds {
  std::array<double, 3> omega_wheel{0.0, 0.0, 0.0};
};

struct RobotParams {
  double wheel_radius_m = 0.040;
  double wheel_distance_m = 0.125;
  std::array<double, 3> mount_angles_rad{1.0471975511965976, 3.141592653589793,
                                         5.235987755982989};
  double gear_ratio = 16.0;
  double mass_kg = 11.0;
  double inertia_z_kg_m2 = 0.20;
  double max_speed_m_s = 1.0;
  double max_omega_rad_s = 3.0;
  double body_radius_m = 0.225;
};

/// Throws std::invalid_argument naming the first violated invariant.
void validate(const RobotParams& params);

struct Circle {
  Vec2 center{0.0, 0.0};
  double radius = 0.0;
};

/// A wall piece: every point within thickness/2 of the segment p1-p2.
struct Segment {
  Vec2 p1{0.0, 0.0};
  Vec2 p2{0.0, 0.0};
  double thickness = 0.0;
};

using Obstacle = std::variant<Circle, Segment>;

/// Painted floor line: polyline of at least two vertices, drawn width_m wide.
struct FloorLine {
  double width_m = 0.0;
  std::vector<Vec2> vertices;
};

struct Bounds {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  bool contains(const Vec2& p) const {
    return p.x() >= x0 && p.x() <= x1 && p.y() >= y0 && p.y() <= y1;
  }
};

struct WorldScene {
  std::vector<Obstacle> obstacles;
  std::vector<FloorLine> floor_lines;
  Bounds bounds;
  Pose spawn;
};

/// Wraps any finite angle into (-pi, pi]. Throws std::invalid_argument for
/// non-finite input.
double normalize_angle(double theta);

/// Distance from p to the nearest obstacle surface or scene bound; 0 when p
/// is on or inside an obstacle or outside the bounds.
double point_obstacle_distance(const Vec2& p, const WorldScene& scene);

/// Signed clearance from p to one surface plus the outward unit normal at
/// the nearest surface point.
struct SurfaceContact {
  double signed_distance = 0.0;
  Vec2 normal{1.0, 0.0};
};

/// One entry per obstacle followed by one per bound wall (left, right,
/// bottom, top). Negative distance means p is inside.
std::vector<SurfaceContact> surface_contacts(const Vec2& p, const WorldScene& scene);

/// Distance along the ray origin + t*dir (dir unit length) to the first
/// obstacle or bound surface. Returns 0 if the origin is already inside
/// something, std::nullopt if nothing is hit.
std::optional<double> raycast_scene(const Vec2& origin, const Vec2& dir,
                                    const WorldScene& scene);

/// Distance from p to the segment a-b.
double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b);

/// Body-frame vector expressed in the world frame for heading theta.
inline Vec2 rotate(const Vec2& v, double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

}  // namespace omnibot
